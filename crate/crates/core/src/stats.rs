//! Descriptive statistics used by population and run-length summaries.

use serde::Serialize;

/// Min, max, mean, median and standard deviation of a sample.
///
/// The median of an even-sized sample is the mean of the two central values.
/// Both the population (divide by n) and sample (divide by n - 1) standard
/// deviations are kept; `std_dev` is the population form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub sample_std_dev: f64,
}

impl Summary {
    /// Returns `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);

        let mean = values.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let sq: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sample_std_dev = if n > 1 {
            (sq / (n - 1) as f64).sqrt()
        } else {
            0.0
        };

        Some(Summary {
            count: n,
            min: sorted[0],
            max: sorted[n - 1],
            mean,
            median,
            std_dev: (sq / n as f64).sqrt(),
            sample_std_dev,
        })
    }
}
