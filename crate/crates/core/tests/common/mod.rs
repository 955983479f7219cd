//! Naive reference implementations used as test oracles.
//!
//! Everything here recomputes from first principles: windows are sliced out
//! explicitly and counted from scratch, with no use of the library's
//! scoring or classification code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use intermittence::{GroupKind, GroupSpec, Verdict};

/// All sequences of `len` verdicts, in lexicographic order of state index.
pub fn all_sequences(len: usize) -> Vec<Vec<Verdict>> {
    let states = [Verdict::Pass, Verdict::Fail, Verdict::Invalid];
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                states.iter().map(move |s| {
                    let mut next = prefix.clone();
                    next.push(*s);
                    next
                })
            })
            .collect();
    }
    out
}

/// (state changes, transitions) of a window.
pub fn naive_q(window: &[Verdict]) -> (u64, u64) {
    let mut changes = 0;
    let mut transitions = 0;
    for i in 1..window.len() {
        transitions += 1;
        if window[i] != window[i - 1] {
            changes += 1;
        }
    }
    (changes, transitions)
}

/// (passes, verdicts) of a window.
pub fn naive_p(window: &[Verdict]) -> (u64, u64) {
    let passes = window.iter().filter(|v| **v == Verdict::Pass).count();
    (passes as u64, window.len() as u64)
}

pub fn ratio(pair: (u64, u64)) -> f64 {
    pair.0 as f64 / pair.1 as f64
}

fn naive_member(verdicts: &[Verdict], spec: &GroupSpec, specs: &[GroupSpec]) -> bool {
    let w = spec.window_size;
    if verdicts.len() < w {
        return false;
    }
    let windows: Vec<&[Verdict]> = (0..=verdicts.len() - w).map(|i| &verdicts[i..i + w]).collect();
    let last = windows[windows.len() - 1];
    if ratio(naive_p(last)) < spec.p_final_min {
        return false;
    }
    match spec.kind {
        GroupKind::Intermittent => {
            let q_min = spec.q_min.unwrap();
            windows.iter().any(|win| ratio(naive_q(win)) >= q_min)
        }
        GroupKind::Consistent => {
            let blocked = specs.iter().any(|other| {
                other.kind == GroupKind::Intermittent
                    && other.window_size == w
                    && naive_member(verdicts, other, specs)
            });
            let p_dip = spec.p_dip_max.unwrap();
            !blocked && windows.iter().any(|win| ratio(naive_p(win)) < p_dip)
        }
    }
}

/// Groups of one history under `specs`, by explicit enumeration of windows.
pub fn naive_groups(verdicts: &[Verdict], specs: &[GroupSpec]) -> BTreeSet<String> {
    specs
        .iter()
        .filter(|s| naive_member(verdicts, s, specs))
        .map(|s| s.label.clone())
        .collect()
}

/// Maximal blocks of equal consecutive values.
pub fn naive_runs(values: &[String]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == values[i] {
            j += 1;
        }
        runs.push(j - i + 1);
        i = j + 1;
    }
    runs
}

/// (min, max, mean, median, population std) computed naively.
pub fn naive_stats(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 0 {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    } else {
        v[n / 2]
    };
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (v[0], v[n - 1], mean, median, var.sqrt())
}
