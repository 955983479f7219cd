//! Seeded generation of verdict histories from known transition models.
//!
//! Sampling uses ChaCha8 (`rand_chacha`) seeded through `seed_from_u64`, and
//! draws a uniform `u` in `[0, 1)` from the top 53 bits of `next_u64`. The
//! next state is the first state, in (pass, fail, invalid) order, whose
//! cumulative row probability exceeds `u`.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::verdict::{TestCaseKey, Verdict, VerdictHistory};

/// Identifier recorded with every synthetic dataset.
pub const RNG_ALGORITHM: &str = "chacha8-rand_chacha-0.9/seed_from_u64/u53";

const ROW_TOLERANCE: f64 = 1e-9;
const STATIONARY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid transition model: {0}")]
    InvalidModel(String),
    #[error("chain restricted to states reachable from {0} is not irreducible")]
    NotErgodic(Verdict),
    #[error("invalid scenario {name:?}: {reason}")]
    InvalidScenario { name: String, reason: String },
    #[error("unknown model preset {0:?}")]
    UnknownModel(String),
    #[error("cannot parse scenario suite: {0}")]
    Parse(String),
}

/// Row-stochastic 3×3 matrix over (pass, fail, invalid) plus a start state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct TransitionModel {
    m: [[f64; 3]; 3],
    initial_state: Verdict,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    matrix: [[f64; 3]; 3],
    #[serde(default = "default_initial")]
    initial: Verdict,
}

fn default_initial() -> Verdict {
    Verdict::Pass
}

impl TryFrom<RawModel> for TransitionModel {
    type Error = SimError;
    fn try_from(raw: RawModel) -> Result<Self, SimError> {
        TransitionModel::new(raw.matrix, raw.initial)
    }
}

impl From<TransitionModel> for RawModel {
    fn from(model: TransitionModel) -> Self {
        RawModel {
            matrix: model.m,
            initial: model.initial_state,
        }
    }
}

impl TransitionModel {
    pub fn new(m: [[f64; 3]; 3], initial_state: Verdict) -> Result<Self, SimError> {
        for (i, row) in m.iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(SimError::InvalidModel(format!(
                    "row {} has an entry outside [0, 1]",
                    Verdict::ALL[i]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(SimError::InvalidModel(format!(
                    "row {} sums to {sum}",
                    Verdict::ALL[i]
                )));
            }
        }
        Ok(TransitionModel { m, initial_state })
    }

    /// Every state moves to `target`.
    pub fn always(target: Verdict) -> Self {
        let mut m = [[0.0; 3]; 3];
        for row in &mut m {
            row[target.index()] = 1.0;
        }
        TransitionModel {
            m,
            initial_state: target,
        }
    }

    /// Deterministic chain following `next` from each state.
    pub fn deterministic(next: [Verdict; 3], initial_state: Verdict) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (row, target) in m.iter_mut().zip(next) {
            row[target.index()] = 1.0;
        }
        TransitionModel { m, initial_state }
    }

    /// Two-state pass/fail chain; invalid is unreachable from pass or fail.
    pub fn pass_fail(p_pass_to_fail: f64, p_fail_to_pass: f64) -> Result<Self, SimError> {
        TransitionModel::new(
            [
                [1.0 - p_pass_to_fail, p_pass_to_fail, 0.0],
                [p_fail_to_pass, 1.0 - p_fail_to_pass, 0.0],
                [1.0, 0.0, 0.0],
            ],
            Verdict::Pass,
        )
    }

    /// Named presets usable from scenario files.
    ///
    /// | name | behaviour |
    /// |------|-----------|
    /// | `always_pass`, `always_fail`, `always_invalid` | every state moves to that verdict |
    /// | `flip` | pass → fail, fail → pass, invalid → pass |
    /// | `flip_invalid` | pass → invalid, invalid → pass, fail → pass |
    /// | `cycle3` | pass → fail → invalid → pass |
    pub fn preset(name: &str) -> Result<Self, SimError> {
        use Verdict::*;
        Ok(match name {
            "always_pass" => TransitionModel::always(Pass),
            "always_fail" => TransitionModel::always(Fail),
            "always_invalid" => TransitionModel::always(Invalid),
            "flip" => TransitionModel::deterministic([Fail, Pass, Pass], Pass),
            "flip_invalid" => TransitionModel::deterministic([Invalid, Pass, Pass], Pass),
            "cycle3" => TransitionModel::deterministic([Fail, Invalid, Pass], Pass),
            other => return Err(SimError::UnknownModel(other.to_string())),
        })
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn initial_state(&self) -> Verdict {
        self.initial_state
    }

    pub fn with_initial_state(mut self, state: Verdict) -> Self {
        self.initial_state = state;
        self
    }

    pub fn probability(&self, from: Verdict, to: Verdict) -> f64 {
        self.m[from.index()][to.index()]
    }

    /// Inverse-CDF draw of the successor of `from` for uniform `u` in [0, 1).
    fn next_state(&self, from: Verdict, u: f64) -> Verdict {
        let row = &self.m[from.index()];
        let mut cumulative = 0.0;
        for (state, &p) in Verdict::ALL.iter().zip(row) {
            cumulative += p;
            if u < cumulative {
                return *state;
            }
        }
        // u landed in the rounding slack above the row sum.
        let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(from.index());
        Verdict::ALL[last]
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn generate_sequence(
    model: &TransitionModel,
    length: usize,
    seed: u64,
) -> Result<Vec<Verdict>, SimError> {
    TransitionModel::new(model.m, model.initial_state)?;
    if length == 0 {
        return Err(SimError::InvalidModel("sequence length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(length);
    let mut state = model.initial_state;
    out.push(state);
    for _ in 1..length {
        state = model.next_state(state, uniform(&mut rng));
        out.push(state);
    }
    Ok(out)
}

/// Long-run state probabilities of the chain started at the initial state.
///
/// The chain restricted to states reachable from the initial state must be
/// irreducible. Periodic chains are accepted since their stationary vector
/// is still unique.
pub fn stationary_distribution(model: &TransitionModel) -> Result<[f64; 3], SimError> {
    let edge = |i: usize, j: usize| model.m[i][j] > 0.0;
    let mut reach = [[false; 3]; 3];
    for (i, row) in reach.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = i == j || edge(i, j);
        }
    }
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let start = model.initial_state.index();
    let states: Vec<usize> = (0..3).filter(|&j| reach[start][j]).collect();
    if states.iter().any(|&i| states.iter().any(|&j| !reach[i][j])) {
        return Err(SimError::NotErgodic(model.initial_state));
    }

    // Solve pi (M - I) = 0 on the reachable states, replacing the last
    // balance equation by sum(pi) = 1.
    let k = states.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &j) in states.iter().enumerate() {
        for (col, &i) in states.iter().enumerate() {
            a[row][col] = model.m[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for cell in a[k - 1].iter_mut() {
        *cell = 1.0;
    }
    let solution = solve(a).ok_or(SimError::NotErgodic(model.initial_state))?;

    let mut pi = [0.0; 3];
    for (&state, value) in states.iter().zip(solution) {
        pi[state] = value;
    }
    for j in 0..3 {
        let flow: f64 = (0..3).map(|i| pi[i] * model.m[i][j]).sum();
        if (flow - pi[j]).abs() > STATIONARY_TOLERANCE {
            return Err(SimError::NotErgodic(model.initial_state));
        }
    }
    Ok(pi)
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for c in col..=n {
                    a[row][c] -= factor * a[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Long-run fraction of transitions that change state: `1 - Σ π_s m_ss`.
pub fn expected_q(model: &TransitionModel) -> Result<f64, SimError> {
    let pi = stationary_distribution(model)?;
    Ok(1.0 - (0..3).map(|s| pi[s] * model.m[s][s]).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Preset(String),
    Explicit(TransitionModel),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<TransitionModel, SimError> {
        match self {
            ModelRef::Preset(name) => TransitionModel::preset(name),
            ModelRef::Explicit(model) => Ok(*model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub length: usize,
    pub model: ModelRef,
}

/// A sequence of phases. Each phase after the first continues from the last
/// state of the previous one instead of its model's initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Number of test cases generated from this scenario.
    #[serde(default = "one")]
    pub replicas: usize,
    pub phases: Vec<Phase>,
    /// Groups the generated tests should be classified into.
    #[serde(default)]
    pub expected_groups: BTreeSet<String>,
}

fn one() -> usize {
    1
}

impl ScenarioSpec {
    pub fn total_length(&self) -> usize {
        self.phases.iter().map(|p| p.length).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |reason: String| SimError::InvalidScenario {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(invalid("empty name".into()));
        }
        if self.phases.iter().any(|p| p.length == 0) {
            return Err(invalid("phase lengths must be positive".into()));
        }
        if self.total_length() < 2 {
            return Err(invalid("total length must be at least 2".into()));
        }
        for phase in &self.phases {
            phase.model.resolve()?;
        }
        Ok(())
    }
}

/// Scenario suite as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSuite {
    #[serde(default = "default_system")]
    pub system: String,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(rename = "scenario", default)]
    pub scenarios: Vec<ScenarioSpec>,
}

fn default_system() -> String {
    "sim".to_string()
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date")
}

const BUNDLED_SUITE: &str = include_str!("../data/scenarios.toml");

impl ScenarioSuite {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let suite: ScenarioSuite =
            toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    /// Planted scenarios covering every group combination reachable under
    /// the default group specs.
    pub fn bundled() -> Self {
        ScenarioSuite::from_toml(BUNDLED_SUITE).expect("bundled scenario suite is valid")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut names = BTreeSet::new();
        for scenario in &self.scenarios {
            scenario.validate()?;
            if !names.insert(scenario.name.as_str()) {
                return Err(SimError::InvalidScenario {
                    name: scenario.name.clone(),
                    reason: "duplicate scenario name".into(),
                });
            }
        }
        Ok(())
    }

    /// Keys `(system, scenario name, r<replica>)` paired with their scenario.
    pub fn keys(&self) -> Vec<(TestCaseKey, &ScenarioSpec)> {
        self.scenarios
            .iter()
            .flat_map(|s| {
                (0..s.replicas).map(move |r| {
                    (TestCaseKey::new(&self.system, &s.name, format!("r{r}")), s)
                })
            })
            .collect()
    }
}

/// Per-history seed derived from the dataset seed and the test key.
pub fn history_seed(seed: u64, key: &TestCaseKey) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in [&key.test_system, &key.test_script, &key.parameter_setting] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn generate_scenario(
    spec: &ScenarioSpec,
    key: TestCaseKey,
    seed: u64,
    first_night: NaiveDate,
) -> Result<VerdictHistory, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdicts: Vec<Verdict> = Vec::with_capacity(spec.total_length());
    for phase in &spec.phases {
        let model = phase.model.resolve()?;
        for _ in 0..phase.length {
            let next = match verdicts.last() {
                None => model.initial_state,
                Some(&prev) => model.next_state(prev, uniform(&mut rng)),
            };
            verdicts.push(next);
        }
    }
    Ok(VerdictHistory::consecutive(key, first_night, &verdicts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub rng_algorithm: &'static str,
    pub histories: Vec<VerdictHistory>,
    pub ground_truth: BTreeMap<TestCaseKey, BTreeSet<String>>,
}

/// Generates every replica of every scenario, sorted by key.
pub fn generate_dataset(suite: &ScenarioSuite, seed: u64) -> Result<SyntheticDataset, SimError> {
    suite.validate()?;
    let keyed = suite.keys();
    let mut histories = keyed
        .par_iter()
        .map(|(key, spec)| {
            generate_scenario(spec, key.clone(), history_seed(seed, key), suite.start)
        })
        .collect::<Result<Vec<_>, _>>()?;
    histories.sort_by(|a, b| a.key().cmp(b.key()));
    let ground_truth = keyed
        .into_iter()
        .map(|(key, spec)| (key, spec.expected_groups.clone()))
        .collect();
    Ok(SyntheticDataset {
        seed,
        rng_algorithm: RNG_ALGORITHM,
        histories,
        ground_truth,
    })
}
