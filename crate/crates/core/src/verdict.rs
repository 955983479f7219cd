//! Verdict sequences and the transition statistics computed over them.
//!
//! A test case is treated as a three-state Markov chain over `pass`, `fail`
//! and `invalid`. Observing its executions in order yields a 3×3 matrix of
//! transition counts, from which two scores are derived:
//!
//! ```text
//! q = 1 - trace(N) / sum(N)     fraction of transitions that change state
//! p = #pass / #verdicts         fraction of passing verdicts
//! ```
//!
//! Adjacency is by execution order. Calendar gaps between two executions of
//! the same test are ignored; nights are carried as metadata only.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("window is empty")]
    EmptyWindow,
    #[error("window has no transitions; q is undefined for a single verdict")]
    NoTransitions,
    #[error("window size {0} is too small; at least 2 verdicts are required")]
    WindowTooSmall(usize),
}

/// Outcome of one test execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Invalid,
}

impl Verdict {
    /// All states in matrix order.
    pub const ALL: [Verdict; 3] = [Verdict::Pass, Verdict::Fail, Verdict::Invalid];

    /// Row/column index in [`TransitionCounts`] and transition models.
    pub fn index(self) -> usize {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Invalid => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Verdict> {
        Verdict::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Invalid => "invalid",
        }
    }

    /// Single-letter form used in compact sequence notation (`P`, `F`, `I`).
    pub fn letter(self) -> char {
        match self {
            Verdict::Pass => 'P',
            Verdict::Fail => 'F',
            Verdict::Invalid => 'I',
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown verdict {0:?}; expected one of pass, fail, invalid")]
pub struct ParseVerdictError(pub String);

impl FromStr for Verdict {
    type Err = ParseVerdictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pass" => Ok(Verdict::Pass),
            "fail" => Ok(Verdict::Fail),
            "invalid" => Ok(Verdict::Invalid),
            other => Err(ParseVerdictError(other.to_string())),
        }
    }
}

/// Parses compact notation such as `"FPPFFPFF"` or `"P,I,F"`.
///
/// Whitespace and commas are ignored.
pub fn parse_compact(s: &str) -> Result<Vec<Verdict>, ParseVerdictError> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c.to_ascii_uppercase() {
            'P' => Ok(Verdict::Pass),
            'F' => Ok(Verdict::Fail),
            'I' => Ok(Verdict::Invalid),
            _ => Err(ParseVerdictError(c.to_string())),
        })
        .collect()
}

/// Identity of a test case: the same script on two systems is two keys.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TestCaseKey {
    pub test_system: String,
    pub test_script: String,
    pub parameter_setting: String,
}

impl TestCaseKey {
    pub fn new(
        test_system: impl Into<String>,
        test_script: impl Into<String>,
        parameter_setting: impl Into<String>,
    ) -> Self {
        TestCaseKey {
            test_system: test_system.into(),
            test_script: test_script.into(),
            parameter_setting: parameter_setting.into(),
        }
    }
}

impl fmt::Display for TestCaseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.test_system, self.test_script, self.parameter_setting
        )
    }
}

/// One execution of one test case on one night.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub key: TestCaseKey,
    pub night: NaiveDate,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("history for {key} is not strictly ascending at {night}")]
pub struct NonAscendingNights {
    pub key: TestCaseKey,
    pub night: NaiveDate,
}

/// Ordered verdicts of one test case, ascending by night.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictHistory {
    key: TestCaseKey,
    entries: Vec<(NaiveDate, Verdict)>,
}

impl VerdictHistory {
    pub fn new(
        key: TestCaseKey,
        entries: Vec<(NaiveDate, Verdict)>,
    ) -> Result<Self, NonAscendingNights> {
        if let Some(pair) = entries.windows(2).find(|pair| pair[0].0 >= pair[1].0) {
            return Err(NonAscendingNights {
                key,
                night: pair[1].0,
            });
        }
        Ok(VerdictHistory { key, entries })
    }

    pub fn empty(key: TestCaseKey) -> Self {
        VerdictHistory {
            key,
            entries: Vec::new(),
        }
    }

    /// Builds a history with one execution per consecutive calendar night
    /// starting at `first_night`.
    pub fn consecutive(key: TestCaseKey, first_night: NaiveDate, verdicts: &[Verdict]) -> Self {
        let entries = first_night
            .iter_days()
            .zip(verdicts.iter().copied())
            .collect();
        VerdictHistory { key, entries }
    }

    pub fn key(&self) -> &TestCaseKey {
        &self.key
    }

    pub fn entries(&self) -> &[(NaiveDate, Verdict)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.entries.iter().map(|(_, v)| *v).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = VerdictRecord> + '_ {
        self.entries.iter().map(|(night, verdict)| VerdictRecord {
            key: self.key.clone(),
            night: *night,
            verdict: *verdict,
        })
    }
}

/// Observed transition counts, rows = source state, columns = destination,
/// both in (pass, fail, invalid) order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub n: [[u64; 3]; 3],
}

impl TransitionCounts {
    pub fn get(&self, from: Verdict, to: Verdict) -> u64 {
        self.n[from.index()][to.index()]
    }

    pub fn total(&self) -> u64 {
        self.n.iter().flatten().sum()
    }

    /// Transitions that kept the same state.
    pub fn retained(&self) -> u64 {
        (0..3).map(|i| self.n[i][i]).sum()
    }

    /// Transitions that changed state.
    pub fn changed(&self) -> u64 {
        self.total() - self.retained()
    }
}

/// A score in `[0, 1]`, held as an exact fraction.
///
/// Equality and ordering are exact; [`Score::value`] is the nearest `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(Ratio<u64>);

impl Score {
    pub const ZERO: Score = Score(Ratio::new_raw(0, 1));
    pub const ONE: Score = Score(Ratio::new_raw(1, 1));

    /// Panics if `den` is zero or `num > den`.
    pub fn new(num: u64, den: u64) -> Score {
        assert!(den > 0 && num <= den, "score {num}/{den} outside [0, 1]");
        Score(Ratio::new(num, den))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn value(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.numer() == 0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

/// Counts adjacent pairs in `window`.
pub fn count_transitions(window: &[Verdict]) -> Result<TransitionCounts, ScoreError> {
    if window.is_empty() {
        return Err(ScoreError::EmptyWindow);
    }
    let mut counts = TransitionCounts::default();
    for pair in window.windows(2) {
        counts.n[pair[0].index()][pair[1].index()] += 1;
    }
    Ok(counts)
}

pub fn q_score(counts: &TransitionCounts) -> Result<Score, ScoreError> {
    let total = counts.total();
    if total == 0 {
        return Err(ScoreError::NoTransitions);
    }
    Ok(Score::new(counts.changed(), total))
}

/// Fraction of passing verdicts; `invalid` counts as non-pass.
pub fn p_score(window: &[Verdict]) -> Result<Score, ScoreError> {
    if window.is_empty() {
        return Err(ScoreError::EmptyWindow);
    }
    let passes = window.iter().filter(|v| v.is_pass()).count();
    Ok(Score::new(passes as u64, window.len() as u64))
}

/// Scores of one full window, identified by the index of its last verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScorePoint {
    pub window_end: usize,
    pub q: Score,
    pub p: Score,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreSeries {
    pub window_size: usize,
    pub points: Vec<ScorePoint>,
}

impl ScoreSeries {
    /// Points a history of `history_len` verdicts must produce.
    pub fn expected_len(history_len: usize, window_size: usize) -> usize {
        (history_len + 1).saturating_sub(window_size)
    }

    pub fn last(&self) -> Option<&ScorePoint> {
        self.points.last()
    }
}

/// Floating q- and p-scores over every contiguous window of `window_size`
/// verdicts, sliding by one.
pub fn windowed_scores(
    history: &VerdictHistory,
    window_size: usize,
) -> Result<ScoreSeries, ScoreError> {
    score_windows(&history.verdicts(), window_size)
}

/// [`windowed_scores`] over a bare verdict slice.
pub fn score_windows(verdicts: &[Verdict], window_size: usize) -> Result<ScoreSeries, ScoreError> {
    if window_size < 2 {
        return Err(ScoreError::WindowTooSmall(window_size));
    }
    let mut series = ScoreSeries {
        window_size,
        points: Vec::with_capacity(ScoreSeries::expected_len(verdicts.len(), window_size)),
    };
    if verdicts.len() < window_size {
        return Ok(series);
    }

    let changed_at = |i: usize| (verdicts[i] != verdicts[i + 1]) as u64;
    let transitions = (window_size - 1) as u64;
    let mut changes: u64 = (0..window_size - 1).map(changed_at).sum();
    let mut passes = verdicts[..window_size]
        .iter()
        .filter(|v| v.is_pass())
        .count() as u64;

    for end in window_size - 1..verdicts.len() {
        if end >= window_size {
            let start = end + 1 - window_size;
            changes = changes + changed_at(end - 1) - changed_at(start - 1);
            passes = passes + verdicts[end].is_pass() as u64
                - verdicts[start - 1].is_pass() as u64;
        }
        series.points.push(ScorePoint {
            window_end: end,
            q: Score::new(changes, transitions),
            p: Score::new(passes, window_size as u64),
        });
    }
    Ok(series)
}

/// Scores over the whole history taken as one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SequenceScores {
    /// `None` when the history has a single verdict.
    pub q: Option<Score>,
    pub p: Score,
}

impl SequenceScores {
    pub fn q(&self) -> Result<Score, ScoreError> {
        self.q.ok_or(ScoreError::NoTransitions)
    }
}

pub fn full_sequence_scores(history: &VerdictHistory) -> Result<SequenceScores, ScoreError> {
    sequence_scores(&history.verdicts())
}

/// [`full_sequence_scores`] over a bare verdict slice.
pub fn sequence_scores(verdicts: &[Verdict]) -> Result<SequenceScores, ScoreError> {
    let p = p_score(verdicts)?;
    let q = match q_score(&count_transitions(verdicts)?) {
        Ok(q) => Some(q),
        Err(ScoreError::NoTransitions) => None,
        Err(e) => return Err(e),
    };
    Ok(SequenceScores { q, p })
}
