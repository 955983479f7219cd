//! Selection of intermittently failing (group A) and consistently failing
//! (group B) test cases from floating q- and p-scores.
//!
//! A test is in an intermittent group when some window of `w` verdicts had
//! `q >= q_min` and its last full window has `p >= p_final_min`. It is in a
//! consistent group when it is not in an intermittent group of the same
//! window size, some window had `p < p_dip_max`, and its last full window has
//! `p >= p_final_min`. Membership across window sizes is unrestricted, so a
//! test may sit in both `A6` and `B13` but never in both `A6` and `B6`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::Summary;
use crate::verdict::{score_windows, sequence_scores, Score, ScoreSeries, TestCaseKey, Verdict, VerdictHistory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("duplicate group label {0:?}")]
    DuplicateLabel(String),
    #[error("consistent group {label:?} has no intermittent group with window size {window_size}")]
    MissingExclusionPartner { label: String, window_size: usize },
    #[error("invalid group spec {label:?}: {reason}")]
    InvalidSpec { label: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Intermittent,
    Consistent,
}

/// Thresholds selecting one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub label: String,
    pub kind: GroupKind,
    pub window_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dip_max: Option<f64>,
    pub p_final_min: f64,
}

pub const DEFAULT_FINAL_P: f64 = 0.96;
pub const DEFAULT_DIP_P: f64 = 0.2;

impl GroupSpec {
    pub fn intermittent(label: &str, window_size: usize, q_min: f64, p_final_min: f64) -> Self {
        GroupSpec {
            label: label.to_string(),
            kind: GroupKind::Intermittent,
            window_size,
            q_min: Some(q_min),
            p_dip_max: None,
            p_final_min,
        }
    }

    pub fn consistent(label: &str, window_size: usize, p_dip_max: f64, p_final_min: f64) -> Self {
        GroupSpec {
            label: label.to_string(),
            kind: GroupKind::Consistent,
            window_size,
            q_min: None,
            p_dip_max: Some(p_dip_max),
            p_final_min,
        }
    }

    /// `A6`, `A13`, `B6`, `B13` with the thresholds used on nightly data.
    pub fn defaults() -> Vec<GroupSpec> {
        vec![
            GroupSpec::intermittent("A6", 6, 0.5, DEFAULT_FINAL_P),
            GroupSpec::intermittent("A13", 13, 0.35, DEFAULT_FINAL_P),
            GroupSpec::consistent("B6", 6, DEFAULT_DIP_P, DEFAULT_FINAL_P),
            GroupSpec::consistent("B13", 13, DEFAULT_DIP_P, DEFAULT_FINAL_P),
        ]
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        let invalid = |reason: &str| ClassifyError::InvalidSpec {
            label: self.label.clone(),
            reason: reason.to_string(),
        };
        if self.label.is_empty() {
            return Err(invalid("empty label"));
        }
        if self.window_size < 2 {
            return Err(invalid("window_size must be at least 2"));
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.p_final_min) {
            return Err(invalid("p_final_min must lie in [0, 1]"));
        }
        match (self.kind, self.q_min, self.p_dip_max) {
            (GroupKind::Intermittent, Some(q), None) if in_unit(q) => Ok(()),
            (GroupKind::Intermittent, Some(_), None) => Err(invalid("q_min must lie in [0, 1]")),
            (GroupKind::Intermittent, _, _) => {
                Err(invalid("intermittent groups need q_min and no p_dip_max"))
            }
            (GroupKind::Consistent, None, Some(p)) if in_unit(p) => Ok(()),
            (GroupKind::Consistent, None, Some(_)) => Err(invalid("p_dip_max must lie in [0, 1]")),
            (GroupKind::Consistent, _, _) => {
                Err(invalid("consistent groups need p_dip_max and no q_min"))
            }
        }
    }
}

/// Why a test did or did not land in a group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "by")]
pub enum Outcome {
    Member,
    /// History shorter than the window size.
    InsufficientData,
    /// Already in the named intermittent group of the same window size.
    Excluded(String),
    /// No window crossed the q or p threshold.
    NoTrigger,
    /// The last full window did not pass often enough.
    FinalPassTooLow,
}

/// The first window that met the group's q or p condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Trigger {
    pub window_end: usize,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupEvidence {
    pub label: String,
    pub outcome: Outcome,
    pub trigger: Option<Trigger>,
    pub final_p: Option<Score>,
}

impl GroupEvidence {
    pub fn is_member(&self) -> bool {
        self.outcome == Outcome::Member
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupAssignment {
    pub key: TestCaseKey,
    pub groups: BTreeSet<String>,
    /// Evidence for each group in `groups`.
    pub evidence: BTreeMap<String, GroupEvidence>,
}

fn first_trigger(series: &ScoreSeries, spec: &GroupSpec) -> Option<Trigger> {
    match spec.kind {
        GroupKind::Intermittent => {
            let q_min = spec.q_min.unwrap_or(f64::INFINITY);
            series.points.iter().find(|pt| pt.q.value() >= q_min).map(|pt| Trigger {
                window_end: pt.window_end,
                score: pt.q,
            })
        }
        GroupKind::Consistent => {
            let p_dip = spec.p_dip_max.unwrap_or(f64::NEG_INFINITY);
            series.points.iter().find(|pt| pt.p.value() < p_dip).map(|pt| Trigger {
                window_end: pt.window_end,
                score: pt.p,
            })
        }
    }
}

fn evaluate(series: &ScoreSeries, spec: &GroupSpec, excluded_by: Option<&str>) -> GroupEvidence {
    let final_p = series.last().map(|pt| pt.p);
    let trigger = first_trigger(series, spec);
    let outcome = match (final_p, excluded_by) {
        (None, _) => Outcome::InsufficientData,
        (Some(_), Some(by)) => Outcome::Excluded(by.to_string()),
        (Some(_), None) if trigger.is_none() => Outcome::NoTrigger,
        (Some(p), None) if p.value() < spec.p_final_min => Outcome::FinalPassTooLow,
        _ => Outcome::Member,
    };
    GroupEvidence {
        label: spec.label.clone(),
        outcome,
        trigger,
        final_p,
    }
}

/// Classifies one history against one spec.
///
/// For a consistent spec, `exclusion` is the intermittent spec of the same
/// window size whose members are barred from it; `None` skips the exclusion.
pub fn classify_one(
    history: &VerdictHistory,
    spec: &GroupSpec,
    exclusion: Option<&GroupSpec>,
) -> GroupEvidence {
    let verdicts = history.verdicts();
    // window_size >= 2 is a GroupSpec invariant; an invalid spec classifies nothing.
    let Ok(series) = score_windows(&verdicts, spec.window_size) else {
        return GroupEvidence {
            label: spec.label.clone(),
            outcome: Outcome::InsufficientData,
            trigger: None,
            final_p: None,
        };
    };
    let excluded_by = match (spec.kind, exclusion) {
        (GroupKind::Consistent, Some(partner)) if partner.window_size == spec.window_size => {
            evaluate(&series, partner, None)
                .is_member()
                .then_some(partner.label.as_str())
        }
        _ => None,
    };
    evaluate(&series, spec, excluded_by)
}

/// A validated list of specs with exclusion partners resolved.
#[derive(Debug, Clone)]
pub struct Classifier {
    specs: Vec<GroupSpec>,
    /// For each spec, indices of the intermittent specs that exclude it.
    partners: Vec<Vec<usize>>,
    window_sizes: Vec<usize>,
}

impl Classifier {
    pub fn new(specs: Vec<GroupSpec>) -> Result<Self, ClassifyError> {
        let mut seen = BTreeSet::new();
        for spec in &specs {
            spec.validate()?;
            if !seen.insert(spec.label.as_str()) {
                return Err(ClassifyError::DuplicateLabel(spec.label.clone()));
            }
        }
        let mut partners = Vec::with_capacity(specs.len());
        for spec in &specs {
            let same_window: Vec<usize> = specs
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind == GroupKind::Intermittent && s.window_size == spec.window_size)
                .map(|(i, _)| i)
                .collect();
            if spec.kind == GroupKind::Consistent {
                if same_window.is_empty() {
                    return Err(ClassifyError::MissingExclusionPartner {
                        label: spec.label.clone(),
                        window_size: spec.window_size,
                    });
                }
                partners.push(same_window);
            } else {
                partners.push(Vec::new());
            }
        }
        let window_sizes: BTreeSet<usize> = specs.iter().map(|s| s.window_size).collect();
        Ok(Classifier {
            specs,
            partners,
            window_sizes: window_sizes.into_iter().collect(),
        })
    }

    pub fn specs(&self) -> &[GroupSpec] {
        &self.specs
    }

    pub fn labels(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.label.as_str()).collect()
    }

    /// Evidence for every spec, in spec order. Intermittent specs are
    /// evaluated before consistent ones so exclusions see their result.
    pub fn evaluate(&self, history: &VerdictHistory) -> Vec<GroupEvidence> {
        let verdicts = history.verdicts();
        let series: BTreeMap<usize, ScoreSeries> = self
            .window_sizes
            .iter()
            .map(|&w| (w, score_windows(&verdicts, w).expect("validated window size")))
            .collect();

        let mut out: Vec<Option<GroupEvidence>> = vec![None; self.specs.len()];
        for kind in [GroupKind::Intermittent, GroupKind::Consistent] {
            for (i, spec) in self.specs.iter().enumerate().filter(|(_, s)| s.kind == kind) {
                let excluded_by = self.partners[i]
                    .iter()
                    .find(|&&j| out[j].as_ref().is_some_and(GroupEvidence::is_member))
                    .map(|&j| self.specs[j].label.as_str());
                out[i] = Some(evaluate(&series[&spec.window_size], spec, excluded_by));
            }
        }
        out.into_iter().map(|e| e.expect("every spec evaluated")).collect()
    }

    /// `None` when the history is in no group.
    pub fn assign(&self, history: &VerdictHistory) -> Option<GroupAssignment> {
        let evidence: BTreeMap<String, GroupEvidence> = self
            .evaluate(history)
            .into_iter()
            .filter(GroupEvidence::is_member)
            .map(|e| (e.label.clone(), e))
            .collect();
        if evidence.is_empty() {
            return None;
        }
        Some(GroupAssignment {
            key: history.key().clone(),
            groups: evidence.keys().cloned().collect(),
            evidence,
        })
    }

    /// Assignments for every history in at least one group, sorted by key.
    pub fn assign_all(&self, dataset: &[VerdictHistory]) -> Vec<GroupAssignment> {
        let mut out: Vec<GroupAssignment> =
            dataset.par_iter().filter_map(|h| self.assign(h)).collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }
}

pub fn classify_all(
    dataset: &[VerdictHistory],
    specs: &[GroupSpec],
) -> Result<Vec<GroupAssignment>, ClassifyError> {
    Ok(Classifier::new(specs.to_vec())?.assign_all(dataset))
}

/// Pairwise intersections of groups and how many tests sit in exactly k groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupOverlap {
    pub labels: Vec<String>,
    /// `intersections[i][j]` = tests in both `labels[i]` and `labels[j]`;
    /// the diagonal holds group sizes.
    pub intersections: Vec<Vec<usize>>,
    /// `(k, number of tests in exactly k groups)` for k = 1..=labels.len().
    pub exactly_k: Vec<(usize, usize)>,
}

impl GroupOverlap {
    pub fn size(&self, label: &str) -> Option<usize> {
        self.index(label).map(|i| self.intersections[i][i])
    }

    pub fn between(&self, a: &str, b: &str) -> Option<usize> {
        Some(self.intersections[self.index(a)?][self.index(b)?])
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Overlap over `labels`; groups not in `labels` are ignored.
pub fn group_overlap(assignments: &[GroupAssignment], labels: &[&str]) -> GroupOverlap {
    let n = labels.len();
    let mut intersections = vec![vec![0usize; n]; n];
    let mut exactly = vec![0usize; n + 1];
    for assignment in assignments {
        let present: Vec<usize> = (0..n)
            .filter(|&i| assignment.groups.contains(labels[i]))
            .collect();
        for &i in &present {
            for &j in &present {
                intersections[i][j] += 1;
            }
        }
        exactly[present.len()] += 1;
    }
    GroupOverlap {
        labels: labels.iter().map(|l| l.to_string()).collect(),
        intersections,
        exactly_k: (1..=n).map(|k| (k, exactly[k])).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictDistribution {
    pub total: u64,
    pub pass: u64,
    pub fail: u64,
    pub invalid: u64,
    pub pass_fraction: f64,
    pub fail_fraction: f64,
    pub invalid_fraction: f64,
}

/// Population-level description of a dataset.
///
/// Score and execution statistics cover tests with at least two executions;
/// the verdict distribution covers every verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSummary {
    pub empty: bool,
    pub tests_total: usize,
    pub tests_scored: usize,
    pub excluded_single_execution_tests: usize,
    pub p: Option<Summary>,
    pub q: Option<Summary>,
    pub fraction_nonzero_q: Option<f64>,
    pub executions_per_test: Option<Summary>,
    pub verdict_distribution: VerdictDistribution,
}

pub fn population_summary(dataset: &[VerdictHistory]) -> PopulationSummary {
    let mut counts = [0u64; 3];
    let mut p_values = Vec::new();
    let mut q_values = Vec::new();
    let mut executions = Vec::new();
    let mut excluded = 0;

    for history in dataset {
        let verdicts = history.verdicts();
        for v in &verdicts {
            counts[v.index()] += 1;
        }
        if verdicts.len() < 2 {
            excluded += (verdicts.len() == 1) as usize;
            continue;
        }
        let scores = sequence_scores(&verdicts).expect("history has two or more verdicts");
        p_values.push(scores.p.value());
        q_values.push(scores.q.expect("history has a transition").value());
        executions.push(verdicts.len() as f64);
    }

    let total: u64 = counts.iter().sum();
    let fraction = |c: u64| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    let nonzero = q_values.iter().filter(|&&q| q != 0.0).count();

    PopulationSummary {
        empty: dataset.is_empty(),
        tests_total: dataset.len(),
        tests_scored: p_values.len(),
        excluded_single_execution_tests: excluded,
        p: Summary::of(&p_values),
        q: Summary::of(&q_values),
        fraction_nonzero_q: (!q_values.is_empty())
            .then(|| nonzero as f64 / q_values.len() as f64),
        executions_per_test: Summary::of(&executions),
        verdict_distribution: VerdictDistribution {
            total,
            pass: counts[Verdict::Pass.index()],
            fail: counts[Verdict::Fail.index()],
            invalid: counts[Verdict::Invalid.index()],
            pass_fraction: fraction(counts[0]),
            fail_fraction: fraction(counts[1]),
            invalid_fraction: fraction(counts[2]),
        },
    }
}
