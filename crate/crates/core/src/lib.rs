//! Intermittence scoring of automated test cases.
//!
//! Each test case is modeled as a Markov chain over the verdicts `pass`,
//! `fail` and `invalid`. Counting observed transitions over a moving window
//! gives the q-score (fraction of transitions that change verdict) and the
//! p-score (fraction of passes). Windowed scores select tests that were
//! intermittently failing or consistently failing before being fixed.

pub mod classifier;
pub mod report;
pub mod simulator;
pub mod stats;
pub mod store;
pub mod verdict;

pub use classifier::{
    classify_all, classify_one, group_overlap, population_summary, Classifier, ClassifyError,
    GroupAssignment, GroupEvidence, GroupKind, GroupOverlap, GroupSpec, Outcome,
    PopulationSummary,
};
pub use simulator::{
    expected_q, generate_dataset, generate_scenario, generate_sequence, stationary_distribution,
    ScenarioSpec, ScenarioSuite, SimError, SyntheticDataset, TransitionModel,
};
pub use store::{ingest, export, merge, query_history, query_night, run_length_stats, Dataset, Format, RevisionLog, StoreError};
pub use verdict::{
    count_transitions, full_sequence_scores, p_score, q_score, windowed_scores, Score,
    ScoreError, ScoreSeries, TestCaseKey, TransitionCounts, Verdict, VerdictHistory,
    VerdictRecord,
};
