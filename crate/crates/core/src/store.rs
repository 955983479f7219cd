//! Verdict record files, in-memory datasets and revision run lengths.
//!
//! Verdict records are line-delimited with fields `night` (ISO-8601 date),
//! `system`, `script`, `params` and `verdict`. The JSONL form writes one
//! object per line in that field order; the CSV form uses that exact header.
//! Revision logs use `night`, `sw_revision`, `tw_revision`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::GroupAssignment;
use crate::stats::Summary;
use crate::verdict::{ScoreSeries, SequenceScores, TestCaseKey, Verdict, VerdictHistory, VerdictRecord};

pub const VERDICT_HEADER: [&str; 5] = ["night", "system", "script", "params", "verdict"];
pub const REVISION_HEADER: [&str; 3] = ["night", "sw_revision", "tw_revision"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: {reason}")]
    ParseError { line: u64, reason: String },
    #[error("conflicting verdicts for {key} on {night}")]
    ConflictingVerdict { key: TestCaseKey, night: NaiveDate },
    #[error("line {line}: night {night} does not follow the previous entry")]
    NonAscendingNight { line: u64, night: NaiveDate },
    #[error("duplicate history for {0}")]
    DuplicateKey(TestCaseKey),
    #[error("revision log is empty")]
    EmptyLog,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?}; expected jsonl or csv")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictLine {
    night: NaiveDate,
    system: String,
    script: String,
    params: String,
    verdict: Verdict,
}

/// One line of a revision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionEntry {
    pub night: NaiveDate,
    pub sw_revision: String,
    pub tw_revision: String,
}

fn parse_lines<T: DeserializeOwned>(
    source: impl Read,
    format: Format,
    header: &[&str],
) -> Result<Vec<(u64, T)>, StoreError> {
    let mut out = Vec::new();
    match format {
        Format::Jsonl => {
            for (i, line) in io::BufReader::new(source).lines().enumerate() {
                let line = line?;
                let number = i as u64 + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let value = serde_json::from_str(&line).map_err(|e| StoreError::ParseError {
                    line: number,
                    reason: e.to_string(),
                })?;
                out.push((number, value));
            }
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .from_reader(source);
            let mut records = reader.records();
            match records.next() {
                None => return Ok(out),
                Some(first) => {
                    let first = first.map_err(csv_error)?;
                    if first.iter().ne(header.iter().copied()) {
                        return Err(StoreError::ParseError {
                            line: 1,
                            reason: format!("expected header {}", header.join(",")),
                        });
                    }
                }
            }
            for record in records {
                let record = record.map_err(csv_error)?;
                let line = record.position().map_or(0, |p| p.line());
                let value = record.deserialize(None).map_err(|e| StoreError::ParseError {
                    line,
                    reason: e.to_string(),
                })?;
                out.push((line, value));
            }
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> StoreError {
    let line = e.position().map_or(0, |p| p.line());
    StoreError::ParseError {
        line,
        reason: e.to_string(),
    }
}

/// Verdict histories keyed by test case, immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    histories: Vec<VerdictHistory>,
    nights: BTreeSet<NaiveDate>,
    provenance: String,
}

impl Dataset {
    pub fn from_histories(
        mut histories: Vec<VerdictHistory>,
        provenance: impl Into<String>,
    ) -> Result<Self, StoreError> {
        histories.retain(|h| !h.is_empty());
        histories.sort_by(|a, b| a.key().cmp(b.key()));
        if let Some(pair) = histories.windows(2).find(|p| p[0].key() == p[1].key()) {
            return Err(StoreError::DuplicateKey(pair[0].key().clone()));
        }
        let nights = histories
            .iter()
            .flat_map(|h| h.entries().iter().map(|(night, _)| *night))
            .collect();
        Ok(Dataset {
            histories,
            nights,
            provenance: provenance.into(),
        })
    }

    /// Histories sorted by key.
    pub fn histories(&self) -> &[VerdictHistory] {
        &self.histories
    }

    pub fn nights(&self) -> &BTreeSet<NaiveDate> {
        &self.nights
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.histories.iter().map(VerdictHistory::len).sum()
    }

    /// All records sorted by key, then night.
    pub fn records(&self) -> impl Iterator<Item = VerdictRecord> + '_ {
        self.histories.iter().flat_map(VerdictHistory::records)
    }
}

/// Loads verdict records. Identical duplicate records collapse into one.
pub fn ingest(
    source: impl Read,
    format: Format,
    provenance: impl Into<String>,
) -> Result<Dataset, StoreError> {
    let lines: Vec<(u64, VerdictLine)> = parse_lines(source, format, &VERDICT_HEADER)?;
    let mut by_key: BTreeMap<TestCaseKey, BTreeMap<NaiveDate, Verdict>> = BTreeMap::new();
    for (_, line) in lines {
        let key = TestCaseKey::new(line.system, line.script, line.params);
        let entries = by_key.entry(key.clone()).or_default();
        match entries.insert(line.night, line.verdict) {
            Some(previous) if previous != line.verdict => {
                return Err(StoreError::ConflictingVerdict {
                    key,
                    night: line.night,
                });
            }
            _ => {}
        }
    }
    from_map(by_key, provenance)
}

fn from_map(
    by_key: BTreeMap<TestCaseKey, BTreeMap<NaiveDate, Verdict>>,
    provenance: impl Into<String>,
) -> Result<Dataset, StoreError> {
    let histories = by_key
        .into_iter()
        .map(|(key, entries)| {
            VerdictHistory::new(key, entries.into_iter().collect())
                .expect("BTreeMap iteration is strictly ascending")
        })
        .collect();
    Dataset::from_histories(histories, provenance)
}

/// Combines datasets loaded from separate files. Records present in more
/// than one part must agree.
pub fn merge(parts: Vec<Dataset>, provenance: impl Into<String>) -> Result<Dataset, StoreError> {
    let mut by_key: BTreeMap<TestCaseKey, BTreeMap<NaiveDate, Verdict>> = BTreeMap::new();
    for part in parts {
        for record in part.records() {
            let entries = by_key.entry(record.key.clone()).or_default();
            match entries.insert(record.night, record.verdict) {
                Some(previous) if previous != record.verdict => {
                    return Err(StoreError::ConflictingVerdict {
                        key: record.key,
                        night: record.night,
                    });
                }
                _ => {}
            }
        }
    }
    from_map(by_key, provenance)
}

/// Writes every record, sorted by key then night.
pub fn export(dataset: &Dataset, format: Format, sink: impl Write) -> Result<(), StoreError> {
    let lines = dataset.records().map(|r| VerdictLine {
        night: r.night,
        system: r.key.test_system,
        script: r.key.test_script,
        params: r.key.parameter_setting,
        verdict: r.verdict,
    });
    match format {
        Format::Jsonl => write_jsonl(sink, lines),
        Format::Csv => {
            let mut writer = csv::WriterBuilder::new()
                .has_headers(false)
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(sink);
            writer.write_record(VERDICT_HEADER).map_err(csv_error)?;
            for line in lines {
                writer.serialize(line).map_err(csv_error)?;
            }
            writer.flush()?;
            Ok(())
        }
    }
}

pub fn write_jsonl<T: Serialize>(
    mut sink: impl Write,
    items: impl IntoIterator<Item = T>,
) -> Result<(), StoreError> {
    for item in items {
        serde_json::to_writer(&mut sink, &item).map_err(io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// The full history of `key`; empty when the key is absent.
pub fn query_history(dataset: &Dataset, key: &TestCaseKey) -> VerdictHistory {
    dataset
        .histories
        .binary_search_by(|h| h.key().cmp(key))
        .map(|i| dataset.histories[i].clone())
        .unwrap_or_else(|_| VerdictHistory::empty(key.clone()))
}

/// Every record on `night`, sorted by key.
pub fn query_night(dataset: &Dataset, night: NaiveDate) -> Vec<VerdictRecord> {
    dataset
        .histories
        .iter()
        .filter_map(|h| {
            h.entries()
                .binary_search_by(|(n, _)| n.cmp(&night))
                .ok()
                .map(|i| VerdictRecord {
                    key: h.key().clone(),
                    night,
                    verdict: h.entries()[i].1,
                })
        })
        .collect()
}

/// SW and TW revisions tested on each night, strictly ascending by night.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionLog {
    entries: Vec<RevisionEntry>,
}

impl RevisionLog {
    pub fn new(entries: Vec<RevisionEntry>) -> Result<Self, StoreError> {
        if let Some((i, pair)) = entries
            .windows(2)
            .enumerate()
            .find(|(_, p)| p[0].night >= p[1].night)
        {
            return Err(StoreError::NonAscendingNight {
                line: i as u64 + 2,
                night: pair[1].night,
            });
        }
        Ok(RevisionLog { entries })
    }

    pub fn parse(source: impl Read, format: Format) -> Result<Self, StoreError> {
        let lines: Vec<(u64, RevisionEntry)> = parse_lines(source, format, &REVISION_HEADER)?;
        if let Some(pair) = lines.windows(2).find(|p| p[0].1.night >= p[1].1.night) {
            return Err(StoreError::NonAscendingNight {
                line: pair[1].0,
                night: pair[1].1.night,
            });
        }
        Ok(RevisionLog {
            entries: lines.into_iter().map(|(_, e)| e).collect(),
        })
    }

    pub fn entries(&self) -> &[RevisionEntry] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStream {
    /// Lengths of maximal blocks of consecutive log entries with one revision.
    pub runs: Vec<usize>,
    pub summary: Summary,
}

/// Run lengths of the SW stream, the TW stream and the (SW, TW) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLengthStats {
    pub nights: usize,
    pub sw: RunStream,
    pub tw: RunStream,
    pub sw_and_tw: RunStream,
}

fn run_lengths<T: PartialEq>(values: impl IntoIterator<Item = T>) -> Vec<usize> {
    let mut runs: Vec<usize> = Vec::new();
    let mut previous: Option<T> = None;
    for value in values {
        match (&previous, runs.last_mut()) {
            (Some(p), Some(run)) if *p == value => *run += 1,
            _ => runs.push(1),
        }
        previous = Some(value);
    }
    runs
}

fn stream(runs: Vec<usize>) -> RunStream {
    let values: Vec<f64> = runs.iter().map(|&r| r as f64).collect();
    RunStream {
        summary: Summary::of(&values).expect("non-empty log has at least one run"),
        runs,
    }
}

/// Runs are counted over consecutive log entries; a night missing from the
/// log does not break a run.
pub fn run_length_stats(log: &RevisionLog) -> Result<RunLengthStats, StoreError> {
    if log.entries.is_empty() {
        return Err(StoreError::EmptyLog);
    }
    let e = &log.entries;
    Ok(RunLengthStats {
        nights: e.len(),
        sw: stream(run_lengths(e.iter().map(|r| &r.sw_revision))),
        tw: stream(run_lengths(e.iter().map(|r| &r.tw_revision))),
        sw_and_tw: stream(run_lengths(e.iter().map(|r| (&r.sw_revision, &r.tw_revision)))),
    })
}

/// One window of one test in a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScoreLine {
    pub system: String,
    pub script: String,
    pub params: String,
    pub window: usize,
    pub window_end: usize,
    pub night: NaiveDate,
    pub q: f64,
    pub p: f64,
    pub q_exact: String,
    pub p_exact: String,
}

impl WindowScoreLine {
    pub fn lines(history: &VerdictHistory, series: &ScoreSeries) -> Vec<WindowScoreLine> {
        let key = history.key();
        series
            .points
            .iter()
            .map(|pt| WindowScoreLine {
                system: key.test_system.clone(),
                script: key.test_script.clone(),
                params: key.parameter_setting.clone(),
                window: series.window_size,
                window_end: pt.window_end,
                night: history.entries()[pt.window_end].0,
                q: pt.q.value(),
                p: pt.p.value(),
                q_exact: pt.q.to_string(),
                p_exact: pt.p.to_string(),
            })
            .collect()
    }
}

/// Whole-history scores of one test; `q` is null for a single execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScoreLine {
    pub system: String,
    pub script: String,
    pub params: String,
    pub executions: usize,
    pub q: Option<f64>,
    pub p: f64,
    pub q_exact: Option<String>,
    pub p_exact: String,
}

impl SequenceScoreLine {
    pub fn new(history: &VerdictHistory, scores: &SequenceScores) -> Self {
        let key = history.key();
        SequenceScoreLine {
            system: key.test_system.clone(),
            script: key.test_script.clone(),
            params: key.parameter_setting.clone(),
            executions: history.len(),
            q: scores.q.map(|q| q.value()),
            p: scores.p.value(),
            q_exact: scores.q.map(|q| q.to_string()),
            p_exact: scores.p.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceLine {
    pub window_end: usize,
    pub score: f64,
    pub score_exact: String,
    pub final_p: f64,
}

/// One classified test in an assignments file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentLine {
    pub system: String,
    pub script: String,
    pub params: String,
    pub groups: Vec<String>,
    pub evidence: BTreeMap<String, EvidenceLine>,
}

impl From<&GroupAssignment> for AssignmentLine {
    fn from(a: &GroupAssignment) -> Self {
        AssignmentLine {
            system: a.key.test_system.clone(),
            script: a.key.test_script.clone(),
            params: a.key.parameter_setting.clone(),
            groups: a.groups.iter().cloned().collect(),
            evidence: a
                .evidence
                .iter()
                .filter_map(|(label, e)| {
                    let trigger = e.trigger?;
                    let final_p = e.final_p?;
                    Some((
                        label.clone(),
                        EvidenceLine {
                            window_end: trigger.window_end,
                            score: trigger.score.value(),
                            score_exact: trigger.score.to_string(),
                            final_p: final_p.value(),
                        },
                    ))
                })
                .collect(),
        }
    }
}

impl AssignmentLine {
    pub fn key(&self) -> TestCaseKey {
        TestCaseKey::new(&self.system, &self.script, &self.params)
    }
}

/// Expected groups of one synthetic test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLine {
    pub system: String,
    pub script: String,
    pub params: String,
    pub expected_groups: Vec<String>,
}

impl GroundTruthLine {
    pub fn new(key: &TestCaseKey, groups: &BTreeSet<String>) -> Self {
        GroundTruthLine {
            system: key.test_system.clone(),
            script: key.test_script.clone(),
            params: key.parameter_setting.clone(),
            expected_groups: groups.iter().cloned().collect(),
        }
    }
}

/// Reads any JSONL file of `T`, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(source: impl Read) -> Result<Vec<T>, StoreError> {
    Ok(parse_lines(source, Format::Jsonl, &[])?
        .into_iter()
        .map(|(_, v)| v)
        .collect())
}
