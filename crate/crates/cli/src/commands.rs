//! Subcommands. Each one reads and validates all inputs and renders every
//! output in memory; files are written only after that succeeds.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use intermittence::report::{
    heatmap_report, ledger_report, ledger_table, run_length_report, summary_report,
    timeline_report, Annotation, Taxonomy,
};
use intermittence::store::{
    read_jsonl, write_jsonl, AssignmentLine, GroundTruthLine, SequenceScoreLine, WindowScoreLine,
};
use intermittence::verdict::sequence_scores;
use intermittence::{
    export, generate_dataset, group_overlap, ingest, merge, population_summary, run_length_stats,
    windowed_scores, Classifier, Dataset, Format, GroupAssignment, RevisionLog, ScenarioSuite,
    TestCaseKey,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Files to write, relative to the output directory.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    fn add_jsonl<T: Serialize>(&mut self, path: &str, items: impl IntoIterator<Item = T>) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, items).expect("writing to memory");
        self.add(path, buf);
    }

    fn add_json<T: Serialize>(&mut self, path: &str, value: &T) {
        let mut buf = serde_json::to_vec_pretty(value).expect("serializable");
        buf.push(b'\n');
        self.add(path, buf);
    }

    pub fn write(self, dir: &Path) -> Result<usize> {
        let count = self.files.len();
        for (rel, bytes) in self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
            }
            fs::write(&path, bytes)
                .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(count)
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let read = if path.as_os_str() == "-" {
        io::stdin().read_to_end(&mut buf).map(|_| ())
    } else {
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf).map(|_| ()))
    };
    read.map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(buf)
}

/// Loads and merges every input file of the run.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    if config.inputs.is_empty() {
        return Err(CliError::usage("no input files given"));
    }
    let mut parts = Vec::new();
    let mut names = Vec::new();
    for path in &config.inputs {
        let bytes = read_input(path)?;
        let name = path.file_name().map_or("stdin".into(), |n| n.to_string_lossy().into_owned());
        let part = ingest(bytes.as_slice(), config.format_for(path), name.clone())
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        parts.push(part);
        names.push(name);
    }
    let dataset = if parts.len() == 1 {
        parts.pop().expect("one part")
    } else {
        merge(parts, names.join(","))?
    };
    if dataset.is_empty() {
        eprintln!("warning: no verdict records in the input");
    }
    Ok(dataset)
}

#[derive(Serialize)]
struct IngestManifest<'a> {
    provenance: &'a str,
    tests: usize,
    records: usize,
    nights: usize,
    first_night: Option<chrono::NaiveDate>,
    last_night: Option<chrono::NaiveDate>,
}

pub fn ingest_cmd(config: &RunConfig, to: Format) -> Result<Outputs> {
    let dataset = load_dataset(config)?;
    let mut out = Outputs::default();
    let mut buf = Vec::new();
    export(&dataset, to, &mut buf)?;
    out.add(format!("dataset.{}", to.extension()), buf);
    out.add_json(
        "ingest.json",
        &IngestManifest {
            provenance: dataset.provenance(),
            tests: dataset.len(),
            records: dataset.record_count(),
            nights: dataset.nights().len(),
            first_night: dataset.nights().first().copied(),
            last_night: dataset.nights().last().copied(),
        },
    );
    Ok(out)
}

pub fn score_cmd(config: &RunConfig) -> Result<Outputs> {
    let windows = config.windows()?;
    let dataset = load_dataset(config)?;
    let mut out = Outputs::default();
    for &w in &windows {
        let lines: Vec<Vec<WindowScoreLine>> = dataset
            .histories()
            .par_iter()
            .map(|h| {
                let series = windowed_scores(h, w).expect("window size checked");
                WindowScoreLine::lines(h, &series)
            })
            .collect();
        out.add_jsonl(&format!("scores_w{w}.jsonl"), lines.into_iter().flatten());
    }
    let full = dataset.histories().iter().map(|h| {
        let scores = sequence_scores(&h.verdicts()).expect("histories in a dataset are non-empty");
        SequenceScoreLine::new(h, &scores)
    });
    out.add_jsonl("sequence_scores.jsonl", full);
    Ok(out)
}

fn classify(config: &RunConfig, dataset: &Dataset) -> Result<(Classifier, Vec<GroupAssignment>)> {
    let classifier = Classifier::new(config.specs()?)?;
    let assigned = classifier.assign_all(dataset.histories());
    Ok((classifier, assigned))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    summary: &'a intermittence::PopulationSummary,
    overlap: &'a intermittence::GroupOverlap,
}

fn summary_outputs(out: &mut Outputs, dataset: &Dataset, classifier: &Classifier, assigned: &[GroupAssignment]) {
    let summary = population_summary(dataset.histories());
    let overlap = group_overlap(assigned, &classifier.labels());
    let tables = summary_report(&summary, &overlap);
    out.add("summary.txt", tables.to_text());
    out.add("summary.md", tables.to_markdown());
    out.add_json("summary.json", &SummaryFile { summary: &summary, overlap: &overlap });
}

pub fn classify_cmd(config: &RunConfig) -> Result<Outputs> {
    // Specs are checked before any input is read.
    Classifier::new(config.specs()?)?;
    let dataset = load_dataset(config)?;
    let (classifier, assigned) = classify(config, &dataset)?;
    let mut out = Outputs::default();
    out.add_jsonl("assignments.jsonl", assigned.iter().map(AssignmentLine::from));
    summary_outputs(&mut out, &dataset, &classifier, &assigned);
    out.add_json("overlap.json", &group_overlap(&assigned, &classifier.labels()));
    Ok(out)
}

#[derive(Serialize)]
struct SimulateManifest<'a> {
    seed: u64,
    rng_algorithm: &'a str,
    suite: String,
    system: &'a str,
    scenarios: usize,
    tests: usize,
    records: usize,
}

pub fn simulate_cmd(config: &RunConfig, to: Format) -> Result<Outputs> {
    let (suite, suite_name) = match &config.suite {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read suite {}: {e}", path.display())))?;
            let suite = ScenarioSuite::from_toml(&text)?;
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            (suite, name)
        }
        None => (ScenarioSuite::bundled(), "bundled".to_string()),
    };
    suite.validate()?;
    let seed = config.seed.unwrap_or(0);
    let synthetic = generate_dataset(&suite, seed)?;
    let rng_algorithm = synthetic.rng_algorithm;
    let ground_truth: Vec<GroundTruthLine> = synthetic
        .ground_truth
        .iter()
        .map(|(key, groups)| GroundTruthLine::new(key, groups))
        .collect();
    let dataset = Dataset::from_histories(synthetic.histories, "simulated")?;

    let mut out = Outputs::default();
    let mut buf = Vec::new();
    export(&dataset, to, &mut buf)?;
    out.add(format!("dataset.{}", to.extension()), buf);
    out.add_jsonl("ground_truth.jsonl", ground_truth);
    out.add_json(
        "manifest.json",
        &SimulateManifest {
            seed,
            rng_algorithm,
            suite: suite_name,
            system: &suite.system,
            scenarios: suite.scenarios.len(),
            tests: dataset.len(),
            records: dataset.record_count(),
        },
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportKind {
    Summary,
    Heatmap,
    Timelines,
    Ledger,
    RunLengths,
}

#[derive(Serialize)]
struct TimelineIndex<'a> {
    file: String,
    system: &'a str,
    script: &'a str,
    params: &'a str,
    groups: Vec<String>,
}

fn slug(key: &TestCaseKey) -> String {
    let raw = format!("{}_{}_{}", key.test_system, key.test_script, key.parameter_setting);
    let mut s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    s.truncate(80);
    s
}

pub fn report_cmd(config: &RunConfig, only: &[ReportKind], all_timelines: bool) -> Result<Outputs> {
    let explicit = !only.is_empty();
    let wants = |k: ReportKind| {
        if explicit {
            only.contains(&k)
        } else {
            match k {
                ReportKind::Ledger => config.annotations.is_some(),
                ReportKind::RunLengths => config.revisions.is_some(),
                _ => true,
            }
        }
    };
    if wants(ReportKind::Ledger) && config.annotations.is_none() {
        return Err(CliError::usage("the ledger report needs --annotations"));
    }
    if wants(ReportKind::RunLengths) && config.revisions.is_none() {
        return Err(CliError::usage("the run-length report needs --revisions"));
    }
    if let (Some(from), Some(to)) = (config.from, config.to) {
        if from > to {
            return Err(CliError::usage(format!("--from {from} is after --to {to}")));
        }
    }
    let windows = config.windows()?;
    let taxonomy = match &config.taxonomy {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read taxonomy {}: {e}", path.display())))?;
            Taxonomy::from_toml(&text)?
        }
        None => Taxonomy::default_tree(),
    };
    Classifier::new(config.specs()?)?;

    let dataset = load_dataset(config)?;
    let (classifier, assigned) = classify(config, &dataset)?;
    let mut out = Outputs::default();

    if wants(ReportKind::Summary) {
        summary_outputs(&mut out, &dataset, &classifier, &assigned);
    }
    if wants(ReportKind::Heatmap) {
        let first = dataset.nights().first().copied();
        let last = dataset.nights().last().copied();
        let range = match (config.from.or(first), config.to.or(last)) {
            (Some(a), Some(b)) if config.from.is_some() || config.to.is_some() => Some(a..=b),
            _ => None,
        };
        let heatmap = heatmap_report(&dataset, range);
        out.add("heatmap.svg", heatmap.rendered.svg);
        out.add("heatmap.jsonl", heatmap.rendered.sidecar);
    }
    if wants(ReportKind::Timelines) {
        let grouped: std::collections::BTreeMap<&TestCaseKey, &GroupAssignment> =
            assigned.iter().map(|a| (&a.key, a)).collect();
        let selected: Vec<_> = dataset
            .histories()
            .iter()
            .filter(|h| all_timelines || grouped.contains_key(h.key()))
            .collect();
        let rendered = selected
            .par_iter()
            .map(|h| {
                let series: Vec<_> = windows
                    .iter()
                    .map(|&w| windowed_scores(h, w).expect("window size checked"))
                    .collect();
                timeline_report(h, &series)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut index = Vec::new();
        for (i, (h, r)) in selected.iter().zip(rendered).enumerate() {
            let key = h.key();
            let stem = format!("{i:05}-{}", slug(key));
            out.add(format!("timelines/{stem}.svg"), r.svg);
            out.add(format!("timelines/{stem}.jsonl"), r.sidecar);
            index.push(TimelineIndex {
                file: format!("{stem}.svg"),
                system: &key.test_system,
                script: &key.test_script,
                params: &key.parameter_setting,
                groups: grouped.get(key).map_or_else(Vec::new, |a| a.groups.iter().cloned().collect()),
            });
        }
        out.add_jsonl("timelines/index.jsonl", index);
    }
    if wants(ReportKind::Ledger) {
        let path = config.annotations.as_ref().expect("checked above");
        let annotations: Vec<Annotation> = read_jsonl(read_input(path)?.as_slice())
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let ledger = ledger_report(&assigned, &annotations, &taxonomy, &classifier.labels())?;
        let table = ledger_table(&ledger);
        out.add("ledger.txt", table.to_text());
        out.add("ledger.md", table.to_markdown());
        out.add_json("ledger.json", &ledger);
    }
    if wants(ReportKind::RunLengths) {
        let path = config.revisions.as_ref().expect("checked above");
        let log = RevisionLog::parse(read_input(path)?.as_slice(), config_format(path))
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let stats = run_length_stats(&log)?;
        let table = run_length_report(&stats);
        out.add("run_lengths.txt", table.to_text());
        out.add("run_lengths.md", table.to_markdown());
        out.add_json("run_lengths.json", &stats);
    }
    Ok(out)
}

/// Revision logs are never overridden by `--format`, which names the
/// verdict input format.
fn config_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        _ => Format::Jsonl,
    }
}
