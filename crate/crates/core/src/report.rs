//! Rendered artifacts: verdict timelines, night × test heatmaps, population
//! and group tables, and root-cause ledgers.
//!
//! Graphics are standalone SVG documents. Every value shown in a graphic is
//! also written to a line-delimited sidecar, and both use the same number
//! formatting, so a reader can match them textually.
//!
//! Palette (Okabe–Ito, color-vision safe):
//!
//! | item | color | timeline mark |
//! |------|-------|---------------|
//! | pass | `#009E73` | circle |
//! | fail | `#D55E00` | square |
//! | invalid | `#CC79A7` | triangle |
//! | not run | `#F0F0F0` (grey outline) | - |
//! | score curves | `#0072B2`, `#E69F00`, `#56B4E9`, `#000000` per window size | q dashed, p dotted |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{GroupAssignment, GroupOverlap, PopulationSummary};
use crate::stats::Summary;
use crate::store::{Dataset, RunLengthStats};
use crate::verdict::{ScoreSeries, TestCaseKey, Verdict, VerdictHistory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("score series for window {window_size} does not match a history of {history_len} verdicts")]
    SeriesMismatch {
        window_size: usize,
        history_len: usize,
    },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("annotation for {0} refers to a test in no group")]
    UnknownKey(TestCaseKey),
    #[error("annotation for {0} has status fixed but no fix_id")]
    MissingFixId(TestCaseKey),
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
}

pub const PASS_COLOR: &str = "#009E73";
pub const FAIL_COLOR: &str = "#D55E00";
pub const INVALID_COLOR: &str = "#CC79A7";
pub const NOT_RUN_COLOR: &str = "#F0F0F0";
const CURVE_COLORS: [&str; 4] = ["#0072B2", "#E69F00", "#56B4E9", "#000000"];

fn verdict_color(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => PASS_COLOR,
        Verdict::Fail => FAIL_COLOR,
        Verdict::Invalid => INVALID_COLOR,
    }
}

/// Shared formatting for values that appear in both a graphic and its sidecar.
fn num(x: f64) -> String {
    serde_json::to_string(&x).expect("finite score")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable sidecar line"));
        out.push('\n');
    }
    out
}

/// An SVG document and the data it shows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub svg: String,
    /// Line-delimited JSON records.
    pub sidecar: String,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TimelineLine<'a> {
    Verdict {
        index: usize,
        night: NaiveDate,
        verdict: Verdict,
    },
    Score {
        window: usize,
        window_end: usize,
        night: NaiveDate,
        q: f64,
        p: f64,
        q_exact: String,
        p_exact: String,
    },
    Note {
        window: usize,
        text: &'a str,
    },
}

const SHORT_HISTORY_NOTE: &str = "history shorter than window; no curve";

/// Verdict marks over execution index, with dashed q and dotted p curves
/// for each window size.
pub fn timeline_report(
    history: &VerdictHistory,
    series: &[ScoreSeries],
) -> Result<Rendered, ReportError> {
    let n = history.len();
    for s in series {
        let ends_match = s
            .points
            .iter()
            .enumerate()
            .all(|(i, pt)| pt.window_end == s.window_size - 1 + i);
        if s.window_size < 2 || s.points.len() != ScoreSeries::expected_len(n, s.window_size) || !ends_match {
            return Err(ReportError::SeriesMismatch {
                window_size: s.window_size,
                history_len: n,
            });
        }
    }

    const LEFT: f64 = 60.0;
    const STEP: f64 = 12.0;
    const MARK_Y: f64 = 50.0;
    const PLOT_TOP: f64 = 75.0;
    const PLOT_H: f64 = 200.0;
    const LEGEND_W: f64 = 260.0;
    let plot_w = STEP * n.max(1) as f64;
    let width = LEFT + plot_w + 20.0 + LEGEND_W;
    let height = PLOT_TOP + PLOT_H + 60.0;
    let x = |i: usize| LEFT + STEP * i as f64 + STEP / 2.0;
    let y = |v: f64| PLOT_TOP + PLOT_H * (1.0 - v);

    let mut svg = String::new();
    let mut side = Vec::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{LEFT}" y="20" font-size="13">{}</text>"#,
        escape(&history.key().to_string())
    );

    // Score axis.
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{PLOT_TOP}" width="{plot_w:.0}" height="{PLOT_H}" fill="none" stroke="#888888"/>"##
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{LEFT}" y2="{:.2}" stroke="#888888"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick}</text>"##,
            LEFT - 4.0,
            y(tick),
            y(tick),
            LEFT - 6.0,
            y(tick) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">score</text>"#,
        PLOT_TOP + PLOT_H / 2.0,
        PLOT_TOP + PLOT_H / 2.0
    );

    // Execution axis: index and night at regular ticks.
    let tick_every = (n / 10).max(1);
    let axis_y = PLOT_TOP + PLOT_H;
    for (i, (night, _)) in history.entries().iter().enumerate() {
        if i % tick_every == 0 || i + 1 == n {
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{axis_y}" x2="{:.2}" y2="{:.2}" stroke="#888888"/><text x="{:.2}" y="{:.2}" text-anchor="middle">{i}</text><text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="8">{night}</text>"##,
                x(i),
                x(i),
                axis_y + 4.0,
                x(i),
                axis_y + 15.0,
                x(i),
                axis_y + 27.0
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">execution index / night</text>"#,
        LEFT + plot_w / 2.0,
        axis_y + 45.0
    );

    // Verdict marks.
    for (i, (night, verdict)) in history.entries().iter().enumerate() {
        let color = verdict_color(*verdict);
        let title = format!("<title>{i} {night} {verdict}</title>");
        let (cx, cy) = (x(i), MARK_Y);
        match verdict {
            Verdict::Pass => {
                let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{color}">{title}</circle>"#);
            }
            Verdict::Fail => {
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}">{title}</rect>"#,
                    cx - 4.0,
                    cy - 4.0
                );
            }
            Verdict::Invalid => {
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}">{title}</polygon>"#,
                    cx,
                    cy - 5.0,
                    cx - 5.0,
                    cy + 4.0,
                    cx + 5.0,
                    cy + 4.0
                );
            }
        }
        side.push(TimelineLine::Verdict {
            index: i,
            night: *night,
            verdict: *verdict,
        });
    }

    // Curves.
    let mut legend: Vec<String> = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        let w = s.window_size;
        if s.points.is_empty() {
            legend.push(format!("w={w}: {SHORT_HISTORY_NOTE}"));
            side.push(TimelineLine::Note {
                window: w,
                text: SHORT_HISTORY_NOTE,
            });
            continue;
        }
        for (name, dash, value) in [
            ("q", "6,3", (|pt: &crate::verdict::ScorePoint| pt.q.value()) as fn(&_) -> f64),
            ("p", "1.5,3", |pt| pt.p.value()),
        ] {
            let points: Vec<String> = s
                .points
                .iter()
                .map(|pt| format!("{:.2},{:.2}", x(pt.window_end), y(value(pt))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="{name}{w}" points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="{dash}"/>"#,
                points.join(" ")
            );
            for pt in &s.points {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{color}"><title>{name} w={w} end={} {}</title></circle>"#,
                    x(pt.window_end),
                    y(value(pt)),
                    pt.window_end,
                    num(value(pt))
                );
            }
        }
        legend.push(format!("w={w}: q dashed, p dotted"));
        for pt in &s.points {
            side.push(TimelineLine::Score {
                window: w,
                window_end: pt.window_end,
                night: history.entries()[pt.window_end].0,
                q: pt.q.value(),
                p: pt.p.value(),
                q_exact: pt.q.to_string(),
                p_exact: pt.p.to_string(),
            });
        }
    }

    // Legend.
    let lx = LEFT + plot_w + 20.0;
    let mut ly = PLOT_TOP;
    for (label, color) in [("pass (circle)", PASS_COLOR), ("fail (square)", FAIL_COLOR), ("invalid (triangle)", INVALID_COLOR)] {
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="8" height="8" fill="{color}"/><text x="{:.2}" y="{ly:.2}">{label}</text>"#,
            ly - 8.0,
            lx + 12.0
        );
        ly += 15.0;
    }
    for (k, line) in legend.iter().enumerate() {
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 8.0,
            ly - 4.0,
            lx + 12.0,
            escape(line)
        );
        ly += 15.0;
    }
    svg.push_str("</svg>\n");

    Ok(Rendered {
        svg,
        sidecar: jsonl(side),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Pass,
    Fail,
    Invalid,
    NotRun,
}

impl From<Verdict> for Cell {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Cell::Pass,
            Verdict::Fail => Cell::Fail,
            Verdict::Invalid => Cell::Invalid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub keys: Vec<TestCaseKey>,
    pub nights: Vec<NaiveDate>,
    /// `cells[row][column]`, rows follow `keys`, columns follow `nights`.
    pub cells: Vec<Vec<Cell>>,
    pub rendered: Rendered,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum HeatmapLine<'a> {
    Nights {
        nights: &'a [NaiveDate],
    },
    Row {
        system: &'a str,
        script: &'a str,
        params: &'a str,
        cells: &'a [Cell],
    },
}

/// Rows are test cases sorted by key, columns are the dataset's nights
/// within `range` (all nights when `None`).
pub fn heatmap_report(dataset: &Dataset, range: Option<RangeInclusive<NaiveDate>>) -> Heatmap {
    let nights: Vec<NaiveDate> = dataset
        .nights()
        .iter()
        .copied()
        .filter(|n| range.as_ref().is_none_or(|r| r.contains(n)))
        .collect();
    let column: BTreeMap<NaiveDate, usize> =
        nights.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let keys: Vec<TestCaseKey> = dataset.histories().iter().map(|h| h.key().clone()).collect();
    let cells: Vec<Vec<Cell>> = dataset
        .histories()
        .iter()
        .map(|h| {
            let mut row = vec![Cell::NotRun; nights.len()];
            for (night, verdict) in h.entries() {
                if let Some(&c) = column.get(night) {
                    row[c] = (*verdict).into();
                }
            }
            row
        })
        .collect();

    const CELL: f64 = 8.0;
    const TOP: f64 = 40.0;
    let label_w = 8.0 + 6.0 * keys.iter().map(|k| k.to_string().chars().count()).max().unwrap_or(0) as f64;
    let width = label_w + CELL * nights.len().max(1) as f64 + 20.0;
    let height = TOP + CELL * keys.len().max(1) as f64 + 60.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="8">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let (Some(first), Some(last)) = (nights.first(), nights.last()) {
        let _ = writeln!(
            svg,
            r#"<text x="{label_w:.2}" y="16" font-size="11">{} tests × {} nights, {first} to {last}</text>"#,
            keys.len(),
            nights.len()
        );
    }
    for (r, key) in keys.iter().enumerate() {
        let ry = TOP + CELL * r as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            label_w - 4.0,
            ry + CELL - 1.0,
            escape(&key.to_string())
        );
        for (c, cell) in cells[r].iter().enumerate() {
            let cx = label_w + CELL * c as f64;
            let (fill, stroke) = match cell {
                Cell::Pass => (PASS_COLOR, "none"),
                Cell::Fail => (FAIL_COLOR, "none"),
                Cell::Invalid => (INVALID_COLOR, "none"),
                Cell::NotRun => (NOT_RUN_COLOR, "#BBBBBB"),
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{cx:.2}" y="{ry:.2}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="{stroke}" stroke-width="0.5"/>"#
            );
        }
    }
    let legend_y = TOP + CELL * keys.len().max(1) as f64 + 20.0;
    for (i, (label, fill)) in [
        ("pass", PASS_COLOR),
        ("fail", FAIL_COLOR),
        ("invalid", INVALID_COLOR),
        ("not run", NOT_RUN_COLOR),
    ]
    .iter()
    .enumerate()
    {
        let lx = label_w + 70.0 * i as f64;
        let _ = writeln!(
            svg,
            r##"<rect x="{lx:.2}" y="{:.2}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#BBBBBB" stroke-width="0.5"/><text x="{:.2}" y="{legend_y:.2}">{label}</text>"##,
            legend_y - CELL + 1.0,
            lx + 12.0
        );
    }
    svg.push_str("</svg>\n");

    let mut side = vec![HeatmapLine::Nights { nights: &nights }];
    side.extend(keys.iter().zip(&cells).map(|(k, row)| HeatmapLine::Row {
        system: &k.test_system,
        script: &k.test_script,
        params: &k.parameter_setting,
        cells: row,
    }));
    let sidecar = jsonl(side);

    Heatmap {
        keys,
        nights,
        cells,
        rendered: Rendered { svg, sidecar },
    }
}

/// A node of a root-cause taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CategoryDef")]
pub struct Category {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Category>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CategoryDef {
    Leaf(String),
    Node {
        name: String,
        #[serde(default)]
        children: Vec<Category>,
    },
}

impl From<CategoryDef> for Category {
    fn from(def: CategoryDef) -> Self {
        match def {
            CategoryDef::Leaf(name) => Category::leaf(&name),
            CategoryDef::Node { name, children } => Category { name, children },
        }
    }
}

impl Category {
    pub fn leaf(name: &str) -> Self {
        Category {
            name: name.to_string(),
            children: Vec::new(),
        }
    }

    pub fn node(name: &str, children: &[&str]) -> Self {
        Category {
            name: name.to_string(),
            children: children.iter().map(|c| Category::leaf(c)).collect(),
        }
    }
}

/// Tree of root-cause categories. Paths are written `"Parent / Child"`;
/// names may contain `/` but not the three-character separator `" / "`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    #[serde(rename = "category")]
    pub categories: Vec<Category>,
}

pub const PATH_SEPARATOR: &str = " / ";

impl Taxonomy {
    pub fn new(categories: Vec<Category>) -> Result<Self, ReportError> {
        fn check(level: &[Category]) -> Result<(), ReportError> {
            let mut names = BTreeSet::new();
            for c in level {
                let name = c.name.trim();
                if name.is_empty() || name.contains(PATH_SEPARATOR) || name != c.name {
                    return Err(ReportError::InvalidTaxonomy(format!("bad category name {:?}", c.name)));
                }
                if !names.insert(name) {
                    return Err(ReportError::InvalidTaxonomy(format!("duplicate category {name:?}")));
                }
                check(&c.children)?;
            }
            Ok(())
        }
        check(&categories)?;
        Ok(Taxonomy { categories })
    }

    pub fn from_toml(text: &str) -> Result<Self, ReportError> {
        let raw: Taxonomy =
            toml::from_str(text).map_err(|e| ReportError::InvalidTaxonomy(e.to_string()))?;
        Taxonomy::new(raw.categories)
    }

    /// Root-cause categories and subcategories found for intermittently
    /// failing tests in nightly embedded-system testing, plus the remaining
    /// contributing factors and the status rows.
    pub fn default_tree() -> Self {
        Taxonomy::new(vec![
            Category::node("HW Allocation", &["link breaker", "switch core", "empty port"]),
            Category::node(
                "TC Assumptions",
                &["timing", "test system layout", "temperature", "log file", "lib. version"],
            ),
            Category::node(
                "Test System Issues",
                &["replace device", "console junk", "I/O relay", "USB sticks", "FTP server", "license"],
            ),
            Category::node("SW or HW Faults", &["SW impact on HW", "SW timing"]),
            Category::node(
                "Code Maintenance",
                &["unclear", "broken renaming", "traffic generator", "forgotten patch"],
            ),
            Category::leaf("Complexity of Testing"),
            Category::leaf("TC Dependencies"),
            Category::leaf("Resource Leaks"),
            Category::leaf("Network Issues"),
            Category::leaf("Random Numbers Issues"),
            Category::leaf("Multiple Root Causes"),
            Category::leaf("Under Investigation"),
            Category::leaf("Unknown Fix"),
        ])
        .expect("default taxonomy is valid")
    }

    /// Normalizes `path` (trimming around separators) if it names a node.
    pub fn resolve(&self, path: &str) -> Result<Vec<String>, ReportError> {
        let parts: Vec<String> = path.split(PATH_SEPARATOR).map(|p| p.trim().to_string()).collect();
        let mut level = &self.categories;
        for part in &parts {
            match level.iter().find(|c| &c.name == part) {
                Some(c) => level = &c.children,
                None => return Err(ReportError::UnknownCategory(path.to_string())),
            }
        }
        Ok(parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixStatus {
    Fixed,
    MultipleRootCauses,
    UnderInvestigation,
    UnknownFix,
}

/// Root-cause finding for one test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub system: String,
    pub script: String,
    pub params: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_id: Option<String>,
    pub status: FixStatus,
    #[serde(default)]
    pub note: String,
}

impl Annotation {
    pub fn key(&self) -> TestCaseKey {
        TestCaseKey::new(&self.system, &self.script, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub path: Vec<String>,
    /// Annotated member tests per group label.
    pub counts: Vec<usize>,
    /// Distinct annotated test cases.
    pub distinct_tests: usize,
    /// Distinct fix ids among fixed annotations.
    pub distinct_fixes: usize,
}

impl LedgerRow {
    pub fn depth(&self) -> usize {
        self.path.len() - 1
    }

    pub fn name(&self) -> &str {
        self.path.last().map_or("", String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerTotals {
    pub annotated_tests: usize,
    pub fixed_tests: usize,
    pub distinct_fixes: usize,
    /// Fixed tests repaired by a fix that also repaired another test.
    pub duplicate_fixed_tests: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ledger {
    pub labels: Vec<String>,
    /// Taxonomy order; parent rows are the sum of their subcategory rows
    /// plus annotations placed on the parent itself.
    pub rows: Vec<LedgerRow>,
    pub totals: LedgerTotals,
}

#[derive(Default)]
struct NodeTally {
    by_group: Vec<BTreeSet<TestCaseKey>>,
    tests: BTreeSet<TestCaseKey>,
    fixes: BTreeSet<String>,
}

/// Counts annotated tests per category and group.
pub fn ledger_report(
    assignments: &[GroupAssignment],
    annotations: &[Annotation],
    taxonomy: &Taxonomy,
    labels: &[&str],
) -> Result<Ledger, ReportError> {
    let groups: BTreeMap<&TestCaseKey, &BTreeSet<String>> =
        assignments.iter().map(|a| (&a.key, &a.groups)).collect();
    let mut own: BTreeMap<Vec<String>, NodeTally> = BTreeMap::new();
    let mut fixed_tests = BTreeSet::new();
    let mut all_fixes = BTreeSet::new();
    let mut all_tests = BTreeSet::new();

    for a in annotations {
        let key = a.key();
        let path = taxonomy.resolve(&a.category)?;
        let member_of = groups.get(&key).ok_or_else(|| ReportError::UnknownKey(key.clone()))?;
        if a.status == FixStatus::Fixed && a.fix_id.is_none() {
            return Err(ReportError::MissingFixId(key));
        }
        let tally = own.entry(path).or_insert_with(|| NodeTally {
            by_group: vec![BTreeSet::new(); labels.len()],
            ..NodeTally::default()
        });
        for (i, label) in labels.iter().enumerate() {
            if member_of.contains(*label) {
                tally.by_group[i].insert(key.clone());
            }
        }
        tally.tests.insert(key.clone());
        all_tests.insert(key.clone());
        if let (FixStatus::Fixed, Some(fix)) = (a.status, &a.fix_id) {
            tally.fixes.insert(fix.clone());
            all_fixes.insert(fix.clone());
            fixed_tests.insert(key);
        }
    }

    fn walk(
        level: &[Category],
        prefix: &[String],
        own: &BTreeMap<Vec<String>, NodeTally>,
        width: usize,
        out: &mut Vec<LedgerRow>,
    ) -> Option<LedgerRow> {
        let mut sum: Option<LedgerRow> = None;
        for c in level {
            let mut path = prefix.to_vec();
            path.push(c.name.clone());
            let slot = out.len();
            out.push(LedgerRow {
                path: path.clone(),
                counts: vec![0; width],
                distinct_tests: 0,
                distinct_fixes: 0,
            });
            let mut row = walk(&c.children, &path, own, width, out).unwrap_or(LedgerRow {
                path: path.clone(),
                counts: vec![0; width],
                distinct_tests: 0,
                distinct_fixes: 0,
            });
            row.path = path.clone();
            if let Some(t) = own.get(&path) {
                for (count, keys) in row.counts.iter_mut().zip(&t.by_group) {
                    *count += keys.len();
                }
                row.distinct_tests += t.tests.len();
                row.distinct_fixes += t.fixes.len();
            }
            if row.distinct_tests == 0 {
                out.truncate(slot);
                continue;
            }
            out[slot] = row.clone();
            let acc = sum.get_or_insert_with(|| LedgerRow {
                path: prefix.to_vec(),
                counts: vec![0; width],
                distinct_tests: 0,
                distinct_fixes: 0,
            });
            for (a, b) in acc.counts.iter_mut().zip(&row.counts) {
                *a += b;
            }
            acc.distinct_tests += row.distinct_tests;
            acc.distinct_fixes += row.distinct_fixes;
        }
        sum
    }

    let mut rows = Vec::new();
    walk(&taxonomy.categories, &[], &own, labels.len(), &mut rows);

    Ok(Ledger {
        labels: labels.iter().map(|l| l.to_string()).collect(),
        rows,
        totals: LedgerTotals {
            annotated_tests: all_tests.len(),
            fixed_tests: fixed_tests.len(),
            distinct_fixes: all_fixes.len(),
            duplicate_fixed_tests: fixed_tests.len() - all_fixes.len().min(fixed_tests.len()),
        },
    })
}

/// A plain table renderable as aligned text or as a markdown table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Self {
        Table {
            title: title.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                std::iter::once(&self.headers[c])
                    .chain(self.rows.iter().filter_map(|r| r.get(c)))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.headers));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n| {} |\n|", self.title, self.headers.join(" | "));
        for i in 0..self.headers.len() {
            out.push_str(if i == 0 { "---|" } else { "---:|" });
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }
}

/// Text and markdown renderings of a set of tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableReport {
    pub tables: Vec<Table>,
}

impl TableReport {
    pub fn to_text(&self) -> String {
        self.tables.iter().map(Table::to_text).collect::<Vec<_>>().join("\n")
    }

    pub fn to_markdown(&self) -> String {
        self.tables.iter().map(Table::to_markdown).collect::<Vec<_>>().join("\n")
    }
}

fn fixed(x: f64) -> String {
    format!("{x:.3}")
}

fn summary_cells(label: &str, s: Option<&Summary>) -> Vec<String> {
    match s {
        Some(s) => vec![
            label.to_string(),
            fixed(s.min),
            fixed(s.max),
            fixed(s.mean),
            fixed(s.median),
            fixed(s.std_dev),
            fixed(s.sample_std_dev),
        ],
        None => vec![label.to_string(), "-".into(), "-".into(), "-".into(), "-".into(), "-".into(), "-".into()],
    }
}

const SUMMARY_HEADERS: [&str; 7] = ["", "Min", "Max", "Avg.", "Med.", "Std.d.", "Std.d. (n-1)"];

/// Population and group tables. Group sizes are shown as counts and as
/// fractions of the tests with at least two executions.
pub fn summary_report(summary: &PopulationSummary, overlap: &GroupOverlap) -> TableReport {
    let mut population = Table::new("Population", &["Metric", "Value"]);
    population.push(vec!["empty".into(), summary.empty.to_string()]);
    population.push(vec!["tests".into(), summary.tests_total.to_string()]);
    population.push(vec!["tests executed more than once".into(), summary.tests_scored.to_string()]);
    population.push(vec![
        "tests executed once (excluded)".into(),
        summary.excluded_single_execution_tests.to_string(),
    ]);
    population.push(vec![
        "non-zero q-score fraction".into(),
        summary.fraction_nonzero_q.map_or("-".into(), fixed),
    ]);

    let mut scores = Table::new("Scores over complete histories", &SUMMARY_HEADERS);
    scores.push(summary_cells("p-score", summary.p.as_ref()));
    scores.push(summary_cells("q-score", summary.q.as_ref()));
    scores.push(summary_cells("executions", summary.executions_per_test.as_ref()));

    let d = &summary.verdict_distribution;
    let mut verdicts = Table::new("Verdicts", &["Verdict", "Count", "Fraction"]);
    for (name, count, fraction) in [
        ("pass", d.pass, d.pass_fraction),
        ("fail", d.fail, d.fail_fraction),
        ("invalid", d.invalid, d.invalid_fraction),
    ] {
        verdicts.push(vec![name.into(), count.to_string(), fixed(fraction)]);
    }
    verdicts.push(vec!["total".into(), d.total.to_string(), fixed(if d.total == 0 { 0.0 } else { 1.0 })]);

    let mut groups = Table::new("Groups", &["Group", "Tests", "Fraction"]);
    for (i, label) in overlap.labels.iter().enumerate() {
        let size = overlap.intersections[i][i];
        let fraction = if summary.tests_scored == 0 {
            "-".to_string()
        } else {
            fixed(size as f64 / summary.tests_scored as f64)
        };
        groups.push(vec![label.clone(), size.to_string(), fraction]);
    }

    let mut header: Vec<&str> = vec![""];
    header.extend(overlap.labels.iter().map(String::as_str));
    let mut pairs = Table::new("Group overlap", &header);
    for (i, label) in overlap.labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(overlap.intersections[i].iter().map(|c| c.to_string()));
        pairs.push(row);
    }

    let mut multiplicity = Table::new("Tests by number of groups", &["Groups", "Tests"]);
    for (k, count) in &overlap.exactly_k {
        multiplicity.push(vec![k.to_string(), count.to_string()]);
    }

    TableReport {
        tables: vec![population, scores, verdicts, groups, pairs, multiplicity],
    }
}

/// Table of consecutive nights tested with the same revision.
pub fn run_length_report(stats: &RunLengthStats) -> TableReport {
    let mut table = Table::new("Consecutive nights with the same revision", &SUMMARY_HEADERS);
    table.push(summary_cells("SW", Some(&stats.sw.summary)));
    table.push(summary_cells("TW", Some(&stats.tw.summary)));
    table.push(summary_cells("SW and TW", Some(&stats.sw_and_tw.summary)));
    TableReport { tables: vec![table] }
}

pub fn ledger_table(ledger: &Ledger) -> TableReport {
    let mut header: Vec<&str> = vec!["Root Cause/Fix"];
    header.extend(ledger.labels.iter().map(String::as_str));
    header.extend(["Tot.", "Fixes"]);
    let mut table = Table::new("Root causes", &header);
    for row in &ledger.rows {
        let indent = if row.depth() == 0 { String::new() } else { format!("{}- ", "  ".repeat(row.depth() - 1)) };
        let mut cells = vec![format!("{indent}{}", row.name())];
        cells.extend(row.counts.iter().map(|c| c.to_string()));
        cells.push(row.distinct_tests.to_string());
        cells.push(row.distinct_fixes.to_string());
        table.push(cells);
    }
    let t = &ledger.totals;
    let mut totals = Table::new("Annotation totals", &["Metric", "Value"]);
    totals.push(vec!["annotated tests".into(), t.annotated_tests.to_string()]);
    totals.push(vec!["fixed tests".into(), t.fixed_tests.to_string()]);
    totals.push(vec!["distinct fixes".into(), t.distinct_fixes.to_string()]);
    totals.push(vec!["fixed tests sharing a fix".into(), t.duplicate_fixed_tests.to_string()]);
    TableReport { tables: vec![table, totals] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{group_overlap, population_summary};
    use crate::store::{ingest, query_night, Format};
    use crate::verdict::{parse_compact, score_windows};

    fn history(s: &str) -> VerdictHistory {
        VerdictHistory::consecutive(
            TestCaseKey::new("sys", "t<1>", "p"),
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            &parse_compact(s).unwrap(),
        )
    }

    fn sidecar_lines(r: &Rendered) -> Vec<serde_json::Value> {
        r.sidecar.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    #[test]
    fn all_pass_timeline_is_flat() {
        let h = history(&"P".repeat(20));
        let series = score_windows(&h.verdicts(), 6).unwrap();
        let r = timeline_report(&h, &[series]).unwrap();
        let lines = sidecar_lines(&r);
        let scores: Vec<_> = lines.iter().filter(|l| l["kind"] == "score").collect();
        assert_eq!(scores.len(), 15);
        assert!(scores.iter().all(|l| l["q"] == 0.0 && l["p"] == 1.0));
        assert_eq!(r.svg.matches("<circle cx").count() - 2 * 15, 20);
        assert!(!r.svg.contains(&format!("fill=\"{FAIL_COLOR}\"><title>")));
        assert!(r.svg.contains("t&lt;1&gt;"));
    }

    #[test]
    fn figure_one_timeline_matches_scores() {
        let h = history("FPPFFPFF");
        let series = score_windows(&h.verdicts(), 6).unwrap();
        let r = timeline_report(&h, std::slice::from_ref(&series)).unwrap();
        let lines = sidecar_lines(&r);
        let scores: Vec<_> = lines.iter().filter(|l| l["kind"] == "score").collect();
        assert_eq!(scores.len(), 3);
        for (line, pt) in scores.iter().zip(&series.points) {
            assert_eq!(line["window_end"], pt.window_end);
            assert_eq!(line["q"].as_f64().unwrap(), pt.q.value());
            assert_eq!(line["q_exact"], pt.q.to_string());
            // The value printed in the graphic is the sidecar's text.
            let shown = format!("q w=6 end={} {}</title>", pt.window_end, line["q"]);
            assert!(r.svg.contains(&shown), "missing {shown}");
            let shown = format!("p w=6 end={} {}</title>", pt.window_end, line["p"]);
            assert!(r.svg.contains(&shown), "missing {shown}");
        }
    }

    #[test]
    fn short_history_gets_note_only() {
        let h = history("PFP");
        let series = score_windows(&h.verdicts(), 6).unwrap();
        let r = timeline_report(&h, &[series]).unwrap();
        assert!(!r.svg.contains("<polyline"));
        assert!(r.svg.contains(SHORT_HISTORY_NOTE));
        assert!(r.sidecar.contains("\"kind\":\"note\""));
    }

    #[test]
    fn mismatched_series_rejected() {
        let series = score_windows(&parse_compact("PPPPPPPP").unwrap(), 6).unwrap();
        let h = history("PPPPPPP");
        assert_eq!(
            timeline_report(&h, &[series]),
            Err(ReportError::SeriesMismatch { window_size: 6, history_len: 7 })
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let h = history("PFFIPFPPPP");
        let s = [score_windows(&h.verdicts(), 6).unwrap(), score_windows(&h.verdicts(), 13).unwrap()];
        assert_eq!(timeline_report(&h, &s).unwrap(), timeline_report(&h, &s).unwrap());
    }

    const RECORDS: &str = "night,system,script,params,verdict
2022-01-01,ts,a,p,pass
2022-01-02,ts,a,p,pass
2022-01-03,ts,a,p,pass
2022-01-01,ts,b,p,fail
2022-01-03,ts,b,p,invalid
";

    #[test]
    fn heatmap_cells() {
        let ds = ingest(RECORDS.as_bytes(), Format::Csv, "t").unwrap();
        let map = heatmap_report(&ds, None);
        assert_eq!(map.nights.len(), 3);
        assert_eq!(map.cells[0], [Cell::Pass; 3]);
        assert_eq!(map.cells[1], [Cell::Fail, Cell::NotRun, Cell::Invalid]);
        assert_eq!(map.rendered.svg.matches(NOT_RUN_COLOR).count(), 2); // cell + legend

        // Cross-check each column against a per-night query.
        for (c, night) in map.nights.iter().enumerate() {
            let records = query_night(&ds, *night);
            let column: Vec<Cell> = map.cells.iter().map(|row| row[c]).collect();
            let expected: Vec<Cell> = map
                .keys
                .iter()
                .map(|k| {
                    records
                        .iter()
                        .find(|r| &r.key == k)
                        .map_or(Cell::NotRun, |r| r.verdict.into())
                })
                .collect();
            assert_eq!(column, expected);
        }

        let d = |day| NaiveDate::from_ymd_opt(2022, 1, day).unwrap();
        let narrowed = heatmap_report(&ds, Some(d(2)..=d(3)));
        assert_eq!(narrowed.nights, [d(2), d(3)]);
        assert_eq!(narrowed.cells[1], [Cell::NotRun, Cell::Invalid]);
    }

    fn assignment(name: &str, groups: &[&str]) -> GroupAssignment {
        GroupAssignment {
            key: TestCaseKey::new("ts", name, "p"),
            groups: groups.iter().map(|g| g.to_string()).collect(),
            evidence: BTreeMap::new(),
        }
    }

    fn annotation(name: &str, category: &str, fix: Option<&str>) -> Annotation {
        Annotation {
            system: "ts".into(),
            script: name.into(),
            params: "p".into(),
            category: category.into(),
            fix_id: fix.map(str::to_string),
            status: if fix.is_some() { FixStatus::Fixed } else { FixStatus::UnderInvestigation },
            note: String::new(),
        }
    }

    const LABELS: [&str; 4] = ["A6", "A13", "B6", "B13"];

    #[test]
    fn ledger_distinct_totals() {
        let assignments = [assignment("a", &["A6"]), assignment("b", &["A6"])];
        let annotations = [
            annotation("a", "TC Assumptions / timing", Some("fix-1")),
            annotation("b", "TC Assumptions / timing", Some("fix-2")),
        ];
        let ledger = ledger_report(&assignments, &annotations, &Taxonomy::default_tree(), &LABELS).unwrap();
        let timing = ledger.rows.iter().find(|r| r.name() == "timing").unwrap();
        assert_eq!(timing.distinct_tests, 2);
        assert_eq!(timing.distinct_fixes, 2);
        assert_eq!(ledger.rows[0].name(), "TC Assumptions");
        assert_eq!(ledger.rows[0].counts, [2, 0, 0, 0]);
    }

    #[test]
    fn ledger_errors_and_empty() {
        let tax = Taxonomy::default_tree();
        let assignments = [assignment("a", &["A6"])];
        assert_eq!(
            ledger_report(&assignments, &[annotation("a", "Cosmic Rays", Some("f"))], &tax, &LABELS),
            Err(ReportError::UnknownCategory("Cosmic Rays".into()))
        );
        let mut missing = annotation("a", "Unknown Fix", None);
        missing.status = FixStatus::Fixed;
        assert!(matches!(
            ledger_report(&assignments, &[missing], &tax, &LABELS),
            Err(ReportError::MissingFixId(_))
        ));
        assert!(matches!(
            ledger_report(&assignments, &[annotation("zz", "Unknown Fix", None)], &tax, &LABELS),
            Err(ReportError::UnknownKey(_))
        ));
        let empty = ledger_report(&assignments, &[], &tax, &LABELS).unwrap();
        assert!(empty.rows.is_empty());
        assert_eq!(ledger_table(&empty).tables[0].rows.len(), 0);
    }

    #[test]
    fn taxonomy_validation_and_toml() {
        assert!(Taxonomy::new(vec![Category::leaf("x"), Category::leaf("x")]).is_err());
        assert!(Taxonomy::new(vec![Category::leaf("a / b")]).is_err());
        assert!(Taxonomy::new(vec![Category::leaf("I/O relay")]).is_ok());
        let tax = Taxonomy::from_toml(
            "[[category]]\nname = \"Net\"\nchildren = [\"dns\", { name = \"tcp\", children = [\"reset\"] }]\n",
        )
        .unwrap();
        assert_eq!(tax.resolve("Net / tcp / reset").unwrap(), ["Net", "tcp", "reset"]);
        assert!(tax.resolve("Net / udp").is_err());
    }

    #[test]
    fn summary_tables() {
        let data = [history("PPPP"), history("PFPF")];
        // Distinct keys for the population.
        let data: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, h)| VerdictHistory::consecutive(
                TestCaseKey::new("s", format!("t{i}"), "p"),
                h.entries()[0].0,
                &h.verdicts(),
            ))
            .collect();
        let summary = population_summary(&data);
        let overlap = group_overlap(&[assignment("t1", &["A6"])], &LABELS);
        let report = summary_report(&summary, &overlap);
        let text = report.to_text();
        assert!(text.contains("p-score"));
        let groups = &report.tables[3];
        assert_eq!(groups.rows[0], ["A6", "1", "0.500"]);
        assert!(report.to_markdown().contains("| A6 | 1 | 0.500 |"));

        let empty = summary_report(&population_summary(&[]), &group_overlap(&[], &LABELS));
        assert_eq!(empty.tables[0].rows[0], ["empty", "true"]);
    }
}
