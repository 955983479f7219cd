use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_intermittence"));
    cmd.env_remove("INTERMITTENCE_OUT_DIR");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn worked_example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/worked_example.jsonl")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn groups_by_key(path: &Path, field: &str) -> BTreeMap<String, Vec<String>> {
    lines(path)
        .into_iter()
        .map(|v| {
            let key = format!("{}/{}/{}", v["system"].as_str().unwrap(), v["script"].as_str().unwrap(), v["params"].as_str().unwrap());
            let groups = v[field].as_array().unwrap().iter().map(|g| g.as_str().unwrap().to_string()).collect();
            (key, groups)
        })
        .collect()
}

#[test]
fn score_reproduces_worked_example() {
    let dir = TempDir::new().unwrap();
    let out = run(&["score", p(&worked_example()), "--out-dir", p(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let full = lines(&dir.path().join("sequence_scores.jsonl"));
    assert_eq!(full.len(), 1);
    assert_eq!(full[0]["q_exact"], "4/7");
    assert_eq!(full[0]["p_exact"], "3/8");
    assert_eq!(full[0]["p"], 0.375);
    // Eight verdicts give three six-wide windows and no 13-wide window.
    assert_eq!(lines(&dir.path().join("scores_w6.jsonl")).len(), 3);
    assert_eq!(fs::read(dir.path().join("scores_w13.jsonl")).unwrap(), b"");
}

#[test]
fn empty_input_warns_and_succeeds() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["score", p(&input), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("warning"));
    for name in ["scores_w6.jsonl", "scores_w13.jsonl", "sequence_scores.jsonl"] {
        assert_eq!(fs::read(out_dir.join(name)).unwrap(), b"", "{name}");
    }
}

#[test]
fn window_of_one_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["score", p(&worked_example()), "--window", "1", "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("WindowTooSmall"));
    assert!(!out_dir.exists());
}

#[test]
fn classify_recovers_bundled_ground_truth() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let cls = dir.path().join("cls");
    assert!(run(&["simulate", "--seed", "11", "--out-dir", p(&sim)]).status.success());
    let out = run(&["classify", p(&sim.join("dataset.jsonl")), "--out-dir", p(&cls)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let truth = groups_by_key(&sim.join("ground_truth.jsonl"), "expected_groups");
    let got = groups_by_key(&cls.join("assignments.jsonl"), "groups");
    for (key, expected) in &truth {
        let mut expected = expected.clone();
        expected.sort();
        let got = got.get(key).cloned().unwrap_or_default();
        assert_eq!(got, expected, "{key}");
    }
    for name in ["summary.txt", "summary.md", "summary.json", "overlap.json"] {
        assert!(cls.join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(cls.join("summary.txt")).unwrap();
    assert!(summary.contains("A13") && summary.contains("B13"));
}

#[test]
fn intermittent_only_specs_omit_consistent_groups() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let cls = dir.path().join("cls");
    let specs = dir.path().join("specs.toml");
    fs::write(
        &specs,
        "[[group]]\nlabel = \"A6\"\nkind = \"intermittent\"\nwindow_size = 6\nq_min = 0.5\np_final_min = 0.96\n",
    )
    .unwrap();
    assert!(run(&["simulate", "--out-dir", p(&sim)]).status.success());
    let out = run(&["classify", p(&sim.join("dataset.jsonl")), "--spec-file", p(&specs), "--out-dir", p(&cls)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let assigned = groups_by_key(&cls.join("assignments.jsonl"), "groups");
    assert!(!assigned.is_empty());
    assert!(assigned.values().all(|g| g == &["A6"]));
    let summary = fs::read_to_string(cls.join("summary.txt")).unwrap();
    assert!(!summary.contains("B6"));
}

#[test]
fn consistent_spec_without_partner_is_rejected() {
    let dir = TempDir::new().unwrap();
    let specs = dir.path().join("specs.toml");
    fs::write(
        &specs,
        "[[group]]\nlabel = \"B6\"\nkind = \"consistent\"\nwindow_size = 6\np_dip_max = 0.2\np_final_min = 0.96\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["classify", p(&worked_example()), "--spec-file", p(&specs), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("MissingExclusionPartner"));
    assert!(!out_dir.exists());
}

#[test]
fn window_flag_restricts_default_groups() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let cls = dir.path().join("cls");
    assert!(run(&["simulate", "--out-dir", p(&sim)]).status.success());
    let out = run(&["classify", p(&sim.join("dataset.jsonl")), "--window", "6", "--out-dir", p(&cls)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let assigned = groups_by_key(&cls.join("assignments.jsonl"), "groups");
    assert!(assigned.values().flatten().all(|g| g == "A6" || g == "B6"));

    let out = run(&["classify", p(&sim.join("dataset.jsonl")), "--window", "10", "--out-dir", p(&cls)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (seed, out) in [("5", &a), ("5", &b), ("6", &c)] {
        assert!(run(&["simulate", "--seed", seed, "--out-dir", p(out)]).status.success());
    }
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(fs::read(a.join("dataset.jsonl")).unwrap(), fs::read(c.join("dataset.jsonl")).unwrap());
    assert_eq!(
        fs::read(a.join("ground_truth.jsonl")).unwrap(),
        fs::read(c.join("ground_truth.jsonl")).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["rng_algorithm"].as_str().unwrap().contains("chacha8"));
}

#[test]
fn absorbing_pass_suite_lands_in_no_group() {
    let dir = TempDir::new().unwrap();
    let suite = dir.path().join("suite.toml");
    fs::write(
        &suite,
        "[[scenario]]\nname = \"steady\"\nreplicas = 5\nphases = [{ length = 60, model = \"always_pass\" }]\n\n\
         [[scenario]]\nname = \"absorbing\"\nreplicas = 5\nphases = [{ length = 60, model = { matrix = [[1.0, 0.0, 0.0], [0.7, 0.3, 0.0], [0.9, 0.0, 0.1]] } }]\n",
    )
    .unwrap();
    let sim = dir.path().join("sim");
    let cls = dir.path().join("cls");
    let out = run(&["simulate", "--suite", p(&suite), "--seed", "1", "--out-dir", p(&sim)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(run(&["classify", p(&sim.join("dataset.jsonl")), "--out-dir", p(&cls)]).status.success());
    assert_eq!(fs::read(cls.join("assignments.jsonl")).unwrap(), b"");
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    fs::write(
        &annotations,
        "{\"system\":\"sim\",\"script\":\"a6-a13\",\"params\":\"r0\",\"category\":\"HW Allocation / link breaker\",\"fix_id\":\"f1\",\"status\":\"fixed\"}\n",
    )
    .unwrap();
    let mut trees = Vec::new();
    for name in ["one", "two"] {
        let root = dir.path().join(name);
        let data = root.join("sim/dataset.jsonl");
        let [sim, score, classify, report] = ["sim", "score", "classify", "report"].map(|d| root.join(d));
        let steps: [Vec<&str>; 4] = [
            vec!["simulate", "--seed", "2021", "--out-dir", p(&sim)],
            vec!["score", p(&data), "--out-dir", p(&score)],
            vec!["classify", p(&data), "--out-dir", p(&classify)],
            vec!["report", p(&data), "--annotations", p(&annotations), "--out-dir", p(&report)],
        ];
        for args in &steps {
            let out = run(args);
            assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        }
        trees.push(tree(&root));
    }
    assert!(trees[0].len() > 20);
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn data_errors_exit_two_without_writing() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"night\":\"2021-01-01\",\"system\":\"a\",\"script\":\"b\",\"params\":\"c\",\"verdict\":\"pass\"}\n\
         {\"night\":\"2021-01-01\",\"system\":\"a\",\"script\":\"b\",\"params\":\"c\",\"verdict\":\"fail\"}\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    for cmd in ["ingest", "score", "classify", "report"] {
        let out = run(&[cmd, p(&bad), "--out-dir", p(&out_dir)]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(stderr(&out).contains("conflicting"), "{cmd}");
    }
    let out = run(&["classify", p(&dir.path().join("missing.jsonl")), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["classify"]).status.code(), Some(1));
    assert_eq!(run(&["score", "x.jsonl", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_and_env_out_dir() {
    let dir = TempDir::new().unwrap();
    fs::copy(worked_example(), dir.path().join("worked_example.jsonl")).unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "inputs = [\"worked_example.jsonl\"]\nwindows = [4]\nout_dir = \"from-config\"\n").unwrap();

    let out = run(&["score", "--config", p(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(lines(&dir.path().join("from-config/scores_w4.jsonl")).len(), 5);

    // Flags override the config; the environment variable supplies the
    // output directory when no flag does.
    let env_dir = dir.path().join("from-env");
    let out = bin()
        .args(["score", "--config", p(&config), "--window", "8"])
        .env("INTERMITTENCE_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let w8 = lines(&env_dir.join("scores_w8.jsonl"));
    assert_eq!(w8.len(), 1);
    assert_eq!(w8[0]["q_exact"], "4/7");

    fs::write(&config, "inputs = [\"worked_example.jsonl\"]\nwindow = [4]\n").unwrap();
    assert_eq!(run(&["score", "--config", p(&config)]).status.code(), Some(1));
}

#[test]
fn ingest_merges_and_converts_formats() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("more.csv");
    fs::write(
        &csv,
        "night,system,script,params,verdict\n2021-03-09,ts1,link_failover,default,pass\n2021-03-01,ts1,other,\"a,b\",invalid\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["ingest", p(&worked_example()), p(&csv), "--to", "csv", "--out-dir", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 10);
    assert!(text.contains("\"a,b\""));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("ingest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tests"], 2);
    assert_eq!(manifest["records"], 10);
    assert_eq!(manifest["nights"], 9);
}

#[test]
fn report_renders_requested_documents() {
    let dir = TempDir::new().unwrap();
    let revisions = dir.path().join("revisions.csv");
    fs::write(&revisions, "night,sw_revision,tw_revision\n2021-03-01,r1,t1\n2021-03-02,r1,t1\n2021-03-04,r2,t1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "report",
        p(&worked_example()),
        "--only",
        "timelines,run-lengths",
        "--all-timelines",
        "--revisions",
        p(&revisions),
        "--out-dir",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let files = tree(&out_dir);
    assert!(files.keys().all(|k| !k.ends_with("summary.txt") && !k.ends_with("heatmap.svg")));
    let svg = files.keys().find(|k| k.extension().is_some_and(|e| e == "svg")).expect("one timeline");
    let svg = String::from_utf8(files[svg].clone()).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("history shorter than window"));
    let runs = String::from_utf8(files[Path::new("run_lengths.txt")].clone()).unwrap();
    assert!(runs.contains("SW"));

    let out = run(&["report", p(&worked_example()), "--only", "ledger", "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
}
