use std::fs;
use std::path::Path;
use std::process::Command;

use editbench::artifacts::read_scores_csv;
use editbench::{cmd_eval, cmd_gen, cmd_plot, cmd_report, ExperimentConfig, Layout, RunError, RunManifest, Split};
use editbench_core::{apply_sequence, ConflictSplit, EditMethod, Editor, ModelParams, RoundCase, RoundSplit};

fn small(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.output_dir = dir.to_path_buf();
    c.bench.cases_per_split = 12;
    c.metrics.variants = 3;
    c
}

fn file_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "manifest.json" {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn default_gen_writes_every_split_and_matching_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.output_dir = dir.path().to_path_buf();
    let summary = cmd_gen(&c).unwrap();
    let layout = Layout::new(dir.path());
    let data: Vec<_> = fs::read_dir(dir.path().join("data")).unwrap().collect();
    assert_eq!(data.len(), 6);
    assert_eq!(summary.counts.len(), 6);
    let manifest = RunManifest::load(&layout.manifest()).unwrap().unwrap();
    assert_eq!(manifest.config_digest, c.resolved().digest());
    for split in Split::ALL {
        let text = fs::read_to_string(layout.dataset(split)).unwrap();
        let lines = text.lines().count();
        assert_eq!(manifest.counts[split.tag()], lines, "{split}");
        let entry = &manifest.artifacts[&layout.relative(&layout.dataset(split))];
        assert_eq!(entry.lines, Some(lines));
        assert_eq!(entry.bytes, text.len());
    }
    assert!(layout.kg().exists() && layout.model().exists());
    assert!(!dir.path().join(".staging").exists());
}

#[test]
fn rerun_reproduces_every_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let c = small(dir);
        cmd_gen(&c).unwrap();
        cmd_eval(&c, &[EditMethod::Rome, EditMethod::MemitMle], &Split::ALL).unwrap();
        cmd_report(&c).unwrap();
    }
    let (fa, fb) = (file_bytes(a.path()), file_bytes(b.path()));
    assert!(fa.len() > 20);
    assert_eq!(fa.len(), fb.len());
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }
    // a second gen into the same directory drops stale results
    cmd_gen(&small(a.path())).unwrap();
    assert!(!a.path().join("results").exists());
    assert!(!a.path().join("report.txt").exists());
}

#[test]
fn single_split_row_has_succ_only_and_round_rows_have_distortion() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    cmd_gen(&c).unwrap();
    let single = Split::Conflict(ConflictSplit::Single);
    let easy = Split::Round(RoundSplit::Easy);
    let reports = cmd_eval(&c, &[EditMethod::Rome], &[single]).unwrap();
    let row = reports[0].row();
    assert!(row[0].is_some());
    assert!(row[1..].iter().all(Option::is_none), "{row:?}");

    let reports = cmd_eval(&c, &[EditMethod::MemitMle], &[easy]).unwrap();
    assert!(reports[0].is_round());
    assert!(reports[0].row().iter().all(Option::is_some));
    let table = fs::read_to_string(Layout::new(dir.path()).results_table(EditMethod::MemitMle, easy)).unwrap();
    for col in ["Succ", "D", "IR", "FR"] {
        assert!(table.contains(col), "{table}");
    }

    let report = cmd_report(&c).unwrap();
    assert!(report.contains("rome") && report.contains("memit+mle"));
    assert!(report.contains("Knowledge conflict") && report.contains("Knowledge distortion"));
}

#[test]
fn csv_recomputes_to_the_aggregate_table() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    cmd_gen(&c).unwrap();
    let split = Split::Conflict(ConflictSplit::Composite);
    let report = cmd_eval(&c, &[EditMethod::Ft], &[split]).unwrap().remove(0);
    let path = Layout::new(dir.path()).results_csv(EditMethod::Ft, split);
    let rows = read_scores_csv(&path, &fs::read(&path).unwrap()).unwrap();
    assert_eq!(rows, report.cases);
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&editbench_core::CaseScores) -> f64| 100.0 * rows.iter().map(f).sum::<f64>() / n;
    let a = &report.aggregates;
    let close = |x: Option<f64>, y: f64| (x.unwrap() - y).abs() <= 1e-9;
    assert!(close(a.succ, mean(&|r| r.succ)));
    assert!(close(a.cm, mean(&|r| r.cm.unwrap())));
    assert!(close(a.tfd, mean(&|r| r.tfd.unwrap())));
    assert!(close(a.cs_explicit, mean(&|r| r.cs_explicit.unwrap())));
}

fn oracle_restricted(params: &ModelParams, s: usize, r: usize, labels: &[usize]) -> Vec<f64> {
    let e = params.entity_embeddings();
    let rel = params.relation_embeddings();
    let d = e.ncols();
    let mut key: Vec<f64> = (0..d).map(|j| e[(s, j)]).chain((0..d).map(|j| rel[(r, j)])).collect();
    let norm = key.iter().map(|x| x * x).sum::<f64>().sqrt();
    key.iter_mut().for_each(|x| *x /= norm);
    let w = params.output();
    let logits: Vec<f64> = (0..w.nrows())
        .map(|i| (0..w.ncols()).map(|j| w[(i, j)] * key[j]).sum::<f64>() / params.temperature())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let raw: Vec<f64> = labels.iter().map(|&o| exp[o] / total).collect();
    let kept: f64 = raw.iter().sum();
    raw.iter().map(|p| p / kept).collect()
}

#[test]
fn plots_match_independent_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.kg.max_fanout = 5;
    c.seed = 1;
    c.bench.cases_per_split = 40;
    cmd_gen(&c).unwrap();
    let layout = Layout::new(dir.path());
    let cases: Vec<RoundCase> = layout.load_dataset(Split::Round(RoundSplit::Hard)).unwrap();
    let case = cases.iter().find(|c| c.obj_set.len() == 5).expect("a five-label case");

    let plot = cmd_plot(&c, &case.id).unwrap();
    assert_eq!(plot.labels.len(), 5);
    assert_eq!(plot.series.len(), 3);
    assert!(plot.series.iter().all(|s| s.values.len() == 5));
    let svg = fs::read_to_string(layout.plot_svg(&case.id)).unwrap();
    assert_eq!(svg.matches("<rect").count(), 5 * 3 + 3);
    assert!(layout.plot_data(&case.id).exists());

    let kg = layout.load_kg().unwrap();
    let params = layout.load_model().unwrap();
    let expect = oracle_restricted(&params, case.subject, case.relation, &case.obj_set);
    let cfg = c.resolved();
    let mut states = vec![expect];
    for method in [EditMethod::Rome, EditMethod::MemitMle] {
        let editor = Editor::new(method, cfg.editor.clone()).with_graph(&kg);
        let (_, after) = apply_sequence(&params, &case.edits, &editor).unwrap();
        states.push(oracle_restricted(&after, case.subject, case.relation, &case.obj_set));
    }
    for (series, expect) in plot.series.iter().zip(&states) {
        assert!((series.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (got, want) in series.values.iter().zip(expect) {
            assert!((got - want).abs() <= 1e-12, "{}: {got} vs {want}", series.name);
        }
    }

    c.plot.method = EditMethod::Identity;
    c.plot.compare = None;
    let plot = cmd_plot(&c, &case.id).unwrap();
    assert_eq!(plot.series.len(), 2);
    assert_eq!(plot.series[0].values, plot.series[1].values);
}

#[test]
fn missing_and_unknown_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let err = cmd_eval(&c, &[EditMethod::Rome], &Split::ALL).unwrap_err();
    match &err {
        RunError::MissingArtifact { path, .. } => assert!(path.ends_with("kg.txt")),
        other => panic!("{other}"),
    }
    assert!(err.to_string().contains("editbench gen"));
    assert!(matches!(cmd_report(&c), Err(RunError::MissingArtifact { .. })));

    cmd_gen(&c).unwrap();
    assert!(matches!(cmd_report(&c), Err(RunError::MissingArtifact { .. })));
    assert!(matches!(cmd_plot(&c, "easy-9999"), Err(RunError::UnknownCase(_))));
    assert!(matches!(cmd_plot(&c, "nonsense"), Err(RunError::UnknownCase(_))));
    fs::remove_file(dir.path().join("data/reverse.jsonl")).unwrap();
    let err = cmd_eval(&c, &[EditMethod::Ft], &[Split::Conflict(ConflictSplit::Reverse)]).unwrap_err();
    assert!(matches!(err, RunError::MissingArtifact { ref path, .. } if path.ends_with("reverse.jsonl")));

    fs::write(dir.path().join("data/single.jsonl"), "{\"schema\":1}\n").unwrap();
    let err = cmd_eval(&c, &[EditMethod::Ft], &[Split::Conflict(ConflictSplit::Single)]).unwrap_err();
    assert!(err.to_string().contains("single.jsonl:1:"), "{err}");
}

#[test]
fn failed_gen_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.bench.cases_per_split = 1_000_000;
    assert!(cmd_gen(&c).is_err());
    assert!(!dir.path().join("kg.txt").exists());
    assert!(!dir.path().join(".staging").exists());
}

#[test]
fn cli_exit_codes_and_default_dump() {
    let bin = env!("CARGO_BIN_EXE_editbench");
    let out = Command::new(bin).arg("--print-default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["eval", "--method", "rome", "--split", "single", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kg.txt"));

    let out = Command::new(bin).args(["eval", "--split", "sideways"]).output().unwrap();
    assert!(!out.status.success());

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[bench]\ncases_per_split = 4\n[metrics]\nvariants = 2\n").unwrap();
    let run = |args: &[&str]| {
        Command::new(bin)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join("o"))
            .args(["--seed", "9"])
            .args(args)
            .output()
            .unwrap()
    };
    let gen = run(&["gen"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(String::from_utf8_lossy(&gen.stdout).contains("easy: 4 cases"));
    assert!(run(&["eval", "--method", "rome", "--split", "reverse"]).status.success());
    let report = run(&["report"]);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("reverse"));
    let manifest = RunManifest::load(&dir.path().join("o/manifest.json")).unwrap().unwrap();
    assert_eq!(manifest.seed, 9);
}
