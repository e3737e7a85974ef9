//! The `gen`, `eval`, `plot` and `report` pipeline stages.

use std::fs;
use std::path::Path;
use std::time::Instant;

use editbench_core::benchgen::{ConflictCase, RoundCase};
use editbench_core::metrics::{render_table, score_conflict_case, score_round_case, CaseScores};
use editbench_core::{
    aggregate, apply_sequence, gen_conflict_dataset, gen_round_dataset, generate_kg,
    restricted_distribution, train, EditMethod, Editor, KnowledgeGraph, MetricsReport,
    ModelParams, RoundSplit,
};
use rayon::prelude::*;

use crate::artifacts::{scores_to_csv, to_jsonl, write_file, Layout, Split};
use crate::config::ExperimentConfig;
use crate::error::{RunError, RunResult};
use crate::manifest::{RunManifest, TrainingSummary};
use crate::plot::{render_svg, PlotData, Series};

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub facts: usize,
    pub epochs: usize,
    pub accuracy: f64,
    /// Cases per split, in split order.
    pub counts: Vec<(Split, usize)>,
}

struct Generated {
    kg_text: String,
    checkpoint: Vec<u8>,
    datasets: Vec<(Split, String, usize)>,
    summary: GenSummary,
    training: TrainingSummary,
    timings: Vec<(&'static str, f64)>,
}

fn generate(cfg: &ExperimentConfig) -> RunResult<Generated> {
    let t = Instant::now();
    let kg = generate_kg(&cfg.kg)?;
    let t_kg = millis(t);

    let t = Instant::now();
    let trained = train(&kg, &cfg.train)?;
    let t_train = millis(t);
    let params = &trained.params;

    let t = Instant::now();
    let (conflict, round) = rayon::join(
        || gen_conflict_dataset(&kg, params, &cfg.bench),
        || gen_round_dataset(&kg, params, &cfg.bench),
    );
    let (conflict, round) = (conflict?, round?);
    let t_bench = millis(t);

    let mut datasets = Vec::new();
    for split in Split::ALL {
        let (text, n) = match split {
            Split::Conflict(s) => {
                let cases: Vec<&ConflictCase> = conflict.iter().filter(|c| c.split == s).collect();
                (to_jsonl(&cases), cases.len())
            }
            Split::Round(s) => {
                let cases: Vec<&RoundCase> = round.iter().filter(|c| c.split == s).collect();
                (to_jsonl(&cases), cases.len())
            }
        };
        datasets.push((split, text, n));
    }
    let summary = GenSummary {
        facts: kg.num_facts(),
        epochs: trained.epochs,
        accuracy: trained.accuracy,
        counts: datasets.iter().map(|(s, _, n)| (*s, *n)).collect(),
    };
    Ok(Generated {
        kg_text: kg.to_text(),
        checkpoint: params.to_checkpoint_bytes(),
        datasets,
        training: TrainingSummary {
            epochs: trained.epochs,
            accuracy: trained.accuracy,
            final_loss: trained.losses.last().copied().unwrap_or(f64::NAN),
        },
        summary,
        timings: vec![("gen/kg", t_kg), ("gen/train", t_train), ("gen/bench", t_bench)],
    })
}

fn remove_if_present(path: &Path) -> RunResult<()> {
    let res = if path.is_dir() { fs::remove_dir_all(path) } else { fs::remove_file(path) };
    match res {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(RunError::io(path, e)),
    }
}

/// Generates the graph, trains the model and writes every dataset split.
/// Nothing is written unless all stages succeed; earlier evaluation
/// results are removed since they no longer match.
pub fn cmd_gen(config: &ExperimentConfig) -> RunResult<GenSummary> {
    config.validate()?;
    let cfg = config.resolved();
    let layout = Layout::new(&cfg.output_dir);
    let generated = generate(&cfg)?;

    let staging = Layout::new(layout.root.join(".staging"));
    remove_if_present(&staging.root)?;
    let mut files: Vec<(std::path::PathBuf, std::path::PathBuf, Vec<u8>)> = vec![
        (staging.kg(), layout.kg(), generated.kg_text.into_bytes()),
        (staging.model(), layout.model(), generated.checkpoint),
    ];
    for (split, text, _) in generated.datasets {
        files.push((staging.dataset(split), layout.dataset(split), text.into_bytes()));
    }
    let staged = files.iter().try_for_each(|(tmp, _, bytes)| write_file(tmp, bytes));
    if let Err(e) = staged {
        let _ = fs::remove_dir_all(&staging.root);
        return Err(e);
    }

    for stale in [layout.root.join("results"), layout.root.join("plots"), layout.report()] {
        remove_if_present(&stale)?;
    }
    let mut manifest = RunManifest::new(cfg.digest(), cfg.seed);
    for (tmp, dest, bytes) in &files {
        if let Some(dir) = dest.parent() {
            fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        }
        fs::rename(tmp, dest).map_err(|e| RunError::io(dest, e))?;
        manifest.record(&layout, dest, bytes);
    }
    remove_if_present(&staging.root)?;
    for (split, n) in &generated.summary.counts {
        manifest.counts.insert(split.tag().to_string(), *n);
    }
    for (stage, ms) in generated.timings {
        manifest.timings_ms.insert(stage.to_string(), ms);
    }
    manifest.training = Some(generated.training);
    manifest.save(&layout.manifest())?;
    Ok(generated.summary)
}

fn open_manifest(layout: &Layout, cfg: &ExperimentConfig) -> RunResult<RunManifest> {
    let manifest = RunManifest::load(&layout.manifest())?
        .unwrap_or_else(|| RunManifest::new(cfg.digest(), cfg.seed));
    if manifest.config_digest != cfg.digest() {
        eprintln!(
            "warning: {} was generated from a different config (digest {}, current {})",
            layout.root.display(),
            manifest.config_digest,
            cfg.digest()
        );
    }
    Ok(manifest)
}

/// Scores one split with one editor, preserving case order.
pub fn score_split(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    layout: &Layout,
    cfg: &ExperimentConfig,
    method: EditMethod,
    split: Split,
) -> RunResult<Vec<CaseScores>> {
    let editor = Editor::new(method, cfg.editor.clone()).with_graph(kg);
    let v = cfg.metrics.variants;
    let scores = match split {
        Split::Conflict(_) => {
            let cases: Vec<ConflictCase> = layout.load_dataset(split)?;
            cases
                .par_iter()
                .map(|c| score_conflict_case(params, c, &editor, v))
                .collect::<Result<Vec<_>, _>>()?
        }
        Split::Round(_) => {
            let cases: Vec<RoundCase> = layout.load_dataset(split)?;
            cases
                .par_iter()
                .map(|c| score_round_case(params, c, &editor, v))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(scores)
}

fn table_document(report: &MetricsReport) -> String {
    format!(
        "method: {}\nsplit: {}\ncases: {}\nseed: {}\nconfig: {}\n\n{}",
        report.method,
        report.split,
        report.cases.len(),
        report.seed,
        report.config_digest,
        render_table(std::slice::from_ref(report))
    )
}

/// Runs every requested method on every requested split and writes the
/// per-case CSV and the aggregate table for each pair.
pub fn cmd_eval(
    config: &ExperimentConfig,
    methods: &[EditMethod],
    splits: &[Split],
) -> RunResult<Vec<MetricsReport>> {
    config.validate()?;
    let cfg = config.resolved();
    let layout = Layout::new(&cfg.output_dir);
    let kg = layout.load_kg()?;
    let params = layout.load_model()?;
    let mut manifest = open_manifest(&layout, &cfg)?;
    let digest = cfg.digest();
    let mut reports = Vec::new();
    for &method in methods {
        for &split in splits {
            let t = Instant::now();
            let scores = score_split(&kg, &params, &layout, &cfg, method, split)?;
            let report = aggregate(scores, split.tag(), method.tag(), cfg.seed, &digest)?;
            let csv = scores_to_csv(&report.cases);
            let table = table_document(&report);
            for (path, bytes) in [
                (layout.results_csv(method, split), csv.as_slice()),
                (layout.results_table(method, split), table.as_bytes()),
            ] {
                write_file(&path, bytes)?;
                manifest.record(&layout, &path, bytes);
            }
            manifest.timings_ms.insert(format!("eval/{method}/{split}"), millis(t));
            reports.push(report);
        }
    }
    manifest.save(&layout.manifest())?;
    Ok(reports)
}

fn find_round_case(layout: &Layout, case_id: &str) -> RunResult<RoundCase> {
    for split in RoundSplit::ALL {
        if !case_id.starts_with(split.tag()) {
            continue;
        }
        let cases: Vec<RoundCase> = layout.load_dataset(Split::Round(split))?;
        if let Some(c) = cases.into_iter().find(|c| c.id == case_id) {
            return Ok(c);
        }
    }
    Err(RunError::UnknownCase(case_id.to_string()))
}

/// Label distributions of one round case before editing and after the
/// round trip with each configured editor.
pub fn plot_data(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    cfg: &ExperimentConfig,
    case: &RoundCase,
) -> RunResult<PlotData> {
    let restricted = |p: &ModelParams| -> RunResult<Vec<f64>> {
        Ok(restricted_distribution(p, case.subject, case.relation, &case.obj_set)?.probs)
    };
    let mut series = vec![Series { name: "original".into(), values: restricted(params)? }];
    let mut methods = vec![cfg.plot.method];
    methods.extend(cfg.plot.compare.filter(|&m| m != cfg.plot.method));
    for method in methods {
        let editor = Editor::new(method, cfg.editor.clone()).with_graph(kg);
        let (_, after) = apply_sequence(params, &case.edits, &editor)?;
        series.push(Series { name: method.tag().into(), values: restricted(&after)? });
    }
    let name = |e: usize| kg.entities()[e].name.clone();
    Ok(PlotData {
        case_id: case.id.clone(),
        subject: name(case.subject),
        relation: kg.relations()[case.relation].name.clone(),
        labels: case.obj_set.iter().map(|&o| name(o)).collect(),
        label_ids: case.obj_set.clone(),
        target: name(case.target_object),
        intermediate: name(case.intermediate_object),
        series,
    })
}

/// Writes the plot data document and bar chart for one round case.
pub fn cmd_plot(config: &ExperimentConfig, case_id: &str) -> RunResult<PlotData> {
    config.validate()?;
    let cfg = config.resolved();
    let layout = Layout::new(&cfg.output_dir);
    let case = find_round_case(&layout, case_id)?;
    let kg = layout.load_kg()?;
    let params = layout.load_model()?;
    let plot = plot_data(&kg, &params, &cfg, &case)?;
    let mut json = serde_json::to_string_pretty(&plot).expect("plot serialises");
    json.push('\n');
    let svg = render_svg(&plot);
    let mut manifest = open_manifest(&layout, &cfg)?;
    for (path, bytes) in [(layout.plot_data(case_id), json.as_bytes()), (layout.plot_svg(case_id), svg.as_bytes())] {
        write_file(&path, bytes)?;
        manifest.record(&layout, &path, bytes);
    }
    manifest.save(&layout.manifest())?;
    Ok(plot)
}

/// Collects every evaluated (method, split) pair into one document.
pub fn cmd_report(config: &ExperimentConfig) -> RunResult<String> {
    config.validate()?;
    let cfg = config.resolved();
    let layout = Layout::new(&cfg.output_dir);
    let digest = cfg.digest();
    let mut conflict = Vec::new();
    let mut round = Vec::new();
    for &method in &cfg.methods {
        for split in Split::ALL {
            let scores = match layout.load_scores(method, split) {
                Ok(s) => s,
                Err(RunError::MissingArtifact { .. }) => continue,
                Err(e) => return Err(e),
            };
            let report = aggregate(scores, split.tag(), method.tag(), cfg.seed, &digest)?;
            match split {
                Split::Conflict(_) => conflict.push(report),
                Split::Round(_) => round.push(report),
            }
        }
    }
    if conflict.is_empty() && round.is_empty() {
        return Err(RunError::MissingArtifact {
            path: layout.root.join("results"),
            hint: "run `editbench eval` first",
        });
    }
    let mut text = format!("editbench report\nseed: {}\nconfig: {digest}\n", cfg.seed);
    if !conflict.is_empty() {
        text.push_str("\nKnowledge conflict (means x100)\n\n");
        text.push_str(&render_table(&conflict));
    }
    if !round.is_empty() {
        text.push_str("\nKnowledge distortion (means x100)\n\n");
        text.push_str(&render_table(&round));
    }
    let path = layout.report();
    write_file(&path, text.as_bytes())?;
    let mut manifest = open_manifest(&layout, &cfg)?;
    manifest.record(&layout, &path, text.as_bytes());
    manifest.save(&layout.manifest())?;
    Ok(text)
}
