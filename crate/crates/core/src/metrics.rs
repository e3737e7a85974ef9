//! Evaluation metrics and report aggregation.
//!
//! All fact probabilities average over prompt variants `0..variants`. Every
//! indicator is a strict comparison, so ties score 0.

use serde::{Deserialize, Serialize};

use crate::benchgen::{ConflictCase, ConflictSplit, ProbeMode, RoundCase};
use crate::editors::{apply_sequence, Edit, EditError, Editor};
use crate::kgcore::{EntityId, Fact, RelationId};
use crate::model::{canonical_key, fact_probability, restricted_distribution, ModelError, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("probe mode {mode:?} is undefined for split {split}")]
    UndefinedMode { split: ConflictSplit, mode: ProbeMode },
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("cannot aggregate an empty case list")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Edit(#[from] EditError),
}

pub type MetricResult<T> = Result<T, MetricError>;

/// 1 when `a > b`, else 0.
pub fn indicator(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else {
        0.0
    }
}

/// `(before − after) / before`.
pub fn relative_drop(before: f64, after: f64) -> f64 {
    (before - after) / before
}

/// Whether the edited model prefers the new object over the old one.
pub fn succ(params_after: &ModelParams, edit: &Edit, variants: usize) -> MetricResult<f64> {
    let new = fact_probability(params_after, &edit.new_fact(), variants)?;
    let old = fact_probability(params_after, &edit.old_fact(), variants)?;
    Ok(indicator(new, old))
}

/// Whether the fact implied by both edits beats the fact the first edit
/// asserted.
pub fn conflict_score(
    params_after: &ModelParams,
    case: &ConflictCase,
    mode: ProbeMode,
    variants: usize,
) -> MetricResult<f64> {
    let probe = case
        .probe_fact(mode)
        .ok_or(MetricError::UndefinedMode { split: case.split, mode })?;
    let new = fact_probability(params_after, &probe, variants)?;
    let old = fact_probability(params_after, &case.k_o, variants)?;
    Ok(indicator(new, old))
}

/// Relative drop of `p(k_o)` from the intermediate to the final parameters.
pub fn conflict_magnitude(
    params_mid: &ModelParams,
    params_after: &ModelParams,
    k_o: &Fact,
    variants: usize,
) -> MetricResult<f64> {
    let before = fact_probability(params_mid, k_o, variants)?;
    let after = fact_probability(params_after, k_o, variants)?;
    Ok(relative_drop(before, after))
}

/// Relative drop of `p(k_f)` between two parameter sets.
pub fn tied_fact_damage(
    params_before: &ModelParams,
    params_after: &ModelParams,
    k_f: &Fact,
    variants: usize,
) -> MetricResult<f64> {
    conflict_magnitude(params_before, params_after, k_f, variants)
}

/// `Σ p ln(p / q)`; terms with `p = 0` vanish.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats; bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_divergence(p, &m) + 0.5 * kl_divergence(q, &m)).max(0.0)
}

/// JS divergence between the two models' distributions over `obj_set`.
pub fn distortion(
    params_original: &ModelParams,
    params_after: &ModelParams,
    subject: EntityId,
    relation: RelationId,
    obj_set: &[EntityId],
) -> MetricResult<f64> {
    let p = restricted_distribution(params_original, subject, relation, obj_set)?;
    let q = restricted_distribution(params_after, subject, relation, obj_set)?;
    Ok(js_divergence(&p.probs, &q.probs))
}

/// Share of non-target true labels whose full-vocabulary probability fell.
pub fn ignore_rate(
    params_original: &ModelParams,
    params_after: &ModelParams,
    case: &RoundCase,
) -> MetricResult<f64> {
    let others: Vec<EntityId> =
        case.obj_set.iter().copied().filter(|&o| o != case.target_object).collect();
    if others.is_empty() {
        return Err(MetricError::Undefined(format!(
            "case {} has no true label besides the target",
            case.id
        )));
    }
    if case.subject >= params_original.num_entities() {
        return Err(ModelError::UnknownEntity(case.subject).into());
    }
    if case.relation >= params_original.num_relations() {
        return Err(ModelError::UnknownRelation(case.relation).into());
    }
    if let Some(&o) = others.iter().find(|&&o| o >= params_original.num_entities()) {
        return Err(ModelError::UnknownEntity(o).into());
    }
    let key = canonical_key(params_original, case.subject, case.relation);
    let before = params_original.probs_at(&key);
    let after = params_after.probs_at(&key);
    let dropped: f64 = others.iter().map(|&o| indicator(before[o], after[o])).sum();
    Ok(dropped / others.len() as f64)
}

/// 1 when more than half the non-target labels were ignored.
pub fn failure_rate(ir: f64) -> f64 {
    indicator(ir, 0.5)
}

// ============================================================================
// Per-case scoring
// ============================================================================

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub succ: f64,
    pub cs_explicit: Option<f64>,
    pub cs_implicit: Option<f64>,
    pub cm: Option<f64>,
    /// Tied-fact damage against the parameters before the edit pair.
    pub tfd: Option<f64>,
    /// Tied-fact damage against the intermediate parameters.
    pub tfd_mid: Option<f64>,
    pub d: Option<f64>,
    pub ir: Option<f64>,
    pub fr: Option<f64>,
}

/// Applies the case's edits with `editor` and scores the result.
pub fn score_conflict_case(
    params: &ModelParams,
    case: &ConflictCase,
    editor: &Editor<'_>,
    variants: usize,
) -> MetricResult<CaseScores> {
    let (mid, after) = apply_sequence(params, &case.edits(), editor)?;
    let mut scores = CaseScores {
        case_id: case.id.clone(),
        succ: succ(&after, &case.edit2, variants)?,
        ..CaseScores::default()
    };
    if case.split == ConflictSplit::Single {
        return Ok(scores);
    }
    scores.cs_explicit = Some(conflict_score(&after, case, ProbeMode::Explicit, variants)?);
    scores.cs_implicit = Some(conflict_score(&after, case, ProbeMode::Implicit, variants)?);
    scores.cm = Some(conflict_magnitude(&mid, &after, &case.k_o, variants)?);
    if let Some(k_f) = case.k_f {
        scores.tfd = Some(tied_fact_damage(params, &after, &k_f, variants)?);
        scores.tfd_mid = Some(tied_fact_damage(&mid, &after, &k_f, variants)?);
    }
    Ok(scores)
}

/// Runs the round trip with `editor` and scores success and distortion.
pub fn score_round_case(
    params: &ModelParams,
    case: &RoundCase,
    editor: &Editor<'_>,
    variants: usize,
) -> MetricResult<CaseScores> {
    let (mid, after) = apply_sequence(params, &case.edits, editor)?;
    let s = 0.5 * (succ(&mid, &case.edits[0], variants)? + succ(&after, &case.edits[1], variants)?);
    let ir = ignore_rate(params, &after, case)?;
    Ok(CaseScores {
        case_id: case.id.clone(),
        succ: s,
        d: Some(distortion(params, &after, case.subject, case.relation, &case.obj_set)?),
        ir: Some(ir),
        fr: Some(failure_rate(ir)),
        ..CaseScores::default()
    })
}

// ============================================================================
// Aggregation
// ============================================================================

/// Per-metric means ×100; `None` where no case carries the metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub succ: Option<f64>,
    pub cs_explicit: Option<f64>,
    pub cs_implicit: Option<f64>,
    pub cm: Option<f64>,
    pub tfd: Option<f64>,
    pub tfd_mid: Option<f64>,
    pub d: Option<f64>,
    pub ir: Option<f64>,
    pub fr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub method: String,
    pub seed: u64,
    pub config_digest: String,
    pub aggregates: Aggregates,
    pub cases: Vec<CaseScores>,
}

fn mean_x100(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| 100.0 * (sum / n as f64))
}

pub fn aggregate(
    cases: Vec<CaseScores>,
    split: &str,
    method: &str,
    seed: u64,
    config_digest: &str,
) -> MetricResult<MetricsReport> {
    if cases.is_empty() {
        return Err(MetricError::Empty);
    }
    let col = |f: fn(&CaseScores) -> Option<f64>| mean_x100(cases.iter().map(f));
    let aggregates = Aggregates {
        succ: col(|c| Some(c.succ)),
        cs_explicit: col(|c| c.cs_explicit),
        cs_implicit: col(|c| c.cs_implicit),
        cm: col(|c| c.cm),
        tfd: col(|c| c.tfd),
        tfd_mid: col(|c| c.tfd_mid),
        d: col(|c| c.d),
        ir: col(|c| c.ir),
        fr: col(|c| c.fr),
    };
    Ok(MetricsReport {
        split: split.to_string(),
        method: method.to_string(),
        seed,
        config_digest: config_digest.to_string(),
        aggregates,
        cases,
    })
}

/// Two-decimal rendering; `-` for absent values.
pub fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

pub const CONFLICT_COLUMNS: [&str; 5] = ["Succ", "CS_exp", "CS_imp", "CM", "TFD"];
pub const ROUND_COLUMNS: [&str; 4] = ["Succ", "D", "IR", "FR"];

impl MetricsReport {
    pub fn is_round(&self) -> bool {
        self.aggregates.d.is_some()
    }

    /// Column values in table order.
    pub fn row(&self) -> Vec<Option<f64>> {
        let a = &self.aggregates;
        if self.is_round() {
            vec![a.succ, a.d, a.ir, a.fr]
        } else {
            vec![a.succ, a.cs_explicit, a.cs_implicit, a.cm, a.tfd]
        }
    }
}

/// Aligned text table with one row per report. Reports must share a layout.
/// Conflict and round reports are drawn as two tables, conflict first.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let (round, conflict): (Vec<MetricsReport>, Vec<MetricsReport>) =
        reports.iter().cloned().partition(MetricsReport::is_round);
    match (conflict.is_empty(), round.is_empty()) {
        (false, false) => format!("{}\n{}", render_rows(&conflict), render_rows(&round)),
        (true, false) => render_rows(&round),
        _ => render_rows(&conflict),
    }
}

fn render_rows(reports: &[MetricsReport]) -> String {
    let round = reports.first().is_some_and(MetricsReport::is_round);
    let columns: &[&str] = if round { &ROUND_COLUMNS } else { &CONFLICT_COLUMNS };
    let mut rows: Vec<Vec<String>> = vec![["method", "split"]
        .iter()
        .chain(columns)
        .map(|s| s.to_string())
        .collect()];
    for r in reports {
        let mut line = vec![r.method.clone(), r.split.clone()];
        line.extend(r.row().into_iter().map(format_cell));
        rows.push(line);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| if j < 2 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
