//! Edit methods over [`ModelParams`].
//!
//! * `ft`: gradient ascent on `log p(o*)` at the canonical key.
//! * `rome`: rank-one insertion `W' = W + (v − Wk)(C⁻¹k)ᵀ / (kᵀC⁻¹k)` of an
//!   optimised value `v`, so that `W'k = v` exactly.
//! * `memit`: batched least squares `W' = W + (V − WK)Kᵀ(C + KKᵀ)⁻¹`.
//! * `memit+mle`: rank-one insertion whose value spreads mass over the new
//!   object and the strongest remaining true labels.
//!
//! Every editor is a pure function returning fresh parameters that share the
//! frozen embeddings of their input.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::kgcore::{EntityId, Fact, KnowledgeGraph, RelationId};
use crate::model::{canonical_key, softmax, ModelError, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("invalid edit: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("key is singular under the covariance (kᵀC⁻¹k = {0:e})")]
    SingularKey(f64),
    #[error("batched system is not positive definite")]
    SingularBatch,
    #[error("edits {0} and {1} share a canonical key")]
    DuplicateKey(usize, usize),
    #[error("method {0} needs the knowledge graph to pick preserved labels")]
    MissingGraph(EditMethod),
    #[error("unknown method tag {0:?} (expected identity, ft, rome, memit or memit+mle)")]
    UnknownMethod(String),
}

pub type EditResult<T> = Result<T, EditError>;

// ============================================================================
// Edit records
// ============================================================================

/// `(s, r, o → o*)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edit {
    pub subject: EntityId,
    pub relation: RelationId,
    pub old_object: EntityId,
    pub new_object: EntityId,
}

impl Edit {
    pub fn new(
        subject: EntityId,
        relation: RelationId,
        old_object: EntityId,
        new_object: EntityId,
    ) -> EditResult<Self> {
        if old_object == new_object {
            return Err(EditError::Invalid(format!(
                "old and new object are both {old_object}"
            )));
        }
        Ok(Edit { subject, relation, old_object, new_object })
    }

    pub fn old_fact(&self) -> Fact {
        Fact::new(self.subject, self.relation, self.old_object)
    }

    pub fn new_fact(&self) -> Fact {
        Fact::new(self.subject, self.relation, self.new_object)
    }

    /// The edit that restores the old object.
    pub fn reversed(&self) -> Edit {
        Edit { old_object: self.new_object, new_object: self.old_object, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiLabelEdit {
    pub subject: EntityId,
    pub relation: RelationId,
    pub old_object: EntityId,
    /// New object first, then the preserved true labels.
    pub targets: Vec<EntityId>,
}

impl MultiLabelEdit {
    pub fn new(
        subject: EntityId,
        relation: RelationId,
        old_object: EntityId,
        targets: Vec<EntityId>,
    ) -> EditResult<Self> {
        if targets.is_empty() {
            return Err(EditError::Invalid("multi-label edit without targets".into()));
        }
        let mut seen = HashSet::new();
        if let Some(d) = targets.iter().find(|&&t| !seen.insert(t)) {
            return Err(EditError::Invalid(format!("target {d} listed twice")));
        }
        if targets.contains(&old_object) {
            return Err(EditError::Invalid(format!("old object {old_object} is also a target")));
        }
        Ok(MultiLabelEdit { subject, relation, old_object, targets })
    }

    pub fn singleton(edit: &Edit) -> Self {
        MultiLabelEdit {
            subject: edit.subject,
            relation: edit.relation,
            old_object: edit.old_object,
            targets: vec![edit.new_object],
        }
    }
}

/// Builds the multi-label version of `edit`: the new object plus up to
/// `budget − 1` of the subject's other true labels, strongest first under
/// `params`.
pub fn with_preserved_labels(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    edit: &Edit,
    budget: usize,
) -> EditResult<MultiLabelEdit> {
    check_edit(params, edit)?;
    let probs = params.probs_at(&canonical_key(params, edit.subject, edit.relation));
    let mut keep: Vec<EntityId> = kg
        .objects(edit.subject, edit.relation)
        .iter()
        .copied()
        .filter(|&o| o != edit.old_object && o != edit.new_object)
        .collect();
    keep.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    keep.truncate(budget.saturating_sub(1));
    let mut targets = vec![edit.new_object];
    targets.extend(keep);
    MultiLabelEdit::new(edit.subject, edit.relation, edit.old_object, targets)
}

// ============================================================================
// Methods and config
// ============================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditMethod {
    /// Leaves parameters untouched; a reference point for metrics.
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "ft")]
    Ft,
    #[serde(rename = "rome")]
    Rome,
    #[serde(rename = "memit")]
    Memit,
    #[serde(rename = "memit+mle")]
    MemitMle,
}

impl EditMethod {
    /// The four benchmarked methods.
    pub const BENCHMARKED: [EditMethod; 4] =
        [EditMethod::Ft, EditMethod::Rome, EditMethod::Memit, EditMethod::MemitMle];

    pub fn tag(self) -> &'static str {
        match self {
            EditMethod::Identity => "identity",
            EditMethod::Ft => "ft",
            EditMethod::Rome => "rome",
            EditMethod::Memit => "memit",
            EditMethod::MemitMle => "memit+mle",
        }
    }
}

impl fmt::Display for EditMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EditMethod {
    type Err = EditError;

    fn from_str(s: &str) -> EditResult<Self> {
        match s {
            "identity" => Ok(EditMethod::Identity),
            "ft" => Ok(EditMethod::Ft),
            "rome" => Ok(EditMethod::Rome),
            "memit" => Ok(EditMethod::Memit),
            "memit+mle" => Ok(EditMethod::MemitMle),
            other => Err(EditError::UnknownMethod(other.to_string())),
        }
    }
}

/// Where the value solve may move the logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueSpan {
    /// Updates stay in the column span of the entity embeddings.
    EntitySpan,
    /// Unconstrained logit space.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorConfig {
    /// Gradient-edit step size.
    pub step_size: f64,
    /// Gradient edit stops once `p(o*)` reaches this.
    pub target_prob: f64,
    pub max_iters: usize,
    /// Proximity weight `γ` of single-target value solves.
    pub value_gamma: f64,
    /// Proximity weight of value solves with several targets.
    pub mle_gamma: f64,
    pub value_iters: usize,
    /// First trial step of the backtracking line search in the value solve.
    pub value_step: f64,
    pub value_span: ValueSpan,
    /// Number of targets in a multi-label edit.
    pub mle_budget: usize,
    /// Smallest acceptable `kᵀC⁻¹k`.
    pub singular_tolerance: f64,
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig {
            step_size: 0.5,
            target_prob: 0.9,
            max_iters: 200,
            value_gamma: 0.01,
            mle_gamma: 0.0,
            value_iters: 100,
            value_step: 8.0,
            value_span: ValueSpan::EntitySpan,
            mle_budget: 3,
            singular_tolerance: 1e-12,
        }
    }
}

impl EditorConfig {
    /// `value_gamma` for one target, `mle_gamma` for more.
    pub fn proximity(&self, targets: usize) -> f64 {
        if targets > 1 {
            self.mle_gamma
        } else {
            self.value_gamma
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub params_after: ModelParams,
    pub iterations: usize,
    pub converged: bool,
    pub method: EditMethod,
    /// `p(o*)` at the canonical key before each gradient step (gradient
    /// edits only).
    pub trajectory: Vec<f64>,
}

fn check_ids(params: &ModelParams, s: EntityId, r: RelationId, objs: &[EntityId]) -> EditResult<()> {
    let n = params.num_entities();
    if s >= n {
        return Err(ModelError::UnknownEntity(s).into());
    }
    if r >= params.num_relations() {
        return Err(ModelError::UnknownRelation(r).into());
    }
    if let Some(&o) = objs.iter().find(|&&o| o >= n) {
        return Err(ModelError::UnknownEntity(o).into());
    }
    Ok(())
}

fn check_edit(params: &ModelParams, edit: &Edit) -> EditResult<()> {
    if edit.old_object == edit.new_object {
        return Err(EditError::Invalid(format!("old and new object are both {}", edit.old_object)));
    }
    check_ids(params, edit.subject, edit.relation, &[edit.old_object, edit.new_object])
}

// ============================================================================
// Gradient edit
// ============================================================================

/// `log softmax(W k / T)[target]`.
pub fn edit_objective(params: &ModelParams, key: &DVector<f64>, target: EntityId) -> f64 {
    let z = params.logits(key) / params.temperature();
    let max = z.max();
    let lse = max + z.map(|x| (x - max).exp()).sum().ln();
    z[target] - lse
}

/// Gradient of [`edit_objective`] with respect to `W`: `(e_target − p) kᵀ / T`.
pub fn edit_gradient(params: &ModelParams, key: &DVector<f64>, target: EntityId) -> DMatrix<f64> {
    let mut resid = -params.probs_at(key);
    resid[target] += 1.0;
    resid * key.transpose() / params.temperature()
}

pub fn gradient_edit(params: &ModelParams, edit: &Edit, config: &EditorConfig) -> EditResult<EditOutcome> {
    check_edit(params, edit)?;
    let key = canonical_key(params, edit.subject, edit.relation);
    let t = params.temperature();
    let mut w = params.output().clone();
    let mut trajectory = Vec::new();
    let mut iterations = 0;
    let converged = loop {
        let mut p = softmax(&(&w * &key / t));
        let pt = p[edit.new_object];
        if !pt.is_finite() {
            return Err(EditError::NonFinite("gradient-edit objective"));
        }
        trajectory.push(pt);
        if pt >= config.target_prob {
            break true;
        }
        if iterations >= config.max_iters {
            break false;
        }
        p.neg_mut();
        p[edit.new_object] += 1.0;
        w.ger(config.step_size / t, &p, &key, 1.0);
        iterations += 1;
    };
    let params_after = if iterations == 0 { params.clone() } else { params.with_output(w)? };
    Ok(EditOutcome { params_after, iterations, converged, method: EditMethod::Ft, trajectory })
}

// ============================================================================
// Value solve and rank-one insertion
// ============================================================================

fn value_objective(v: &DVector<f64>, v0: &DVector<f64>, targets: &[EntityId], t: f64, gamma: f64) -> f64 {
    let z = v / t;
    let max = z.max();
    let lse = max + z.map(|x| (x - max).exp()).sum().ln();
    let fit: f64 = targets.iter().map(|&o| z[o] - lse).sum();
    fit - gamma * (v - v0).norm_squared()
}

/// Ascent on `Σ_targets log softmax(v/T)[o] − γ‖v − Wk‖²` from `v = Wk`,
/// with backtracking line search. Returns the value and the number of
/// accepted steps.
fn solve_value_counted(
    params: &ModelParams,
    key: &DVector<f64>,
    targets: &[EntityId],
    config: &EditorConfig,
    gamma: f64,
) -> EditResult<(DVector<f64>, usize)> {
    if targets.is_empty() {
        return Err(EditError::Invalid("value solve without targets".into()));
    }
    if key.len() != params.key_dim() {
        return Err(ModelError::Shape(format!(
            "key has {} entries, model expects {}",
            key.len(),
            params.key_dim()
        ))
        .into());
    }
    if let Some(&o) = targets.iter().find(|&&o| o >= params.num_entities()) {
        return Err(ModelError::UnknownEntity(o).into());
    }
    let t = params.temperature();
    let v0 = params.logits(key);
    let mut v = v0.clone();
    let mut steps = 0;
    for _ in 0..config.value_iters {
        let p = softmax(&(&v / t));
        let mut g = p * (-(targets.len() as f64) / t);
        for &o in targets {
            g[o] += 1.0 / t;
        }
        g -= (&v - &v0) * (2.0 * gamma);
        if config.value_span == ValueSpan::EntitySpan {
            g = params.project_to_entity_span(&g);
        }
        let gg = g.norm_squared();
        if !gg.is_finite() {
            return Err(EditError::NonFinite("value gradient"));
        }
        if gg < 1e-24 {
            break;
        }
        let f = value_objective(&v, &v0, targets, t, gamma);
        let mut s = config.value_step;
        let mut accepted = false;
        while s > 1e-12 {
            let cand = &v + &g * s;
            if value_objective(&cand, &v0, targets, t, gamma) >= f + 0.5 * s * gg {
                v = cand;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
        steps += 1;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EditError::NonFinite("solved value"));
    }
    Ok((v, steps))
}

/// Value solve with the proximity weight [`EditorConfig::proximity`] picks
/// for `targets`.
pub fn solve_value(
    params: &ModelParams,
    key: &DVector<f64>,
    targets: &[EntityId],
    config: &EditorConfig,
) -> EditResult<DVector<f64>> {
    solve_value_counted(params, key, targets, config, config.proximity(targets.len())).map(|(v, _)| v)
}

/// `W + (v − Wk)(C⁻¹k)ᵀ / (kᵀC⁻¹k)`.
pub fn rank_one_update(
    params: &ModelParams,
    key: &DVector<f64>,
    value: &DVector<f64>,
    tolerance: f64,
) -> EditResult<DMatrix<f64>> {
    let u = params.solve_covariance(key);
    let denom = key.dot(&u);
    if !(denom > tolerance) {
        return Err(EditError::SingularKey(denom));
    }
    let resid = value - params.logits(key);
    let mut w = params.output().clone();
    w.ger(1.0 / denom, &resid, &u, 1.0);
    if w.iter().any(|x| !x.is_finite()) {
        return Err(EditError::NonFinite("rank-one update"));
    }
    Ok(w)
}

fn insert_targets(
    params: &ModelParams,
    subject: EntityId,
    relation: RelationId,
    targets: &[EntityId],
    config: &EditorConfig,
    method: EditMethod,
) -> EditResult<EditOutcome> {
    let key = canonical_key(params, subject, relation);
    let (value, iterations) = solve_value_counted(params, &key, targets, config, config.proximity(targets.len()))?;
    let w = rank_one_update(params, &key, &value, config.singular_tolerance)?;
    Ok(EditOutcome {
        params_after: params.with_output(w)?,
        iterations,
        converged: true,
        method,
        trajectory: Vec::new(),
    })
}

pub fn rank_one_edit(params: &ModelParams, edit: &Edit, config: &EditorConfig) -> EditResult<EditOutcome> {
    multi_label_edit(params, &MultiLabelEdit::singleton(edit), config).map(|mut o| {
        o.method = EditMethod::Rome;
        o
    })
}

pub fn multi_label_edit(
    params: &ModelParams,
    mle: &MultiLabelEdit,
    config: &EditorConfig,
) -> EditResult<EditOutcome> {
    let checked = MultiLabelEdit::new(mle.subject, mle.relation, mle.old_object, mle.targets.clone())?;
    let mut ids = checked.targets.clone();
    ids.push(checked.old_object);
    check_ids(params, checked.subject, checked.relation, &ids)?;
    insert_targets(
        params,
        checked.subject,
        checked.relation,
        &checked.targets,
        config,
        EditMethod::MemitMle,
    )
}

// ============================================================================
// Batched update
// ============================================================================

/// `W + (V − WK)Kᵀ(C + KKᵀ)⁻¹` with keys and values as columns.
pub fn batch_update(
    params: &ModelParams,
    keys: &DMatrix<f64>,
    values: &DMatrix<f64>,
) -> EditResult<DMatrix<f64>> {
    if keys.nrows() != params.key_dim() || values.nrows() != params.num_entities() {
        return Err(ModelError::Shape("batched keys/values have the wrong height".into()).into());
    }
    if keys.ncols() != values.ncols() {
        return Err(ModelError::Shape("batched keys and values differ in count".into()).into());
    }
    let mut system = params.key_covariance() + keys * keys.transpose();
    let t = system.transpose();
    system = (system + t) * 0.5;
    let factor = Cholesky::new(system).ok_or(EditError::SingularBatch)?;
    let solved = factor.solve(keys);
    let resid = values - params.output() * keys;
    let w = params.output() + resid * solved.transpose();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(EditError::NonFinite("batched update"));
    }
    Ok(w)
}

pub fn batch_edit(params: &ModelParams, edits: &[Edit], config: &EditorConfig) -> EditResult<EditOutcome> {
    for (i, a) in edits.iter().enumerate() {
        check_edit(params, a)?;
        if let Some(j) = edits[..i]
            .iter()
            .position(|b| b.subject == a.subject && b.relation == a.relation)
        {
            return Err(EditError::DuplicateKey(j, i));
        }
    }
    if edits.is_empty() {
        return Ok(EditOutcome {
            params_after: params.clone(),
            iterations: 0,
            converged: true,
            method: EditMethod::Memit,
            trajectory: Vec::new(),
        });
    }
    let mut keys = DMatrix::zeros(params.key_dim(), edits.len());
    for (i, e) in edits.iter().enumerate() {
        keys.set_column(i, &canonical_key(params, e.subject, e.relation));
    }
    // Key i receives only part of its residual through (C + KKᵀ)⁻¹, so the
    // residuals are pre-scaled by G⁻¹, G = Kᵀ(C + KKᵀ)⁻¹K, to land on the
    // solved targets.
    let system = params.key_covariance() + &keys * keys.transpose();
    let factor = Cholesky::new((&system + system.transpose()) * 0.5).ok_or(EditError::SingularBatch)?;
    let gain = keys.transpose() * factor.solve(&keys);
    let gain = Cholesky::new((&gain + gain.transpose()) * 0.5).ok_or(EditError::SingularBatch)?;
    let base = params.output() * &keys;
    let mut targets = DMatrix::zeros(params.num_entities(), edits.len());
    let mut iterations = 0;
    for (i, e) in edits.iter().enumerate() {
        let k = keys.column(i).clone_owned();
        let (z, steps) = solve_value_counted(params, &k, &[e.new_object], config, config.value_gamma)?;
        iterations = iterations.max(steps);
        targets.set_column(i, &z);
    }
    let scaled = gain.solve(&(targets - &base).transpose()).transpose();
    let values = base + scaled;
    let w = batch_update(params, &keys, &values)?;
    Ok(EditOutcome {
        params_after: params.with_output(w)?,
        iterations,
        converged: true,
        method: EditMethod::Memit,
        trajectory: Vec::new(),
    })
}

// ============================================================================
// Dispatch and sequences
// ============================================================================

/// A method plus its settings. Multi-label editing also needs the graph to
/// look up the subject's true labels.
#[derive(Clone, Debug)]
pub struct Editor<'a> {
    pub method: EditMethod,
    pub config: EditorConfig,
    pub graph: Option<&'a KnowledgeGraph>,
}

impl<'a> Editor<'a> {
    pub fn new(method: EditMethod, config: EditorConfig) -> Self {
        Editor { method, config, graph: None }
    }

    pub fn with_graph(mut self, kg: &'a KnowledgeGraph) -> Self {
        self.graph = Some(kg);
        self
    }

    pub fn apply(&self, params: &ModelParams, edit: &Edit) -> EditResult<EditOutcome> {
        match self.method {
            EditMethod::Identity => {
                check_edit(params, edit)?;
                Ok(EditOutcome {
                    params_after: params.clone(),
                    iterations: 0,
                    converged: true,
                    method: EditMethod::Identity,
                    trajectory: Vec::new(),
                })
            }
            EditMethod::Ft => gradient_edit(params, edit, &self.config),
            EditMethod::Rome => rank_one_edit(params, edit, &self.config),
            EditMethod::Memit => batch_edit(params, std::slice::from_ref(edit), &self.config),
            EditMethod::MemitMle => {
                let kg = self.graph.ok_or(EditError::MissingGraph(self.method))?;
                let mle = with_preserved_labels(kg, params, edit, self.config.mle_budget)?;
                multi_label_edit(params, &mle, &self.config)
            }
        }
    }
}

/// Applies edits in order; returns the parameters after the first edit and
/// after the last one.
pub fn apply_sequence(
    params: &ModelParams,
    edits: &[Edit],
    editor: &Editor<'_>,
) -> EditResult<(ModelParams, ModelParams)> {
    let Some((first, rest)) = edits.split_first() else {
        return Ok((params.clone(), params.clone()));
    };
    let intermediate = editor.apply(params, first)?.params_after;
    let mut last = intermediate.clone();
    for e in rest {
        last = editor.apply(&last, e)?.params_after;
    }
    Ok((intermediate, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParts, build_key};

    fn toy() -> ModelParams {
        ModelParams::random(8, 3, 4, 0.7, 5).unwrap()
    }

    #[test]
    fn hand_rank_one_instance() {
        let params = ModelParams::from_parts(ModelParts {
            entity_embeddings: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            relation_embeddings: DMatrix::from_row_slice(1, 1, &[1.0]),
            output: DMatrix::identity(2, 2),
            key_covariance: DMatrix::identity(2, 2),
            temperature: 1.0,
            ridge: 0.0,
            noise_scale: 0.0,
            seed: 0,
        })
        .unwrap();
        let k = DVector::from_vec(vec![1.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0]);
        let w = rank_one_update(&params, &k, &v, 1e-12).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]));
    }

    #[test]
    fn edit_rejects_identical_objects() {
        assert!(Edit::new(0, 0, 3, 3).is_err());
        let e = Edit::new(0, 1, 2, 3).unwrap();
        assert_eq!(e.reversed().reversed(), e);
        assert_eq!(e.reversed().new_object, 2);
    }

    #[test]
    fn multi_label_validation() {
        assert!(MultiLabelEdit::new(0, 0, 1, vec![]).is_err());
        assert!(MultiLabelEdit::new(0, 0, 1, vec![2, 2]).is_err());
        assert!(MultiLabelEdit::new(0, 0, 1, vec![2, 1]).is_err());
        assert!(MultiLabelEdit::new(0, 0, 1, vec![2, 3]).is_ok());
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [EditMethod::Identity, EditMethod::Ft, EditMethod::Rome, EditMethod::Memit, EditMethod::MemitMle] {
            assert_eq!(m.tag().parse::<EditMethod>().unwrap(), m);
        }
        assert!("mend".parse::<EditMethod>().is_err());
    }

    #[test]
    fn gradient_edit_stops_immediately_when_already_confident() {
        let p = toy();
        let key = build_key(&p, 1, 1, 0).unwrap();
        let top = crate::model::probe(&p, &key).unwrap().argmax();
        let other = (top + 1) % 8;
        let cfg = EditorConfig { target_prob: 0.0, ..EditorConfig::default() };
        let out = gradient_edit(&p, &Edit::new(1, 1, other, top).unwrap(), &cfg).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
        assert_eq!(out.params_after.output(), p.output());
    }

    #[test]
    fn gradient_edit_converges_monotonically() {
        let p = toy();
        let out = gradient_edit(&p, &Edit::new(2, 0, 1, 6).unwrap(), &EditorConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert!(*out.trajectory.last().unwrap() >= 0.9);
        assert_eq!(out.trajectory.len(), out.iterations + 1);
    }

    #[test]
    fn rank_one_hits_value_and_preserves_null_directions() {
        let p = toy();
        let cfg = EditorConfig::default();
        let out = rank_one_edit(&p, &Edit::new(3, 2, 0, 5).unwrap(), &cfg).unwrap();
        let k = canonical_key(&p, 3, 2);
        let v = solve_value(&p, &k, &[5], &cfg).unwrap();
        let diff = out.params_after.logits(&k) - v;
        assert!(diff.amax() < 1e-10);
        let u = p.solve_covariance(&k);
        let mut probe_dir = DVector::from_fn(8, |i, _| ((i * 7 + 3) as f64).cos());
        probe_dir -= &u * (u.dot(&probe_dir) / u.norm_squared());
        let drift = out.params_after.logits(&probe_dir) - p.logits(&probe_dir);
        assert!(drift.amax() < 1e-10);
        assert!(out.params_after.shares_frozen(&p));
    }

    #[test]
    fn singleton_multi_label_matches_rank_one_bitwise() {
        let p = toy();
        let cfg = EditorConfig::default();
        let e = Edit::new(4, 1, 2, 7).unwrap();
        let a = rank_one_edit(&p, &e, &cfg).unwrap();
        let b = multi_label_edit(&p, &MultiLabelEdit::singleton(&e), &cfg).unwrap();
        assert_eq!(a.params_after, b.params_after);
    }

    #[test]
    fn empty_batch_is_identity_and_duplicates_fail() {
        let p = toy();
        let cfg = EditorConfig::default();
        assert_eq!(batch_edit(&p, &[], &cfg).unwrap().params_after, p);
        let e = Edit::new(0, 0, 1, 2).unwrap();
        let f = Edit::new(0, 0, 1, 3).unwrap();
        assert!(matches!(batch_edit(&p, &[e, f], &cfg), Err(EditError::DuplicateKey(0, 1))));
    }

    #[test]
    fn value_solve_limits() {
        let p = toy();
        let k = canonical_key(&p, 0, 0);
        let sharp = EditorConfig { value_gamma: 0.0, ..EditorConfig::default() };
        let v = solve_value(&p, &k, &[3], &sharp).unwrap();
        assert!(softmax(&v)[3] >= 0.99);
        let stiff = EditorConfig { value_gamma: 1e9, ..EditorConfig::default() };
        let v = solve_value(&p, &k, &[3], &stiff).unwrap();
        assert!((v - p.logits(&k)).amax() < 1e-6);
        assert!(solve_value(&p, &k, &[], &sharp).is_err());
    }

    #[test]
    fn sequence_of_one_has_equal_ends() {
        let p = toy();
        let ed = Editor::new(EditMethod::Rome, EditorConfig::default());
        let (mid, fin) = apply_sequence(&p, &[Edit::new(1, 0, 2, 3).unwrap()], &ed).unwrap();
        assert_eq!(mid, fin);
        let (a, b) = apply_sequence(&p, &[], &ed).unwrap();
        assert_eq!(a, p);
        assert_eq!(b, p);
    }

    #[test]
    fn mle_without_graph_is_an_error() {
        let p = toy();
        let ed = Editor::new(EditMethod::MemitMle, EditorConfig::default());
        assert!(matches!(ed.apply(&p, &Edit::new(1, 0, 2, 3).unwrap()), Err(EditError::MissingGraph(_))));
    }

    #[test]
    fn finite_difference_matches_edit_gradient() {
        let p = ModelParams::random(5, 2, 3, 0.8, 9).unwrap();
        let k = canonical_key(&p, 1, 1);
        let g = edit_gradient(&p, &k, 4);
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..6 {
                let mut plus = p.output().clone();
                plus[(i, j)] += h;
                let mut minus = p.output().clone();
                minus[(i, j)] -= h;
                let fp = edit_objective(&p.with_output(plus).unwrap(), &k, 4);
                let fm = edit_objective(&p.with_output(minus).unwrap(), &k, 4);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-4 * g[(i, j)].abs().max(1e-6));
            }
        }
    }
}
