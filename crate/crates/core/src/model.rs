//! Editable associative-memory model.
//!
//! A prompt `(s, r)` is encoded as the unit key `normalize([E_s ; R_r])`,
//! where paraphrase variants perturb the relation half with seeded Gaussian
//! noise. The output matrix `W` maps keys to entity logits and
//! `softmax(W k / T)` is the model's belief about the object. Embeddings are
//! frozen; only `W` is trained or edited. The key covariance
//! `C = Σ k kᵀ + λI` over canonical training keys backs the rank-one and
//! batched editors.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kgcore::{EntityId, Fact, KnowledgeGraph, RelationId};
use crate::seed;

const CHECKPOINT_MAGIC: &[u8; 8] = b"EBCKPT01";
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
    #[error("unknown relation id {0}")]
    UnknownRelation(RelationId),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("{which} row {row} has norm {norm}, expected 1")]
    NotUnit { which: &'static str, row: usize, norm: f64 },
    #[error("key covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("training stopped after {epochs} epochs at accuracy {accuracy:.4} (target {target})")]
    Training { accuracy: f64, epochs: usize, target: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type ModelResult<T> = Result<T, ModelError>;

// ============================================================================
// Config
// ============================================================================

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Embedding width `d`; keys have `2d` entries.
    pub dim: usize,
    pub temperature: f64,
    /// Share of an entity embedding's energy taken from its cluster centre.
    pub cluster_weight: f64,
    /// Cosine between the embeddings of inverse-paired relations.
    pub inverse_similarity: f64,
    /// Standard deviation of paraphrase noise on the relation half.
    pub noise_scale: f64,
    /// Gradient step on the summed cross-entropy.
    pub step_size: f64,
    pub max_epochs: usize,
    pub accuracy_target: f64,
    /// Ridge `λ` added to the key covariance.
    pub ridge: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            temperature: 1.0,
            cluster_weight: 0.6,
            inverse_similarity: 0.8,
            noise_scale: 0.05,
            step_size: 0.05,
            max_epochs: 4000,
            accuracy_target: 0.95,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> ModelResult<()> {
        let bad = |m: String| Err(ModelError::Setting(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(0.0..1.0).contains(&self.cluster_weight) {
            return bad(format!("cluster_weight {} outside [0, 1)", self.cluster_weight));
        }
        if !(-1.0 < self.inverse_similarity && self.inverse_similarity < 1.0) {
            return bad(format!("inverse_similarity {} outside (-1, 1)", self.inverse_similarity));
        }
        if !(self.noise_scale >= 0.0) || !(self.step_size > 0.0) || !(self.ridge > 0.0) {
            return bad("noise_scale, step_size and ridge must be nonnegative/positive".into());
        }
        if !(0.0..=1.0).contains(&self.accuracy_target) {
            return bad(format!("accuracy_target {} outside [0, 1]", self.accuracy_target));
        }
        Ok(())
    }
}

// ============================================================================
// Parameters
// ============================================================================

/// Plain matrices from which [`ModelParams`] are assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParts {
    /// `N × d`, unit rows.
    pub entity_embeddings: DMatrix<f64>,
    /// `M × d`, unit rows.
    pub relation_embeddings: DMatrix<f64>,
    /// `N × 2d`.
    pub output: DMatrix<f64>,
    /// `2d × 2d`, symmetric positive definite.
    pub key_covariance: DMatrix<f64>,
    pub temperature: f64,
    pub ridge: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

#[derive(Debug)]
struct Frozen {
    entity_embeddings: DMatrix<f64>,
    relation_embeddings: DMatrix<f64>,
    key_covariance: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    /// Orthonormal basis of the column span of the entity embeddings, when
    /// that span is a proper subspace of logit space.
    value_basis: Option<DMatrix<f64>>,
    temperature: f64,
    ridge: f64,
    noise_scale: f64,
    seed: u64,
}

/// Model parameters. Frozen parts are shared between copies, so edits only
/// allocate a new output matrix.
#[derive(Clone, Debug)]
pub struct ModelParams {
    frozen: Arc<Frozen>,
    output: DMatrix<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (&self.frozen, &other.frozen);
        self.output == other.output
            && (Arc::ptr_eq(a, b)
                || (a.entity_embeddings == b.entity_embeddings
                    && a.relation_embeddings == b.relation_embeddings
                    && a.key_covariance == b.key_covariance
                    && a.temperature.to_bits() == b.temperature.to_bits()
                    && a.ridge.to_bits() == b.ridge.to_bits()
                    && a.noise_scale.to_bits() == b.noise_scale.to_bits()
                    && a.seed == b.seed))
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> ModelResult<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what))
    }
}

fn check_unit_rows(m: &DMatrix<f64>, which: &'static str) -> ModelResult<()> {
    for (row, r) in m.row_iter().enumerate() {
        let norm = r.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(ModelError::NotUnit { which, row, norm });
        }
    }
    Ok(())
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut r in m.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

impl ModelParams {
    pub fn from_parts(parts: ModelParts) -> ModelResult<Self> {
        let ModelParts {
            entity_embeddings,
            relation_embeddings,
            output,
            key_covariance,
            temperature,
            ridge,
            noise_scale,
            seed,
        } = parts;
        let n = entity_embeddings.nrows();
        let d = entity_embeddings.ncols();
        if n == 0 || d == 0 || relation_embeddings.nrows() == 0 {
            return Err(ModelError::Shape("empty embedding table".into()));
        }
        if relation_embeddings.ncols() != d {
            return Err(ModelError::Shape(format!(
                "relation width {} differs from entity width {d}",
                relation_embeddings.ncols()
            )));
        }
        if output.shape() != (n, 2 * d) {
            return Err(ModelError::Shape(format!(
                "output matrix is {:?}, expected ({n}, {})",
                output.shape(),
                2 * d
            )));
        }
        if key_covariance.shape() != (2 * d, 2 * d) {
            let kd = 2 * d;
            return Err(ModelError::Shape(format!(
                "key covariance is {:?}, expected ({kd}, {kd})",
                key_covariance.shape()
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ModelError::Setting(format!("temperature {temperature} must be positive")));
        }
        check_finite(&entity_embeddings, "entity embeddings")?;
        check_finite(&relation_embeddings, "relation embeddings")?;
        check_finite(&output, "output matrix")?;
        check_finite(&key_covariance, "key covariance")?;
        check_unit_rows(&entity_embeddings, "entity embedding")?;
        check_unit_rows(&relation_embeddings, "relation embedding")?;
        if key_covariance != key_covariance.transpose() {
            return Err(ModelError::NotPositiveDefinite);
        }
        let factor = Cholesky::new(key_covariance.clone()).ok_or(ModelError::NotPositiveDefinite)?;
        let value_basis = (n > d).then(|| entity_embeddings.clone().qr().q());
        Ok(ModelParams {
            frozen: Arc::new(Frozen {
                entity_embeddings,
                relation_embeddings,
                key_covariance,
                factor,
                value_basis,
                temperature,
                ridge,
                noise_scale,
                seed,
            }),
            output,
        })
    }

    pub fn to_parts(&self) -> ModelParts {
        ModelParts {
            entity_embeddings: self.frozen.entity_embeddings.clone(),
            relation_embeddings: self.frozen.relation_embeddings.clone(),
            output: self.output.clone(),
            key_covariance: self.frozen.key_covariance.clone(),
            temperature: self.frozen.temperature,
            ridge: self.frozen.ridge,
            noise_scale: self.frozen.noise_scale,
            seed: self.frozen.seed,
        }
    }

    /// Random unit embeddings, Gaussian output matrix and the covariance of
    /// every canonical `(s, r)` key. Handy for toy-sized checks.
    pub fn random(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        output_scale: f64,
        seed: u64,
    ) -> ModelResult<Self> {
        let mut rng = seed::rng_for(seed, "random-params");
        let mut e = gaussian_matrix(&mut rng, num_entities, dim);
        let mut r = gaussian_matrix(&mut rng, num_relations, dim);
        normalize_rows(&mut e);
        normalize_rows(&mut r);
        let w = gaussian_matrix(&mut rng, num_entities, 2 * dim) * output_scale;
        let mut c = DMatrix::identity(2 * dim, 2 * dim) * 1e-3;
        for s in 0..num_entities {
            for rel in 0..num_relations {
                let k = key_from(&e, &r, s, rel, None);
                c += &k * k.transpose();
            }
        }
        symmetrize(&mut c);
        ModelParams::from_parts(ModelParts {
            entity_embeddings: e,
            relation_embeddings: r,
            output: w,
            key_covariance: c,
            temperature: 1.0,
            ridge: 1e-3,
            noise_scale: 0.05,
            seed,
        })
    }

    /// Same frozen parts, new output matrix.
    pub fn with_output(&self, output: DMatrix<f64>) -> ModelResult<Self> {
        if output.shape() != self.output.shape() {
            return Err(ModelError::Shape(format!(
                "output matrix is {:?}, expected {:?}",
                output.shape(),
                self.output.shape()
            )));
        }
        check_finite(&output, "output matrix")?;
        Ok(ModelParams { frozen: Arc::clone(&self.frozen), output })
    }

    pub fn num_entities(&self) -> usize {
        self.output.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.frozen.relation_embeddings.nrows()
    }

    /// Embedding width `d`.
    pub fn dim(&self) -> usize {
        self.frozen.entity_embeddings.ncols()
    }

    pub fn key_dim(&self) -> usize {
        self.output.ncols()
    }

    pub fn entity_embeddings(&self) -> &DMatrix<f64> {
        &self.frozen.entity_embeddings
    }

    pub fn relation_embeddings(&self) -> &DMatrix<f64> {
        &self.frozen.relation_embeddings
    }

    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }

    pub fn key_covariance(&self) -> &DMatrix<f64> {
        &self.frozen.key_covariance
    }

    pub fn temperature(&self) -> f64 {
        self.frozen.temperature
    }

    pub fn ridge(&self) -> f64 {
        self.frozen.ridge
    }

    pub fn noise_scale(&self) -> f64 {
        self.frozen.noise_scale
    }

    pub fn seed(&self) -> u64 {
        self.frozen.seed
    }

    /// True when both values share the same frozen embeddings and covariance.
    pub fn shares_frozen(&self, other: &ModelParams) -> bool {
        Arc::ptr_eq(&self.frozen, &other.frozen)
    }

    /// `C⁻¹ x`.
    pub fn solve_covariance(&self, x: &DVector<f64>) -> DVector<f64> {
        self.frozen.factor.solve(x)
    }

    /// Orthogonal projection onto the span of the entity embeddings.
    pub fn project_to_entity_span(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.frozen.value_basis {
            Some(q) => q * (q.transpose() * x),
            None => x.clone(),
        }
    }

    /// `W k`.
    pub fn logits(&self, key: &DVector<f64>) -> DVector<f64> {
        &self.output * key
    }

    /// `softmax(W k / T)` without shape or finiteness checks.
    pub fn probs_at(&self, key: &DVector<f64>) -> DVector<f64> {
        softmax(&(self.logits(key) / self.temperature()))
    }

    fn check_entity(&self, e: EntityId) -> ModelResult<()> {
        if e < self.num_entities() {
            Ok(())
        } else {
            Err(ModelError::UnknownEntity(e))
        }
    }

    fn check_relation(&self, r: RelationId) -> ModelResult<()> {
        if r < self.num_relations() {
            Ok(())
        } else {
            Err(ModelError::UnknownRelation(r))
        }
    }

    fn check_fact(&self, f: &Fact) -> ModelResult<()> {
        self.check_entity(f.subject)?;
        self.check_relation(f.relation)?;
        self.check_entity(f.object)
    }

    // ------------------------------------------------------------------------
    // Checkpoint
    // ------------------------------------------------------------------------

    /// Header (dims, seed, temperature, ridge, noise scale) followed by the
    /// row-major embedding, output and covariance payloads as little-endian
    /// `f64`.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let (n, m, d) = (self.num_entities(), self.num_relations(), self.dim());
        let mut out = Vec::with_capacity(64 + 8 * (n * d + m * d + 2 * n * d + 4 * d * d));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [n as u64, m as u64, d as u64, self.seed()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.temperature(), self.ridge(), self.noise_scale()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for mat in [
            self.entity_embeddings(),
            self.relation_embeddings(),
            &self.output,
            self.key_covariance(),
        ] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    out.extend_from_slice(&mat[(i, j)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> ModelResult<Self> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 64 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
        let n = u64::from_le_bytes(word(0)) as usize;
        let m = u64::from_le_bytes(word(1)) as usize;
        let d = u64::from_le_bytes(word(2)) as usize;
        let seed = u64::from_le_bytes(word(3));
        let temperature = f64::from_le_bytes(word(4));
        let ridge = f64::from_le_bytes(word(5));
        let noise_scale = f64::from_le_bytes(word(6));
        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(3))
            .and_then(|x| x.checked_add(m.checked_mul(d)?))
            .and_then(|x| x.checked_add(4usize.checked_mul(d)?.checked_mul(d)?))
            .and_then(|x| x.checked_mul(8))
            .and_then(|x| x.checked_add(64))
            .ok_or_else(|| bad("header dimensions overflow"))?;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut pos = 64;
        let mut read = |rows: usize, cols: usize| {
            let mut mat = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    mat[(i, j)] = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                    pos += 8;
                }
            }
            mat
        };
        let entity_embeddings = read(n, d);
        let relation_embeddings = read(m, d);
        let output = read(n, 2 * d);
        let key_covariance = read(2 * d, 2 * d);
        ModelParams::from_parts(ModelParts {
            entity_embeddings,
            relation_embeddings,
            output,
            key_covariance,
            temperature,
            ridge,
            noise_scale,
            seed,
        })
    }
}

fn symmetrize(c: &mut DMatrix<f64>) {
    let t = c.transpose();
    *c += t;
    *c *= 0.5;
}

// ============================================================================
// Keys and probes
// ============================================================================

#[derive(Clone, Debug, PartialEq)]
pub struct PromptKey {
    pub subject: EntityId,
    pub relation: RelationId,
    /// 0 is the canonical prompt; larger values are paraphrases.
    pub variant: usize,
    pub vector: DVector<f64>,
}

fn key_from(
    e: &DMatrix<f64>,
    r: &DMatrix<f64>,
    subject: EntityId,
    relation: RelationId,
    noise: Option<&DVector<f64>>,
) -> DVector<f64> {
    let d = e.ncols();
    let mut k = DVector::zeros(2 * d);
    for j in 0..d {
        k[j] = e[(subject, j)];
        k[d + j] = r[(relation, j)] + noise.map_or(0.0, |z| z[j]);
    }
    let n = k.norm();
    k / n
}

fn paraphrase_noise(params: &ModelParams, s: EntityId, r: RelationId, v: usize) -> DVector<f64> {
    let mut rng = seed::rng(seed::combine(params.seed(), &[s as u64, r as u64, v as u64]));
    let sigma = params.noise_scale();
    DVector::from_fn(params.dim(), |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

pub fn build_key(
    params: &ModelParams,
    subject: EntityId,
    relation: RelationId,
    variant: usize,
) -> ModelResult<PromptKey> {
    params.check_entity(subject)?;
    params.check_relation(relation)?;
    let noise = (variant > 0).then(|| paraphrase_noise(params, subject, relation, variant));
    let vector = key_from(
        params.entity_embeddings(),
        params.relation_embeddings(),
        subject,
        relation,
        noise.as_ref(),
    );
    Ok(PromptKey { subject, relation, variant, vector })
}

/// Canonical key vector; ids must be valid.
pub(crate) fn canonical_key(params: &ModelParams, subject: EntityId, relation: RelationId) -> DVector<f64> {
    key_from(params.entity_embeddings(), params.relation_embeddings(), subject, relation, None)
}

/// Numerically stable softmax.
pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let max = z.max();
    let e = z.map(|x| (x - max).exp());
    let s = e.sum();
    e / s
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub support: Vec<EntityId>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn new(support: Vec<EntityId>, probs: Vec<f64>) -> ModelResult<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(ModelError::Distribution(format!(
                "{} support entries for {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = support.iter().find(|&&e| !seen.insert(e)) {
            return Err(ModelError::Distribution(format!("entity {dup} repeated in support")));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(ModelError::Distribution("negative or NaN probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::Distribution(format!("probabilities sum to {total}")));
        }
        Ok(Distribution { support, probs })
    }

    pub fn prob(&self, entity: EntityId) -> Option<f64> {
        self.support.iter().position(|&e| e == entity).map(|i| self.probs[i])
    }

    /// Most likely entity; ties go to the earliest support entry.
    pub fn argmax(&self) -> EntityId {
        self.support[argmax(&self.probs)]
    }
}

pub fn probe(params: &ModelParams, key: &PromptKey) -> ModelResult<Distribution> {
    if key.vector.len() != params.key_dim() {
        return Err(ModelError::Shape(format!(
            "key has {} entries, model expects {}",
            key.vector.len(),
            params.key_dim()
        )));
    }
    let logits = params.logits(&key.vector) / params.temperature();
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("logits"));
    }
    let probs = softmax(&logits);
    Ok(Distribution { support: (0..params.num_entities()).collect(), probs: probs.as_slice().to_vec() })
}

/// Mean probability of the fact's object over prompt variants `0..variants`.
pub fn fact_probability(params: &ModelParams, fact: &Fact, variants: usize) -> ModelResult<f64> {
    if variants == 0 {
        return Err(ModelError::Setting("at least one prompt variant is required".into()));
    }
    params.check_fact(fact)?;
    let mut total = 0.0;
    for v in 0..variants {
        let key = build_key(params, fact.subject, fact.relation, v)?;
        total += params.probs_at(&key.vector)[fact.object];
    }
    Ok(total / variants as f64)
}

/// Probe at the canonical key, restricted to `obj_set` and renormalised.
pub fn restricted_distribution(
    params: &ModelParams,
    subject: EntityId,
    relation: RelationId,
    obj_set: &[EntityId],
) -> ModelResult<Distribution> {
    if obj_set.is_empty() {
        return Err(ModelError::Distribution("empty object set".into()));
    }
    for &o in obj_set {
        params.check_entity(o)?;
    }
    let key = build_key(params, subject, relation, 0)?;
    let full = probe(params, &key)?;
    let raw: Vec<f64> = obj_set.iter().map(|&o| full.probs[o]).collect();
    let total: f64 = raw.iter().sum();
    Distribution::new(obj_set.to_vec(), raw.iter().map(|p| p / total).collect())
}

/// True iff the object is the top-1 prediction at the canonical key.
pub fn verify_fact_holds(params: &ModelParams, fact: &Fact) -> bool {
    if params.check_fact(fact).is_err() {
        return false;
    }
    let probs = params.probs_at(&canonical_key(params, fact.subject, fact.relation));
    argmax(probs.as_slice()) == fact.object
}

// ============================================================================
// Training
// ============================================================================

/// Frozen embeddings for a graph. Entities are pulled towards their cluster
/// centre; each inverse-paired relation is drawn at a fixed cosine from its
/// partner.
pub fn init_embeddings(kg: &KnowledgeGraph, config: &TrainConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = config.dim;
    let mut rng = seed::rng_for(config.seed, "embeddings");
    let clusters = kg.entities().iter().map(|e| e.cluster).max().unwrap_or(0) + 1;
    let mut centres = gaussian_matrix(&mut rng, clusters, d);
    normalize_rows(&mut centres);
    let mut noise = gaussian_matrix(&mut rng, kg.num_entities(), d);
    normalize_rows(&mut noise);
    let (a, b) = (config.cluster_weight.sqrt(), (1.0 - config.cluster_weight).sqrt());
    let mut e = DMatrix::zeros(kg.num_entities(), d);
    for ent in kg.entities() {
        let row = centres.row(ent.cluster) * a + noise.row(ent.id) * b;
        e.set_row(ent.id, &row);
    }
    normalize_rows(&mut e);

    let mut r = gaussian_matrix(&mut rng, kg.num_relations(), d);
    normalize_rows(&mut r);
    let rho = config.inverse_similarity;
    for rel in kg.relations() {
        if let Some(partner) = rel.inverse_of.filter(|&p| p < rel.id) {
            let base = r.row(partner).clone_owned();
            let z = r.row(rel.id).clone_owned();
            let mut perp = &z - &base * z.dot(&base);
            perp /= perp.norm();
            let row = base * rho + perp * (1.0 - rho * rho).sqrt();
            r.set_row(rel.id, &row);
        }
    }
    normalize_rows(&mut r);
    (e, r)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub epochs: usize,
    pub accuracy: f64,
    /// Mean cross-entropy before each update.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on cross-entropy against targets uniform over
/// each `(s, r)`'s objects; stops at the accuracy target.
pub fn train(kg: &KnowledgeGraph, config: &TrainConfig) -> ModelResult<TrainOutcome> {
    config.validate()?;
    let (e, r) = init_embeddings(kg, config);
    let pairs: Vec<(EntityId, RelationId, &[EntityId])> = kg.subject_relation_pairs().collect();
    if pairs.is_empty() {
        return Err(ModelError::Setting("graph has no facts to train on".into()));
    }
    let n = kg.num_entities();
    let kd = 2 * config.dim;
    let mut keys = DMatrix::zeros(pairs.len(), kd);
    let mut targets = DMatrix::zeros(pairs.len(), n);
    for (i, &(s, rel, objs)) in pairs.iter().enumerate() {
        keys.set_row(i, &key_from(&e, &r, s, rel, None).transpose());
        for &o in objs {
            targets[(i, o)] = 1.0 / objs.len() as f64;
        }
    }

    let t = config.temperature;
    let mut w = DMatrix::<f64>::zeros(n, kd);
    let mut losses = Vec::new();
    let mut accuracy: f64;
    let mut epochs = 0;
    loop {
        let mut probs = &keys * w.transpose() / t;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (i, &(_, _, objs)) in pairs.iter().enumerate() {
            let mut row = probs.row_mut(i);
            let max = row.max();
            row.apply(|x| *x = (*x - max).exp());
            let s = row.sum();
            row /= s;
            for &o in objs {
                loss -= targets[(i, o)] * row[o].ln();
            }
            let top = argmax(&row.iter().copied().collect::<Vec<_>>());
            if objs.binary_search(&top).is_ok() {
                correct += 1;
            }
        }
        loss /= pairs.len() as f64;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("training loss"));
        }
        losses.push(loss);
        accuracy = correct as f64 / pairs.len() as f64;
        if accuracy >= config.accuracy_target || epochs >= config.max_epochs {
            break;
        }
        probs -= &targets;
        let grad = probs.transpose() * &keys / t;
        w -= grad * config.step_size;
        epochs += 1;
    }
    if accuracy < config.accuracy_target {
        return Err(ModelError::Training { accuracy, epochs, target: config.accuracy_target });
    }

    let mut c = keys.transpose() * &keys;
    for i in 0..kd {
        c[(i, i)] += config.ridge;
    }
    symmetrize(&mut c);
    let params = ModelParams::from_parts(ModelParts {
        entity_embeddings: e,
        relation_embeddings: r,
        output: w,
        key_covariance: c,
        temperature: t,
        ridge: config.ridge,
        noise_scale: config.noise_scale,
        seed: config.seed,
    })?;
    Ok(TrainOutcome { params, epochs, accuracy, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelParams {
        ModelParams::random(6, 3, 4, 0.5, 11).unwrap()
    }

    #[test]
    fn canonical_key_has_no_noise() {
        let p = toy();
        let k = build_key(&p, 2, 1, 0).unwrap();
        let e = p.entity_embeddings();
        let r = p.relation_embeddings();
        let mut raw = vec![0.0; 8];
        for j in 0..4 {
            raw[j] = e[(2, j)];
            raw[4 + j] = r[(1, j)];
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..8 {
            assert_eq!(k.vector[j], raw[j] / norm);
        }
    }

    #[test]
    fn keys_are_deterministic_and_unit() {
        let p = toy();
        for v in 0..5 {
            let a = build_key(&p, 1, 2, v).unwrap();
            let b = build_key(&p, 1, 2, v).unwrap();
            assert_eq!(a, b);
            assert!((a.vector.norm() - 1.0).abs() < 1e-12);
        }
        assert_ne!(build_key(&p, 1, 2, 1).unwrap().vector, build_key(&p, 1, 2, 2).unwrap().vector);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let p = toy();
        assert!(matches!(build_key(&p, 6, 0, 0), Err(ModelError::UnknownEntity(6))));
        assert!(matches!(build_key(&p, 0, 3, 0), Err(ModelError::UnknownRelation(3))));
        assert!(fact_probability(&p, &Fact::new(0, 0, 9), 1).is_err());
        assert!(!verify_fact_holds(&p, &Fact::new(0, 0, 9)));
    }

    #[test]
    fn zero_output_is_uniform() {
        let p = toy();
        let z = p.with_output(DMatrix::zeros(6, 8)).unwrap();
        let dist = probe(&z, &build_key(&z, 0, 0, 0).unwrap()).unwrap();
        for &q in &dist.probs {
            assert!((q - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(!verify_fact_holds(&z, &Fact::new(0, 0, 3)));
        assert!(verify_fact_holds(&z, &Fact::new(0, 0, 0)));
    }

    #[test]
    fn single_variant_is_canonical_probe() {
        let p = toy();
        let f = Fact::new(3, 2, 4);
        let direct = probe(&p, &build_key(&p, 3, 2, 0).unwrap()).unwrap().probs[4];
        assert_eq!(fact_probability(&p, &f, 1).unwrap(), direct);
        let q = fact_probability(&p, &f, 7).unwrap();
        assert!(q > 0.0 && q < 1.0);
        assert!(fact_probability(&p, &f, 0).is_err());
    }

    #[test]
    fn restricted_distribution_edge_cases() {
        let p = toy();
        let all: Vec<usize> = (0..6).collect();
        let full = probe(&p, &build_key(&p, 1, 0, 0).unwrap()).unwrap();
        let r = restricted_distribution(&p, 1, 0, &all).unwrap();
        for (a, b) in r.probs.iter().zip(&full.probs) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = restricted_distribution(&p, 1, 0, &[4]).unwrap();
        assert_eq!(single.probs, vec![1.0]);
        assert!(restricted_distribution(&p, 1, 0, &[]).is_err());
        assert!(restricted_distribution(&p, 1, 0, &[1, 60]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = toy();
        let bytes = p.to_checkpoint_bytes();
        let back = ModelParams::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
        assert!(ModelParams::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut broken = bytes.clone();
        broken[0] = b'X';
        assert!(ModelParams::from_checkpoint_bytes(&broken).is_err());
    }

    #[test]
    fn construction_checks_invariants() {
        let mut parts = toy().to_parts();
        parts.entity_embeddings[(0, 0)] += 0.1;
        assert!(matches!(ModelParams::from_parts(parts), Err(ModelError::NotUnit { .. })));
        let mut parts = toy().to_parts();
        parts.key_covariance = -DMatrix::identity(8, 8);
        assert!(matches!(ModelParams::from_parts(parts), Err(ModelError::NotPositiveDefinite)));
        let mut parts = toy().to_parts();
        parts.output[(0, 0)] = f64::NAN;
        assert!(matches!(ModelParams::from_parts(parts), Err(ModelError::NonFinite(_))));
        assert!(toy().with_output(DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn entity_span_projection_is_identity_when_wide() {
        let p = ModelParams::random(3, 2, 4, 0.5, 11).unwrap();
        let x = DVector::from_fn(3, |i, _| i as f64);
        assert_eq!(p.project_to_entity_span(&x), x);
        let tall = ModelParams::random(12, 2, 4, 0.1, 3).unwrap();
        let y = DVector::from_fn(12, |i, _| (i as f64).sin());
        let py = tall.project_to_entity_span(&y);
        let ppy = tall.project_to_entity_span(&py);
        assert!((&py - &ppy).norm() < 1e-12);
        let resid = &y - &py;
        let along = tall.entity_embeddings().transpose() * resid;
        assert!(along.norm() < 1e-12);
    }
}
