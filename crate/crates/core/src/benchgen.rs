//! Benchmark construction.
//!
//! Conflict cases pair two edits whose targets interact:
//!
//! | split     | first edit            | second edit           |
//! |-----------|-----------------------|-----------------------|
//! | single    | none                  | `(s, r, o1 → o3)`     |
//! | coverage  | `(s, r, o1 → o2)`     | `(s, r, o2 → o3)`     |
//! | reverse   | `(s1, r1, o1 → o2)`   | `(o2, r2, s1 → s2)`   |
//! | composite | `(s2, r1, o1 → o2)`   | `(s1, r2, o2 → o3)`   |
//!
//! where `r2` is the inverse of `r1` (reverse), or the conclusion of a rule
//! `r ∧ r1 → r2` whose tie fact `(s1, r, s2)` stays untouched (composite).
//!
//! Round cases edit one true label of a one-to-many fact to an outside
//! entity and back. Easy cases use an outside entity close to the centroid
//! of the true labels, hard cases a distant one; both splits are drawn from
//! the same sequence of base facts.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::editors::{Edit, EditError};
use crate::kgcore::{instantiate_rule, EntityId, Fact, KnowledgeGraph, RelationId, RelationKind, FANOUT_CAP};
use crate::model::{verify_fact_holds, ModelParams};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("split {split}: only {achievable} distinct cases exist, {requested} requested")]
    Insufficient { split: String, requested: usize, achievable: usize },
    #[error(
        "similarity thresholds infeasible: outside-label cosines span [{min:.3}, {max:.3}], \
         easy needs ≥ {easy}, hard needs ≤ {hard} for the same fact"
    )]
    Thresholds { min: f64, max: f64, easy: f64, hard: f64 },
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error(transparent)]
    Edit(#[from] EditError),
}

pub type BenchResult<T> = Result<T, BenchError>;

// ============================================================================
// Splits
// ============================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictSplit {
    Single,
    Coverage,
    Reverse,
    Composite,
}

impl ConflictSplit {
    pub const ALL: [ConflictSplit; 4] =
        [ConflictSplit::Single, ConflictSplit::Coverage, ConflictSplit::Reverse, ConflictSplit::Composite];

    pub fn tag(self) -> &'static str {
        match self {
            ConflictSplit::Single => "single",
            ConflictSplit::Coverage => "coverage",
            ConflictSplit::Reverse => "reverse",
            ConflictSplit::Composite => "composite",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundSplit {
    Easy,
    Hard,
}

impl RoundSplit {
    pub const ALL: [RoundSplit; 2] = [RoundSplit::Easy, RoundSplit::Hard];

    pub fn tag(self) -> &'static str {
        match self {
            RoundSplit::Easy => "easy",
            RoundSplit::Hard => "hard",
        }
    }
}

impl fmt::Display for ConflictSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl fmt::Display for RoundSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ConflictSplit {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        ConflictSplit::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| BenchError::UnknownSplit(s.to_string()))
    }
}

impl FromStr for RoundSplit {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        RoundSplit::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| BenchError::UnknownSplit(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// The second edit's literal new fact.
    Explicit,
    /// The fact the second edit implies for the first edit's prompt.
    Implicit,
}

// ============================================================================
// Cases
// ============================================================================

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictCase {
    pub id: String,
    pub split: ConflictSplit,
    pub edit1: Option<Edit>,
    pub edit2: Edit,
    /// Fact asserted by the first edit that the second one contests.
    pub k_o: Fact,
    /// Fact implied once both edits are applied.
    pub k_n: Fact,
    /// Untouched fact linking a composite pair.
    pub k_f: Option<Fact>,
    pub explicit_probe: Option<Fact>,
    pub implicit_probe: Option<Fact>,
}

impl ConflictCase {
    pub fn edits(&self) -> Vec<Edit> {
        self.edit1.iter().copied().chain(std::iter::once(self.edit2)).collect()
    }

    pub fn probe_fact(&self, mode: ProbeMode) -> Option<Fact> {
        match mode {
            ProbeMode::Explicit => self.explicit_probe,
            ProbeMode::Implicit => self.implicit_probe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundCase {
    pub id: String,
    pub split: RoundSplit,
    pub subject: EntityId,
    pub relation: RelationId,
    /// True labels of `(subject, relation)`.
    pub obj_set: Vec<EntityId>,
    pub target_object: EntityId,
    pub intermediate_object: EntityId,
    /// Cosine between the intermediate object and the true-label centroid.
    pub similarity: f64,
    pub edits: [Edit; 2],
}

impl RoundCase {
    pub fn validate(&self, config: &BenchConfig) -> BenchResult<()> {
        let bad = |m: String| Err(BenchError::Setting(format!("round case {}: {m}", self.id)));
        if !(2..=FANOUT_CAP).contains(&self.obj_set.len()) {
            return bad(format!("{} true labels", self.obj_set.len()));
        }
        if !self.obj_set.contains(&self.target_object) {
            return bad("target outside the true labels".into());
        }
        if self.obj_set.contains(&self.intermediate_object) {
            return bad("intermediate object is a true label".into());
        }
        let [e1, e2] = self.edits;
        let expect = Edit {
            subject: self.subject,
            relation: self.relation,
            old_object: self.target_object,
            new_object: self.intermediate_object,
        };
        if e1 != expect || e2 != expect.reversed() {
            return bad("edits are not a round trip".into());
        }
        let ok = match self.split {
            RoundSplit::Easy => self.similarity >= config.easy_threshold,
            RoundSplit::Hard => self.similarity <= config.hard_threshold,
        };
        if !ok {
            return bad(format!("similarity {} outside the {} range", self.similarity, self.split));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub cases_per_split: usize,
    /// Easy intermediates have centroid cosine at least this.
    pub easy_threshold: f64,
    /// Hard intermediates have centroid cosine at most this.
    pub hard_threshold: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { cases_per_split: 500, easy_threshold: 0.4, hard_threshold: 0.0, seed: 0 }
    }
}

// ============================================================================
// Conflict generation
// ============================================================================

/// A fully specified conflict case before materialisation.
#[derive(Clone, Copy)]
struct Draft {
    edit1: Option<Edit>,
    edit2: Edit,
    k_o: Fact,
    k_n: Fact,
    k_f: Option<Fact>,
    explicit: Option<Fact>,
    implicit: Option<Fact>,
}

fn others<'a>(pool: &'a [EntityId], exclude: &[EntityId]) -> impl Iterator<Item = EntityId> + 'a {
    let exclude = exclude.to_vec();
    pool.iter().copied().filter(move |e| !exclude.contains(e))
}

fn one_to_one_facts(kg: &KnowledgeGraph) -> Vec<Fact> {
    kg.facts()
        .copied()
        .filter(|f| kg.relations()[f.relation].kind == RelationKind::OneToOne)
        .collect()
}

fn edit(s: EntityId, r: RelationId, old: EntityId, new: EntityId) -> Edit {
    Edit { subject: s, relation: r, old_object: old, new_object: new }
}

fn conflict_drafts(kg: &KnowledgeGraph, params: &ModelParams, split: ConflictSplit) -> Vec<Draft> {
    let pools: Vec<Vec<EntityId>> = (0..kg.num_relations()).map(|r| kg.object_pool(r)).collect();
    let mut out = Vec::new();
    match split {
        ConflictSplit::Single => {
            for f in one_to_one_facts(kg) {
                for o3 in others(&pools[f.relation], &[f.object, f.subject]) {
                    out.push(Draft {
                        edit1: None,
                        edit2: edit(f.subject, f.relation, f.object, o3),
                        k_o: f,
                        k_n: Fact::new(f.subject, f.relation, o3),
                        k_f: None,
                        explicit: None,
                        implicit: None,
                    });
                }
            }
        }
        ConflictSplit::Coverage => {
            for f in one_to_one_facts(kg) {
                let (s, r, o1) = (f.subject, f.relation, f.object);
                for o2 in others(&pools[r], &[o1, s]) {
                    for o3 in others(&pools[r], &[o1, o2, s]) {
                        let k_n = Fact::new(s, r, o3);
                        out.push(Draft {
                            edit1: Some(edit(s, r, o1, o2)),
                            edit2: edit(s, r, o2, o3),
                            k_o: Fact::new(s, r, o2),
                            k_n,
                            k_f: None,
                            explicit: Some(k_n),
                            implicit: Some(k_n),
                        });
                    }
                }
            }
        }
        ConflictSplit::Reverse => {
            for f in kg.facts().copied() {
                let Some(r2) = kg.relations()[f.relation].inverse_of else { continue };
                let (s1, r1, o1) = (f.subject, f.relation, f.object);
                for o2 in others(&pools[r1], &[o1, s1]) {
                    for s2 in others(&pools[r2], &[s1, o2]) {
                        out.push(Draft {
                            edit1: Some(edit(s1, r1, o1, o2)),
                            edit2: edit(o2, r2, s1, s2),
                            k_o: Fact::new(s1, r1, o2),
                            k_n: Fact::new(s2, r1, o2),
                            k_f: None,
                            explicit: Some(Fact::new(o2, r2, s2)),
                            implicit: Some(Fact::new(s2, r1, o2)),
                        });
                    }
                }
            }
        }
        ConflictSplit::Composite => {
            for rule in kg.rules() {
                let (r1, r2) = (rule.premise_relation, rule.conclusion_relation);
                for c in instantiate_rule(kg, rule) {
                    let tie = c.tie_fact(rule);
                    if !verify_fact_holds(params, &tie) {
                        continue;
                    }
                    let (s1, s2, o1) = (c.subject, c.bridge, c.object);
                    for o2 in others(&pools[r1], &[o1, s2]) {
                        for o3 in others(&pools[r2], &[o1, o2, s1, s2]) {
                            out.push(Draft {
                                edit1: Some(edit(s2, r1, o1, o2)),
                                edit2: edit(s1, r2, o2, o3),
                                k_o: Fact::new(s2, r1, o2),
                                k_n: Fact::new(s2, r1, o3),
                                k_f: Some(tie),
                                explicit: Some(Fact::new(s1, r2, o3)),
                                implicit: Some(Fact::new(s2, r1, o3)),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// `config.cases_per_split` cases of one conflict split, sampled without
/// replacement from every admissible case and listed in base-fact order.
pub fn gen_conflict_split(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    split: ConflictSplit,
    config: &BenchConfig,
) -> BenchResult<Vec<ConflictCase>> {
    let drafts = conflict_drafts(kg, params, split);
    let n = config.cases_per_split;
    if drafts.len() < n {
        return Err(BenchError::Insufficient {
            split: split.tag().to_string(),
            requested: n,
            achievable: drafts.len(),
        });
    }
    let mut rng = seed::rng_for(config.seed, split.tag());
    let mut picks = index::sample(&mut rng, drafts.len(), n).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let d = drafts[p];
            ConflictCase {
                id: format!("{}-{i:04}", split.tag()),
                split,
                edit1: d.edit1,
                edit2: d.edit2,
                k_o: d.k_o,
                k_n: d.k_n,
                k_f: d.k_f,
                explicit_probe: d.explicit,
                implicit_probe: d.implicit,
            }
        })
        .collect())
}

/// All four conflict splits, in split order.
pub fn gen_conflict_dataset(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    config: &BenchConfig,
) -> BenchResult<Vec<ConflictCase>> {
    let mut out = Vec::new();
    for split in ConflictSplit::ALL {
        out.extend(gen_conflict_split(kg, params, split, config)?);
    }
    Ok(out)
}

// ============================================================================
// Round generation
// ============================================================================

/// Cosine between `candidate` and the normalised mean embedding of `obj_set`.
pub fn centroid_similarity(params: &ModelParams, obj_set: &[EntityId], candidate: EntityId) -> f64 {
    let e = params.entity_embeddings();
    let mut c = e.row(obj_set[0]).clone_owned() * 0.0;
    for &o in obj_set {
        c += e.row(o);
    }
    let c = &c / c.norm();
    e.row(candidate).dot(&c)
}

struct RoundBase {
    subject: EntityId,
    relation: RelationId,
    obj_set: Vec<EntityId>,
    target: EntityId,
    easy: Vec<(EntityId, f64)>,
    hard: Vec<(EntityId, f64)>,
}

/// Paired easy and hard round cases: `easy-i` and `hard-i` share subject,
/// relation and target object.
pub fn gen_round_dataset(
    kg: &KnowledgeGraph,
    params: &ModelParams,
    config: &BenchConfig,
) -> BenchResult<Vec<RoundCase>> {
    if config.hard_threshold > config.easy_threshold {
        return Err(BenchError::Setting(format!(
            "hard threshold {} exceeds easy threshold {}",
            config.hard_threshold, config.easy_threshold
        )));
    }
    let mut bases = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (s, r, objs) in kg.subject_relation_pairs() {
        if kg.relations()[r].kind != RelationKind::OneToMany || !(2..=FANOUT_CAP).contains(&objs.len()) {
            continue;
        }
        let mut easy = Vec::new();
        let mut hard = Vec::new();
        for e in 0..kg.num_entities() {
            if e == s || objs.contains(&e) {
                continue;
            }
            let sim = centroid_similarity(params, objs, e);
            lo = lo.min(sim);
            hi = hi.max(sim);
            if sim >= config.easy_threshold {
                easy.push((e, sim));
            }
            if sim <= config.hard_threshold {
                hard.push((e, sim));
            }
        }
        if easy.is_empty() || hard.is_empty() {
            continue;
        }
        for &target in objs {
            bases.push(RoundBase {
                subject: s,
                relation: r,
                obj_set: objs.to_vec(),
                target,
                easy: easy.clone(),
                hard: hard.clone(),
            });
        }
    }
    if bases.is_empty() {
        return Err(BenchError::Thresholds {
            min: lo,
            max: hi,
            easy: config.easy_threshold,
            hard: config.hard_threshold,
        });
    }
    let n = config.cases_per_split;
    let achievable: usize = bases.iter().map(|b| b.easy.len().min(b.hard.len())).sum();
    if achievable < n {
        return Err(BenchError::Insufficient { split: "easy/hard".into(), requested: n, achievable });
    }

    let mut rng = seed::rng_for(config.seed, "round");
    bases.shuffle(&mut rng);
    for b in &mut bases {
        b.easy.shuffle(&mut rng);
        b.hard.shuffle(&mut rng);
    }
    let mut easy_cases = Vec::with_capacity(n);
    let mut hard_cases = Vec::with_capacity(n);
    let mut pass = 0;
    while easy_cases.len() < n {
        for b in &bases {
            if easy_cases.len() == n {
                break;
            }
            if pass >= b.easy.len().min(b.hard.len()) {
                continue;
            }
            let i = easy_cases.len();
            for (split, (o, sim), sink) in [
                (RoundSplit::Easy, b.easy[pass], &mut easy_cases),
                (RoundSplit::Hard, b.hard[pass], &mut hard_cases),
            ] {
                let e1 = edit(b.subject, b.relation, b.target, o);
                sink.push(RoundCase {
                    id: format!("{}-{i:04}", split.tag()),
                    split,
                    subject: b.subject,
                    relation: b.relation,
                    obj_set: b.obj_set.clone(),
                    target_object: b.target,
                    intermediate_object: o,
                    similarity: sim,
                    edits: [e1, e1.reversed()],
                });
            }
        }
        pass += 1;
    }
    easy_cases.extend(hard_cases);
    Ok(easy_cases)
}

// ============================================================================
// Detection
// ============================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conflict {
    Coverage { k_o: Fact, k_n: Fact },
    Reverse { k_o: Fact, k_n: Fact },
    Composite { k_f: Fact, k_o: Fact, k_n: Fact },
    None,
}

impl Conflict {
    pub fn split(&self) -> Option<ConflictSplit> {
        match self {
            Conflict::Coverage { .. } => Some(ConflictSplit::Coverage),
            Conflict::Reverse { .. } => Some(ConflictSplit::Reverse),
            Conflict::Composite { .. } => Some(ConflictSplit::Composite),
            Conflict::None => None,
        }
    }
}

/// Classifies how a second edit interacts with a first one.
pub fn detect_conflict(kg: &KnowledgeGraph, edit1: &Edit, edit2: &Edit) -> Conflict {
    let k_o = edit1.new_fact();
    if edit1.subject == edit2.subject && edit1.relation == edit2.relation {
        return Conflict::Coverage { k_o, k_n: Fact::new(edit1.subject, edit1.relation, edit2.new_object) };
    }
    let inverse = kg.relations().get(edit1.relation).and_then(|r| r.inverse_of);
    if inverse == Some(edit2.relation)
        && edit2.subject == edit1.new_object
        && edit2.old_object == edit1.subject
    {
        return Conflict::Reverse {
            k_o,
            k_n: Fact::new(edit2.new_object, edit1.relation, edit2.subject),
        };
    }
    if edit2.old_object == edit1.new_object {
        for rule in kg.rules() {
            let k_f = Fact::new(edit2.subject, rule.tie_relation, edit1.subject);
            if rule.premise_relation == edit1.relation
                && rule.conclusion_relation == edit2.relation
                && kg.contains(&k_f)
            {
                return Conflict::Composite {
                    k_f,
                    k_o,
                    k_n: Fact::new(edit1.subject, edit1.relation, edit2.new_object),
                };
            }
        }
    }
    Conflict::None
}

/// Distinct-case check used by tests and the runner.
pub fn all_distinct(cases: &[ConflictCase]) -> bool {
    let mut seen = HashSet::new();
    cases.iter().all(|c| seen.insert((c.edit1, c.edit2)))
}
