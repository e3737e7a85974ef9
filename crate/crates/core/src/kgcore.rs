//! Synthetic knowledge graph: entities, typed relations, inverse pairs,
//! composite rules and an indexed fact set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

pub type EntityId = usize;
pub type RelationId = usize;

/// Largest number of objects a one-to-many relation may attach to a subject.
pub const FANOUT_CAP: usize = 10;
pub const MIN_ENTITIES: usize = 50;

const TEXT_MAGIC: &str = "editbench-kg 1";

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("infeasible graph config: {0}")]
    Infeasible(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
    #[error("unknown relation id {0}")]
    UnknownRelation(RelationId),
    #[error("graph text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type KgResult<T> = Result<T, KgError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    /// Semantic group; entities in one group get nearby embeddings.
    pub cluster: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    OneToOne,
    OneToMany,
}

impl RelationKind {
    pub fn tag(self) -> &'static str {
        match self {
            RelationKind::OneToOne => "one-to-one",
            RelationKind::OneToMany => "one-to-many",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "one-to-one" => Some(RelationKind::OneToOne),
            "one-to-many" => Some(RelationKind::OneToMany),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub name: String,
    pub kind: RelationKind,
    pub inverse_of: Option<RelationId>,
    pub max_fanout: Option<usize>,
}

/// `tie ∧ premise → conclusion`: whenever `(a, tie, b)` and `(b, premise, c)`
/// hold, `(a, conclusion, c)` holds too.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeRule {
    pub tie_relation: RelationId,
    pub premise_relation: RelationId,
    pub conclusion_relation: RelationId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Fact {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Fact { subject, relation, object }
    }
}

/// One instance of a composite rule: `(subject, tie, bridge)`,
/// `(bridge, premise, object)` and `(subject, conclusion, object)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactCombination {
    pub subject: EntityId,
    pub bridge: EntityId,
    pub object: EntityId,
}

impl FactCombination {
    pub fn tie_fact(&self, rule: &CompositeRule) -> Fact {
        Fact::new(self.subject, rule.tie_relation, self.bridge)
    }

    pub fn premise_fact(&self, rule: &CompositeRule) -> Fact {
        Fact::new(self.bridge, rule.premise_relation, self.object)
    }

    pub fn conclusion_fact(&self, rule: &CompositeRule) -> Fact {
        Fact::new(self.subject, rule.conclusion_relation, self.object)
    }
}

// ============================================================================
// Generation config
// ============================================================================

const REVERSE_VOCAB: &[[&str; 2]] = &[["HusbandOf", "WifeOf"]];
const RULE_VOCAB: &[[&str; 3]] = &[["Mother", "Spouse", "Father"]];
const MULTI_VOCAB: &[&str] = &["EducatedAt", "AwardReceived"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgConfig {
    pub entities: usize,
    /// Entities per semantic cluster.
    pub cluster_size: usize,
    /// Share of entities that act as subjects of each relation.
    pub subject_fraction: f64,
    /// Upper fanout bound for one-to-many relations (lower bound is 2).
    pub max_fanout: usize,
    /// Probability that a one-to-many object set is drawn from one cluster.
    pub coherent_fraction: f64,
    pub reverse_pairs: Vec<[String; 2]>,
    /// `[tie, premise, conclusion]` relation names.
    pub composite_rules: Vec<[String; 3]>,
    pub one_to_many: Vec<String>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig::with_counts(100, 2, 2, 2, 0)
    }
}

impl KgConfig {
    /// Config with the given relation counts; names come from the fixed
    /// vocabulary first and synthetic extras after that.
    pub fn with_counts(
        entities: usize,
        reverse_pairs: usize,
        composite_rules: usize,
        one_to_many: usize,
        seed: u64,
    ) -> Self {
        let reverse_pairs = (0..reverse_pairs)
            .map(|i| match REVERSE_VOCAB.get(i) {
                Some([a, b]) => [a.to_string(), b.to_string()],
                None => [format!("Rev{i}"), format!("Rev{i}Inverse")],
            })
            .collect();
        let composite_rules = (0..composite_rules)
            .map(|i| match RULE_VOCAB.get(i) {
                Some([a, b, c]) => [a.to_string(), b.to_string(), c.to_string()],
                None => [format!("Tie{i}"), format!("Premise{i}"), format!("Conclusion{i}")],
            })
            .collect();
        let one_to_many = (0..one_to_many)
            .map(|i| match MULTI_VOCAB.get(i) {
                Some(a) => a.to_string(),
                None => format!("Multi{i}"),
            })
            .collect();
        KgConfig {
            entities,
            cluster_size: 10,
            subject_fraction: 0.3,
            max_fanout: 4,
            coherent_fraction: 0.5,
            reverse_pairs,
            composite_rules,
            one_to_many,
            seed,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.entities / self.cluster_size.max(1)
    }

    fn subjects_per_relation(&self) -> usize {
        (self.subject_fraction * self.entities as f64).round() as usize
    }

    pub fn validate(&self) -> KgResult<()> {
        let bad = |msg: String| Err(KgError::Infeasible(msg));
        if self.entities < MIN_ENTITIES {
            return bad(format!("entity count {} below minimum {MIN_ENTITIES}", self.entities));
        }
        if self.reverse_pairs.len() < 2 {
            return bad(format!("need at least 2 reverse pairs, got {}", self.reverse_pairs.len()));
        }
        if self.composite_rules.len() < 2 {
            return bad(format!(
                "need at least 2 composite rules, got {}",
                self.composite_rules.len()
            ));
        }
        if self.one_to_many.len() < 2 {
            return bad(format!(
                "need at least 2 one-to-many relations, got {}",
                self.one_to_many.len()
            ));
        }
        let mut seen = HashSet::new();
        let names = self
            .reverse_pairs
            .iter()
            .flatten()
            .chain(self.composite_rules.iter().flatten())
            .chain(self.one_to_many.iter());
        for name in names {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return bad(format!("relation name {name:?} must be non-empty without whitespace"));
            }
            if !seen.insert(name.as_str()) {
                return bad(format!("relation name {name} used more than once"));
            }
        }
        if !(2..=FANOUT_CAP).contains(&self.max_fanout) {
            return bad(format!("max_fanout {} outside [2, {FANOUT_CAP}]", self.max_fanout));
        }
        if self.cluster_size < self.max_fanout + 1 {
            return bad(format!(
                "cluster_size {} cannot hold max_fanout {} objects besides the subject",
                self.cluster_size, self.max_fanout
            ));
        }
        if self.num_clusters() < self.max_fanout {
            return bad(format!(
                "{} clusters cannot supply max_fanout {} distinct clusters",
                self.num_clusters(),
                self.max_fanout
            ));
        }
        if !(self.subject_fraction > 0.0 && self.subject_fraction <= 1.0) {
            return bad(format!("subject_fraction {} outside (0, 1]", self.subject_fraction));
        }
        let m = self.subjects_per_relation();
        if m < 2 {
            return bad(format!("subject_fraction yields {m} subjects per relation, need 2"));
        }
        if 2 * m > self.entities {
            return bad(format!(
                "reverse pairs need {} distinct entities, only {} exist",
                2 * m,
                self.entities
            ));
        }
        if !(0.0..=1.0).contains(&self.coherent_fraction) {
            return bad(format!("coherent_fraction {} outside [0, 1]", self.coherent_fraction));
        }
        Ok(())
    }
}

// ============================================================================
// Graph
// ============================================================================

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    rules: Vec<CompositeRule>,
    facts: BTreeSet<Fact>,
    by_subject: BTreeMap<(EntityId, RelationId), Vec<EntityId>>,
    by_object: BTreeMap<(EntityId, RelationId), Vec<EntityId>>,
    seed: u64,
}

impl KnowledgeGraph {
    /// Builds and validates a graph.
    pub fn from_parts(
        entities: Vec<Entity>,
        relations: Vec<Relation>,
        rules: Vec<CompositeRule>,
        facts: impl IntoIterator<Item = Fact>,
        seed: u64,
    ) -> KgResult<Self> {
        let facts: BTreeSet<Fact> = facts.into_iter().collect();
        let mut by_subject: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
        let mut by_object: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
        for f in &facts {
            by_subject.entry((f.subject, f.relation)).or_default().push(f.object);
            by_object.entry((f.object, f.relation)).or_default().push(f.subject);
        }
        for list in by_subject.values_mut().chain(by_object.values_mut()) {
            list.sort_unstable();
        }
        let kg = KnowledgeGraph { entities, relations, rules, facts, by_subject, by_object, seed };
        kg.validate()?;
        Ok(kg)
    }

    pub fn validate(&self) -> KgResult<()> {
        let bad = |msg: String| Err(KgError::Invalid(msg));
        let mut names = HashSet::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.id != i {
                return bad(format!("entity at position {i} has id {}", e.id));
            }
            if e.name.is_empty() || e.name.chars().any(char::is_whitespace) {
                return bad(format!("entity {i} has an unusable name {:?}", e.name));
            }
            if !names.insert(e.name.as_str()) {
                return bad(format!("duplicate entity name {}", e.name));
            }
        }
        names.clear();
        for (i, r) in self.relations.iter().enumerate() {
            if r.id != i {
                return bad(format!("relation at position {i} has id {}", r.id));
            }
            if r.name.is_empty() || r.name.chars().any(char::is_whitespace) {
                return bad(format!("relation {i} has an unusable name {:?}", r.name));
            }
            if !names.insert(r.name.as_str()) {
                return bad(format!("duplicate relation name {}", r.name));
            }
            if let Some(j) = r.inverse_of {
                let Some(other) = self.relations.get(j) else {
                    return bad(format!("relation {} names unknown inverse {j}", r.name));
                };
                if j == i || other.inverse_of != Some(i) {
                    return bad(format!("inverse of {} is not symmetric", r.name));
                }
            }
            match (r.kind, r.max_fanout) {
                (RelationKind::OneToOne, None) => {}
                (RelationKind::OneToMany, Some(m)) if (2..=FANOUT_CAP).contains(&m) => {}
                _ => return bad(format!("relation {} has an invalid fanout bound", r.name)),
            }
        }
        for rule in &self.rules {
            let ids = [rule.tie_relation, rule.premise_relation, rule.conclusion_relation];
            if ids.iter().any(|&id| id >= self.relations.len()) {
                return bad(format!("rule {ids:?} references an unknown relation"));
            }
            if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                return bad(format!("rule {ids:?} repeats a relation"));
            }
        }
        for f in &self.facts {
            if f.subject >= self.entities.len() || f.object >= self.entities.len() {
                return bad(format!("fact {f:?} references an unknown entity"));
            }
            if f.relation >= self.relations.len() {
                return bad(format!("fact {f:?} references an unknown relation"));
            }
        }
        for (&(s, r), objs) in &self.by_subject {
            let rel = &self.relations[r];
            match rel.kind {
                RelationKind::OneToOne if objs.len() > 1 => {
                    return bad(format!("{} has {} objects under one-to-one {}", s, objs.len(), rel.name));
                }
                RelationKind::OneToMany => {
                    let max = rel.max_fanout.unwrap_or(FANOUT_CAP);
                    if objs.len() < 2 || objs.len() > max {
                        return bad(format!(
                            "{} has fanout {} under {}, allowed [2, {max}]",
                            s,
                            objs.len(),
                            rel.name
                        ));
                    }
                }
                _ => {}
            }
        }
        for f in &self.facts {
            if let Some(inv) = self.relations[f.relation].inverse_of {
                if !self.contains(&Fact::new(f.object, inv, f.subject)) {
                    return bad(format!("fact {f:?} lacks its inverse"));
                }
            }
        }
        for rule in &self.rules {
            for (s1, s2) in self.pairs_of(rule.tie_relation) {
                for &o in self.objects(s2, rule.premise_relation) {
                    if !self.contains(&Fact::new(s1, rule.conclusion_relation, o)) {
                        return bad(format!(
                            "rule {rule:?} violated at ({s1}, {s2}, {o})"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn rules(&self) -> &[CompositeRule] {
        &self.rules
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> + '_ {
        self.facts.iter()
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains(fact)
    }

    pub fn entity(&self, id: EntityId) -> KgResult<&Entity> {
        self.entities.get(id).ok_or(KgError::UnknownEntity(id))
    }

    pub fn relation(&self, id: RelationId) -> KgResult<&Relation> {
        self.relations.get(id).ok_or(KgError::UnknownRelation(id))
    }

    pub fn relation_by_name(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn entity_by_name(&self, name: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.name == name)
    }

    /// Objects of `(subject, relation)`, sorted; empty for unknown ids.
    pub fn objects(&self, subject: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_subject.get(&(subject, relation)).map_or(&[], Vec::as_slice)
    }

    /// Subjects pointing at `object` through `relation`, sorted.
    pub fn subjects(&self, object: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_object.get(&(object, relation)).map_or(&[], Vec::as_slice)
    }

    /// Every `(subject, relation)` with at least one object, in key order.
    pub fn subject_relation_pairs(&self) -> impl Iterator<Item = (EntityId, RelationId, &[EntityId])> + '_ {
        self.by_subject.iter().map(|(&(s, r), o)| (s, r, o.as_slice()))
    }

    /// `(subject, object)` pairs of one relation, in subject order.
    pub fn pairs_of(&self, relation: RelationId) -> impl Iterator<Item = (EntityId, EntityId)> + '_ {
        self.facts
            .iter()
            .filter(move |f| f.relation == relation)
            .map(|f| (f.subject, f.object))
    }

    /// Distinct objects ever attached to `relation`, sorted.
    pub fn object_pool(&self, relation: RelationId) -> Vec<EntityId> {
        let pool: BTreeSet<EntityId> = self.pairs_of(relation).map(|(_, o)| o).collect();
        pool.into_iter().collect()
    }

    // ------------------------------------------------------------------------
    // Text form
    // ------------------------------------------------------------------------

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TEXT_MAGIC}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "[entities] {}", self.entities.len());
        for e in &self.entities {
            let _ = writeln!(out, "{} {} {}", e.id, e.name, e.cluster);
        }
        let _ = writeln!(out, "[relations] {}", self.relations.len());
        for r in &self.relations {
            let inv = r.inverse_of.map_or("-".to_string(), |i| i.to_string());
            let fan = r.max_fanout.map_or("-".to_string(), |m| m.to_string());
            let _ = writeln!(out, "{} {} {} {inv} {fan}", r.id, r.name, r.kind.tag());
        }
        let _ = writeln!(out, "[rules] {}", self.rules.len());
        for rule in &self.rules {
            let _ = writeln!(
                out,
                "{} {} {}",
                rule.tie_relation, rule.premise_relation, rule.conclusion_relation
            );
        }
        let _ = writeln!(out, "[facts] {}", self.facts.len());
        for f in &self.facts {
            let _ = writeln!(out, "{} {} {}", f.subject, f.relation, f.object);
        }
        out
    }

    pub fn from_text(text: &str) -> KgResult<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or(KgError::Parse { line: 0, msg: format!("missing {what}") })
        };
        let (n, magic) = next("header")?;
        if magic != TEXT_MAGIC {
            return Err(KgError::Parse { line: n, msg: format!("expected {TEXT_MAGIC:?}") });
        }
        let (n, seed_line) = next("seed")?;
        let seed = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.parse().ok())
            .ok_or(KgError::Parse { line: n, msg: "expected `seed <u64>`".into() })?;

        let mut section = |name: &str| -> KgResult<Vec<(usize, Vec<String>)>> {
            let (n, head) = next(name)?;
            let count: usize = head
                .strip_prefix(&format!("[{name}] "))
                .and_then(|s| s.parse().ok())
                .ok_or(KgError::Parse { line: n, msg: format!("expected `[{name}] <count>`") })?;
            (0..count)
                .map(|_| {
                    let (n, l) = next(name)?;
                    Ok((n, l.split(' ').map(str::to_string).collect()))
                })
                .collect()
        };
        let num = |n: usize, s: &str| -> KgResult<usize> {
            s.parse().map_err(|_| KgError::Parse { line: n, msg: format!("bad integer {s:?}") })
        };
        let opt = |n: usize, s: &str| -> KgResult<Option<usize>> {
            if s == "-" {
                Ok(None)
            } else {
                num(n, s).map(Some)
            }
        };
        let arity = |n: usize, f: &[String], k: usize| -> KgResult<()> {
            if f.len() == k {
                Ok(())
            } else {
                Err(KgError::Parse { line: n, msg: format!("expected {k} fields, got {}", f.len()) })
            }
        };

        let mut entities = Vec::new();
        for (n, f) in section("entities")? {
            arity(n, &f, 3)?;
            entities.push(Entity { id: num(n, &f[0])?, name: f[1].clone(), cluster: num(n, &f[2])? });
        }
        let mut relations = Vec::new();
        for (n, f) in section("relations")? {
            arity(n, &f, 5)?;
            let kind = RelationKind::parse(&f[2])
                .ok_or(KgError::Parse { line: n, msg: format!("unknown kind {:?}", f[2]) })?;
            relations.push(Relation {
                id: num(n, &f[0])?,
                name: f[1].clone(),
                kind,
                inverse_of: opt(n, &f[3])?,
                max_fanout: opt(n, &f[4])?,
            });
        }
        let mut rules = Vec::new();
        for (n, f) in section("rules")? {
            arity(n, &f, 3)?;
            rules.push(CompositeRule {
                tie_relation: num(n, &f[0])?,
                premise_relation: num(n, &f[1])?,
                conclusion_relation: num(n, &f[2])?,
            });
        }
        let mut facts = Vec::new();
        for (n, f) in section("facts")? {
            arity(n, &f, 3)?;
            facts.push(Fact::new(num(n, &f[0])?, num(n, &f[1])?, num(n, &f[2])?));
        }
        KnowledgeGraph::from_parts(entities, relations, rules, facts, seed)
    }
}

// ============================================================================
// Operations
// ============================================================================

pub fn lookup_objects(
    kg: &KnowledgeGraph,
    subject: EntityId,
    relation: RelationId,
) -> KgResult<Vec<EntityId>> {
    kg.entity(subject)?;
    kg.relation(relation)?;
    Ok(kg.objects(subject, relation).to_vec())
}

/// All instances of `rule` whose three facts are present.
pub fn instantiate_rule(kg: &KnowledgeGraph, rule: &CompositeRule) -> Vec<FactCombination> {
    let mut out = Vec::new();
    for (s1, s2) in kg.pairs_of(rule.tie_relation) {
        for &o in kg.objects(s2, rule.premise_relation) {
            if kg.contains(&Fact::new(s1, rule.conclusion_relation, o)) {
                out.push(FactCombination { subject: s1, bridge: s2, object: o });
            }
        }
    }
    out
}

fn push_relation(
    relations: &mut Vec<Relation>,
    name: &str,
    kind: RelationKind,
    inverse_of: Option<RelationId>,
    max_fanout: Option<usize>,
) -> RelationId {
    let id = relations.len();
    relations.push(Relation { id, name: name.to_string(), kind, inverse_of, max_fanout });
    id
}

pub fn generate_kg(config: &KgConfig) -> KgResult<KnowledgeGraph> {
    config.validate()?;
    let n = config.entities;
    let clusters = config.num_clusters();
    let m = config.subjects_per_relation();
    let mut rng = seed::rng(config.seed);

    let cluster_of = |e: usize| (e / config.cluster_size).min(clusters - 1);
    let entities: Vec<Entity> = (0..n)
        .map(|k| Entity { id: k, name: format!("E{k}"), cluster: cluster_of(k) })
        .collect();
    let mut members = vec![Vec::new(); clusters];
    for e in &entities {
        members[e.cluster].push(e.id);
    }

    let mut relations = Vec::new();
    let mut facts = BTreeSet::new();
    let mut rules = Vec::new();

    for [a, b] in &config.reverse_pairs {
        let ra = relations.len();
        let rb = ra + 1;
        push_relation(&mut relations, a, RelationKind::OneToOne, Some(rb), None);
        push_relation(&mut relations, b, RelationKind::OneToOne, Some(ra), None);
        let chosen = index::sample(&mut rng, n, 2 * m).into_vec();
        for pair in chosen.chunks_exact(2) {
            facts.insert(Fact::new(pair[0], ra, pair[1]));
            facts.insert(Fact::new(pair[1], rb, pair[0]));
        }
    }

    for [tie, premise, conclusion] in &config.composite_rules {
        let rt = push_relation(&mut relations, tie, RelationKind::OneToOne, None, None);
        let rp = push_relation(&mut relations, premise, RelationKind::OneToOne, None, None);
        let rc = push_relation(&mut relations, conclusion, RelationKind::OneToOne, None, None);
        rules.push(CompositeRule { tie_relation: rt, premise_relation: rp, conclusion_relation: rc });

        let mut premise_of = BTreeMap::new();
        for s in index::sample(&mut rng, n, m).into_vec() {
            let o = loop {
                let o = rng.random_range(0..n);
                if o != s {
                    break o;
                }
            };
            premise_of.insert(s, o);
            facts.insert(Fact::new(s, rp, o));
        }
        for s in index::sample(&mut rng, n, m).into_vec() {
            let bridges: Vec<(usize, usize)> = premise_of
                .iter()
                .filter(|&(&b, &o)| b != s && o != s)
                .map(|(&b, &o)| (b, o))
                .collect();
            if bridges.is_empty() {
                continue;
            }
            let (b, o) = bridges[rng.random_range(0..bridges.len())];
            facts.insert(Fact::new(s, rt, b));
            facts.insert(Fact::new(s, rc, o));
        }
    }

    for name in &config.one_to_many {
        let r = push_relation(
            &mut relations,
            name,
            RelationKind::OneToMany,
            None,
            Some(config.max_fanout),
        );
        for s in index::sample(&mut rng, n, m).into_vec() {
            let k = rng.random_range(2..=config.max_fanout);
            let objects: Vec<usize> = if rng.random_bool(config.coherent_fraction) {
                let c = rng.random_range(0..clusters);
                let pool: Vec<usize> = members[c].iter().copied().filter(|&e| e != s).collect();
                index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
            } else {
                index::sample(&mut rng, clusters, k)
                    .into_iter()
                    .map(|c| {
                        let pool: Vec<usize> =
                            members[c].iter().copied().filter(|&e| e != s).collect();
                        pool[rng.random_range(0..pool.len())]
                    })
                    .collect()
            };
            for o in objects {
                facts.insert(Fact::new(s, r, o));
            }
        }
    }

    KnowledgeGraph::from_parts(entities, relations, rules, facts, config.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> KnowledgeGraph {
        generate_kg(&KgConfig { seed: 7, ..KgConfig::default() }).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(small().to_text(), small().to_text());
        let other = generate_kg(&KgConfig { seed: 8, ..KgConfig::default() }).unwrap();
        assert_ne!(small().to_text(), other.to_text());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let kg = small();
        let text = kg.to_text();
        let back = KnowledgeGraph::from_text(&text).unwrap();
        assert_eq!(back, kg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn husband_wife_are_transposes() {
        let kg = small();
        let h = kg.relation_by_name("HusbandOf").unwrap().id;
        let w = kg.relation_by_name("WifeOf").unwrap().id;
        let mut count = 0;
        for (a, b) in kg.pairs_of(h) {
            assert!(kg.contains(&Fact::new(b, w, a)));
            count += 1;
        }
        assert!(count > 0);
        assert_eq!(count, kg.pairs_of(w).count());
    }

    #[test]
    fn empty_lookup() {
        let kg = small();
        let h = kg.relation_by_name("HusbandOf").unwrap().id;
        let lonely = (0..kg.num_entities()).find(|&e| kg.objects(e, h).is_empty()).unwrap();
        assert_eq!(lookup_objects(&kg, lonely, h).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn one_to_one_has_at_most_one_object() {
        let kg = small();
        for r in kg.relations().iter().filter(|r| r.kind == RelationKind::OneToOne) {
            for e in 0..kg.num_entities() {
                assert!(lookup_objects(&kg, e, r.id).unwrap().len() <= 1);
            }
        }
    }

    #[test]
    fn lookup_rejects_unknown_ids() {
        let kg = small();
        assert!(matches!(lookup_objects(&kg, 10_000, 0), Err(KgError::UnknownEntity(10_000))));
        assert!(matches!(lookup_objects(&kg, 0, 999), Err(KgError::UnknownRelation(999))));
    }

    #[test]
    fn infeasible_configs_name_the_constraint() {
        let cases = [
            KgConfig { entities: 20, ..KgConfig::default() },
            KgConfig { max_fanout: 11, ..KgConfig::default() },
            KgConfig { max_fanout: 10, cluster_size: 10, ..KgConfig::default() },
            KgConfig { subject_fraction: 0.8, ..KgConfig::default() },
            KgConfig::with_counts(100, 1, 2, 2, 0),
        ];
        for cfg in cases {
            let err = generate_kg(&cfg).unwrap_err();
            assert!(matches!(err, KgError::Infeasible(_)), "{err}");
        }
    }

    #[test]
    fn synthetic_extras_follow_vocabulary() {
        let cfg = KgConfig::with_counts(100, 2, 3, 3, 1);
        assert_eq!(cfg.reverse_pairs[0], ["HusbandOf".to_string(), "WifeOf".to_string()]);
        assert_eq!(cfg.reverse_pairs[1][0], "Rev1");
        assert_eq!(cfg.composite_rules[0][2], "Father");
        assert_eq!(cfg.composite_rules[2][0], "Tie2");
        assert_eq!(cfg.one_to_many[2], "Multi2");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mut text = small().to_text();
        text = text.replacen("[rules] 2", "[rules] x", 1);
        match KnowledgeGraph::from_text(&text) {
            Err(KgError::Parse { line, .. }) => assert!(line > 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_broken_closure() {
        let kg = small();
        let h = kg.relation_by_name("HusbandOf").unwrap().id;
        let f = *kg.facts().find(|f| f.relation == h).unwrap();
        let facts: Vec<Fact> = kg.facts().copied().filter(|x| *x != f).collect();
        let err = KnowledgeGraph::from_parts(
            kg.entities().to_vec(),
            kg.relations().to_vec(),
            kg.rules().to_vec(),
            facts,
            kg.seed(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("inverse"));
    }
}
