//! Desk-scale knowledge-editing testbed.
//!
//! A synthetic knowledge graph with inverse relation pairs and composite
//! rules ([`kgcore`]) is memorised by a linear associative-memory model
//! ([`model`]). Edit methods ([`editors`]) rewrite that memory one fact at a
//! time, [`benchgen`] builds conflict and round-trip edit cases from the
//! graph, and [`metrics`] scores what the edits did to related facts.

pub mod benchgen;
pub mod editors;
pub mod kgcore;
pub mod metrics;
pub mod model;
pub mod seed;

pub use benchgen::{
    detect_conflict, gen_conflict_dataset, gen_conflict_split, gen_round_dataset, BenchConfig,
    BenchError, Conflict, ConflictCase, ConflictSplit, ProbeMode, RoundCase, RoundSplit,
};
pub use editors::{
    apply_sequence, batch_edit, gradient_edit, multi_label_edit, rank_one_edit, solve_value,
    Edit, EditError, EditMethod, EditOutcome, Editor, EditorConfig, MultiLabelEdit, ValueSpan,
};
pub use kgcore::{
    generate_kg, instantiate_rule, lookup_objects, CompositeRule, Entity, EntityId, Fact,
    FactCombination, KgConfig, KgError, KnowledgeGraph, Relation, RelationId, RelationKind,
};
pub use metrics::{aggregate, CaseScores, MetricError, MetricsReport};
pub use model::{
    build_key, fact_probability, probe, restricted_distribution, train, verify_fact_holds,
    Distribution, ModelError, ModelParams, PromptKey, TrainConfig, TrainOutcome,
};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, Error>;
