#![allow(dead_code)]

use std::sync::OnceLock;

use editbench_core::{
    generate_kg, train, CompositeRule, Entity, Fact, KgConfig, KnowledgeGraph, ModelParams,
    Relation, RelationKind, TrainConfig,
};

pub struct Fixture {
    pub kg: KnowledgeGraph,
    pub params: ModelParams,
}

/// Default-sized graph and its trained model, built once per test binary.
pub fn trained() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let kg = generate_kg(&KgConfig { seed: 11, ..KgConfig::default() }).unwrap();
        let params = train(&kg, &TrainConfig { seed: 12, ..TrainConfig::default() }).unwrap().params;
        Fixture { kg, params }
    })
}

fn relation(id: usize, name: &str, kind: RelationKind, inverse_of: Option<usize>) -> Relation {
    let max_fanout = (kind == RelationKind::OneToMany).then_some(5);
    Relation { id, name: name.into(), kind, inverse_of, max_fanout }
}

/// Ten named entities with one relation of each role.
///
/// Relations: 0 HusbandOf, 1 WifeOf, 2 Mother, 3 Spouse, 4 Father,
/// 5 EducatedAt. Entities 0..=9 are Marie, Pierre, Philip, Mary, Louis,
/// Jacques, Anne, Paul, Rose, Hugo.
pub fn tiny_graph() -> KnowledgeGraph {
    let names = ["Marie", "Pierre", "Philip", "Mary", "Louis", "Jacques", "Anne", "Paul", "Rose", "Hugo"];
    let entities = names
        .iter()
        .enumerate()
        .map(|(id, n)| Entity { id, name: n.to_string(), cluster: id / 5 })
        .collect();
    let relations = vec![
        relation(0, "HusbandOf", RelationKind::OneToOne, Some(1)),
        relation(1, "WifeOf", RelationKind::OneToOne, Some(0)),
        relation(2, "Mother", RelationKind::OneToOne, None),
        relation(3, "Spouse", RelationKind::OneToOne, None),
        relation(4, "Father", RelationKind::OneToOne, None),
        relation(5, "EducatedAt", RelationKind::OneToMany, None),
    ];
    let rules = vec![CompositeRule { tie_relation: 2, premise_relation: 3, conclusion_relation: 4 }];
    let f = Fact::new;
    let facts = vec![
        f(0, 0, 1),
        f(1, 1, 0),
        f(6, 0, 7),
        f(7, 1, 6),
        f(2, 2, 3),
        f(3, 3, 4),
        f(2, 4, 4),
        f(8, 2, 9),
        f(9, 3, 5),
        f(8, 4, 5),
        f(4, 5, 5),
        f(4, 5, 6),
        f(4, 5, 8),
        f(5, 5, 0),
        f(5, 5, 3),
    ];
    KnowledgeGraph::from_parts(entities, relations, rules, facts, 3).unwrap()
}

/// Model on [`tiny_graph`] with four-dimensional embeddings.
pub fn tiny_trained() -> ModelParams {
    let config = TrainConfig { dim: 4, seed: 5, ..TrainConfig::default() };
    train(&tiny_graph(), &config).unwrap().params
}
