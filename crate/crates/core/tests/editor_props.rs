mod common;

use editbench_core::editors::with_preserved_labels;
use editbench_core::model::softmax;
use editbench_core::{
    apply_sequence, batch_edit, build_key, fact_probability, gradient_edit, multi_label_edit,
    rank_one_edit, solve_value, Edit, EditMethod, Editor, EditorConfig, EntityId, ModelParams,
    RelationKind, ValueSpan,
};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn one_to_one_edits(n: usize, seed: u64) -> Vec<Edit> {
    let fx = common::trained();
    let facts: Vec<_> = fx
        .kg
        .facts()
        .copied()
        .filter(|f| fx.kg.relations()[f.relation].kind == RelationKind::OneToOne)
        .collect();
    let mut rng = editbench_core::seed::rng(seed);
    (0..n)
        .map(|_| {
            let f = facts[rng.random_range(0..facts.len())];
            let new = loop {
                let o = rng.random_range(0..fx.kg.num_entities());
                if o != f.object {
                    break o;
                }
            };
            Edit::new(f.subject, f.relation, f.object, new).unwrap()
        })
        .collect()
}

fn key(p: &ModelParams, e: &Edit) -> DVector<f64> {
    build_key(p, e.subject, e.relation, 0).unwrap().vector
}

fn succeeds(p: &ModelParams, e: &Edit) -> bool {
    fact_probability(p, &e.new_fact(), 1).unwrap() > fact_probability(p, &e.old_fact(), 1).unwrap()
}

#[test]
fn gradient_edits_mostly_converge_with_monotone_trajectories() {
    let p = &common::trained().params;
    let config = EditorConfig::default();
    let mut converged = 0;
    for e in one_to_one_edits(100, 1) {
        let out = gradient_edit(p, &e, &config).unwrap();
        for w in out.trajectory.windows(2) {
            assert!(w[1] >= w[0], "objective fell: {} -> {}", w[0], w[1]);
        }
        if out.converged {
            converged += 1;
            assert!(succeeds(&out.params_after, &e));
            assert!(*out.trajectory.last().unwrap() >= config.target_prob);
        }
        assert!(out.params_after.shares_frozen(p));
    }
    assert!(converged >= 95, "{converged}/100 converged");
}

#[test]
fn rank_one_exactness_over_many_edits() {
    let p = &common::trained().params;
    let config = EditorConfig::default();
    let mut rng = editbench_core::seed::rng(5);
    let (mut fit, mut drift) = (0.0f64, 0.0f64);
    for e in one_to_one_edits(200, 2) {
        let k = key(p, &e);
        let v = solve_value(p, &k, &[e.new_object], &config).unwrap();
        let after = rank_one_edit(p, &e, &config).unwrap().params_after;
        fit = fit.max((after.output() * &k - &v).amax());
        let u = p.solve_covariance(&k);
        let z = DVector::from_fn(p.key_dim(), |_, _| rng.random::<f64>() - 0.5);
        let z = &z - &u * (u.dot(&z) / u.dot(&u));
        drift = drift.max((after.output() * &z - p.output() * &z).amax());
    }
    assert!(fit <= 1e-8, "fit {fit}");
    assert!(drift <= 1e-8, "drift {drift}");
}

#[test]
fn batch_of_one_matches_rank_one() {
    let p = &common::trained().params;
    let config = EditorConfig::default();
    for e in one_to_one_edits(20, 3) {
        let a = rank_one_edit(p, &e, &config).unwrap().params_after;
        let b = batch_edit(p, &[e], &config).unwrap().params_after;
        assert!(succeeds(&a, &e) && succeeds(&b, &e));
        let scale = a.output().amax();
        assert!((a.output() - b.output()).amax() <= 1e-9 * scale);
    }
}

#[test]
fn batch_of_ten_disjoint_edits_lands_on_every_target() {
    let p = &common::trained().params;
    let config = EditorConfig::default();
    let mut edits = Vec::new();
    for e in one_to_one_edits(200, 4) {
        if edits.len() < 10 && edits.iter().all(|x: &Edit| x.subject != e.subject) {
            edits.push(e);
        }
    }
    assert_eq!(edits.len(), 10);
    let after = batch_edit(p, &edits, &config).unwrap().params_after;
    let ok = edits.iter().filter(|e| succeeds(&after, e)).count();
    assert!(ok >= 9, "{ok}/10");
    for e in &edits {
        let k = key(p, e);
        let z = solve_value(p, &k, &[e.new_object], &config).unwrap();
        assert!((after.output() * &k - z).amax() < 1e-7);
    }
}

#[test]
fn multi_label_targets_stay_balanced() {
    let fx = common::trained();
    let p = &fx.params;
    let config = EditorConfig::default();
    let mut checked = 0;
    for (s, r, objs) in fx.kg.subject_relation_pairs() {
        if objs.len() < 3 || checked == 25 {
            continue;
        }
        let new = (0..fx.kg.num_entities()).find(|o| !objs.contains(o) && *o != s).unwrap();
        let e = Edit::new(s, r, objs[0], new).unwrap();
        let mle = with_preserved_labels(&fx.kg, p, &e, 3).unwrap();
        assert_eq!(mle.targets.len(), 3);
        assert_eq!(mle.targets[0], new);
        let after = multi_label_edit(p, &mle, &config).unwrap().params_after;
        let probs = after.probs_at(&key(p, &e));
        let t: Vec<f64> = mle.targets.iter().map(|&o| probs[o]).collect();
        let (lo, hi) = t.iter().fold((1.0f64, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(lo >= 0.8 * hi, "targets {:?} probs {t:?}", mle.targets);
        checked += 1;
    }
    assert_eq!(checked, 25);
}

#[test]
fn all_entity_value_solve_stays_near_uniform() {
    let fx = common::trained();
    let p = &fx.params;
    let all: Vec<EntityId> = (0..p.num_entities()).collect();
    let n = all.len() as f64;
    let config = EditorConfig { value_span: ValueSpan::Full, ..EditorConfig::default() };
    for (s, r, _) in fx.kg.subject_relation_pairs().take(20) {
        let v = solve_value(p, &build_key(p, s, r, 0).unwrap().vector, &all, &config).unwrap();
        let q = softmax(&v);
        let kl: f64 = q.iter().map(|x| x * (x * n).ln()).sum();
        assert!(kl <= 0.01, "KL {kl}");
    }
}

#[test]
fn every_method_keeps_embeddings_and_is_deterministic() {
    let fx = common::trained();
    let p = &fx.params;
    let edits = one_to_one_edits(2, 6);
    for m in [EditMethod::Identity, EditMethod::Ft, EditMethod::Rome, EditMethod::Memit, EditMethod::MemitMle] {
        let ed = Editor::new(m, EditorConfig::default()).with_graph(&fx.kg);
        let (mid, fin) = apply_sequence(p, &edits, &ed).unwrap();
        let (mid2, fin2) = apply_sequence(p, &edits, &ed).unwrap();
        assert_eq!(mid, mid2);
        assert_eq!(fin, fin2);
        assert!(mid.shares_frozen(p) && fin.shares_frozen(p));
        assert_eq!(mid.entity_embeddings(), p.entity_embeddings());
        assert_eq!(fin.relation_embeddings(), p.relation_embeddings());
        assert!(fin.output().iter().all(|x| x.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_one_identity_on_random_models(seed in any::<u64>(), s in 0usize..20, r in 0usize..3, o in 0usize..20, n in 0usize..20) {
        prop_assume!(o != n);
        let p = ModelParams::random(20, 3, 5, 1.0, seed).unwrap();
        let e = Edit::new(s, r, o, n).unwrap();
        let config = EditorConfig::default();
        let k = key(&p, &e);
        let v = solve_value(&p, &k, &[n], &config).unwrap();
        let after = rank_one_edit(&p, &e, &config).unwrap().params_after;
        prop_assert!((after.output() * &k - v).amax() <= 1e-8);
    }

    #[test]
    fn gradient_trajectory_never_falls(seed in any::<u64>(), s in 0usize..20, r in 0usize..3, o in 0usize..20, n in 0usize..20) {
        prop_assume!(o != n);
        let p = ModelParams::random(20, 3, 5, 2.0, seed).unwrap();
        let out = gradient_edit(&p, &Edit::new(s, r, o, n).unwrap(), &EditorConfig::default()).unwrap();
        for w in out.trajectory.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }
}
