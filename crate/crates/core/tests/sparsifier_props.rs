use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use sgpo_core::checks::{random_modular, synthetic_ground};
use sgpo_core::sparsifier::{
    divergence, sparsify, sparsify_graph, SparsifyConfig, SubmodularityGraph,
};
use sgpo_core::submodular::{CoverageFunction, LogDetEntropyFunction};
use sgpo_core::{StateKey, StateSet};

#[test]
fn dense_graph_dump_has_every_ordered_pair() {
    let ground = synthetic_ground(12);
    let f = random_modular(&ground, 1).unwrap();
    let g = SubmodularityGraph::build(&f, &ground).unwrap();
    let mut buf = Vec::new();
    g.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("u,v,weight"));
    assert_eq!(lines.count(), 12 * 11);
}

#[test]
fn dense_and_lazy_graphs_sparsify_identically() {
    let ground = synthetic_ground(200);
    let f = random_modular(&ground, 3).unwrap();
    let cfg = SparsifyConfig::new(8.0, 8.0, 11).unwrap();
    let dense = SubmodularityGraph::build(&f, &ground).unwrap();
    let lazy = SubmodularityGraph::lazy(&f, &ground).unwrap();
    assert_eq!(
        sparsify_graph(&dense, &cfg).unwrap(),
        sparsify_graph(&lazy, &cfg).unwrap()
    );
    assert_eq!(
        sparsify_graph(&lazy, &cfg).unwrap(),
        sparsify(&f, &ground, &cfg).unwrap()
    );
}

#[test]
fn modular_pass_prunes_the_lightest_states() {
    // For F(S) = sum of weights, w(u, v) = w_v - w_u, so a pass removes the
    // lightest non-sampled states.
    let ground = synthetic_ground(100);
    let f = random_modular(&ground, 4).unwrap();
    let cfg = SparsifyConfig::new(8.0, 8.0, 7).unwrap();
    let res = sparsify(&f, &ground, &cfg).unwrap();
    assert_eq!(res.iterations, 1);
    let removed: Vec<StateKey> = ground.difference(&res.kept).copied().collect();
    let survivors: Vec<StateKey> = res.kept.difference(&res.samples[0]).copied().collect();
    assert_eq!((removed.len(), survivors.len()), (40, 23));
    let heaviest_removed = removed
        .iter()
        .map(|&s| f.weight(s))
        .fold(f64::MIN, f64::max);
    let lightest_survivor = survivors
        .iter()
        .map(|&s| f.weight(s))
        .fold(f64::MAX, f64::min);
    assert!(heaviest_removed <= lightest_survivor);
}

#[test]
fn exact_duplicate_of_a_sampled_state_has_zero_divergence() {
    let mut patches = HashMap::new();
    let mut ground = StateSet::new();
    for i in 0..6u32 {
        patches.insert(
            StateKey::new(0, i),
            (2 * i as u64..2 * i as u64 + 2).collect::<BTreeSet<u64>>(),
        );
        ground.insert(StateKey::new(0, i));
    }
    let copy = StateKey::new(1, 0);
    patches.insert(copy, (0u64..2).collect());
    ground.insert(copy);
    let f = CoverageFunction::new(patches);
    let g = SubmodularityGraph::build(&f, &ground).unwrap();
    let sample: StateSet = [StateKey::new(0, 0)].into();
    // F(copy | {u}) = 0 and u's residual is 0 because the copy covers it.
    assert_eq!(divergence(&g, &sample, copy).unwrap(), 0.0);
    assert!(divergence(&g, &sample, StateKey::new(0, 3)).unwrap() > 0.0);
}

#[test]
fn entropy_oracle_sparsifies_a_dense_cluster() {
    let ground = synthetic_ground(64);
    let f = LogDetEntropyFunction::default();
    let cfg = SparsifyConfig::new(4.0, 8.0, 2).unwrap();
    let res = sparsify(&f, &ground, &cfg).unwrap();
    assert!(res.kept.is_subset(&ground));
    assert!(res.kept.len() < ground.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kept_is_a_deterministic_subset(n in 1usize..300, r in 0.5f64..10.0, c in 1.5f64..20.0, seed in any::<u64>()) {
        let ground = synthetic_ground(n);
        let f = random_modular(&ground, seed).unwrap();
        let cfg = SparsifyConfig::new(r, c, seed).unwrap();
        let a = sparsify(&f, &ground, &cfg).unwrap();
        let b = sparsify(&f, &ground, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.kept.is_subset(&ground));
        prop_assert!(!a.kept.is_empty());
        prop_assert_eq!(a.kept.len() + a.removed_per_iteration.iter().sum::<usize>(), n);
        for s in &a.samples {
            prop_assert!(s.is_subset(&a.kept));
        }
        if (n as f64) <= r * (n as f64).ln() || n < 2 {
            prop_assert_eq!(a.iterations, 0);
            prop_assert_eq!(a.kept.len(), n);
        }
    }
}
