//! Submodularity graph and the sample-and-prune sparsification loop.
//!
//! The graph over a ground set `V` has a directed edge for every ordered
//! pair `u != v` with weight
//!
//! ```text
//! w(u, v) = F(v | {u}) - F(u | V - u)
//! ```
//!
//! A small `w(u, v)` says `v` adds little once `u` is kept, relative to how
//! indispensable `u` is. The divergence of `v` from a sample `U` is the
//! minimum edge weight from `U` into `v`; the loop repeatedly moves a random
//! sample into the kept set and discards the lowest-divergence remainder.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::submodular::{StateKey, StateSet, SubmodularOracle};

/// Complete weighted digraph over a set of states.
///
/// Built either dense (all `n(n-1)` weights materialized, computed in
/// parallel) or lazy (weights evaluated on demand). Both give identical
/// weights; residuals are always precomputed.
pub struct SubmodularityGraph<'a> {
    oracle: &'a dyn SubmodularOracle,
    nodes: Vec<StateKey>,
    index: HashMap<StateKey, usize>,
    residuals: Vec<f64>,
    dense: Option<Vec<f64>>,
}

impl<'a> SubmodularityGraph<'a> {
    /// Computes every edge weight up front.
    pub fn build(oracle: &'a dyn SubmodularOracle, ground: &StateSet) -> Result<Self> {
        let mut graph = Self::lazy(oracle, ground)?;
        let n = graph.nodes.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            graph.compute_weight(i, j)
                        }
                    })
                    .collect()
            })
            .collect();
        graph.dense = Some(rows.concat());
        Ok(graph)
    }

    /// Precomputes residuals only; edge weights are evaluated when asked for.
    pub fn lazy(oracle: &'a dyn SubmodularOracle, ground: &StateSet) -> Result<Self> {
        if ground.len() < 2 {
            return Err(Error::GraphTooSmall(ground.len()));
        }
        let nodes: Vec<StateKey> = ground.iter().copied().collect();
        let index = nodes.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let residuals = nodes
            .par_iter()
            .map(|&u| oracle.residual(u, ground))
            .collect();
        Ok(Self {
            oracle,
            nodes,
            index,
            residuals,
            dense: None,
        })
    }

    pub fn nodes(&self) -> &[StateKey] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    fn position(&self, s: StateKey) -> Result<usize> {
        self.index.get(&s).copied().ok_or(Error::UnknownState(s))
    }

    /// `F(u | V - u)`.
    pub fn residual(&self, u: StateKey) -> Result<f64> {
        Ok(self.residuals[self.position(u)?])
    }

    pub fn weight(&self, u: StateKey, v: StateKey) -> Result<f64> {
        let (i, j) = (self.position(u)?, self.position(v)?);
        if i == j {
            return Err(Error::StateInSample(u));
        }
        Ok(self.weight_at(i, j))
    }

    fn compute_weight(&self, i: usize, j: usize) -> f64 {
        let single: StateSet = [self.nodes[i]].into();
        self.oracle.gain(self.nodes[j], &single) - self.residuals[i]
    }

    fn weight_at(&self, i: usize, j: usize) -> f64 {
        match &self.dense {
            Some(w) => w[i * self.nodes.len() + j],
            None => self.compute_weight(i, j),
        }
    }

    fn divergence_at(&self, sample: &[usize], j: usize) -> f64 {
        sample
            .iter()
            .map(|&i| self.weight_at(i, j))
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes `u,v,weight` rows for every ordered pair, in node order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "u,v,weight")?;
        for (i, u) in self.nodes.iter().enumerate() {
            for (j, v) in self.nodes.iter().enumerate() {
                if i != j {
                    writeln!(
                        out,
                        "{}:{},{}:{},{}",
                        u.row,
                        u.col,
                        v.row,
                        v.col,
                        self.weight_at(i, j)
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Divergence of `v` from the sample `U`: `min over u in U of w(u, v)`.
pub fn divergence(graph: &SubmodularityGraph<'_>, sample: &StateSet, v: StateKey) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.contains(&v) {
        return Err(Error::StateInSample(v));
    }
    let j = graph.position(v)?;
    let idx = sample
        .iter()
        .map(|&u| graph.position(u))
        .collect::<Result<Vec<_>>>()?;
    Ok(graph.divergence_at(&idx, j))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsifyConfig {
    r: f64,
    c: f64,
    pub seed: u64,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        Self {
            r: 8.0,
            c: 8.0,
            seed: 0,
        }
    }
}

impl SparsifyConfig {
    pub fn new(r: f64, c: f64, seed: u64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid("r must be > 0"));
        }
        if !(c.is_finite() && c > 1.0) {
            return Err(invalid("c must be > 1"));
        }
        Ok(Self { r, c, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Fraction `1 - 1/sqrt(c)` of the residual set removed per pass.
    pub fn prune_fraction(&self) -> f64 {
        1.0 - 1.0 / self.c.sqrt()
    }

    /// Loop guard `r * ln(n0)`.
    pub fn threshold(&self, n0: usize) -> f64 {
        self.r * (n0 as f64).ln()
    }

    /// Per-pass sample size `ceil(r * ln(n0))`, fixed from the initial size.
    pub fn sample_size(&self, n0: usize) -> usize {
        self.threshold(n0).ceil().max(1.0) as usize
    }

    /// `floor(prune_fraction * remaining)`, at least one when anything remains.
    pub fn removal_count(&self, remaining: usize) -> usize {
        if remaining == 0 {
            return 0;
        }
        ((self.prune_fraction() * remaining as f64).floor() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyResult {
    pub kept: StateSet,
    pub iterations: usize,
    pub removed_per_iteration: Vec<usize>,
    /// The random sample drawn in each pass.
    pub samples: Vec<StateSet>,
}

/// Sparsifies `ground` with a lazily evaluated graph.
///
/// Only edges out of each sampled batch are ever read, so the full graph is
/// not materialized.
pub fn sparsify(
    oracle: &dyn SubmodularOracle,
    ground: &StateSet,
    cfg: &SparsifyConfig,
) -> Result<SparsifyResult> {
    if ground.is_empty() {
        return Err(Error::EmptyGroundSet);
    }
    if ground.len() < 2 || (ground.len() as f64) <= cfg.threshold(ground.len()) {
        return Ok(untouched(ground));
    }
    let graph = SubmodularityGraph::lazy(oracle, ground)?;
    sparsify_graph(&graph, cfg)
}

fn untouched(ground: &StateSet) -> SparsifyResult {
    SparsifyResult {
        kept: ground.clone(),
        iterations: 0,
        removed_per_iteration: Vec::new(),
        samples: Vec::new(),
    }
}

/// Runs the sample-and-prune loop over all nodes of `graph`.
///
/// While more than `r ln n0` states remain: draw `ceil(r ln n0)` of them
/// uniformly without replacement, keep them, score every other remaining
/// state by its divergence from that batch, and drop the
/// `floor((1 - 1/sqrt(c)) |V|)` lowest (ties to the smaller key). Whatever
/// remains at the end is kept as well.
pub fn sparsify_graph(
    graph: &SubmodularityGraph<'_>,
    cfg: &SparsifyConfig,
) -> Result<SparsifyResult> {
    let n0 = graph.len();
    if n0 == 0 {
        return Err(Error::EmptyGroundSet);
    }
    let threshold = cfg.threshold(n0);
    let batch = cfg.sample_size(n0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Node indices in key order; graph nodes are already sorted.
    let mut remaining: Vec<usize> = (0..n0).collect();
    let mut kept = StateSet::new();
    let mut result = SparsifyResult {
        kept: StateSet::new(),
        iterations: 0,
        removed_per_iteration: Vec::new(),
        samples: Vec::new(),
    };

    while remaining.len() as f64 > threshold {
        result.iterations += 1;
        let take = batch.min(remaining.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, remaining.len(), take).into_vec();
        picked.sort_unstable();
        let sample: Vec<usize> = picked.iter().map(|&p| remaining[p]).collect();
        let mut in_sample = vec![false; remaining.len()];
        for &p in &picked {
            in_sample[p] = true;
        }
        remaining = remaining
            .iter()
            .zip(&in_sample)
            .filter(|(_, &s)| !s)
            .map(|(&i, _)| i)
            .collect();
        result
            .samples
            .push(sample.iter().map(|&i| graph.nodes[i]).collect());
        kept.extend(sample.iter().map(|&i| graph.nodes[i]));

        if remaining.is_empty() {
            result.removed_per_iteration.push(0);
            break;
        }
        let mut scored: Vec<(f64, usize)> = remaining
            .par_iter()
            .map(|&j| (graph.divergence_at(&sample, j), j))
            .collect();
        // Index order equals key order, so this sorts by (divergence, key).
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let drop = cfg.removal_count(scored.len());
        remaining = scored[drop..].iter().map(|&(_, j)| j).collect();
        remaining.sort_unstable();
        result.removed_per_iteration.push(drop);
    }
    kept.extend(remaining.iter().map(|&i| graph.nodes[i]));
    result.kept = kept;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::submodular::{CoverageFunction, WeightedNodeFunction};

    fn key(r: u32, c: u32) -> StateKey {
        StateKey::new(r, c)
    }

    fn modular(ws: &[(StateKey, f64)]) -> WeightedNodeFunction {
        WeightedNodeFunction::new(ws.iter().copied().collect()).unwrap()
    }

    #[test]
    fn modular_edge_weights() {
        let (u, v, x) = (key(0, 0), key(0, 1), key(0, 2));
        let f = modular(&[(u, 2.0), (v, 1.0), (x, 3.0)]);
        let ground: StateSet = [u, v, x].into();
        let g = SubmodularityGraph::build(&f, &ground).unwrap();
        assert_eq!(g.weight(u, v).unwrap(), -1.0);
        for &a in &ground {
            for &b in ground.iter().filter(|&&b| b != a) {
                assert_eq!(g.weight(a, b).unwrap(), f.weight(b) - f.weight(a));
            }
        }
    }

    #[test]
    fn identical_patches_have_zero_weight() {
        let (u, v) = (key(0, 0), key(1, 1));
        let patches = [(u, [1u64, 2].into()), (v, [1u64, 2].into())].into();
        let f = CoverageFunction::new(patches);
        let ground: StateSet = [u, v].into();
        let g = SubmodularityGraph::build(&f, &ground).unwrap();
        assert_eq!(g.weight(u, v).unwrap(), 0.0);
        assert_eq!(g.weight(v, u).unwrap(), 0.0);
    }

    #[test]
    fn build_rejects_tiny_ground_sets() {
        let f = WeightedNodeFunction::default();
        let one: StateSet = [key(0, 0)].into();
        assert!(matches!(
            SubmodularityGraph::build(&f, &one),
            Err(Error::GraphTooSmall(1))
        ));
    }

    #[test]
    fn divergence_is_min_over_sample() {
        let nodes: Vec<StateKey> = (0..4).map(|c| key(0, c)).collect();
        let f = modular(&[
            (nodes[0], 0.6),
            (nodes[1], 0.1),
            (nodes[2], 0.5),
            (nodes[3], 0.3),
        ]);
        let ground: StateSet = nodes.iter().copied().collect();
        let g = SubmodularityGraph::build(&f, &ground).unwrap();
        let single: StateSet = [nodes[0]].into();
        assert_eq!(
            divergence(&g, &single, nodes[3]).unwrap(),
            g.weight(nodes[0], nodes[3]).unwrap()
        );
        // w(u1, v) = 0.3 - 0.1 = 0.2, w(u2, v) = 0.3 - 0.6 = -0.3
        let pair: StateSet = [nodes[1], nodes[0]].into();
        assert!((divergence(&g, &pair, nodes[3]).unwrap() - (-0.3)).abs() < 1e-15);
        assert!(matches!(
            divergence(&g, &StateSet::new(), nodes[3]),
            Err(Error::EmptySample)
        ));
        assert!(matches!(
            divergence(&g, &pair, nodes[0]),
            Err(Error::StateInSample(_))
        ));
    }

    #[test]
    fn duplicate_state_has_nonpositive_divergence() {
        let (u, v, x) = (key(0, 0), key(0, 1), key(2, 2));
        let patches = [
            (u, [1u64, 2, 3].into()),
            (v, [1u64, 2, 3].into()),
            (x, [4u64, 5].into()),
        ]
        .into();
        let f = CoverageFunction::new(patches);
        let ground: StateSet = [u, v, x].into();
        let g = SubmodularityGraph::build(&f, &ground).unwrap();
        let sample: StateSet = [u, x].into();
        assert!(divergence(&g, &sample, v).unwrap() <= 0.0);
    }

    #[test]
    fn lazy_and_dense_agree() {
        let ground: StateSet = (0..6).map(|c| key(c / 3, c % 3)).collect();
        let f = crate::submodular::LogDetEntropyFunction::default();
        let dense = SubmodularityGraph::build(&f, &ground).unwrap();
        let lazy = SubmodularityGraph::lazy(&f, &ground).unwrap();
        for &u in &ground {
            for &v in ground.iter().filter(|&&v| v != u) {
                assert_eq!(dense.weight(u, v).unwrap(), lazy.weight(u, v).unwrap());
            }
        }
    }

    #[test]
    fn config_validation_and_arithmetic() {
        assert!(SparsifyConfig::new(0.0, 8.0, 0).is_err());
        assert!(SparsifyConfig::new(8.0, 1.0, 0).is_err());
        let cfg = SparsifyConfig::new(8.0, 8.0, 0).unwrap();
        assert!((cfg.prune_fraction() - 0.646).abs() < 5e-4);
        assert_eq!(cfg.sample_size(100), 37);
        assert_eq!(cfg.removal_count(63), 40);
        assert_eq!(cfg.removal_count(1), 1);
    }

    #[test]
    fn hundred_states_one_pass() {
        let ground: StateSet = (0..100).map(|i| key(i / 10, i % 10)).collect();
        let f = modular(
            &ground
                .iter()
                .map(|&s| (s, 1.0 + s.col as f64))
                .collect::<Vec<_>>(),
        );
        let cfg = SparsifyConfig::new(8.0, 8.0, 7).unwrap();
        let res = sparsify(&f, &ground, &cfg).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.removed_per_iteration, vec![40]);
        assert_eq!(res.kept.len(), 60);
        assert!(res.samples[0].is_subset(&res.kept));
    }

    #[test]
    fn small_ground_set_is_untouched() {
        let ground: StateSet = (0..10).map(|c| key(0, c)).collect();
        let f = WeightedNodeFunction::default();
        let res = sparsify(&f, &ground, &SparsifyConfig::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.kept, ground);
        assert!(matches!(
            sparsify(&f, &StateSet::new(), &SparsifyConfig::default()),
            Err(Error::EmptyGroundSet)
        ));
    }

    #[test]
    fn csv_dump_has_every_ordered_pair() {
        let ground: StateSet = (0..4).map(|c| key(0, c)).collect();
        let f = modular(&ground.iter().map(|&s| (s, 0.5)).collect::<Vec<_>>());
        let g = SubmodularityGraph::build(&f, &ground).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("u,v,weight"));
        assert_eq!(lines.count(), 12);
    }
}
