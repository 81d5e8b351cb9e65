//! Shared fixtures for the integration and acceptance suites.

// each test target compiles this module and uses a different subset
#![allow(dead_code)]

use cfag::graph::TripartiteGraph;
use cfag::model::{
    AggregationKind, HyperParams, MergeKind, ModelParams, PaMode, PartitionKind,
};
use cfag::train::BprTriple;

/// 5 users / 4 groups / 4 items toy instance. User 2 has no item edges, so
/// the empty-neighborhood path is exercised.
pub fn toy_graph() -> TripartiteGraph {
    TripartiteGraph::new(
        5,
        4,
        4,
        vec![(0, 0), (0, 1), (1, 1), (2, 2), (3, 0), (3, 3), (4, 1)],
        vec![(0, 0), (0, 3), (1, 1), (3, 2), (4, 0)],
        vec![(0, 0), (1, 2), (2, 3), (3, 1)],
    )
    .unwrap()
}

/// Fixed triples over [`toy_graph`], all satisfying the BPR membership
/// invariants.
pub fn toy_triples() -> Vec<BprTriple> {
    [
        (0u32, 0u32, 2u32),
        (1, 1, 3),
        (3, 3, 1),
        (2, 2, 0),
        (4, 1, 0),
    ]
    .into_iter()
    .map(|(user, pos_group, neg_group)| BprTriple {
        user,
        pos_group,
        neg_group,
    })
    .collect()
}

pub const ALL_PARTITIONS: [PartitionKind; 2] = [PartitionKind::Split, PartitionKind::Linear];
pub const ALL_MERGES: [MergeKind; 3] = [MergeKind::Concat, MergeKind::FcBefore, MergeKind::FcAfter];
pub const ALL_AGGS: [AggregationKind; 3] = [
    AggregationKind::Mean,
    AggregationKind::Sum,
    AggregationKind::SymNorm,
];
pub const ALL_PA_MODES: [PaMode; 4] = [PaMode::Full, PaMode::NoPa, PaMode::NoItem, PaMode::NoGroup];

/// Every (partition, merge, aggregation, pa_mode) combination at the given
/// layer count, with the toy-scale dimensions.
pub fn all_variant_hps(layers: usize) -> Vec<HyperParams> {
    let mut out = Vec::new();
    for partition in ALL_PARTITIONS {
        for merge in ALL_MERGES {
            for aggregation in ALL_AGGS {
                for pa_mode in ALL_PA_MODES {
                    out.push(HyperParams {
                        embed_dim: 4,
                        layers,
                        beta: 0.3,
                        l2: 0.01,
                        partition,
                        merge,
                        aggregation,
                        pa_mode,
                        ..HyperParams::default()
                    });
                }
            }
        }
    }
    out
}

pub fn variant_label(hp: &HyperParams) -> String {
    format!(
        "L={} {:?}/{:?}/{:?}/{:?}",
        hp.layers, hp.partition, hp.merge, hp.aggregation, hp.pa_mode
    )
}

/// Concatenate every trainable tensor into one flat vector.
pub fn flatten(params: &ModelParams<f64>) -> Vec<f64> {
    params
        .named_tensors()
        .iter()
        .flat_map(|(_, m)| m.as_slice().iter().copied())
        .collect()
}

/// Rebuild parameters from a flat vector, using `template` for the shapes.
pub fn unflatten(template: &ModelParams<f64>, xs: &[f64]) -> ModelParams<f64> {
    let mut params = template.clone();
    let mut offset = 0;
    for (_, m) in params.named_tensors_mut() {
        let n = m.rows() * m.cols();
        m.as_mut_slice().copy_from_slice(&xs[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, xs.len(), "flat vector length mismatch");
    params
}

/// Per-coordinate relative error with a small absolute floor so that
/// exactly-zero gradients compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Worst per-coordinate relative error between the analytic gradient and
/// the central-difference oracle on the toy instance.
pub fn max_gradient_error(hp: &HyperParams, seed: u64) -> f64 {
    let graph = toy_graph();
    let triples = toy_triples();
    let params: ModelParams<f64> = ModelParams::init(hp, 5, 4, 4, seed).unwrap();
    let (_, analytic) = cfag::train::bpr_gradients(&params, &graph, hp, &triples).unwrap();
    let analytic = flatten(&analytic);

    let x0 = flatten(&params);
    let loss_at = |xs: &[f64]| {
        let p = unflatten(&params, xs);
        cfag::train::bpr_gradients(&p, &graph, hp, &triples).unwrap().0
    };
    let numeric = cfag::numeric::finite_difference_gradient(loss_at, &x0, 1e-5).unwrap();

    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Planted monotone instance for the correlation analysis: group `g` sits at
/// angle `g * (pi/2) / n` on a circle of radius `s` (so contextual
/// similarity decreases with index distance), and its members are the user
/// window `[g*step, g*step + width)` (so membership overlap also decreases
/// with index distance).
pub fn monotone_overlap_fixture(
    n_groups: usize,
    width: usize,
    step: usize,
    scale: f64,
) -> (TripartiteGraph, cfag::Matrix64) {
    let n_users = step * (n_groups - 1) + width;
    let mut ug = Vec::new();
    for g in 0..n_groups {
        for u in g * step..g * step + width {
            ug.push((u as u32, g as u32));
        }
    }
    let graph = TripartiteGraph::new(n_users, n_groups, 1, ug, vec![], vec![]).unwrap();
    let mut ctx = cfag::Matrix64::zeros(n_groups, 4);
    for g in 0..n_groups {
        let theta = (g as f64) * std::f64::consts::FRAC_PI_2 / n_groups as f64;
        ctx.set(g, 0, scale * theta.cos());
        ctx.set(g, 1, scale * theta.sin());
    }
    (graph, ctx)
}
