//! Analytic reverse pass through scoring, convolution, merging, aggregation,
//! partition, propagation augmentation, attention softmax and the contextual
//! Gram products. Validated coordinate-by-coordinate against the
//! finite-difference oracle in the test suites.

use super::forward::{concat_cols, gather, split_cols, ConvAgg, ForwardTrace, PaSide};
use super::{HyperParams, MergeKind, MergeWeights, ModelParams, PartitionKind};
use crate::error::{Error, Result};
use crate::graph::TripartiteGraph;
use crate::numeric::{softmax_backward, DenseMatrix};
use crate::scalar::{cast, Scalar};

/// Upstream gradient of the loss w.r.t. one user-group score.
#[derive(Clone, Copy, Debug)]
pub struct ScoreGrad<T> {
    pub user: u32,
    pub group: u32,
    pub grad: T,
}

struct BranchGrads<T> {
    user_a: DenseMatrix<T>,
    user_b: DenseMatrix<T>,
    group_a: DenseMatrix<T>,
    group_b: DenseMatrix<T>,
    item_a: DenseMatrix<T>,
    item_b: DenseMatrix<T>,
}

/// Gradients of the scalar loss w.r.t. every trainable tensor, given the
/// trace of the matching forward pass and per-score upstream gradients.
/// The result is linear in `score_grads`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
    trace: &ForwardTrace<T>,
    score_grads: &[ScoreGrad<T>],
) -> Result<ModelParams<T>> {
    if trace.depth() != hp.layers {
        return Err(Error::Data(format!(
            "stale trace: depth {} does not match {} layers",
            trace.depth(),
            hp.layers
        )));
    }
    let mut grads = params.zeros_like();
    let agg = ConvAgg::new(graph, hp.aggregation);
    let final_layer = trace.node_layers.last().unwrap();

    // d(loss)/d(e^(L)) from the inner-product scores.
    let mut g_user = DenseMatrix::zeros(graph.n_users(), params.dim());
    let mut g_group = DenseMatrix::zeros(graph.n_groups(), params.dim());
    let mut g_item = DenseMatrix::zeros(graph.n_items(), params.dim());
    for sg in score_grads {
        let (u, g) = (sg.user as usize, sg.group as usize);
        let g_row = final_layer.group.row(g);
        let u_row = final_layer.user.row(u);
        for (o, &v) in g_user.row_mut(u).iter_mut().zip(g_row) {
            *o += sg.grad * v;
        }
        for (o, &v) in g_group.row_mut(g).iter_mut().zip(u_row) {
            *o += sg.grad * v;
        }
    }

    for l in (1..=hp.layers).rev() {
        let msgs = &trace.messages[l - 1];

        // merge backward: node-embedding grads -> message grads (+ FC weight grads)
        let (gm_user_a, gm_user_b) = merge_backward(
            &g_user,
            &msgs.user_a,
            &msgs.user_b,
            hp,
            params,
            &mut grads,
            NodeType::User,
        )?;
        let (gm_group_a, gm_group_b) = merge_backward(
            &g_group,
            &msgs.group_a,
            &msgs.group_b,
            hp,
            params,
            &mut grads,
            NodeType::Group,
        )?;
        let (gm_item_a, gm_item_b) = merge_backward(
            &g_item,
            &msgs.item_a,
            &msgs.item_b,
            hp,
            params,
            &mut grads,
            NodeType::Item,
        )?;

        // aggregation backward: message grads scatter to source branch grads
        let mut branch_grads = BranchGrads {
            user_a: agg.group_from_user.backward(&gm_group_a),
            user_b: agg.item_from_user.backward(&gm_item_a),
            group_a: agg.user_from_group.backward(&gm_user_a),
            group_b: agg.item_from_group.backward(&gm_item_b),
            item_a: agg.user_from_item.backward(&gm_user_b),
            item_b: agg.group_from_item.backward(&gm_group_b),
        };

        if l == 1 {
            // augmentation backward first: it adds contributions onto the
            // layer-0 group/item user-branch grads before partition backward.
            pa_backward(params, graph, hp, trace, &mut branch_grads, &mut grads);
        }

        let prev = &trace.node_layers[l - 1];
        let (gp_user, gp_group, gp_item) =
            partition_backward(&branch_grads, prev, hp, params, &mut grads);

        if l == 1 {
            fold_embed_grads(&mut grads, &gp_user, &gp_group, &gp_item, graph);
        } else {
            g_user = gp_user;
            g_group = gp_group;
            g_item = gp_item;
        }
    }

    Ok(grads)
}

#[derive(Clone, Copy)]
enum NodeType {
    User,
    Group,
    Item,
}

/// Gradient through the merge stage for one node type. Returns the grads of
/// the two aggregated messages and accumulates FC weight grads in `grads`.
fn merge_backward<T: Scalar>(
    g_out: &DenseMatrix<T>,
    msg_a: &DenseMatrix<T>,
    msg_b: &DenseMatrix<T>,
    hp: &HyperParams,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
    node: NodeType,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    match hp.merge {
        MergeKind::Concat => Ok(split_cols(g_out)),
        MergeKind::FcBefore => {
            let w = match (&params.merge_w, node) {
                (Some(MergeWeights::Before { user, .. }), NodeType::User) => user,
                (Some(MergeWeights::Before { group, .. }), NodeType::Group) => group,
                (Some(MergeWeights::Before { item, .. }), NodeType::Item) => item,
                _ => return Err(Error::Config("fc_before weights missing".into())),
            };
            let concat = concat_cols(msg_a, msg_b);
            let gw = g_out.matmul_tn(&concat);
            match (&mut grads.merge_w, node) {
                (Some(MergeWeights::Before { user, .. }), NodeType::User) => user.add_scaled(&gw, T::one()),
                (Some(MergeWeights::Before { group, .. }), NodeType::Group) => group.add_scaled(&gw, T::one()),
                (Some(MergeWeights::Before { item, .. }), NodeType::Item) => item.add_scaled(&gw, T::one()),
                _ => unreachable!(),
            }
            Ok(split_cols(&g_out.matmul(w)))
        }
        MergeKind::FcAfter => {
            let (w_a, w_b) = match (&params.merge_w, node) {
                (Some(MergeWeights::After { user_a, user_b, .. }), NodeType::User) => (user_a, user_b),
                (Some(MergeWeights::After { group_a, group_b, .. }), NodeType::Group) => (group_a, group_b),
                (Some(MergeWeights::After { item_a, item_b, .. }), NodeType::Item) => (item_a, item_b),
                _ => return Err(Error::Config("fc_after weights missing".into())),
            };
            let (g_fa, g_fb) = split_cols(g_out);
            let gw_a = g_fa.matmul_tn(msg_a);
            let gw_b = g_fb.matmul_tn(msg_b);
            match (&mut grads.merge_w, node) {
                (Some(MergeWeights::After { user_a, user_b, .. }), NodeType::User) => {
                    user_a.add_scaled(&gw_a, T::one());
                    user_b.add_scaled(&gw_b, T::one());
                }
                (Some(MergeWeights::After { group_a, group_b, .. }), NodeType::Group) => {
                    group_a.add_scaled(&gw_a, T::one());
                    group_b.add_scaled(&gw_b, T::one());
                }
                (Some(MergeWeights::After { item_a, item_b, .. }), NodeType::Item) => {
                    item_a.add_scaled(&gw_a, T::one());
                    item_b.add_scaled(&gw_b, T::one());
                }
                _ => unreachable!(),
            }
            Ok((g_fa.matmul(w_a), g_fb.matmul(w_b)))
        }
    }
}

/// Gradient through the partition stage for all node types at one layer.
/// Returns node-embedding grads; accumulates partition weight grads.
fn partition_backward<T: Scalar>(
    bg: &BranchGrads<T>,
    prev: &super::forward::NodeEmbeds<T>,
    hp: &HyperParams,
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
) -> (DenseMatrix<T>, DenseMatrix<T>, DenseMatrix<T>) {
    match hp.partition {
        PartitionKind::Split => (
            concat_cols(&bg.user_a, &bg.user_b),
            concat_cols(&bg.group_a, &bg.group_b),
            concat_cols(&bg.item_a, &bg.item_b),
        ),
        PartitionKind::Linear => {
            let w = params.partition_w.as_ref().expect("linear weights");
            let gw = grads.partition_w.as_mut().expect("linear weight grads");
            // branch = e . W^T  =>  g_e = g_branch . W, g_W = g_branch^T . e
            let mut g_user = bg.user_a.matmul(&w.user_a);
            g_user.add_scaled(&bg.user_b.matmul(&w.user_b), T::one());
            gw.user_a.add_scaled(&bg.user_a.matmul_tn(&prev.user), T::one());
            gw.user_b.add_scaled(&bg.user_b.matmul_tn(&prev.user), T::one());

            let mut g_group = bg.group_a.matmul(&w.group_a);
            g_group.add_scaled(&bg.group_b.matmul(&w.group_b), T::one());
            gw.group_a.add_scaled(&bg.group_a.matmul_tn(&prev.group), T::one());
            gw.group_b.add_scaled(&bg.group_b.matmul_tn(&prev.group), T::one());

            let mut g_item = bg.item_a.matmul(&w.item_a);
            g_item.add_scaled(&bg.item_b.matmul(&w.item_b), T::one());
            gw.item_a.add_scaled(&bg.item_a.matmul_tn(&prev.item), T::one());
            gw.item_b.add_scaled(&bg.item_b.matmul_tn(&prev.item), T::one());

            (g_user, g_group, g_item)
        }
    }
}

/// Backward through one attention side: from the augmentation-info gradient
/// to the contextual-table gradient, also scattering into the layer-0
/// source-branch gradient.
#[allow(clippy::too_many_arguments)]
fn pa_side_backward<T: Scalar>(
    side: &PaSide<T>,
    g_aug: &DenseMatrix<T>,
    source_branch: &DenseMatrix<T>,
    g_source_branch: &mut DenseMatrix<T>,
    members_of_target: &[Vec<u32>],
    ctx: &DenseMatrix<T>,
    g_ctx: &mut DenseMatrix<T>,
    hp: &HyperParams,
) {
    // aug = A . branch
    let g_att = g_aug.matmul_nt(source_branch);
    g_source_branch.add_scaled(&side.attention.matmul_tn(g_aug), T::one());

    // row-softmax backward
    let n_users = g_att.rows();
    let mut g_z = DenseMatrix::zeros(n_users, g_att.cols());
    for u in 0..n_users {
        softmax_backward(side.attention.row(u), g_att.row(u), g_z.row_mut(u));
    }

    // LeakyReLU backward on the pre-activation
    let slope: T = cast(hp.leaky_slope);
    for (gz, &s) in g_z.as_mut_slice().iter_mut().zip(side.pre_act.as_slice()) {
        if s <= T::zero() {
            *gz *= slope;
        }
    }

    // S = X . R  =>  g_R[m] = sum over users that neighbor m of g_S[u]
    let g_rel = gather(members_of_target, &g_z, &|_, _| T::one());

    // orientation: the stored base is row-normalized
    let g_base = if hp.relatedness_row_norm {
        g_rel
    } else {
        g_rel.transposed()
    };
    let n = g_base.rows();
    let mut g_gram = DenseMatrix::zeros(n, n);
    for r in 0..n {
        softmax_backward(side.base.row(r), g_base.row(r), g_gram.row_mut(r));
    }

    // G = C . C^T  =>  g_C = (g_G + g_G^T) . C
    let mut g_sym = g_gram.transposed();
    g_sym.add_scaled(&g_gram, T::one());
    g_ctx.add_scaled(&g_sym.matmul(ctx), T::one());
}

fn pa_backward<T: Scalar>(
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
    trace: &ForwardTrace<T>,
    branch_grads: &mut BranchGrads<T>,
    grads: &mut ModelParams<T>,
) {
    let Some(pa) = &trace.pa else { return };
    let beta: T = cast(hp.beta);
    let branches0 = &trace.branch_layers[0];
    if let Some(side) = &pa.group {
        let mut g_aug = branch_grads.user_a.clone();
        g_aug.scale(beta);
        pa_side_backward(
            side,
            &g_aug,
            &branches0.group_a,
            &mut branch_grads.group_a,
            graph.users_of_group_all(),
            &params.ctx_group,
            &mut grads.ctx_group,
            hp,
        );
    }
    if let Some(side) = &pa.item {
        let mut g_aug = branch_grads.user_b.clone();
        g_aug.scale(beta);
        pa_side_backward(
            side,
            &g_aug,
            &branches0.item_a,
            &mut branch_grads.item_a,
            graph.users_of_item_all(),
            &params.ctx_item,
            &mut grads.ctx_item,
            hp,
        );
    }
}

fn fold_embed_grads<T: Scalar>(
    grads: &mut ModelParams<T>,
    g_user: &DenseMatrix<T>,
    g_group: &DenseMatrix<T>,
    g_item: &DenseMatrix<T>,
    graph: &TripartiteGraph,
) {
    let (n_u, n_g) = (graph.n_users(), graph.n_groups());
    for u in 0..g_user.rows() {
        for (o, &v) in grads.embed.row_mut(u).iter_mut().zip(g_user.row(u)) {
            *o += v;
        }
    }
    for g in 0..g_group.rows() {
        for (o, &v) in grads.embed.row_mut(n_u + g).iter_mut().zip(g_group.row(g)) {
            *o += v;
        }
    }
    for i in 0..g_item.rows() {
        for (o, &v) in grads
            .embed
            .row_mut(n_u + n_g + i)
            .iter_mut()
            .zip(g_item.row(i))
        {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::forward;
    use crate::model::PaMode;

    fn toy_graph() -> TripartiteGraph {
        TripartiteGraph::new(
            3,
            3,
            2,
            vec![(0, 0), (0, 1), (1, 1), (2, 2)],
            vec![(0, 0), (1, 1), (2, 0)],
            vec![(0, 0), (2, 1)],
        )
        .unwrap()
    }

    #[test]
    fn backward_is_linear_in_upstream_gradients() {
        let g = toy_graph();
        let hp = HyperParams {
            embed_dim: 4,
            ..HyperParams::default()
        };
        let params: ModelParams<f64> = ModelParams::init(&hp, 3, 3, 2, 5).unwrap();
        let trace = forward(&params, &g, &hp).unwrap();
        let sg = vec![
            ScoreGrad { user: 0, group: 2, grad: 0.7 },
            ScoreGrad { user: 1, group: 0, grad: -0.3 },
        ];
        let doubled: Vec<ScoreGrad<f64>> = sg
            .iter()
            .map(|s| ScoreGrad { grad: s.grad * 2.0, ..*s })
            .collect();
        let g1 = backward(&params, &g, &hp, &trace, &sg).unwrap();
        let g2 = backward(&params, &g, &hp, &trace, &doubled).unwrap();
        for ((_, a), (_, b)) in g1.named_tensors().iter().zip(g2.named_tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((y - 2.0 * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_item_mode_leaves_item_context_untouched() {
        let g = toy_graph();
        let hp = HyperParams {
            embed_dim: 4,
            pa_mode: PaMode::NoItem,
            ..HyperParams::default()
        };
        let params: ModelParams<f64> = ModelParams::init(&hp, 3, 3, 2, 6).unwrap();
        let trace = forward(&params, &g, &hp).unwrap();
        let sg = vec![ScoreGrad { user: 0, group: 2, grad: 1.0 }];
        let grads = backward(&params, &g, &hp, &trace, &sg).unwrap();
        assert!(grads.ctx_item.as_slice().iter().all(|&x| x == 0.0));
        assert!(grads.ctx_group.as_slice().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn stale_trace_is_rejected() {
        let g = toy_graph();
        let hp = HyperParams {
            embed_dim: 4,
            ..HyperParams::default()
        };
        let params: ModelParams<f64> = ModelParams::init(&hp, 3, 3, 2, 5).unwrap();
        let trace = forward(&params, &g, &hp).unwrap();
        let mut hp2 = hp.clone();
        hp2.layers = 2;
        assert!(backward(&params, &g, &hp2, &trace, &[]).is_err());
    }
}
