//! Forward computation: partition, aggregation, merging, propagation
//! augmentation and the stacked tripartite convolution.
//!
//! Branch naming convention (`a` is always the first half under the split
//! partition):
//!   - user:  a = group branch `e_u^(g)`, b = item branch `e_u^(i)`
//!   - group: a = user branch `e_g^(u)`,  b = item branch `e_g^(i)`
//!   - item:  a = user branch `e_i^(u)`,  b = group branch `e_i^(g)`

use rayon::prelude::*;

use super::attention::{
    attention_preact, leaky_relu_in_place, relatedness_base, row_softmax_in_place, AttentionKind,
};
use super::{
    AggregationKind, HyperParams, MergeKind, MergeWeights, ModelParams, PartitionKind,
    PartitionWeights,
};
use crate::error::{Error, Result};
use crate::graph::TripartiteGraph;
use crate::numeric::{axpy, dot, DenseMatrix};
use crate::scalar::{cast, Scalar};

/// Embeddings for every node at one layer, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeds<T> {
    pub user: DenseMatrix<T>,
    pub group: DenseMatrix<T>,
    pub item: DenseMatrix<T>,
}

/// Partition branches for every node at one layer (each `n x d/2`).
#[derive(Clone, Debug)]
pub struct Branches<T> {
    pub user_a: DenseMatrix<T>,
    pub user_b: DenseMatrix<T>,
    pub group_a: DenseMatrix<T>,
    pub group_b: DenseMatrix<T>,
    pub item_a: DenseMatrix<T>,
    pub item_b: DenseMatrix<T>,
}

/// Aggregated pre-merge messages per node type (each `n x d/2`).
#[derive(Clone, Debug)]
pub struct Messages<T> {
    pub user_a: DenseMatrix<T>,
    pub user_b: DenseMatrix<T>,
    pub group_a: DenseMatrix<T>,
    pub group_b: DenseMatrix<T>,
    pub item_a: DenseMatrix<T>,
    pub item_b: DenseMatrix<T>,
}

/// Retained intermediates for one attention side (group or item).
#[derive(Clone, Debug)]
pub struct PaSide<T> {
    /// Row-softmax of the contextual Gram matrix (rows sum to 1).
    pub base: DenseMatrix<T>,
    /// Oriented relatedness matrix actually consumed by the attention.
    pub relatedness: DenseMatrix<T>,
    /// Attention pre-activation `S = X . R`, before the LeakyReLU.
    pub pre_act: DenseMatrix<T>,
    /// Row-softmax attention, one row per user.
    pub attention: DenseMatrix<T>,
}

/// Propagation-augmentation intermediates (absent sides were disabled).
#[derive(Clone, Debug)]
pub struct PaTrace<T> {
    pub group: Option<PaSide<T>>,
    pub item: Option<PaSide<T>>,
}

/// Everything the backward pass needs about one forward run.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Layer 0..=L node embeddings; layer 0 is a copy of the current tables.
    pub node_layers: Vec<NodeEmbeds<T>>,
    /// Branch matrices consumed by conv layer `l` (index `l - 1`); the first
    /// entry carries the PA-augmented user branches.
    pub branch_layers: Vec<Branches<T>>,
    /// Aggregated pre-merge messages per conv layer.
    pub messages: Vec<Messages<T>>,
    pub pa: Option<PaTrace<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn depth(&self) -> usize {
        self.branch_layers.len()
    }
}

/// Final (layer-L) embeddings of a forward run.
pub fn final_embeds<T: Scalar>(trace: &ForwardTrace<T>) -> &NodeEmbeds<T> {
    trace.node_layers.last().expect("trace has layer 0")
}

/// Inner-product ranking score of a user/group embedding pair.
pub fn score<T: Scalar>(user_embed: &[T], group_embed: &[T]) -> T {
    assert_eq!(user_embed.len(), group_embed.len(), "score dim mismatch");
    dot(user_embed, group_embed)
}

/// Partition rule applied to one embedding.
pub enum PartitionOp<'a, T> {
    /// First half / second half of the coordinates.
    Split,
    /// `branch_a = W_a . e`, `branch_b = W_b . e` with trainable maps.
    Linear(&'a DenseMatrix<T>, &'a DenseMatrix<T>),
}

/// Divide one node embedding into its two propagation branches.
pub fn partition<T: Scalar>(e: &[T], op: PartitionOp<'_, T>) -> (Vec<T>, Vec<T>) {
    match op {
        PartitionOp::Split => {
            assert!(e.len().is_multiple_of(2), "split partition needs an even dim");
            let h = e.len() / 2;
            (e[..h].to_vec(), e[h..].to_vec())
        }
        PartitionOp::Linear(w_a, w_b) => {
            assert_eq!(w_a.cols(), e.len(), "partition weight dim mismatch");
            assert_eq!(w_b.cols(), e.len(), "partition weight dim mismatch");
            let apply = |w: &DenseMatrix<T>| (0..w.rows()).map(|r| dot(w.row(r), e)).collect();
            (apply(w_a), apply(w_b))
        }
    }
}

/// Aggregate neighbor branch vectors into one message.
///
/// `center_deg` and `neighbor_degs` are only consulted for `SymNorm`.
/// An empty neighbor list yields the zero vector.
pub fn aggregate<T: Scalar>(
    vectors: &[&[T]],
    kind: AggregationKind,
    center_deg: usize,
    neighbor_degs: &[usize],
    dim: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); dim];
    if vectors.is_empty() {
        return out;
    }
    match kind {
        AggregationKind::Sum => {
            for v in vectors {
                axpy(&mut out, v, T::one());
            }
        }
        AggregationKind::Mean => {
            let inv = T::one() / cast(vectors.len() as f64);
            for v in vectors {
                axpy(&mut out, v, inv);
            }
        }
        AggregationKind::SymNorm => {
            assert_eq!(vectors.len(), neighbor_degs.len());
            for (v, &deg) in vectors.iter().zip(neighbor_degs) {
                let w = T::one() / cast::<T>((center_deg * deg) as f64).sqrt();
                axpy(&mut out, v, w);
            }
        }
    }
    out
}

/// Merge rule recombining the two aggregated branch messages.
pub enum MergeOp<'a, T> {
    Concat,
    /// One map over the concatenated messages.
    FcBefore(&'a DenseMatrix<T>),
    /// One map per branch, then concatenation.
    FcAfter(&'a DenseMatrix<T>, &'a DenseMatrix<T>),
}

/// Combine two branch messages into one node embedding.
pub fn merge<T: Scalar>(h_a: &[T], h_b: &[T], op: MergeOp<'_, T>) -> Vec<T> {
    assert_eq!(h_a.len(), h_b.len(), "merge branch dim mismatch");
    let mut concat = Vec::with_capacity(h_a.len() * 2);
    concat.extend_from_slice(h_a);
    concat.extend_from_slice(h_b);
    match op {
        MergeOp::Concat => concat,
        MergeOp::FcBefore(w) => {
            assert_eq!(w.cols(), concat.len(), "merge weight dim mismatch");
            (0..w.rows()).map(|r| dot(w.row(r), &concat)).collect()
        }
        MergeOp::FcAfter(w_a, w_b) => {
            let mut out: Vec<T> = (0..w_a.rows()).map(|r| dot(w_a.row(r), h_a)).collect();
            out.extend((0..w_b.rows()).map(|r| dot(w_b.row(r), h_b)));
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix-level kernels used by forward/backward.
// ---------------------------------------------------------------------------

pub(crate) fn split_cols<T: Scalar>(m: &DenseMatrix<T>) -> (DenseMatrix<T>, DenseMatrix<T>) {
    let h = m.cols() / 2;
    let mut a = DenseMatrix::zeros(m.rows(), h);
    let mut b = DenseMatrix::zeros(m.rows(), h);
    for r in 0..m.rows() {
        a.row_mut(r).copy_from_slice(&m.row(r)[..h]);
        b.row_mut(r).copy_from_slice(&m.row(r)[h..]);
    }
    (a, b)
}

pub(crate) fn concat_cols<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> DenseMatrix<T> {
    assert_eq!(a.rows(), b.rows());
    let (ha, hb) = (a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(a.rows(), ha + hb);
    for r in 0..a.rows() {
        out.row_mut(r)[..ha].copy_from_slice(a.row(r));
        out.row_mut(r)[ha..].copy_from_slice(b.row(r));
    }
    out
}

fn partition_matrix<T: Scalar>(
    nodes: &DenseMatrix<T>,
    weights: Option<(&DenseMatrix<T>, &DenseMatrix<T>)>,
) -> (DenseMatrix<T>, DenseMatrix<T>) {
    match weights {
        None => split_cols(nodes),
        Some((w_a, w_b)) => (nodes.matmul_nt(w_a), nodes.matmul_nt(w_b)),
    }
}

/// Edge-weighted gather: `out[c] = sum_{s in adj[c]} weight(c, s) * input[s]`.
pub(crate) fn gather<T: Scalar>(
    adj: &[Vec<u32>],
    input: &DenseMatrix<T>,
    weight: &(impl Fn(usize, usize) -> T + Sync),
) -> DenseMatrix<T> {
    let cols = input.cols();
    let mut out = DenseMatrix::zeros(adj.len(), cols);
    let fill = |c: usize, row: &mut [T]| {
        for &s in &adj[c] {
            let s = s as usize;
            axpy(row, input.row(s), weight(c, s));
        }
    };
    if adj.len() * cols >= 16 * 1024 {
        out.as_mut_slice()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(c, row)| fill(c, row));
    } else {
        for c in 0..adj.len() {
            fill(c, out.row_mut(c));
        }
    }
    out
}

/// One relation's aggregation, usable in both directions with identical
/// per-edge weights.
pub(crate) struct RelationAgg<'g> {
    /// Neighbors of each aggregation center.
    pub center_adj: &'g [Vec<u32>],
    /// Neighbors of each source node (the inverse adjacency).
    pub source_adj: &'g [Vec<u32>],
    pub kind: AggregationKind,
}

impl<'g> RelationAgg<'g> {
    fn edge_weight<T: Scalar>(&self, c: usize, s: usize) -> T {
        match self.kind {
            AggregationKind::Sum => T::one(),
            AggregationKind::Mean => T::one() / cast(self.center_adj[c].len() as f64),
            AggregationKind::SymNorm => {
                let prod = (self.center_adj[c].len() * self.source_adj[s].len()) as f64;
                T::one() / cast::<T>(prod).sqrt()
            }
        }
    }

    /// `msg[c] = AGG{input[s] : s in N(c)}`.
    pub fn forward<T: Scalar>(&self, input: &DenseMatrix<T>) -> DenseMatrix<T> {
        gather(self.center_adj, input, &|c, s| self.edge_weight(c, s))
    }

    /// Adjoint: scatter message gradients back to the sources.
    pub fn backward<T: Scalar>(&self, grad_msg: &DenseMatrix<T>) -> DenseMatrix<T> {
        gather(self.source_adj, grad_msg, &|s, c| self.edge_weight(c, s))
    }
}

/// The six relation-direction aggregators of the tripartite convolution.
pub(crate) struct ConvAgg<'g> {
    pub user_from_group: RelationAgg<'g>,
    pub user_from_item: RelationAgg<'g>,
    pub group_from_user: RelationAgg<'g>,
    pub group_from_item: RelationAgg<'g>,
    pub item_from_user: RelationAgg<'g>,
    pub item_from_group: RelationAgg<'g>,
}

impl<'g> ConvAgg<'g> {
    pub fn new(graph: &'g TripartiteGraph, kind: AggregationKind) -> Self {
        let rel = |center_adj, source_adj| RelationAgg {
            center_adj,
            source_adj,
            kind,
        };
        Self {
            user_from_group: rel(graph.groups_of_user_all(), graph.users_of_group_all()),
            user_from_item: rel(graph.items_of_user_all(), graph.users_of_item_all()),
            group_from_user: rel(graph.users_of_group_all(), graph.groups_of_user_all()),
            group_from_item: rel(graph.items_of_group_all(), graph.groups_of_item_all()),
            item_from_user: rel(graph.users_of_item_all(), graph.items_of_user_all()),
            item_from_group: rel(graph.groups_of_item_all(), graph.items_of_group_all()),
        }
    }
}

type BranchWeights<'a, T> = Option<(&'a DenseMatrix<T>, &'a DenseMatrix<T>)>;

fn partition_all<T: Scalar>(
    prev: &NodeEmbeds<T>,
    params: &ModelParams<T>,
    hp: &HyperParams,
) -> Result<Branches<T>> {
    type Pick<T> = fn(&PartitionWeights<T>) -> (&DenseMatrix<T>, &DenseMatrix<T>);
    let w = |get: Pick<T>| -> Result<BranchWeights<'_, T>> {
        match hp.partition {
            PartitionKind::Split => Ok(None),
            PartitionKind::Linear => params
                .partition_w
                .as_ref()
                .map(|pw| Some(get(pw)))
                .ok_or_else(|| Error::Config("linear partition selected but weights missing".into())),
        }
    };
    let (user_a, user_b) = partition_matrix(&prev.user, w(|pw| (&pw.user_a, &pw.user_b))?);
    let (group_a, group_b) = partition_matrix(&prev.group, w(|pw| (&pw.group_a, &pw.group_b))?);
    let (item_a, item_b) = partition_matrix(&prev.item, w(|pw| (&pw.item_a, &pw.item_b))?);
    Ok(Branches {
        user_a,
        user_b,
        group_a,
        group_b,
        item_a,
        item_b,
    })
}

fn aggregate_all<T: Scalar>(branches: &Branches<T>, agg: &ConvAgg<'_>) -> Messages<T> {
    Messages {
        user_a: agg.user_from_group.forward(&branches.group_a),
        user_b: agg.user_from_item.forward(&branches.item_a),
        group_a: agg.group_from_user.forward(&branches.user_a),
        group_b: agg.group_from_item.forward(&branches.item_b),
        item_a: agg.item_from_user.forward(&branches.user_b),
        item_b: agg.item_from_group.forward(&branches.group_b),
    }
}

fn merge_type<T: Scalar>(
    msg_a: &DenseMatrix<T>,
    msg_b: &DenseMatrix<T>,
    kind: MergeKind,
    before: Option<&DenseMatrix<T>>,
    after: Option<(&DenseMatrix<T>, &DenseMatrix<T>)>,
) -> DenseMatrix<T> {
    match kind {
        MergeKind::Concat => concat_cols(msg_a, msg_b),
        MergeKind::FcBefore => concat_cols(msg_a, msg_b).matmul_nt(before.expect("fc weights")),
        MergeKind::FcAfter => {
            let (w_a, w_b) = after.expect("fc weights");
            concat_cols(&msg_a.matmul_nt(w_a), &msg_b.matmul_nt(w_b))
        }
    }
}

fn merge_all<T: Scalar>(
    msgs: &Messages<T>,
    params: &ModelParams<T>,
    hp: &HyperParams,
) -> Result<NodeEmbeds<T>> {
    let (user, group, item) = match hp.merge {
        MergeKind::Concat => (
            merge_type(&msgs.user_a, &msgs.user_b, hp.merge, None, None),
            merge_type(&msgs.group_a, &msgs.group_b, hp.merge, None, None),
            merge_type(&msgs.item_a, &msgs.item_b, hp.merge, None, None),
        ),
        MergeKind::FcBefore => match &params.merge_w {
            Some(MergeWeights::Before { user, group, item }) => (
                merge_type(&msgs.user_a, &msgs.user_b, hp.merge, Some(user), None),
                merge_type(&msgs.group_a, &msgs.group_b, hp.merge, Some(group), None),
                merge_type(&msgs.item_a, &msgs.item_b, hp.merge, Some(item), None),
            ),
            _ => return Err(Error::Config("fc_before merge selected but weights missing".into())),
        },
        MergeKind::FcAfter => match &params.merge_w {
            Some(MergeWeights::After {
                user_a,
                user_b,
                group_a,
                group_b,
                item_a,
                item_b,
            }) => (
                merge_type(&msgs.user_a, &msgs.user_b, hp.merge, None, Some((user_a, user_b))),
                merge_type(&msgs.group_a, &msgs.group_b, hp.merge, None, Some((group_a, group_b))),
                merge_type(&msgs.item_a, &msgs.item_b, hp.merge, None, Some((item_a, item_b))),
            ),
            _ => return Err(Error::Config("fc_after merge selected but weights missing".into())),
        },
    };
    Ok(NodeEmbeds { user, group, item })
}

/// Enhance the user partition branches with attention-weighted information
/// from all groups and items: `e_hat = e + beta * A . branch`.
///
/// A disabled side (absent attention matrix) or `beta == 0` leaves the
/// corresponding branch exactly (bitwise) unchanged.
pub fn propagation_augmentation<T: Scalar>(
    user_branch_group: &DenseMatrix<T>,
    user_branch_item: &DenseMatrix<T>,
    group_branch_user: &DenseMatrix<T>,
    item_branch_user: &DenseMatrix<T>,
    att_group: Option<&DenseMatrix<T>>,
    att_item: Option<&DenseMatrix<T>>,
    beta: f64,
) -> (DenseMatrix<T>, DenseMatrix<T>) {
    assert!((0.0..=1.0).contains(&beta), "beta must lie in [0, 1]");
    let mut a = user_branch_group.clone();
    let mut b = user_branch_item.clone();
    if beta > 0.0 {
        if let Some(att) = att_group {
            a.add_scaled(&att.matmul(group_branch_user), cast(beta));
        }
        if let Some(att) = att_item {
            b.add_scaled(&att.matmul(item_branch_user), cast(beta));
        }
    }
    (a, b)
}

fn compute_pa_side<T: Scalar>(
    ctx: &DenseMatrix<T>,
    graph: &TripartiteGraph,
    kind: AttentionKind,
    hp: &HyperParams,
) -> PaSide<T> {
    let base = relatedness_base(ctx);
    let relatedness = if hp.relatedness_row_norm {
        base.clone()
    } else {
        base.transposed()
    };
    let pre_act = attention_preact(graph, &relatedness, kind);
    let mut attention = pre_act.clone();
    leaky_relu_in_place(&mut attention, cast(hp.leaky_slope));
    row_softmax_in_place(&mut attention);
    PaSide {
        base,
        relatedness,
        pre_act,
        attention,
    }
}

fn apply_pa<T: Scalar>(
    branches: &mut Branches<T>,
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
) -> Option<PaTrace<T>> {
    if hp.beta == 0.0 || matches!(hp.pa_mode, super::PaMode::NoPa) {
        return None;
    }
    let group = hp
        .pa_mode
        .group_active()
        .then(|| compute_pa_side(&params.ctx_group, graph, AttentionKind::Group, hp));
    let item = hp
        .pa_mode
        .item_active()
        .then(|| compute_pa_side(&params.ctx_item, graph, AttentionKind::Item, hp));
    let (aug_a, aug_b) = propagation_augmentation(
        &branches.user_a,
        &branches.user_b,
        &branches.group_a,
        &branches.item_a,
        group.as_ref().map(|s| &s.attention),
        item.as_ref().map(|s| &s.attention),
        hp.beta,
    );
    branches.user_a = aug_a;
    branches.user_b = aug_b;
    Some(PaTrace { group, item })
}

fn validate_shapes<T: Scalar>(
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
) -> Result<()> {
    hp.validate()?;
    let expect = graph.n_users() + graph.n_groups() + graph.n_items();
    if params.embed.rows() != expect
        || params.embed.cols() != hp.embed_dim
        || params.ctx_group.rows() != graph.n_groups()
        || params.ctx_item.rows() != graph.n_items()
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {} embedding table", expect, hp.embed_dim),
            got: format!("{} x {}", params.embed.rows(), params.embed.cols()),
        });
    }
    Ok(())
}

fn initial_embeds<T: Scalar>(params: &ModelParams<T>, graph: &TripartiteGraph) -> NodeEmbeds<T> {
    let d = params.dim();
    let copy_rows = |offset: usize, n: usize| {
        let mut m = DenseMatrix::zeros(n, d);
        for r in 0..n {
            m.row_mut(r).copy_from_slice(params.embed.row(offset + r));
        }
        m
    };
    NodeEmbeds {
        user: copy_rows(0, graph.n_users()),
        group: copy_rows(graph.n_users(), graph.n_groups()),
        item: copy_rows(graph.n_users() + graph.n_groups(), graph.n_items()),
    }
}

/// One tripartite convolution step over the previous layer's embeddings.
/// Propagation augmentation is not applied here; [`forward`] injects it
/// into the first layer only.
pub fn conv_layer<T: Scalar>(
    prev: &NodeEmbeds<T>,
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
) -> Result<NodeEmbeds<T>> {
    let branches = partition_all(prev, params, hp)?;
    let agg = ConvAgg::new(graph, hp.aggregation);
    let msgs = aggregate_all(&branches, &agg);
    merge_all(&msgs, params, hp)
}

/// Full forward pass: propagation augmentation once on the layer-0 user
/// partitions, then `L` convolution layers. The trace retains every
/// intermediate the backward pass needs.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
) -> Result<ForwardTrace<T>> {
    validate_shapes(params, graph, hp)?;
    let agg = ConvAgg::new(graph, hp.aggregation);
    let mut node_layers = vec![initial_embeds(params, graph)];
    let mut branch_layers = Vec::with_capacity(hp.layers);
    let mut messages = Vec::with_capacity(hp.layers);
    let mut pa = None;
    for l in 1..=hp.layers {
        let prev = node_layers.last().unwrap();
        let mut branches = partition_all(prev, params, hp)?;
        if l == 1 {
            pa = apply_pa(&mut branches, params, graph, hp);
        }
        let msgs = aggregate_all(&branches, &agg);
        let next = merge_all(&msgs, params, hp)?;
        branch_layers.push(branches);
        messages.push(msgs);
        node_layers.push(next);
    }
    Ok(ForwardTrace {
        node_layers,
        branch_layers,
        messages,
        pa,
    })
}
