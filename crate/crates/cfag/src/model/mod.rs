//! The CFAG model: embedding tables, tripartite graph convolution with
//! partition/aggregate/merge stages, factorized-attention propagation
//! augmentation, inner-product scoring, and the matching analytic backward
//! pass.

mod attention;
mod backward;
mod forward;

pub use attention::{attention_weights, relatedness_matrix, AttentionKind};
pub use backward::{backward, ScoreGrad};
pub use forward::{
    aggregate, conv_layer, final_embeds, forward, merge, partition, propagation_augmentation,
    score, Branches, ForwardTrace, MergeOp, Messages, NodeEmbeds, PaSide, PaTrace, PartitionOp,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SeededRng};
use crate::scalar::Scalar;

/// How a node embedding is divided into its two propagation branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Simple division over the dimension: first half / second half.
    Split,
    /// Trainable linear maps per node type and branch.
    Linear,
}

/// How the two aggregated branch messages recombine into one embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    /// Direct concatenation.
    Concat,
    /// Concatenate, then one fully-connected layer.
    FcBefore,
    /// Fully-connected layer per branch, then concatenate.
    FcAfter,
}

/// Neighborhood aggregation rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Mean,
    Sum,
    /// GCN-style symmetric normalization `1/sqrt(deg(center) * deg(nbr))`.
    SymNorm,
}

/// Which propagation-augmentation paths are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaMode {
    Full,
    NoPa,
    /// Group-to-user augmentation only.
    NoItem,
    /// Item-to-user augmentation only.
    NoGroup,
}

impl PaMode {
    pub fn group_active(self) -> bool {
        matches!(self, PaMode::Full | PaMode::NoItem)
    }
    pub fn item_active(self) -> bool {
        matches!(self, PaMode::Full | PaMode::NoGroup)
    }
}

/// Model hyperparameters and variant selectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Embedding dimension `d` (must be even).
    pub embed_dim: usize,
    /// Number of convolution layers `L`.
    pub layers: usize,
    /// Propagation-augmentation intensity in `[0, 1]`.
    pub beta: f64,
    /// L2 regularization coefficient over all trainable parameters.
    pub l2: f64,
    /// Negative slope of the LeakyReLU inside the attention.
    pub leaky_slope: f64,
    pub partition: PartitionKind,
    pub merge: MergeKind,
    pub aggregation: AggregationKind,
    pub pa_mode: PaMode,
    /// Orientation of the relatedness softmax: `false` normalizes over the
    /// first index of the Gram matrix (the default reading), `true` over
    /// the second.
    pub relatedness_row_norm: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 1,
            beta: 0.1,
            l2: 0.01,
            leaky_slope: 0.2,
            partition: PartitionKind::Split,
            merge: MergeKind::Concat,
            aggregation: AggregationKind::Mean,
            pa_mode: PaMode::Full,
            relatedness_row_norm: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embed_dim must be even and >= 2, got {}",
                self.embed_dim
            )));
        }
        if self.layers < 1 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }

    /// Half dimension: the width of one partition branch.
    pub fn half_dim(&self) -> usize {
        self.embed_dim / 2
    }
}

/// Trainable linear partition maps (variant `Linear` only), each `h x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionWeights<T> {
    pub user_a: DenseMatrix<T>,
    pub user_b: DenseMatrix<T>,
    pub group_a: DenseMatrix<T>,
    pub group_b: DenseMatrix<T>,
    pub item_a: DenseMatrix<T>,
    pub item_b: DenseMatrix<T>,
}

/// Trainable merging maps (variants `FcBefore` / `FcAfter` only).
#[derive(Clone, Debug, PartialEq)]
pub enum MergeWeights<T> {
    /// One `d x d` map per node type applied to the concatenated messages.
    Before {
        user: DenseMatrix<T>,
        group: DenseMatrix<T>,
        item: DenseMatrix<T>,
    },
    /// One `h x h` map per node type and branch, applied before concatenation.
    After {
        user_a: DenseMatrix<T>,
        user_b: DenseMatrix<T>,
        group_a: DenseMatrix<T>,
        group_b: DenseMatrix<T>,
        item_a: DenseMatrix<T>,
        item_b: DenseMatrix<T>,
    },
}

/// All trainable state: the personalized table `embed` (user rows, then
/// group rows, then item rows), the two contextual tables, and any variant
/// weights. The same struct doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    n_users: usize,
    n_groups: usize,
    n_items: usize,
    dim: usize,
    pub embed: DenseMatrix<T>,
    pub ctx_group: DenseMatrix<T>,
    pub ctx_item: DenseMatrix<T>,
    pub partition_w: Option<PartitionWeights<T>>,
    pub merge_w: Option<MergeWeights<T>>,
}

/// Standard deviation of the normal parameter initialization.
pub const INIT_STD: f64 = 0.1;

impl<T: Scalar> ModelParams<T> {
    /// Initialize all tables i.i.d. normal(0, 0.1), deterministically per seed.
    pub fn init(
        hp: &HyperParams,
        n_users: usize,
        n_groups: usize,
        n_items: usize,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        if n_users == 0 || n_groups == 0 || n_items == 0 {
            return Err(Error::Config("node counts must be positive".into()));
        }
        let d = hp.embed_dim;
        let h = hp.half_dim();
        let mut rng = SeededRng::derived(seed, 0);
        let mut draw = |rows: usize, cols: usize| {
            DenseMatrix::from_vec(rows, cols, rng.normal_vec(rows * cols, 0.0, INIT_STD))
        };
        let embed = draw(n_users + n_groups + n_items, d);
        let ctx_group = draw(n_groups, d);
        let ctx_item = draw(n_items, d);
        let partition_w = match hp.partition {
            PartitionKind::Split => None,
            PartitionKind::Linear => Some(PartitionWeights {
                user_a: draw(h, d),
                user_b: draw(h, d),
                group_a: draw(h, d),
                group_b: draw(h, d),
                item_a: draw(h, d),
                item_b: draw(h, d),
            }),
        };
        let merge_w = match hp.merge {
            MergeKind::Concat => None,
            MergeKind::FcBefore => Some(MergeWeights::Before {
                user: draw(d, d),
                group: draw(d, d),
                item: draw(d, d),
            }),
            MergeKind::FcAfter => Some(MergeWeights::After {
                user_a: draw(h, h),
                user_b: draw(h, h),
                group_a: draw(h, h),
                group_b: draw(h, h),
                item_a: draw(h, h),
                item_b: draw(h, h),
            }),
        };
        Ok(Self {
            n_users,
            n_groups,
            n_items,
            dim: d,
            embed,
            ctx_group,
            ctx_item,
            partition_w,
            merge_w,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
    pub fn n_items(&self) -> usize {
        self.n_items
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_embed(&self, u: usize) -> &[T] {
        self.embed.row(u)
    }
    pub fn group_embed(&self, g: usize) -> &[T] {
        self.embed.row(self.n_users + g)
    }
    pub fn item_embed(&self, i: usize) -> &[T] {
        self.embed.row(self.n_users + self.n_groups + i)
    }

    /// Same shapes, all zeros; the gradient container.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &DenseMatrix<T>| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            n_users: self.n_users,
            n_groups: self.n_groups,
            n_items: self.n_items,
            dim: self.dim,
            embed: z(&self.embed),
            ctx_group: z(&self.ctx_group),
            ctx_item: z(&self.ctx_item),
            partition_w: self.partition_w.as_ref().map(|w| PartitionWeights {
                user_a: z(&w.user_a),
                user_b: z(&w.user_b),
                group_a: z(&w.group_a),
                group_b: z(&w.group_b),
                item_a: z(&w.item_a),
                item_b: z(&w.item_b),
            }),
            merge_w: self.merge_w.as_ref().map(|w| match w {
                MergeWeights::Before { user, group, item } => MergeWeights::Before {
                    user: z(user),
                    group: z(group),
                    item: z(item),
                },
                MergeWeights::After {
                    user_a,
                    user_b,
                    group_a,
                    group_b,
                    item_a,
                    item_b,
                } => MergeWeights::After {
                    user_a: z(user_a),
                    user_b: z(user_b),
                    group_a: z(group_a),
                    group_b: z(group_b),
                    item_a: z(item_a),
                    item_b: z(item_b),
                },
            }),
        }
    }

    /// All tensors in a fixed, documented order (used by the optimizer,
    /// regularization, checkpoints and gradient checks).
    pub fn named_tensors(&self) -> Vec<(&'static str, &DenseMatrix<T>)> {
        let mut out = vec![
            ("embed", &self.embed),
            ("ctx_group", &self.ctx_group),
            ("ctx_item", &self.ctx_item),
        ];
        if let Some(w) = &self.partition_w {
            out.push(("part_user_a", &w.user_a));
            out.push(("part_user_b", &w.user_b));
            out.push(("part_group_a", &w.group_a));
            out.push(("part_group_b", &w.group_b));
            out.push(("part_item_a", &w.item_a));
            out.push(("part_item_b", &w.item_b));
        }
        match &self.merge_w {
            None => {}
            Some(MergeWeights::Before { user, group, item }) => {
                out.push(("merge_user", user));
                out.push(("merge_group", group));
                out.push(("merge_item", item));
            }
            Some(MergeWeights::After {
                user_a,
                user_b,
                group_a,
                group_b,
                item_a,
                item_b,
            }) => {
                out.push(("merge_user_a", user_a));
                out.push(("merge_user_b", user_b));
                out.push(("merge_group_a", group_a));
                out.push(("merge_group_b", group_b));
                out.push(("merge_item_a", item_a));
                out.push(("merge_item_b", item_b));
            }
        }
        out
    }

    /// Mutable view of the same tensors, same order as [`named_tensors`].
    ///
    /// [`named_tensors`]: Self::named_tensors
    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut DenseMatrix<T>)> {
        let mut out: Vec<(&'static str, &mut DenseMatrix<T>)> = vec![
            ("embed", &mut self.embed),
            ("ctx_group", &mut self.ctx_group),
            ("ctx_item", &mut self.ctx_item),
        ];
        if let Some(w) = &mut self.partition_w {
            out.push(("part_user_a", &mut w.user_a));
            out.push(("part_user_b", &mut w.user_b));
            out.push(("part_group_a", &mut w.group_a));
            out.push(("part_group_b", &mut w.group_b));
            out.push(("part_item_a", &mut w.item_a));
            out.push(("part_item_b", &mut w.item_b));
        }
        match &mut self.merge_w {
            None => {}
            Some(MergeWeights::Before { user, group, item }) => {
                out.push(("merge_user", user));
                out.push(("merge_group", group));
                out.push(("merge_item", item));
            }
            Some(MergeWeights::After {
                user_a,
                user_b,
                group_a,
                group_b,
                item_a,
                item_b,
            }) => {
                out.push(("merge_user_a", user_a));
                out.push(("merge_user_b", user_b));
                out.push(("merge_group_a", group_a));
                out.push(("merge_group_b", group_b));
                out.push(("merge_item_a", item_a));
                out.push(("merge_item_b", item_b));
            }
        }
        out
    }

    /// Sum of squared entries over every trainable tensor.
    pub fn squared_norm(&self) -> T {
        self.named_tensors()
            .iter()
            .map(|(_, m)| m.squared_norm())
            .sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in self.named_tensors() {
            m.check_finite(name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(d: usize) -> HyperParams {
        HyperParams {
            embed_dim: d,
            ..HyperParams::default()
        }
    }

    #[test]
    fn init_shapes() {
        let p: ModelParams<f64> = ModelParams::init(&hp(4), 2, 2, 2, 1).unwrap();
        assert_eq!(p.embed.shape(), (6, 4));
        assert_eq!(p.ctx_group.shape(), (2, 4));
        assert_eq!(p.ctx_item.shape(), (2, 4));
        assert!(p.partition_w.is_none());
        assert!(p.merge_w.is_none());
    }

    #[test]
    fn init_is_deterministic() {
        let a: ModelParams<f64> = ModelParams::init(&hp(8), 3, 2, 4, 42).unwrap();
        let b: ModelParams<f64> = ModelParams::init(&hp(8), 3, 2, 4, 42).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f64> = ModelParams::init(&hp(8), 3, 2, 4, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_is_close_to_nominal() {
        let p: ModelParams<f64> = ModelParams::init(&hp(100), 500, 250, 250, 5).unwrap();
        let xs = p.embed.as_slice();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - INIT_STD).abs() < 0.005, "sample std {std}");
    }

    #[test]
    fn rejects_odd_dimension() {
        let bad = HyperParams {
            embed_dim: 5,
            ..HyperParams::default()
        };
        assert!(ModelParams::<f64>::init(&bad, 2, 2, 2, 1).is_err());
    }

    #[test]
    fn variant_weights_allocated_on_demand() {
        let mut h = hp(4);
        h.partition = PartitionKind::Linear;
        h.merge = MergeKind::FcAfter;
        let p: ModelParams<f64> = ModelParams::init(&h, 2, 2, 2, 1).unwrap();
        assert_eq!(p.partition_w.as_ref().unwrap().user_a.shape(), (2, 4));
        assert!(matches!(p.merge_w, Some(MergeWeights::After { .. })));
        assert_eq!(p.named_tensors().len(), 3 + 6 + 6);
    }
}
