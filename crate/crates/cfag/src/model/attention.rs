//! Factorized attention: contextual relatedness and user attention rows.

use rayon::prelude::*;

use crate::graph::TripartiteGraph;
use crate::numeric::{softmax_in_place, DenseMatrix};
use crate::scalar::{cast, Scalar};

/// Which target set the attention ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Group,
    Item,
}

/// Softmax every row of the matrix in place.
pub(crate) fn row_softmax_in_place<T: Scalar>(m: &mut DenseMatrix<T>) {
    let cols = m.cols();
    if m.rows() * cols >= 16 * 1024 {
        m.as_mut_slice()
            .par_chunks_mut(cols)
            .for_each(softmax_in_place);
    } else {
        for r in 0..m.rows() {
            softmax_in_place(m.row_mut(r));
        }
    }
}

/// Row-softmax of the Gram matrix of `ctx`; each row sums to 1.
///
/// This is the shared base for both relatedness orientations: the Gram
/// matrix is symmetric, so normalizing over the first index equals the
/// transpose of the row-normalized form.
pub(crate) fn relatedness_base<T: Scalar>(ctx: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut base = ctx.gram();
    row_softmax_in_place(&mut base);
    base
}

/// Softmax-normalized relatedness matrix of the contextual embeddings.
///
/// With `row_norm == false` (the default orientation) entry `(m, g)` is
/// `exp(c_m . c_g) / sum_k exp(c_k . c_g)`, i.e. each column sums to 1;
/// with `row_norm == true` each row sums to 1.
pub fn relatedness_matrix<T: Scalar>(ctx: &DenseMatrix<T>, row_norm: bool) -> DenseMatrix<T> {
    let base = relatedness_base(ctx);
    if row_norm {
        base
    } else {
        base.transposed()
    }
}

/// LeakyReLU with the given negative slope, elementwise in place.
pub(crate) fn leaky_relu_in_place<T: Scalar>(m: &mut DenseMatrix<T>, slope: T) {
    for x in m.as_mut_slice() {
        if *x < T::zero() {
            *x *= slope;
        }
    }
}

/// Sum of relatedness rows over each user's neighbors: `S[u, k] = sum_{m in
/// N_u} R[m, k]`, with the neighbor set taken from the user-group or
/// user-item adjacency depending on `kind`.
pub(crate) fn attention_preact<T: Scalar>(
    graph: &TripartiteGraph,
    relatedness: &DenseMatrix<T>,
    kind: AttentionKind,
) -> DenseMatrix<T> {
    let n_targets = relatedness.cols();
    let n_users = graph.n_users();
    let mut pre = DenseMatrix::zeros(n_users, n_targets);
    let fill = |u: usize, row: &mut [T]| {
        let neighbors = match kind {
            AttentionKind::Group => graph.groups_of_user(u),
            AttentionKind::Item => graph.items_of_user(u),
        };
        for &m in neighbors {
            for (o, &r) in row.iter_mut().zip(relatedness.row(m as usize)) {
                *o += r;
            }
        }
    };
    if n_users * n_targets >= 16 * 1024 {
        pre.as_mut_slice()
            .par_chunks_mut(n_targets)
            .enumerate()
            .for_each(|(u, row)| fill(u, row));
    } else {
        for u in 0..n_users {
            fill(u, pre.row_mut(u));
        }
    }
    pre
}

/// Attention matrix `A = row-softmax(LeakyReLU(X . R))`, one row per user,
/// each row summing to 1. Users with no neighbors get a uniform row.
pub fn attention_weights<T: Scalar>(
    graph: &TripartiteGraph,
    relatedness: &DenseMatrix<T>,
    kind: AttentionKind,
    leaky_slope: f64,
) -> DenseMatrix<T> {
    let mut att = attention_preact(graph, relatedness, kind);
    leaky_relu_in_place(&mut att, cast(leaky_slope));
    row_softmax_in_place(&mut att);
    att
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TripartiteGraph;
    use approx::assert_relative_eq;

    fn two_group_ctx() -> DenseMatrix<f64> {
        DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0])
    }

    #[test]
    fn relatedness_matches_hand_softmax() {
        // Gram of orthonormal columns is the identity, so each normalized
        // slice is softmax((1, 0)).
        let r = relatedness_matrix(&two_group_ctx(), false);
        let e = std::f64::consts::E;
        assert_relative_eq!(r.get(0, 0), e / (e + 1.0), max_relative = 1e-12);
        assert_relative_eq!(r.get(0, 1), 1.0 / (e + 1.0), max_relative = 1e-12);
        // column sums are 1 in the default orientation
        for g in 0..2 {
            let col_sum: f64 = (0..2).map(|m| r.get(m, g)).sum();
            assert!((col_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relatedness_uniform_when_contexts_equal() {
        let ctx = DenseMatrix::from_vec(3, 2, vec![0.4, -0.2, 0.4, -0.2, 0.4, -0.2]);
        let r = relatedness_matrix(&ctx, false);
        for v in r.as_slice() {
            assert_relative_eq!(*v, 1.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn orientations_are_transposes() {
        let ctx = DenseMatrix::from_vec(3, 4, SeededVec::get(12));
        let col = relatedness_matrix(&ctx, false);
        let row = relatedness_matrix(&ctx, true);
        assert_eq!(col, row.transposed());
    }

    struct SeededVec;
    impl SeededVec {
        fn get(n: usize) -> Vec<f64> {
            crate::numeric::SeededRng::new(3).uniform_vec(n, -1.0, 1.0)
        }
    }

    #[test]
    fn attention_matches_two_group_hand_case() {
        // one user in group 0, two groups, no items
        let g = TripartiteGraph::new(1, 2, 1, vec![(0, 0)], vec![], vec![]).unwrap();
        let r = relatedness_matrix(&two_group_ctx(), false);
        let a = attention_weights(&g, &r, AttentionKind::Group, 0.2);
        // S = R row 0 = (0.7311, 0.2689); both positive so the slope is
        // irrelevant; softmax gives sigma(s0 - s1).
        let e = std::f64::consts::E;
        let margin = (e - 1.0) / (e + 1.0);
        let expect = 1.0 / (1.0 + (-margin).exp());
        assert_relative_eq!(a.get(0, 0), expect, max_relative = 1e-12);
        assert_relative_eq!(a.get(0, 1), 1.0 - expect, max_relative = 1e-12);
    }

    #[test]
    fn zero_neighbor_user_gets_uniform_row() {
        let g = TripartiteGraph::new(2, 3, 1, vec![(0, 0)], vec![], vec![]).unwrap();
        let ctx = DenseMatrix::from_vec(3, 2, SeededVec::get(6));
        let r = relatedness_matrix(&ctx, false);
        let a = attention_weights(&g, &r, AttentionKind::Group, 0.2);
        for k in 0..3 {
            assert_relative_eq!(a.get(1, k), 1.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let g = TripartiteGraph::new(
            3,
            4,
            2,
            vec![(0, 0), (0, 3), (1, 2)],
            vec![(2, 0), (2, 1)],
            vec![],
        )
        .unwrap();
        let ctx_g = DenseMatrix::from_vec(4, 4, SeededVec::get(16));
        let ctx_i = DenseMatrix::from_vec(2, 4, SeededVec::get(8));
        for (ctx, kind) in [(ctx_g, AttentionKind::Group), (ctx_i, AttentionKind::Item)] {
            let r = relatedness_matrix(&ctx, false);
            let a = attention_weights(&g, &r, kind, 0.2);
            for u in 0..3 {
                let sum: f64 = a.row(u).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row {u} sums to {sum}");
            }
        }
    }
}
