//! Contextual-embedding diagnostics: pre-softmax dot-product distribution
//! and the relatedness vs. common-user-ratio correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TripartiteGraph;
use crate::model::relatedness_matrix;
use crate::numeric::{dot, DenseMatrix};
use crate::scalar::Scalar;

/// Uniform-bin histogram over an observed value range.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` strictly increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    fn build(values: &[f64], bins: usize) -> Self {
        assert!(bins >= 1 && !values.is_empty());
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // degenerate range: one bin centered on the single value
        let (lo, hi, bins) = if min == max {
            (min - 0.5, max + 0.5, 1)
        } else {
            (min, max, bins)
        };
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        Self {
            edges,
            counts,
            total: values.len() as u64,
        }
    }

    /// The bin index holding the most mass.
    pub fn peak_bin(&self) -> usize {
        self.counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Whether `x` falls inside the given bin.
    pub fn bin_contains(&self, bin: usize, x: f64) -> bool {
        x >= self.edges[bin] && x <= self.edges[bin + 1]
    }
}

/// Histogram of `c_m . c_g` over all ordered pairs `m != g` (the pre-softmax
/// relatedness values).
pub fn dot_product_distribution<T: Scalar>(ctx: &DenseMatrix<T>, bins: usize) -> Result<Histogram> {
    let n = ctx.rows();
    if n < 2 {
        return Err(Error::Data(
            "dot-product distribution needs at least two contextual embeddings".into(),
        ));
    }
    if bins < 1 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut values = Vec::with_capacity(n * (n - 1));
    for m in 0..n {
        for g in 0..n {
            if m != g {
                values.push(dot(ctx.row(m), ctx.row(g)).to_f64().unwrap());
            }
        }
    }
    Ok(Histogram::build(&values, bins))
}

/// Jaccard overlap of two groups' member sets; 0 when the union is empty.
pub fn common_user_ratio(graph: &TripartiteGraph, g_a: usize, g_b: usize) -> f64 {
    let a = graph.users_of_group(g_a);
    let b = graph.users_of_group(g_b);
    // both adjacency lists are sorted
    let (mut i, mut j, mut inter) = (0usize, 0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One decile of group pairs sorted by relatedness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecileRow {
    pub decile: usize,
    pub mean_relatedness: f64,
    pub mean_common_user_ratio: f64,
    pub pair_count: usize,
}

/// Decile aggregation of relatedness against membership overlap, with
/// Pearson coefficients over the decile means and over the raw pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub deciles: Vec<DecileRow>,
    /// Pearson over the 10 decile aggregates, as plotted; `None` when the
    /// relatedness variance degenerates to zero.
    pub pearson_deciles: Option<f64>,
    /// Pearson over all raw pairs.
    pub pearson_pairs: Option<f64>,
    pub regression_slope: Option<f64>,
    pub regression_intercept: Option<f64>,
    pub degenerate_variance: bool,
}

/// Pearson correlation; `None` when either variance vanishes.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Least-squares slope and intercept of `y` on `x`.
fn regression(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Per unordered group pair: relatedness (softmax-normalized, symmetrized
/// over the two orientations) and the common-user ratio.
pub fn relatedness_ratio_pairs<T: Scalar>(
    graph: &TripartiteGraph,
    ctx_group: &DenseMatrix<T>,
    row_norm: bool,
) -> Result<Vec<(f64, f64)>> {
    let n = graph.n_groups();
    if ctx_group.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} contextual group embeddings"),
            got: format!("{}", ctx_group.rows()),
        });
    }
    let rel = relatedness_matrix(ctx_group, row_norm);
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            let r = 0.5
                * (rel.get(a, b).to_f64().unwrap() + rel.get(b, a).to_f64().unwrap());
            pairs.push((r, common_user_ratio(graph, a, b)));
        }
    }
    Ok(pairs)
}

/// Decile aggregation and correlation over precomputed (relatedness, ratio)
/// pairs.
pub fn correlation_from_pairs(pairs: &[(f64, f64)]) -> Result<CorrelationReport> {
    if pairs.len() < 10 {
        return Err(Error::Data(format!(
            "correlation needs at least 10 group pairs, got {}",
            pairs.len()
        )));
    }
    let mut pairs = pairs.to_vec();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let base = pairs.len() / 10;
    let extra = pairs.len() % 10;
    let mut deciles = Vec::with_capacity(10);
    let mut offset = 0;
    for d in 0..10 {
        let size = base + usize::from(d < extra);
        let chunk = &pairs[offset..offset + size];
        offset += size;
        deciles.push(DecileRow {
            decile: d + 1,
            mean_relatedness: chunk.iter().map(|p| p.0).sum::<f64>() / size as f64,
            mean_common_user_ratio: chunk.iter().map(|p| p.1).sum::<f64>() / size as f64,
            pair_count: size,
        });
    }

    let dx: Vec<f64> = deciles.iter().map(|d| d.mean_relatedness).collect();
    let dy: Vec<f64> = deciles.iter().map(|d| d.mean_common_user_ratio).collect();
    let px: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let py: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let pearson_deciles = pearson(&dx, &dy);
    let reg = regression(&dx, &dy);
    Ok(CorrelationReport {
        deciles,
        pearson_deciles,
        pearson_pairs: pearson(&px, &py),
        regression_slope: reg.map(|r| r.0),
        regression_intercept: reg.map(|r| r.1),
        degenerate_variance: pearson_deciles.is_none(),
    })
}

/// Sort all unordered group pairs by relatedness, split into 10 near-equal
/// deciles, and correlate mean relatedness against mean common-user ratio.
pub fn relatedness_vs_ratio<T: Scalar>(
    graph: &TripartiteGraph,
    ctx_group: &DenseMatrix<T>,
    row_norm: bool,
) -> Result<CorrelationReport> {
    correlation_from_pairs(&relatedness_ratio_pairs(graph, ctx_group, row_norm)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TripartiteGraph;

    #[test]
    fn identical_columns_collapse_to_one_bin_at_one() {
        // all-equal unit vectors: every pairwise dot is exactly 1
        let ctx = DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let h = dot_product_distribution(&ctx, 50).unwrap();
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.total, 6); // n(n-1) ordered pairs
        assert!(h.bin_contains(0, 1.0));
    }

    #[test]
    fn orthogonal_columns_mass_at_zero() {
        let ctx = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let h = dot_product_distribution(&ctx, 10).unwrap();
        assert!(h.bin_contains(h.peak_bin(), 0.0));
        assert_eq!(h.total, 2);
    }

    #[test]
    fn histogram_counts_sum_to_total() {
        let ctx = DenseMatrix::<f64>::from_vec(
            5,
            3,
            crate::numeric::SeededRng::new(2).uniform_vec(15, -1.0, 1.0),
        );
        let h = dot_product_distribution(&ctx, 7).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), h.total);
        assert_eq!(h.total, 20);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_single_group() {
        let ctx = DenseMatrix::from_vec(1, 2, vec![1.0, 0.0]);
        assert!(dot_product_distribution(&ctx, 10).is_err());
    }

    fn membership_graph(groups: &[&[u32]]) -> TripartiteGraph {
        let mut ug = Vec::new();
        let mut max_user = 0;
        for (g, members) in groups.iter().enumerate() {
            for &u in *members {
                ug.push((u, g as u32));
                max_user = max_user.max(u);
            }
        }
        TripartiteGraph::new(max_user as usize + 1, groups.len(), 1, ug, vec![], vec![]).unwrap()
    }

    #[test]
    fn common_user_ratio_examples() {
        let g = membership_graph(&[&[1, 2], &[2, 3], &[1, 2], &[4]]);
        assert!((common_user_ratio(&g, 0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(common_user_ratio(&g, 0, 2), 1.0);
        assert_eq!(common_user_ratio(&g, 0, 3), 0.0);
        // symmetric
        assert_eq!(
            common_user_ratio(&g, 0, 1),
            common_user_ratio(&g, 1, 0)
        );
    }

    #[test]
    fn empty_union_is_zero() {
        let g = TripartiteGraph::new(1, 2, 1, vec![], vec![(0, 0)], vec![]).unwrap();
        assert_eq!(common_user_ratio(&g, 0, 1), 0.0);
    }

    #[test]
    fn constant_relatedness_flags_degenerate_variance() {
        // identical contextual embeddings: all relatedness values equal
        let groups: Vec<Vec<u32>> = (0..6).map(|g| vec![g as u32]).collect();
        let refs: Vec<&[u32]> = groups.iter().map(|v| v.as_slice()).collect();
        let graph = membership_graph(&refs);
        let ctx = DenseMatrix::from_vec(6, 2, [0.3, 0.1].repeat(6));
        let report = relatedness_vs_ratio(&graph, &ctx, false).unwrap();
        assert!(report.degenerate_variance);
        assert!(report.pearson_deciles.is_none());
    }

    #[test]
    fn decile_counts_differ_by_at_most_one() {
        let groups: Vec<Vec<u32>> = (0..7).map(|g| vec![g as u32, (g + 1) as u32]).collect();
        let refs: Vec<&[u32]> = groups.iter().map(|v| v.as_slice()).collect();
        let graph = membership_graph(&refs);
        let ctx = DenseMatrix::<f64>::from_vec(
            7,
            3,
            crate::numeric::SeededRng::new(8).uniform_vec(21, -1.0, 1.0),
        );
        let report = relatedness_vs_ratio(&graph, &ctx, false).unwrap();
        let min = report.deciles.iter().map(|d| d.pair_count).min().unwrap();
        let max = report.deciles.iter().map(|d| d.pair_count).max().unwrap();
        assert!(max - min <= 1);
        assert_eq!(
            report.deciles.iter().map(|d| d.pair_count).sum::<usize>(),
            7 * 6 / 2
        );
    }

    #[test]
    fn pearson_invariant_under_affine_rescale() {
        let xs = [0.1, 0.4, 0.2, 0.9, 0.6];
        let ys = [1.0, 2.2, 1.4, 3.9, 2.8];
        let scaled: Vec<f64> = xs.iter().map(|x| 42.0 * x - 7.0).collect();
        let a = pearson(&xs, &ys).unwrap();
        let b = pearson(&scaled, &ys).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
