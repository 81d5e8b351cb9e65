//! Ranking protocol and metrics: per-user full ranking over non-interacted
//! groups, Recall@K and NDCG@K.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DatasetSplit;
use crate::model::{final_embeds, forward, HyperParams, ModelParams};
use crate::numeric::{dot, DenseMatrix};
use crate::scalar::Scalar;

/// Per-user metric row.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct UserEval {
    pub user_id: u32,
    pub test_size: usize,
    /// One value per cutoff, aligned with `EvalReport::cutoffs`.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

/// Aggregated ranking metrics; aggregates are arithmetic means over the
/// per-user rows. Users with empty target sets are excluded from both.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub evaluated_users: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub per_user: Vec<UserEval>,
}

/// Which held-out edge set to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    /// Test edges; train and validation groups are excluded from candidates.
    Test,
    /// Validation edges; train groups are excluded from candidates.
    Validation,
}

/// Rank all groups not in `exclude` by inner-product score, descending;
/// ties break toward the smaller group id. `exclude` must be sorted.
pub fn rank_groups<T: Scalar>(
    user_embed: &[T],
    group_embeds: &DenseMatrix<T>,
    exclude: &[u32],
) -> Result<Vec<u32>> {
    let n_groups = group_embeds.rows();
    if exclude.len() >= n_groups {
        return Err(Error::Data("no candidate groups left after exclusion".into()));
    }
    let mut scored: Vec<(T, u32)> = (0..n_groups as u32)
        .filter(|g| exclude.binary_search(g).is_err())
        .map(|g| (dot(user_embed, group_embeds.row(g as usize)), g))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, g)| g).collect())
}

/// `|top-K intersect test| / |test|`. The test set must be non-empty and sorted.
pub fn recall_at_k(ranked: &[u32], test: &[u32], k: usize) -> f64 {
    assert!(!test.is_empty(), "recall over an empty test set");
    let hits = ranked
        .iter()
        .take(k)
        .filter(|g| test.binary_search(g).is_ok())
        .count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG@K: DCG sums `1/log2(rank+1)` over hits in the
/// top-K; the ideal DCG places `min(|test|, K)` hits at the top.
pub fn ndcg_at_k(ranked: &[u32], test: &[u32], k: usize) -> f64 {
    assert!(!test.is_empty(), "ndcg over an empty test set");
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, g)| test.binary_search(g).is_ok())
        .map(|(idx, _)| 1.0 / ((idx + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..test.len().min(k))
        .map(|idx| 1.0 / ((idx + 2) as f64).log2())
        .sum();
    dcg / ideal
}

fn targets_by_user(edges: &[(u32, u32)]) -> BTreeMap<u32, Vec<u32>> {
    let mut map: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(u, g) in edges {
        map.entry(u).or_default().push(g);
    }
    for v in map.values_mut() {
        v.sort_unstable();
    }
    map
}

/// Rank and score final embeddings against per-user target sets. The
/// per-user work parallelizes against the immutable embeddings with a fixed
/// reduction order; `exclude_for` must return the user's sorted exclusion
/// list.
pub fn evaluate_embeddings<T: Scalar>(
    user_embeds: &DenseMatrix<T>,
    group_embeds: &DenseMatrix<T>,
    targets: &BTreeMap<u32, Vec<u32>>,
    exclude_for: impl Fn(u32) -> Vec<u32> + Sync,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    if targets.is_empty() {
        return Err(Error::Data("evaluation target set is empty".into()));
    }
    let rows: Result<Vec<UserEval>> = targets
        .par_iter()
        .map(|(&u, test)| {
            let exclude = exclude_for(u);
            let ranked = rank_groups(user_embeds.row(u as usize), group_embeds, &exclude)?;
            Ok(UserEval {
                user_id: u,
                test_size: test.len(),
                recall: cutoffs.iter().map(|&k| recall_at_k(&ranked, test, k)).collect(),
                ndcg: cutoffs.iter().map(|&k| ndcg_at_k(&ranked, test, k)).collect(),
            })
        })
        .collect();
    let per_user = rows?;

    let n = per_user.len() as f64;
    let mean_of = |pick: fn(&UserEval) -> &Vec<f64>| -> Vec<f64> {
        (0..cutoffs.len())
            .map(|i| per_user.iter().map(|r| pick(r)[i]).sum::<f64>() / n)
            .collect()
    };
    Ok(EvalReport {
        cutoffs: cutoffs.to_vec(),
        evaluated_users: per_user.len(),
        recall: mean_of(|r| &r.recall),
        ndcg: mean_of(|r| &r.ndcg),
        per_user,
    })
}

/// Evaluate ranking metrics for the chosen target split: one forward pass
/// over the train graph, then per-user ranking with the standard
/// exclusions (train groups; plus validation groups for test evaluation).
pub fn evaluate_against<T: Scalar>(
    params: &ModelParams<T>,
    split: &DatasetSplit,
    hp: &HyperParams,
    cutoffs: &[usize],
    target: EvalTarget,
) -> Result<EvalReport> {
    let edges = match target {
        EvalTarget::Test => &split.test_ug,
        EvalTarget::Validation => &split.validation_ug,
    };
    if edges.is_empty() {
        return Err(Error::Data("evaluation target set is empty".into()));
    }
    let trace = forward(params, &split.train, hp)?;
    let finals = final_embeds(&trace);
    let validation = targets_by_user(&split.validation_ug);
    let targets = targets_by_user(edges);
    evaluate_embeddings(
        &finals.user,
        &finals.group,
        &targets,
        |u| {
            let mut exclude: Vec<u32> = split.train.groups_of_user(u as usize).to_vec();
            if target == EvalTarget::Test {
                if let Some(v) = validation.get(&u) {
                    exclude.extend_from_slice(v);
                    exclude.sort_unstable();
                }
            }
            exclude
        },
        cutoffs,
    )
}

/// Test-split evaluation with the standard exclusions.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    split: &DatasetSplit,
    hp: &HyperParams,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    evaluate_against(params, split, hp, cutoffs, EvalTarget::Test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TripartiteGraph;

    fn embeds(rows: Vec<Vec<f64>>) -> DenseMatrix<f64> {
        let cols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        DenseMatrix::from_vec(rows.len(), cols, flat)
    }

    #[test]
    fn ranking_sorts_descending_with_id_ties() {
        let groups = embeds(vec![vec![2.0], vec![1.0], vec![2.0]]);
        let ranked = rank_groups(&[1.0], &groups, &[]).unwrap();
        assert_eq!(ranked, vec![0, 2, 1]); // equal scores: lower id first
    }

    #[test]
    fn ranking_excludes_train_groups() {
        let groups = embeds(vec![vec![2.0], vec![1.0]]);
        let ranked = rank_groups(&[1.0], &groups, &[0]).unwrap();
        assert_eq!(ranked, vec![1]);
        assert!(rank_groups(&[1.0], &groups, &[0, 1]).is_err());
    }

    #[test]
    fn recall_examples() {
        let ranked: Vec<u32> = (0..10).collect();
        assert_eq!(recall_at_k(&ranked, &[3, 17], 10), 0.5);
        assert_eq!(recall_at_k(&ranked, &[1, 2], 10), 1.0);
        assert_eq!(recall_at_k(&ranked, &[42], 10), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let ranked: Vec<u32> = (0..10).collect();
        // single relevant at rank 1
        assert_eq!(ndcg_at_k(&ranked, &[0], 10), 1.0);
        // single relevant at rank 2 -> 1/log2(3)
        let got = ndcg_at_k(&ranked, &[1], 10);
        assert!((got - 1.0 / 3.0_f64.log2()).abs() < 1e-12);
        assert!((got - 0.6309297535714574).abs() < 1e-12);
        // relevant item outside the cutoff
        assert_eq!(ndcg_at_k(&ranked, &[9], 5), 0.0);
    }

    #[test]
    fn metrics_monotone_in_k() {
        let ranked: Vec<u32> = (0..20).collect();
        let test = [2, 7, 13];
        let mut prev_r = 0.0;
        let mut prev_n = 0.0;
        for k in 1..=20 {
            let r = recall_at_k(&ranked, &test, k);
            let n = ndcg_at_k(&ranked, &test, k);
            assert!(r >= prev_r && n >= prev_n);
            prev_r = r;
            prev_n = n;
        }
    }

    #[test]
    fn ranking_invariant_under_positive_scaling() {
        let groups = embeds(vec![vec![0.3, -1.0], vec![2.0, 0.4], vec![-0.2, 0.9]]);
        let u = [0.7, 0.2];
        let scaled: Vec<f64> = u.iter().map(|x| x * 3.5).collect();
        assert_eq!(
            rank_groups(&u, &groups, &[]).unwrap(),
            rank_groups(&scaled, &groups, &[]).unwrap()
        );
    }

    fn eval_fixture() -> (DatasetSplit, HyperParams) {
        let train = TripartiteGraph::new(
            2,
            4,
            2,
            vec![(0, 0), (1, 1)],
            vec![(0, 0), (1, 1)],
            vec![(0, 0)],
        )
        .unwrap();
        let split = DatasetSplit {
            train,
            validation_ug: vec![(0, 3)],
            test_ug: vec![(0, 1), (1, 2)],
        };
        let hp = HyperParams {
            embed_dim: 4,
            ..HyperParams::default()
        };
        (split, hp)
    }

    #[test]
    fn aggregates_equal_mean_of_rows() {
        let (split, hp) = eval_fixture();
        let params: ModelParams<f64> =
            ModelParams::init(&hp, 2, 4, 2, 3).unwrap();
        let report = evaluate(&params, &split, &hp, &[1, 2]).unwrap();
        assert_eq!(report.evaluated_users, 2);
        for i in 0..2 {
            let mean: f64 = report.per_user.iter().map(|r| r.recall[i]).sum::<f64>()
                / report.per_user.len() as f64;
            assert!((report.recall[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn excluded_groups_never_ranked() {
        let (split, hp) = eval_fixture();
        let params: ModelParams<f64> =
            ModelParams::init(&hp, 2, 4, 2, 4).unwrap();
        let trace = forward(&params, &split.train, &hp).unwrap();
        let finals = final_embeds(&trace);
        // user 0 trains on group 0 and validates on group 3
        let ranked = rank_groups(finals.user.row(0), &finals.group, &[0, 3]).unwrap();
        assert!(!ranked.contains(&0) && !ranked.contains(&3));
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn perfect_embeddings_score_one_everywhere() {
        // every user's test groups get overwhelming scores
        let mut users = DenseMatrix::zeros(3, 4);
        let mut groups = DenseMatrix::zeros(5, 4);
        let mut targets: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        targets.insert(0, vec![1, 2]);
        targets.insert(1, vec![3]);
        targets.insert(2, vec![0, 4]);
        for (u, tests) in &targets {
            users.set(*u as usize, *u as usize, 1.0);
            for g in tests {
                groups.set(*g as usize, *u as usize, 1e9);
            }
        }
        let report =
            evaluate_embeddings(&users, &groups, &targets, |_| vec![], &[1, 2, 10]).unwrap();
        // recall@1 for two-target users is 0.5; every other metric is ideal
        assert_eq!(report.recall[2], 1.0);
        assert_eq!(report.ndcg[1], 1.0);
        assert_eq!(report.ndcg[2], 1.0);
        assert_eq!(report.evaluated_users, 3);
    }

    #[test]
    fn random_embeddings_give_half_recall_at_one_over_two_groups() {
        // one user, two candidate groups, one test group: by symmetry the
        // hit rate over many seeds is ~1/2
        let train =
            TripartiteGraph::new(1, 2, 1, vec![(0, 0)], vec![(0, 0)], vec![]).unwrap();
        // candidate set must contain both groups: no exclusions
        let hp = HyperParams {
            embed_dim: 4,
            ..HyperParams::default()
        };
        let mut hits = 0usize;
        let seeds = 500;
        for seed in 0..seeds {
            let params: ModelParams<f64> = ModelParams::init(&hp, 1, 2, 1, seed).unwrap();
            let trace = forward(&params, &train, &hp).unwrap();
            let finals = final_embeds(&trace);
            let ranked = rank_groups(finals.user.row(0), &finals.group, &[]).unwrap();
            if ranked[0] == 1 {
                hits += 1;
            }
        }
        let rate = hits as f64 / seeds as f64;
        assert!((rate - 0.5).abs() < 0.06, "hit rate {rate}");
    }
}
