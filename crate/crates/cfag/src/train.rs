//! BPR training: triple sampling, loss and gradient assembly, the epoch
//! loop with early stopping on validation NDCG@10.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_against, EvalTarget};
use crate::graph::{DatasetSplit, TripartiteGraph};
use crate::model::{backward, final_embeds, forward, score, HyperParams, ModelParams, ScoreGrad};
use crate::numeric::{adam_step, AdamState, SeededRng};
use crate::scalar::{cast, Scalar};

/// One training triple: an observed (user, group) membership and a group the
/// user has not joined in the train split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: u32,
    pub pos_group: u32,
    pub neg_group: u32,
}

/// Optimization settings for [`fit`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_max: usize,
    /// Number of triples per gradient step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Early-stop after this many validation evaluations without improvement.
    pub patience: usize,
    /// Evaluate the validation split every this many epochs.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_max: 300,
            batch_size: 2048,
            learning_rate: 0.005,
            patience: 10,
            eval_every: 1,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Draw `batch_size` positives uniformly from the train edges, each paired
/// with a rejection-sampled negative group of the same user. Users joined to
/// every group are skipped and resampled.
pub fn sample_triples(
    train: &TripartiteGraph,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<Vec<BprTriple>> {
    let edges = train.ug_edges();
    if edges.is_empty() {
        return Err(Error::Data("cannot sample triples from empty train set".into()));
    }
    let n_groups = train.n_groups() as u32;
    let mut out = Vec::with_capacity(batch_size);
    while out.len() < batch_size {
        let (user, pos_group) = edges[rng.index(edges.len())];
        if train.groups_of_user(user as usize).len() >= n_groups as usize {
            // no valid negative exists for this user
            continue;
        }
        let neg_group = loop {
            let cand = rng.index(n_groups as usize) as u32;
            if !train.has_ug_edge(user, cand) {
                break cand;
            }
        };
        out.push(BprTriple {
            user,
            pos_group,
            neg_group,
        });
    }
    Ok(out)
}

/// Numerically-stable `-ln sigma(x) = softplus(-x)`.
fn neg_log_sigmoid<T: Scalar>(x: T) -> T {
    let neg = -x;
    neg.max(T::zero()) + (-neg.abs()).exp().ln_1p()
}

/// Mean BPR loss over equal-length positive/negative score arrays plus
/// `l2 * ||Theta||^2` over all trainable parameters.
pub fn bpr_loss<T: Scalar>(
    scores_pos: &[T],
    scores_neg: &[T],
    params: &ModelParams<T>,
    l2: f64,
) -> Result<T> {
    if scores_pos.len() != scores_neg.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} negative scores", scores_pos.len()),
            got: format!("{}", scores_neg.len()),
        });
    }
    if scores_pos.is_empty() {
        return Err(Error::Data("bpr loss over an empty batch".into()));
    }
    if !scores_pos.iter().chain(scores_neg).all(|s| s.is_finite()) {
        return Err(Error::NonFinite {
            context: "bpr scores".into(),
        });
    }
    let n = cast::<T>(scores_pos.len() as f64);
    let data: T = scores_pos
        .iter()
        .zip(scores_neg)
        .map(|(&p, &q)| neg_log_sigmoid(p - q))
        .sum();
    Ok(data / n + cast::<T>(l2) * params.squared_norm())
}

/// Loss and exact gradients of the regularized BPR objective on one batch.
/// Shared by [`train_step`] and the finite-difference validation suites.
pub fn bpr_gradients<T: Scalar>(
    params: &ModelParams<T>,
    graph: &TripartiteGraph,
    hp: &HyperParams,
    triples: &[BprTriple],
) -> Result<(T, ModelParams<T>)> {
    let trace = forward(params, graph, hp)?;
    let finals = final_embeds(&trace);
    let mut scores_pos = Vec::with_capacity(triples.len());
    let mut scores_neg = Vec::with_capacity(triples.len());
    for t in triples {
        let u = finals.user.row(t.user as usize);
        scores_pos.push(score(u, finals.group.row(t.pos_group as usize)));
        scores_neg.push(score(u, finals.group.row(t.neg_group as usize)));
    }
    let loss = bpr_loss(&scores_pos, &scores_neg, params, hp.l2)?;

    // d/dm of -ln sigma(m) is -sigma(-m); mean over the batch.
    let inv_n = T::one() / cast::<T>(triples.len() as f64);
    let mut score_grads = Vec::with_capacity(triples.len() * 2);
    for (t, (&p, &q)) in triples.iter().zip(scores_pos.iter().zip(&scores_neg)) {
        let margin = p - q;
        let w = -sigmoid(-margin) * inv_n;
        score_grads.push(ScoreGrad {
            user: t.user,
            group: t.pos_group,
            grad: w,
        });
        score_grads.push(ScoreGrad {
            user: t.user,
            group: t.neg_group,
            grad: -w,
        });
    }
    let mut grads = backward(params, graph, hp, &trace, &score_grads)?;

    // global L2 term: d/dtheta of l2 * ||Theta||^2
    let two_l2: T = cast(2.0 * hp.l2);
    if two_l2 != T::zero() {
        for ((_, g), (_, p)) in grads.named_tensors_mut().into_iter().zip(params.named_tensors())
        {
            g.add_scaled(p, two_l2);
        }
    }
    Ok((loss, grads))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Adam optimizer over all model tensors, aligned with
/// [`ModelParams::named_tensors`] order.
pub struct Optimizer<T> {
    states: Vec<AdamState<T>>,
    lr: T,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64) -> Self {
        let states = params
            .named_tensors()
            .iter()
            .map(|(_, m)| AdamState::new(m.rows() * m.cols()))
            .collect();
        Self {
            states,
            lr: cast(learning_rate),
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        let grad_tensors = grads.named_tensors();
        for (((_, p), (_, g)), state) in params
            .named_tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.states.iter_mut())
        {
            adam_step(p.as_mut_slice(), g.as_slice(), state, self.lr)?;
        }
        Ok(())
    }
}

/// One optimization step on a batch: forward, backward, Adam. Returns the
/// pre-update loss.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    batch: &[BprTriple],
    graph: &TripartiteGraph,
    hp: &HyperParams,
    opt: &mut Optimizer<T>,
) -> Result<T> {
    let (loss, grads) = bpr_gradients(params, graph, hp, batch)?;
    opt.apply(params, &grads)?;
    Ok(loss)
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_recall10: Option<f64>,
    pub val_ndcg10: Option<f64>,
    pub wall_ms: u64,
}

/// Output of [`fit`]: the best parameters and the per-epoch log.
pub struct FitResult<T> {
    pub params: ModelParams<T>,
    pub log: Vec<EpochLog>,
    /// Validation NDCG@10 of the returned parameters, when validation ran.
    pub best_val_ndcg10: Option<f64>,
}

/// Train up to `epochs_max` epochs (one epoch samples as many positives as
/// there are train edges), evaluating validation NDCG@10 every `eval_every`
/// epochs and keeping the best checkpoint. Stops after `patience`
/// evaluations without improvement. With an empty validation split the loop
/// runs to `epochs_max` and returns the final parameters.
pub fn fit<T: Scalar>(
    split: &DatasetSplit,
    hp: &HyperParams,
    config: &TrainConfig,
) -> Result<FitResult<T>> {
    hp.validate()?;
    config.validate()?;
    let graph = &split.train;
    let mut params: ModelParams<T> = ModelParams::init(
        hp,
        graph.n_users(),
        graph.n_groups(),
        graph.n_items(),
        config.seed,
    )?;
    let mut opt = Optimizer::new(&params, config.learning_rate);

    let epoch_positives = graph.ug_edges().len();
    let has_validation = !split.validation_ug.is_empty();
    let mut best: Option<(f64, ModelParams<T>)> = None;
    let mut evals_since_best = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=config.epochs_max {
        let start = Instant::now();
        let mut rng = SeededRng::derived(config.seed, epoch as u64);
        let mut remaining = epoch_positives;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        while remaining > 0 {
            let size = remaining.min(config.batch_size);
            let batch = sample_triples(graph, size, &mut rng)?;
            let loss = train_step(&mut params, &batch, graph, hp, &mut opt)?;
            loss_sum += loss.to_f64().unwrap();
            batches += 1;
            remaining -= size;
        }
        let mean_loss = loss_sum / batches.max(1) as f64;

        let mut entry = EpochLog {
            epoch,
            loss: mean_loss,
            val_recall10: None,
            val_ndcg10: None,
            wall_ms: 0,
        };
        let mut stop = false;
        if has_validation && epoch % config.eval_every == 0 {
            let report = evaluate_against(&params, split, hp, &[10], EvalTarget::Validation)?;
            let ndcg = report.ndcg[0];
            entry.val_recall10 = Some(report.recall[0]);
            entry.val_ndcg10 = Some(ndcg);
            let improved = best.as_ref().is_none_or(|(b, _)| ndcg > *b);
            if improved {
                best = Some((ndcg, params.clone()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= config.patience {
                    stop = true;
                }
            }
        }
        entry.wall_ms = start.elapsed().as_millis() as u64;
        log.push(entry);
        if stop {
            break;
        }
    }

    let (best_val, params) = match best {
        Some((v, p)) => (Some(v), p),
        None => (None, params),
    };
    params.check_finite()?;
    Ok(FitResult {
        params,
        log,
        best_val_ndcg10: best_val,
    })
}
