//! Minibatch training loop for a single weak learner.
//!
//! Each step draws one ε for both variational layers, scores the batch under
//! that draw, and minimizes
//!
//! ```text
//! loss = kl_weight · (log q(w) − log P(w)) + 0.5 · Σ (ŷ − t)²
//! ```
//!
//! where t is the normalized rating. Batch gradients are computed in a fixed
//! number of chunks merged in index order, so results do not depend on how
//! many threads rayon happens to use.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, RatingDataset};
use crate::error::{Error, Result};
use crate::model::{EpsDraw, LearnerConfig, LearnerGrad, MatchingKind, WeakLearner};
use crate::nn::{accumulate, Optimizer};
use crate::seeds::{self, Stream};

/// Per-epoch averages recorded during training.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean step loss (weighted KL + data term) per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean squared error on normalized targets per epoch.
    pub epoch_mse: Vec<f64>,
    /// Mean sampled KL per epoch (unweighted).
    pub epoch_kl: Vec<f64>,
}

/// Forward/backward for a slice of interactions under a fixed draw.
/// Returns the sum of squared residuals. `dropout_base`, when set, seeds a
/// fresh dropout stream per sample from its position in the batch.
fn chunk_pass(
    learner: &WeakLearner,
    samples: &[Interaction],
    offset: usize,
    noise: &crate::model::StepNoise,
    dropout_base: Option<u64>,
    grad: &mut LearnerGrad,
) -> Result<f64> {
    let mut sse = 0.0;
    for (j, it) in samples.iter().enumerate() {
        let mut drop_rng =
            dropout_base.map(|base| seeds::rng_from(seeds::mix(base, (offset + j) as u64)));
        let cache = learner.forward_pair(it.user, it.item, noise, drop_rng.as_mut())?;
        let t = learner.scale.normalize(it.rating);
        let res = cache.y - t;
        sse += res * res;
        learner.backward_pair(it.user, it.item, &cache, res, noise, grad);
    }
    Ok(sse)
}

/// Full step loss for a fixed draw, no dropout: weighted sampled KL plus
/// `0.5 Σ (ŷ − t)²`. This is the differentiable objective the finite
/// difference checks probe.
pub fn batch_elbo_loss(
    learner: &WeakLearner,
    batch: &[Interaction],
    eps: &EpsDraw,
    kl_weight: f64,
) -> Result<f64> {
    let noise = learner.materialize(eps);
    let mut sse = 0.0;
    for it in batch {
        let y = learner.forward_pair(it.user, it.item, &noise, None)?.y;
        let t = learner.scale.normalize(it.rating);
        sse += (y - t) * (y - t);
    }
    Ok(kl_weight * learner.kl(&noise) + 0.5 * sse)
}

/// Analytic gradient of [`batch_elbo_loss`] accumulated into `grad`;
/// returns the loss value.
pub fn batch_elbo_backward(
    learner: &WeakLearner,
    batch: &[Interaction],
    eps: &EpsDraw,
    kl_weight: f64,
    grad: &mut LearnerGrad,
) -> Result<f64> {
    let noise = learner.materialize(eps);
    let sse = chunk_pass(learner, batch, 0, &noise, None, grad)?;
    learner.kl_backward(&noise, kl_weight, grad);
    Ok(kl_weight * learner.kl(&noise) + 0.5 * sse)
}

/// Train `learner` in place on `dataset` using its embedded config.
pub fn train_in_place(learner: &mut WeakLearner, dataset: &RatingDataset) -> Result<TrainStats> {
    let n = dataset.interactions.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let cfg = learner.config.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, learner);
    let mut rng = seeds::rng(cfg.seed, Stream::LearnerTraining, 0);
    let num_batches = n.div_ceil(cfg.batch_size);
    let kl_w = cfg.kl_weight.unwrap_or(1.0 / num_batches as f64);
    let needs_dropout = cfg.matching == MatchingKind::AttentionMlp && cfg.dropout > 0.0;

    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut sse_sum = 0.0;
        let mut kl_sum = 0.0;

        for (step_in_epoch, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Interaction> = batch_idx
                .iter()
                .map(|&i| dataset.interactions[i])
                .collect();
            let eps = learner.draw_eps(&mut rng);
            let noise = learner.materialize(&eps);
            let dropout_base =
                needs_dropout.then(|| seeds::derive(cfg.seed, Stream::LearnerTraining, 1 + global_step));

            // Fixed chunk count; merge in chunk order for thread-count
            // independent float accumulation.
            let chunk_size = batch.len().div_ceil(cfg.grad_chunks);
            let chunk_results: Vec<Result<(LearnerGrad, f64)>> = batch
                .par_chunks(chunk_size)
                .enumerate()
                .map(|(c, samples)| {
                    let mut g = LearnerGrad::zeros_like(learner);
                    let sse = chunk_pass(
                        learner,
                        samples,
                        c * chunk_size,
                        &noise,
                        dropout_base,
                        &mut g,
                    )?;
                    Ok((g, sse))
                })
                .collect();

            let mut grad = LearnerGrad::zeros_like(learner);
            let mut sse = 0.0;
            for r in chunk_results {
                let (g, s) = r?;
                accumulate(&mut grad, &g);
                sse += s;
            }
            let kl = learner.kl(&noise);
            learner.kl_backward(&noise, kl_w, &mut grad);

            let step_loss = kl_w * kl + 0.5 * sse;
            if !step_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step_in_epoch,
                    value: step_loss,
                });
            }
            opt.step(learner, &grad)?;

            loss_sum += step_loss;
            sse_sum += sse;
            kl_sum += kl;
            global_step += 1;
        }

        stats.epoch_loss.push(loss_sum / num_batches as f64);
        stats.epoch_mse.push(sse_sum / n as f64);
        stats.epoch_kl.push(kl_sum / num_batches as f64);
        log::debug!(
            "epoch {epoch}: loss {:.6} mse {:.6} kl {:.3}",
            stats.epoch_loss[epoch],
            stats.epoch_mse[epoch],
            stats.epoch_kl[epoch]
        );
    }
    Ok(stats)
}

/// Build a learner from `dataset` and `config`, then train it.
pub fn train_weak_learner(
    dataset: &RatingDataset,
    config: &LearnerConfig,
) -> Result<(WeakLearner, TrainStats)> {
    if dataset.interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut learner = WeakLearner::init(dataset, config.clone())?;
    let stats = train_in_place(&mut learner, dataset)?;
    Ok((learner, stats))
}
