//! Diversity-driven ensemble: K weak learners trained on bootstrap
//! resamples under cycling priors and tower depths, combined either by a
//! small meta-MLP trained on stacked member predictions or by simple
//! averaging.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bayes::PriorSpec;
use crate::data::{bootstrap, Interaction, RatingDataset};
use crate::error::{Error, Result};
use crate::model::trainer::{train_weak_learner, TrainStats};
use crate::model::{FrozenLearner, LearnerConfig, Provenance, WeakLearner};
use crate::nn::checkpoint::{load_into, read_checkpoint, write_model};
use crate::nn::{Activation, Mlp, MlpGrad, Optimizer, OptimizerKind};
use crate::seeds::{self, Stream};

pub use crate::model::PredictMode;

/// How member scores are combined into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Learned stacking MLP over the K member scores.
    MetaMlp,
    /// Arithmetic mean of the member scores.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub num_learners: usize,
    /// Resample size as a fraction of the training set (with replacement).
    pub bootstrap_fraction: f64,
    /// Member k trains under `prior_cycle[k mod len]`.
    pub prior_cycle: Vec<PriorSpec>,
    /// Member k uses hidden stack `depth_cycle[k mod len]`.
    pub depth_cycle: Vec<Vec<usize>>,
    /// Per-member seeds; empty means "derive K distinct seeds from `seed`".
    pub seeds: Vec<u64>,
    pub combine: CombineMode,
    /// Hidden widths of the meta-MLP (input K and output 1 are implied).
    pub meta_hidden: Vec<usize>,
    pub meta_learning_rate: f64,
    pub meta_epochs: usize,
    pub meta_batch_size: usize,
    /// When positive, this fraction of the training interactions is held
    /// out of every member's bootstrap source and used as the meta training
    /// set instead of the full (in-sample) training set. Off by default;
    /// the reference procedure trains the combiner in-sample.
    pub meta_holdout_fraction: f64,
    /// Template for member hyperparameters; prior, hidden stack, and seed
    /// are overridden per member.
    pub learner: LearnerConfig,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            num_learners: 10,
            bootstrap_fraction: 0.8,
            prior_cycle: PriorSpec::default_cycle(),
            depth_cycle: vec![vec![256], vec![256, 128], vec![256, 128, 64]],
            seeds: Vec::new(),
            combine: CombineMode::MetaMlp,
            meta_hidden: vec![32, 32],
            meta_learning_rate: 1e-3,
            meta_epochs: 100,
            meta_batch_size: 256,
            meta_holdout_fraction: 0.0,
            learner: LearnerConfig::default(),
            seed: 42,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_learners == 0 {
            return fail("num_learners must be positive".into());
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return fail(format!(
                "bootstrap_fraction {} must be in (0, 1]",
                self.bootstrap_fraction
            ));
        }
        if self.prior_cycle.is_empty() {
            return fail("prior_cycle must not be empty".into());
        }
        for p in &self.prior_cycle {
            p.validate()?;
        }
        if self.depth_cycle.is_empty() {
            return fail("depth_cycle must not be empty".into());
        }
        if self.depth_cycle.iter().flatten().any(|&d| d == 0) {
            return fail("depth_cycle widths must be positive".into());
        }
        if !self.seeds.is_empty() {
            if self.seeds.len() != self.num_learners {
                return fail(format!(
                    "seeds lists {} entries for {} learners",
                    self.seeds.len(),
                    self.num_learners
                ));
            }
            let mut sorted = self.seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.seeds.len() {
                return fail("member seeds must be pairwise distinct".into());
            }
        }
        if self.meta_hidden.iter().any(|&d| d == 0) {
            return fail("meta_hidden widths must be positive".into());
        }
        if !(self.meta_learning_rate.is_finite() && self.meta_learning_rate > 0.0) {
            return fail("meta_learning_rate must be > 0".into());
        }
        if self.meta_batch_size == 0 {
            return fail("meta_batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.meta_holdout_fraction) {
            return fail(format!(
                "meta_holdout_fraction {} must be in [0, 1)",
                self.meta_holdout_fraction
            ));
        }
        self.learner.validate()
    }

    /// Member seeds, deriving distinct defaults from the root seed when the
    /// explicit list is empty.
    pub fn resolved_seeds(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        (0..self.num_learners)
            .map(|k| seeds::derive(self.seed, Stream::LearnerInit, k as u64))
            .collect()
    }

    /// Fully resolved per-member configs (prior, depth, and seed applied).
    pub fn member_configs(&self) -> Vec<LearnerConfig> {
        let seeds = self.resolved_seeds();
        (0..self.num_learners)
            .map(|k| {
                let mut c = self.learner.clone();
                c.prior = self.prior_cycle[k % self.prior_cycle.len()].clone();
                c.hidden_dims = self.depth_cycle[k % self.depth_cycle.len()].clone();
                c.seed = seeds[k];
                c
            })
            .collect()
    }
}

/// Training history for a supermodel.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub members: Vec<TrainStats>,
    /// Meta-MLP MSE per epoch (empty in average mode).
    pub meta_mse: Vec<f64>,
    /// Number of (z, target) pairs the combiner was trained on.
    pub meta_training_pairs: usize,
}

/// K weak learners plus the optional meta combiner.
#[derive(Debug, Clone)]
pub struct SuperModel {
    pub config: EnsembleConfig,
    pub learners: Vec<WeakLearner>,
    /// Present iff `config.combine == MetaMlp`.
    pub meta: Option<Mlp>,
    /// Fingerprint of the original training dataset.
    pub dataset_fingerprint: String,
}

/// One combined prediction with its member breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    /// Rating-scale prediction (clamped to the scale).
    pub prediction: f64,
    /// Combined normalized score.
    pub score: f64,
    /// Per-member normalized scores (the meta input).
    pub member_scores: Vec<f64>,
    /// Per-member rating-scale predictions.
    pub member_predictions: Vec<f64>,
}

/// Split off the meta holdout: (learner source, meta set). With a zero
/// fraction both are the full dataset. Reproducible from (dataset, seed).
fn split_meta_holdout(
    dataset: &RatingDataset,
    fraction: f64,
    seed: u64,
) -> (RatingDataset, Vec<Interaction>) {
    if fraction <= 0.0 {
        return (dataset.clone(), dataset.interactions.clone());
    }
    let n = dataset.interactions.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = seeds::rng(seed, Stream::MetaTraining, 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut held: Vec<usize> = order[..k].to_vec();
    held.sort_unstable();
    let held_set: std::collections::HashSet<usize> = held.iter().copied().collect();
    let meta_set: Vec<Interaction> = held
        .iter()
        .map(|&i| dataset.interactions[i])
        .collect();
    let mut source = dataset.clone();
    source.interactions = dataset
        .interactions
        .iter()
        .enumerate()
        .filter(|(i, _)| !held_set.contains(i))
        .map(|(_, it)| *it)
        .collect();
    (source, meta_set)
}

/// Train a stacking MLP on member score vectors `z` against normalized
/// targets. Returns the trained MLP and the per-epoch MSE trace.
pub fn train_meta(
    z: &[Vec<f64>],
    targets: &[f64],
    hidden: &[usize],
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(Mlp, Vec<f64>)> {
    if z.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if z.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "meta training targets".into(),
            expected: z.len().to_string(),
            got: targets.len().to_string(),
        });
    }
    let k = z[0].len();
    let mut dims = vec![k];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Sigmoid);
    let mut rng = seeds::rng(seed, Stream::MetaTraining, 0);
    let mut mlp = Mlp::init(&dims, &acts, &mut rng);
    let mut opt = Optimizer::new(OptimizerKind::adam_default(), learning_rate, &mlp);

    let n = z.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sse_sum = 0.0;
        for (step, batch) in order.chunks(batch_size).enumerate() {
            let mut grad = MlpGrad::zeros_like(&mlp);
            let mut sse = 0.0;
            for &i in batch {
                if z[i].len() != k {
                    return Err(Error::ShapeMismatch {
                        context: format!("meta input row {i}"),
                        expected: k.to_string(),
                        got: z[i].len().to_string(),
                    });
                }
                let cache = mlp.forward_cached(&z[i]);
                let res = cache.output[0] - targets[i];
                sse += res * res;
                mlp.backward(&cache, &[res], &mut grad);
            }
            if !sse.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: sse,
                });
            }
            opt.step(&mut mlp, &grad)?;
            sse_sum += sse;
        }
        trace.push(sse_sum / n as f64);
    }
    Ok((mlp, trace))
}

/// Train the full ensemble per the stacking procedure: bootstrap resamples,
/// independent member training, then the combiner on stacked
/// deterministic-mode member scores.
pub fn train_supermodel(
    dataset: &RatingDataset,
    config: &EnsembleConfig,
) -> Result<(SuperModel, EnsembleStats)> {
    config.validate()?;
    if dataset.interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (source, meta_set) =
        split_meta_holdout(dataset, config.meta_holdout_fraction, config.seed);
    let source_fp = source.fingerprint();
    let member_cfgs = config.member_configs();

    let mut learners = Vec::with_capacity(config.num_learners);
    let mut stats = EnsembleStats::default();
    for (kth, member_cfg) in member_cfgs.iter().enumerate() {
        let boot_seed = seeds::derive(config.seed, Stream::Bootstrap, kth as u64);
        let resample = bootstrap(&source, config.bootstrap_fraction, boot_seed);
        log::info!(
            "training member {kth}: prior={} depth={:?} seed={} ({} resampled interactions)",
            member_cfg.prior.family_name(),
            member_cfg.hidden_dims,
            member_cfg.seed,
            resample.interactions.len()
        );
        let (mut learner, member_stats) = train_weak_learner(&resample, member_cfg)?;
        learner.provenance = Provenance::Bootstrap {
            seed: boot_seed,
            fraction: config.bootstrap_fraction,
        };
        learner.dataset_fingerprint = source_fp.clone();
        stats.members.push(member_stats);
        learners.push(learner);
    }

    let meta = match config.combine {
        CombineMode::Average => None,
        CombineMode::MetaMlp => {
            let frozen: Vec<FrozenLearner<'_>> =
                learners.iter().map(FrozenLearner::deterministic).collect();
            let mut z = Vec::with_capacity(meta_set.len());
            let mut targets = Vec::with_capacity(meta_set.len());
            for it in &meta_set {
                let row: Result<Vec<f64>> =
                    frozen.iter().map(|f| f.score(it.user, it.item)).collect();
                z.push(row?);
                targets.push(dataset.scale.normalize(it.rating));
            }
            stats.meta_training_pairs = z.len();
            let (mlp, trace) = train_meta(
                &z,
                &targets,
                &config.meta_hidden,
                config.meta_learning_rate,
                config.meta_epochs,
                config.meta_batch_size,
                config.seed,
            )?;
            stats.meta_mse = trace;
            Some(mlp)
        }
    };

    Ok((
        SuperModel {
            config: config.clone(),
            learners,
            meta,
            dataset_fingerprint: dataset.fingerprint(),
        },
        stats,
    ))
}

impl SuperModel {
    pub fn num_learners(&self) -> usize {
        self.learners.len()
    }

    /// Map K member scores to the ensemble score (meta forward or mean).
    pub fn combine_scores(&self, member_scores: &[f64]) -> f64 {
        match self.config.combine {
            CombineMode::Average => {
                member_scores.iter().sum::<f64>() / member_scores.len() as f64
            }
            CombineMode::MetaMlp => self.meta.as_ref().unwrap().forward(member_scores)[0],
        }
    }

    /// Combined prediction for one pair. Sampling mode applies per member.
    pub fn predict(&self, user: u32, item: u32, mode: &PredictMode) -> Result<EnsemblePrediction> {
        let member_scores: Vec<f64> = self
            .learners
            .iter()
            .map(|l| l.score_normalized(user, item, mode))
            .collect::<Result<_>>()?;
        let score = self.combine_scores(&member_scores);
        let scale = self.learners[0].scale;
        Ok(EnsemblePrediction {
            prediction: scale.denormalize(score),
            score,
            member_predictions: member_scores.iter().map(|&y| scale.denormalize(y)).collect(),
            member_scores,
        })
    }

    /// Normalized combined score (ranking key).
    pub fn score_normalized(&self, user: u32, item: u32, mode: &PredictMode) -> Result<f64> {
        let member_scores: Vec<f64> = self
            .learners
            .iter()
            .map(|l| l.score_normalized(user, item, mode))
            .collect::<Result<_>>()?;
        Ok(self.combine_scores(&member_scores))
    }

    /// Write the supermodel as a directory: a manifest plus one checkpoint
    /// per member and one for the combiner.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let manifest = serde_json::json!({
            "kind": "supermodel",
            "config": self.config,
            "dataset_fingerprint": self.dataset_fingerprint,
            "num_learners": self.learners.len(),
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?,
        )
        .map_err(io_err)?;
        for (k, learner) in self.learners.iter().enumerate() {
            learner.save(&dir.join(format!("learner_{k}.ckpt")))?;
        }
        if let Some(meta) = &self.meta {
            write_model(
                &dir.join("meta.ckpt"),
                &serde_json::json!({"kind": "meta_mlp"}),
                meta,
            )?;
        }
        Ok(())
    }

    /// Load a supermodel directory, rebuilding member input profiles from
    /// `dataset` (which must be the original training dataset).
    pub fn load(dir: &Path, dataset: &RatingDataset) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::Io {
            path: manifest_path.clone(),
            source: e,
        })?;
        let manifest: serde_json::Value = serde_json::from_str(&raw)
            .map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
        if manifest.get("kind").and_then(|v| v.as_str()) != Some("supermodel") {
            return Err(Error::Checkpoint(
                "manifest is not a supermodel manifest".into(),
            ));
        }
        let config: EnsembleConfig = serde_json::from_value(
            manifest
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("manifest missing config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("bad config in manifest: {e}")))?;
        config.validate()?;
        let fingerprint = manifest
            .get("dataset_fingerprint")
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_string();
        if dataset.fingerprint() != fingerprint {
            return Err(Error::DatasetMismatch(format!(
                "supermodel was trained on a dataset with fingerprint {fingerprint}, got {}",
                dataset.fingerprint()
            )));
        }

        let (source, _) = split_meta_holdout(dataset, config.meta_holdout_fraction, config.seed);
        let mut learners = Vec::with_capacity(config.num_learners);
        for k in 0..config.num_learners {
            learners.push(WeakLearner::load(
                &dir.join(format!("learner_{k}.ckpt")),
                &source,
            )?);
        }
        let meta = match config.combine {
            CombineMode::Average => None,
            CombineMode::MetaMlp => {
                let mut dims = vec![config.num_learners];
                dims.extend_from_slice(&config.meta_hidden);
                dims.push(1);
                let mut acts = vec![Activation::Relu; config.meta_hidden.len()];
                acts.push(Activation::Sigmoid);
                let mut rng = seeds::rng(config.seed, Stream::MetaTraining, 0);
                let mut mlp = Mlp::init(&dims, &acts, &mut rng);
                let (_, tensors) = read_checkpoint(&dir.join("meta.ckpt"))?;
                load_into(&mut mlp, &tensors)?;
                Some(mlp)
            }
        };
        Ok(Self {
            config,
            learners,
            meta,
            dataset_fingerprint: fingerprint,
        })
    }
}
