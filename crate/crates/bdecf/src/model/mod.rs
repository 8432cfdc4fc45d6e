//! Two-tower rating model with a variational last layer per tower and a
//! configurable matching head.
//!
//! The user tower consumes the user's normalized rating row over items, the
//! item tower the item's column over users. Each tower ends in a
//! [`GaussianVariationalLayer`] producing the embedding, so every forward
//! pass is tied to a noise draw ([`EpsDraw`]); ε = 0 gives the posterior
//! mean. The matching head combines the two embeddings into a [0, 1] score
//! that de-normalizes to the rating scale.

pub mod attention;
pub mod trainer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bayes::{BayesGrad, GaussianVariationalLayer, PriorSpec, SampledWeights};
use crate::data::{bootstrap, RatingDataset, RatingScale};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_model};
use crate::nn::OptimizerKind;
use crate::nn::{
    Activation, DenseGrad, DenseLayer, Mlp, MlpCache, MlpGrad, Parameterized, SparseDense,
    SparseDenseGrad, TensorMut, TensorRef,
};
use crate::seeds::{self, Stream};

pub use attention::{AttentionBlock, AttentionCache, AttentionGrad};
pub use trainer::{train_in_place, train_weak_learner, TrainStats};

/// How the two tower embeddings are combined into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingKind {
    /// Element-wise product, tokenized self-attention, then the MLP.
    AttentionMlp,
    /// Element-wise product straight into the MLP (attention removed).
    MlpOnly,
    /// Cosine similarity mapped to [0, 1]; no trainable head.
    Cosine,
    /// Concatenated embeddings into the MLP.
    ConcatMlp,
}

impl MatchingKind {
    pub fn name(&self) -> &'static str {
        match self {
            MatchingKind::AttentionMlp => "attention_mlp",
            MatchingKind::MlpOnly => "mlp_only",
            MatchingKind::Cosine => "cosine",
            MatchingKind::ConcatMlp => "concat_mlp",
        }
    }
}

/// Hyperparameters for one weak learner. Input dimensions come from the
/// dataset at build time, not from this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// ReLU stack per tower, e.g. `[256, 128]`; may be empty.
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    /// Tokens the embedding product is reshaped into for attention.
    pub num_tokens: usize,
    pub num_heads: usize,
    /// Dropout rate on attention weights during training.
    pub dropout: f64,
    pub matching: MatchingKind,
    /// Hidden widths of the prediction MLP (output layer is appended).
    pub mlp_hidden: Vec<usize>,
    pub prior: PriorSpec,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight on the sampled KL term per step; `None` means
    /// 1 / number-of-minibatches.
    pub kl_weight: Option<f64>,
    /// Fixed number of gradient chunks per batch. Chunk results merge in
    /// index order, so the outcome is independent of thread count.
    pub grad_chunks: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![256, 128],
            embedding_dim: 64,
            num_tokens: 8,
            num_heads: 4,
            dropout: 0.1,
            matching: MatchingKind::AttentionMlp,
            mlp_hidden: vec![32],
            prior: PriorSpec::gsm_default(),
            optimizer: OptimizerKind::adam_default(),
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 30,
            kl_weight: None,
            grad_chunks: 4,
            seed: 42,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive".into());
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return fail("hidden_dims entries must be positive".into());
        }
        if self.matching == MatchingKind::AttentionMlp {
            if self.num_tokens == 0 || self.num_heads == 0 {
                return fail("num_tokens and num_heads must be positive".into());
            }
            if self.embedding_dim % self.num_tokens != 0 {
                return fail(format!(
                    "num_tokens {} must divide embedding_dim {}",
                    self.num_tokens, self.embedding_dim
                ));
            }
            let d_model = self.embedding_dim / self.num_tokens;
            if d_model % self.num_heads != 0 {
                return fail(format!(
                    "num_heads {} must divide token width {d_model}",
                    self.num_heads
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.mlp_hidden.iter().any(|&d| d == 0) {
            return fail("mlp_hidden entries must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.grad_chunks == 0 {
            return fail("grad_chunks must be positive".into());
        }
        if let Some(k) = self.kl_weight {
            if !(k.is_finite() && k >= 0.0) {
                return fail(format!("kl_weight {k} must be finite and >= 0"));
            }
        }
        self.prior.validate()
    }

    fn mlp_input_dim(&self) -> usize {
        match self.matching {
            MatchingKind::ConcatMlp => 2 * self.embedding_dim,
            _ => self.embedding_dim,
        }
    }
}

/// One tower: optional sparse input layer, dense ReLU stack, variational
/// output layer.
#[derive(Debug, Clone)]
pub struct Tower {
    pub first: Option<SparseDense>,
    pub hidden: Vec<DenseLayer>,
    pub bayes: GaussianVariationalLayer,
}

#[derive(Debug, Clone)]
pub struct TowerCache {
    /// Output of the sparse layer followed by each dense layer.
    pub acts: Vec<Vec<f64>>,
    /// Densified input, kept only when the tower has no hidden stack.
    pub dense_input: Option<Vec<f64>>,
    pub emb: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TowerGrad {
    pub first: Option<SparseDenseGrad>,
    pub hidden: Vec<DenseGrad>,
    pub bayes: BayesGrad,
}

impl Tower {
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        embedding_dim: usize,
        prior: PriorSpec,
        rng: &mut impl Rng,
    ) -> Self {
        if hidden_dims.is_empty() {
            return Self {
                first: None,
                hidden: Vec::new(),
                bayes: GaussianVariationalLayer::init(input_dim, embedding_dim, prior, rng),
            };
        }
        let first = SparseDense::init(input_dim, hidden_dims[0], Activation::Relu, rng);
        let hidden = hidden_dims
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], Activation::Relu, rng))
            .collect();
        let bayes = GaussianVariationalLayer::init(
            *hidden_dims.last().unwrap(),
            embedding_dim,
            prior,
            rng,
        );
        Self {
            first: Some(first),
            hidden,
            bayes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.first
            .as_ref()
            .map(|f| f.in_dim)
            .unwrap_or(self.bayes.in_dim)
    }

    /// `x` is a sparse profile (index, normalized rating), indices ascending.
    pub fn forward(&self, x: &[(u32, f64)], s: &SampledWeights) -> TowerCache {
        match &self.first {
            Some(first) => {
                let mut acts = Vec::with_capacity(1 + self.hidden.len());
                acts.push(first.forward(x));
                for layer in &self.hidden {
                    let next = layer.forward(acts.last().unwrap());
                    acts.push(next);
                }
                let emb = self.bayes.forward(acts.last().unwrap(), s);
                TowerCache {
                    acts,
                    dense_input: None,
                    emb,
                }
            }
            None => {
                let mut dense = vec![0.0; self.bayes.in_dim];
                for &(i, v) in x {
                    dense[i as usize] = v;
                }
                let emb = self.bayes.forward(&dense, s);
                TowerCache {
                    acts: Vec::new(),
                    dense_input: Some(dense),
                    emb,
                }
            }
        }
    }

    /// Deterministic input to the variational layer: the last hidden
    /// activation, or the densified profile when there is no hidden stack.
    pub fn hidden_state(&self, x: &[(u32, f64)]) -> Vec<f64> {
        match &self.first {
            Some(first) => {
                let mut h = first.forward(x);
                for layer in &self.hidden {
                    h = layer.forward(&h);
                }
                h
            }
            None => {
                let mut dense = vec![0.0; self.bayes.in_dim];
                for &(i, v) in x {
                    dense[i as usize] = v;
                }
                dense
            }
        }
    }

    pub fn backward(
        &self,
        x: &[(u32, f64)],
        cache: &TowerCache,
        demb: &[f64],
        s: &SampledWeights,
        grad: &mut TowerGrad,
    ) {
        let h: &[f64] = match &cache.dense_input {
            Some(d) => d,
            None => cache.acts.last().unwrap(),
        };
        let mut dh = self.bayes.backward(h, demb, s, &mut grad.bayes);
        for j in (0..self.hidden.len()).rev() {
            dh = self.hidden[j].backward(&cache.acts[j], &cache.acts[j + 1], &dh, &mut grad.hidden[j]);
        }
        if let Some(first) = &self.first {
            first.backward(x, &cache.acts[0], &dh, grad.first.as_mut().unwrap());
        }
    }

    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        if let Some(first) = &self.first {
            out.extend(first.tensors_prefixed(&format!("{prefix}.input")));
        }
        for (j, layer) in self.hidden.iter().enumerate() {
            out.extend(layer.tensors_prefixed(&format!("{prefix}.h{j}")));
        }
        out.extend(self.bayes.tensors_prefixed(&format!("{prefix}.out")));
        out
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        if let Some(first) = &mut self.first {
            out.extend(first.tensors_mut_prefixed(&format!("{prefix}.input")));
        }
        for (j, layer) in self.hidden.iter_mut().enumerate() {
            out.extend(layer.tensors_mut_prefixed(&format!("{prefix}.h{j}")));
        }
        out.extend(self.bayes.tensors_mut_prefixed(&format!("{prefix}.out")));
        out
    }
}

impl TowerGrad {
    pub fn zeros_like(tower: &Tower) -> Self {
        Self {
            first: tower.first.as_ref().map(SparseDenseGrad::zeros_like),
            hidden: tower.hidden.iter().map(DenseGrad::zeros_like).collect(),
            bayes: BayesGrad::zeros_like(&tower.bayes),
        }
    }

    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        if let Some(first) = &self.first {
            out.extend(first.tensors_prefixed(&format!("{prefix}.input")));
        }
        for (j, layer) in self.hidden.iter().enumerate() {
            out.extend(layer.tensors_prefixed(&format!("{prefix}.h{j}")));
        }
        out.extend(self.bayes.tensors_prefixed(&format!("{prefix}.out")));
        out
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        if let Some(first) = &mut self.first {
            out.extend(first.tensors_mut_prefixed(&format!("{prefix}.input")));
        }
        for (j, layer) in self.hidden.iter_mut().enumerate() {
            out.extend(layer.tensors_mut_prefixed(&format!("{prefix}.h{j}")));
        }
        out.extend(self.bayes.tensors_mut_prefixed(&format!("{prefix}.out")));
        out
    }
}

/// How a learner's training interactions relate to the source dataset, so a
/// checkpoint can rebuild its input profiles exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Trained on the source dataset as-is.
    Direct,
    /// Trained on a bootstrap resample of the source dataset.
    Bootstrap { seed: u64, fraction: f64 },
}

/// Standard-normal draws for both variational layers, one per training step.
/// Holding ε (rather than materialized weights) keeps the loss a pure
/// function of the parameters for a fixed draw.
#[derive(Debug, Clone)]
pub struct EpsDraw {
    pub user_w: Vec<f64>,
    pub user_b: Vec<f64>,
    pub item_w: Vec<f64>,
    pub item_b: Vec<f64>,
}

/// Materialized weights for one draw, reused across a batch.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub user: SampledWeights,
    pub item: SampledWeights,
}

#[derive(Debug, Clone)]
pub struct CosCache {
    pub p_norm: f64,
    pub q_norm: f64,
    pub cos: f64,
}

#[derive(Debug, Clone)]
pub struct MatchCache {
    /// Input handed to the attention block or MLP (empty for cosine).
    pub x: Vec<f64>,
    pub att: Option<AttentionCache>,
    pub mlp: Option<MlpCache>,
    pub cos: Option<CosCache>,
}

#[derive(Debug, Clone)]
pub struct PairCache {
    pub user: TowerCache,
    pub item: TowerCache,
    pub matching: MatchCache,
    /// Normalized score in [0, 1] (unclamped for cosine degenerate cases).
    pub y: f64,
}

/// How predictions are produced from the weight posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PredictMode {
    /// ε = 0 everywhere; fully deterministic.
    Deterministic,
    /// Average of `samples` posterior draws, seeded per (user, item) pair.
    Sample { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct WeakLearner {
    pub config: LearnerConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub scale: RatingScale,
    pub user_tower: Tower,
    pub item_tower: Tower,
    pub attention: Option<AttentionBlock>,
    pub mlp: Option<Mlp>,
    /// Per-user normalized rating rows (deduplicated, item-index ascending).
    pub user_profiles: Vec<Vec<(u32, f64)>>,
    /// Per-item normalized rating columns.
    pub item_profiles: Vec<Vec<(u32, f64)>>,
    /// Fingerprint of the SOURCE dataset (pre-resample); checked on load.
    pub dataset_fingerprint: String,
    pub provenance: Provenance,
}

fn dedup_profiles(mut profiles: Vec<Vec<(u32, f64)>>) -> Vec<Vec<(u32, f64)>> {
    for p in &mut profiles {
        p.dedup_by_key(|e| e.0);
    }
    profiles
}

impl WeakLearner {
    /// Build an untrained learner whose input features come from `dataset`.
    pub fn init(dataset: &RatingDataset, config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::rng(config.seed, Stream::LearnerInit, 0);
        // Initialization order is part of the determinism contract:
        // user tower, item tower, attention, MLP.
        let user_tower = Tower::init(
            dataset.num_items,
            &config.hidden_dims,
            config.embedding_dim,
            config.prior.clone(),
            &mut rng,
        );
        let item_tower = Tower::init(
            dataset.num_users,
            &config.hidden_dims,
            config.embedding_dim,
            config.prior.clone(),
            &mut rng,
        );
        let attention = (config.matching == MatchingKind::AttentionMlp).then(|| {
            AttentionBlock::init(
                config.embedding_dim,
                config.num_tokens,
                config.num_heads,
                config.dropout,
                &mut rng,
            )
        });
        let mlp = (config.matching != MatchingKind::Cosine).then(|| {
            let mut dims = vec![config.mlp_input_dim()];
            dims.extend_from_slice(&config.mlp_hidden);
            dims.push(1);
            let mut acts = vec![Activation::Relu; config.mlp_hidden.len()];
            acts.push(Activation::Sigmoid);
            Mlp::init(&dims, &acts, &mut rng)
        });
        let (user_profiles, item_profiles) = dataset.normalized_profiles();
        Ok(Self {
            config,
            num_users: dataset.num_users,
            num_items: dataset.num_items,
            scale: dataset.scale,
            user_tower,
            item_tower,
            attention,
            mlp,
            user_profiles: dedup_profiles(user_profiles),
            item_profiles: dedup_profiles(item_profiles),
            dataset_fingerprint: dataset.fingerprint(),
            provenance: Provenance::Direct,
        })
    }

    pub fn num_parameters_total(&self) -> usize {
        self.num_parameters()
    }

    fn check_pair(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.num_users {
            return Err(Error::UnknownUser(user as usize));
        }
        if item as usize >= self.num_items {
            return Err(Error::UnknownItem(item as usize));
        }
        Ok(())
    }

    /// Fresh ε for both variational layers (fixed draw order: user weights,
    /// user biases, item weights, item biases).
    pub fn draw_eps(&self, rng: &mut impl Rng) -> EpsDraw {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };
        EpsDraw {
            user_w: draw(self.user_tower.bayes.mu_w.len()),
            user_b: draw(self.user_tower.bayes.mu_b.len()),
            item_w: draw(self.item_tower.bayes.mu_w.len()),
            item_b: draw(self.item_tower.bayes.mu_b.len()),
        }
    }

    pub fn zero_eps(&self) -> EpsDraw {
        EpsDraw {
            user_w: vec![0.0; self.user_tower.bayes.mu_w.len()],
            user_b: vec![0.0; self.user_tower.bayes.mu_b.len()],
            item_w: vec![0.0; self.item_tower.bayes.mu_w.len()],
            item_b: vec![0.0; self.item_tower.bayes.mu_b.len()],
        }
    }

    /// Materialize `W = μ + σ ⊙ ε` for the current parameters.
    pub fn materialize(&self, eps: &EpsDraw) -> StepNoise {
        StepNoise {
            user: self
                .user_tower
                .bayes
                .with_eps(eps.user_w.clone(), eps.user_b.clone()),
            item: self
                .item_tower
                .bayes
                .with_eps(eps.item_w.clone(), eps.item_b.clone()),
        }
    }

    /// Score one pair with a fixed draw. `dropout_rng` enables attention
    /// dropout (training only).
    pub fn forward_pair(
        &self,
        user: u32,
        item: u32,
        noise: &StepNoise,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<PairCache> {
        self.check_pair(user, item)?;
        let user_cache = self
            .user_tower
            .forward(&self.user_profiles[user as usize], &noise.user);
        let item_cache = self
            .item_tower
            .forward(&self.item_profiles[item as usize], &noise.item);
        let (y, matching) = self.match_forward(&user_cache.emb, &item_cache.emb, dropout_rng);
        Ok(PairCache {
            user: user_cache,
            item: item_cache,
            matching,
            y,
        })
    }

    /// Combine two embeddings into a normalized score.
    pub fn match_forward(
        &self,
        p: &[f64],
        q: &[f64],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, MatchCache) {
        match self.config.matching {
            MatchingKind::AttentionMlp => {
                let x: Vec<f64> = p.iter().zip(q.iter()).map(|(a, b)| a * b).collect();
                let att = self.attention.as_ref().unwrap();
                let (a_out, att_cache) = att.forward(&x, dropout_rng);
                let mlp_cache = self.mlp.as_ref().unwrap().forward_cached(&a_out);
                let y = mlp_cache.output[0];
                (
                    y,
                    MatchCache {
                        x,
                        att: Some(att_cache),
                        mlp: Some(mlp_cache),
                        cos: None,
                    },
                )
            }
            MatchingKind::MlpOnly | MatchingKind::ConcatMlp => {
                let x: Vec<f64> = if self.config.matching == MatchingKind::MlpOnly {
                    p.iter().zip(q.iter()).map(|(a, b)| a * b).collect()
                } else {
                    p.iter().chain(q.iter()).copied().collect()
                };
                let mlp_cache = self.mlp.as_ref().unwrap().forward_cached(&x);
                let y = mlp_cache.output[0];
                (
                    y,
                    MatchCache {
                        x,
                        att: None,
                        mlp: Some(mlp_cache),
                        cos: None,
                    },
                )
            }
            MatchingKind::Cosine => {
                let dot: f64 = p.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cos = if p_norm < 1e-12 || q_norm < 1e-12 {
                    0.0
                } else {
                    dot / (p_norm * q_norm)
                };
                let y = 0.5 * (cos + 1.0);
                (
                    y,
                    MatchCache {
                        x: Vec::new(),
                        att: None,
                        mlp: None,
                        cos: Some(CosCache { p_norm, q_norm, cos }),
                    },
                )
            }
        }
    }

    /// Backward through the matching head; returns (dp, dq).
    pub fn match_backward(
        &self,
        p: &[f64],
        q: &[f64],
        cache: &MatchCache,
        dy: f64,
        grad: &mut LearnerGrad,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.embedding_dim;
        match self.config.matching {
            MatchingKind::AttentionMlp => {
                let mlp = self.mlp.as_ref().unwrap();
                let datt_out =
                    mlp.backward(cache.mlp.as_ref().unwrap(), &[dy], grad.mlp.as_mut().unwrap());
                let att = self.attention.as_ref().unwrap();
                let dx = att.backward(
                    cache.att.as_ref().unwrap(),
                    &datt_out,
                    grad.attention.as_mut().unwrap(),
                );
                let dp = dx.iter().zip(q.iter()).map(|(g, b)| g * b).collect();
                let dq = dx.iter().zip(p.iter()).map(|(g, a)| g * a).collect();
                (dp, dq)
            }
            MatchingKind::MlpOnly => {
                let mlp = self.mlp.as_ref().unwrap();
                let dx =
                    mlp.backward(cache.mlp.as_ref().unwrap(), &[dy], grad.mlp.as_mut().unwrap());
                let dp = dx.iter().zip(q.iter()).map(|(g, b)| g * b).collect();
                let dq = dx.iter().zip(p.iter()).map(|(g, a)| g * a).collect();
                (dp, dq)
            }
            MatchingKind::ConcatMlp => {
                let mlp = self.mlp.as_ref().unwrap();
                let dx =
                    mlp.backward(cache.mlp.as_ref().unwrap(), &[dy], grad.mlp.as_mut().unwrap());
                (dx[..d].to_vec(), dx[d..].to_vec())
            }
            MatchingKind::Cosine => {
                let cc = cache.cos.as_ref().unwrap();
                if cc.p_norm < 1e-12 || cc.q_norm < 1e-12 {
                    return (vec![0.0; d], vec![0.0; d]);
                }
                let dc = dy * 0.5;
                let inv_pq = 1.0 / (cc.p_norm * cc.q_norm);
                let dp = p
                    .iter()
                    .zip(q.iter())
                    .map(|(&pi, &qi)| dc * (qi * inv_pq - cc.cos * pi / (cc.p_norm * cc.p_norm)))
                    .collect();
                let dq = p
                    .iter()
                    .zip(q.iter())
                    .map(|(&pi, &qi)| dc * (pi * inv_pq - cc.cos * qi / (cc.q_norm * cc.q_norm)))
                    .collect();
                (dp, dq)
            }
        }
    }

    /// Backward for one pair given `dy = ∂loss/∂y`.
    pub fn backward_pair(
        &self,
        user: u32,
        item: u32,
        cache: &PairCache,
        dy: f64,
        noise: &StepNoise,
        grad: &mut LearnerGrad,
    ) {
        let (dp, dq) =
            self.match_backward(&cache.user.emb, &cache.item.emb, &cache.matching, dy, grad);
        self.user_tower.backward(
            &self.user_profiles[user as usize],
            &cache.user,
            &dp,
            &noise.user,
            &mut grad.user,
        );
        self.item_tower.backward(
            &self.item_profiles[item as usize],
            &cache.item,
            &dq,
            &noise.item,
            &mut grad.item,
        );
    }

    /// Sampled KL `log q − log P(w)` summed over both variational layers.
    pub fn kl(&self, noise: &StepNoise) -> f64 {
        self.user_tower.bayes.kl_sample(&noise.user) + self.item_tower.bayes.kl_sample(&noise.item)
    }

    pub fn kl_backward(&self, noise: &StepNoise, kl_weight: f64, grad: &mut LearnerGrad) {
        self.user_tower
            .bayes
            .kl_backward(&noise.user, kl_weight, &mut grad.user.bayes);
        self.item_tower
            .bayes
            .kl_backward(&noise.item, kl_weight, &mut grad.item.bayes);
    }

    pub fn user_embedding(&self, user: u32, s: &SampledWeights) -> Result<Vec<f64>> {
        if user as usize >= self.num_users {
            return Err(Error::UnknownUser(user as usize));
        }
        Ok(self
            .user_tower
            .forward(&self.user_profiles[user as usize], s)
            .emb)
    }

    pub fn item_embedding(&self, item: u32, s: &SampledWeights) -> Result<Vec<f64>> {
        if item as usize >= self.num_items {
            return Err(Error::UnknownItem(item as usize));
        }
        Ok(self
            .item_tower
            .forward(&self.item_profiles[item as usize], s)
            .emb)
    }

    /// All user embeddings under one draw (posterior mean if ε = 0).
    pub fn all_user_embeddings(&self, s: &SampledWeights) -> Vec<Vec<f64>> {
        (0..self.num_users)
            .map(|u| {
                self.user_tower
                    .forward(&self.user_profiles[u], s)
                    .emb
            })
            .collect()
    }

    pub fn all_item_embeddings(&self, s: &SampledWeights) -> Vec<Vec<f64>> {
        (0..self.num_items)
            .map(|i| {
                self.item_tower
                    .forward(&self.item_profiles[i], s)
                    .emb
            })
            .collect()
    }

    /// Deterministic matching head on precomputed embeddings (no dropout).
    pub fn score_from_embeddings(&self, p: &[f64], q: &[f64]) -> f64 {
        self.match_forward(p, q, None).0
    }

    fn sample_scores(&self, user: u32, item: u32, mode: &PredictMode) -> Result<Vec<f64>> {
        self.check_pair(user, item)?;
        match mode {
            PredictMode::Deterministic => {
                let noise = self.materialize(&self.zero_eps());
                Ok(vec![self.forward_pair(user, item, &noise, None)?.y])
            }
            PredictMode::Sample { samples, seed } => {
                if *samples == 0 {
                    return Err(Error::InvalidConfig("samples must be positive".into()));
                }
                let pair_idx = ((user as u64) << 32) | item as u64;
                let mut rng = seeds::rng(*seed, Stream::Predict, pair_idx);
                let mut out = Vec::with_capacity(*samples);
                for _ in 0..*samples {
                    let eps = self.draw_eps(&mut rng);
                    let noise = self.materialize(&eps);
                    out.push(self.forward_pair(user, item, &noise, None)?.y);
                }
                Ok(out)
            }
        }
    }

    /// Normalized score (mean over draws), used for ranking. Not clamped.
    pub fn score_normalized(&self, user: u32, item: u32, mode: &PredictMode) -> Result<f64> {
        let ys = self.sample_scores(user, item, mode)?;
        Ok(ys.iter().sum::<f64>() / ys.len() as f64)
    }

    /// Rating-scale prediction: each draw is de-normalized (and clamped to
    /// the scale), then averaged.
    pub fn predict(&self, user: u32, item: u32, mode: &PredictMode) -> Result<f64> {
        let ys = self.sample_scores(user, item, mode)?;
        Ok(ys.iter().map(|&y| self.scale.denormalize(y)).sum::<f64>() / ys.len() as f64)
    }

    /// Write the learner to a single checkpoint file. Profiles are not
    /// stored; they are rebuilt from the source dataset plus provenance.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "weak_learner",
            "config": self.config,
            "scale": self.scale,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "dataset_fingerprint": self.dataset_fingerprint,
            "provenance": self.provenance,
        });
        write_model(path, &meta, self)
    }

    /// Load from a checkpoint, rebuilding input profiles from `source`.
    /// Fails with a dataset mismatch if `source` is not the dataset the
    /// learner was built from.
    pub fn load(path: &Path, source: &RatingDataset) -> Result<Self> {
        let (meta, tensors) = read_checkpoint(path)?;
        let kind = meta.get("kind").and_then(|v| v.as_str()).unwrap_or("");
        if kind != "weak_learner" {
            return Err(Error::Checkpoint(format!(
                "expected a weak_learner checkpoint, found kind '{kind}'"
            )));
        }
        let parse = |field: &str| -> Result<serde_json::Value> {
            meta.get(field)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing '{field}' in checkpoint meta")))
        };
        let config: LearnerConfig = serde_json::from_value(parse("config")?)
            .map_err(|e| Error::Checkpoint(format!("bad config in checkpoint: {e}")))?;
        let scale: RatingScale = serde_json::from_value(parse("scale")?)
            .map_err(|e| Error::Checkpoint(format!("bad scale in checkpoint: {e}")))?;
        let provenance: Provenance = serde_json::from_value(parse("provenance")?)
            .map_err(|e| Error::Checkpoint(format!("bad provenance in checkpoint: {e}")))?;
        let num_users = parse("num_users")?.as_u64().unwrap_or(0) as usize;
        let num_items = parse("num_items")?.as_u64().unwrap_or(0) as usize;
        let fingerprint = parse("dataset_fingerprint")?
            .as_str()
            .unwrap_or("")
            .to_string();

        if source.fingerprint() != fingerprint {
            return Err(Error::DatasetMismatch(format!(
                "checkpoint was built from a dataset with fingerprint {fingerprint}, \
                 got {}",
                source.fingerprint()
            )));
        }
        if source.num_users != num_users || source.num_items != num_items {
            return Err(Error::DatasetMismatch(format!(
                "checkpoint expects {num_users} users x {num_items} items, dataset has {} x {}",
                source.num_users, source.num_items
            )));
        }

        let profile_source;
        let (user_profiles, item_profiles) = match provenance {
            Provenance::Direct => source.normalized_profiles(),
            Provenance::Bootstrap { seed, fraction } => {
                profile_source = bootstrap(source, fraction, seed);
                profile_source.normalized_profiles()
            }
        };

        let mut learner = WeakLearner::init(source, config)?;
        learner.scale = scale;
        learner.user_profiles = dedup_profiles(user_profiles);
        learner.item_profiles = dedup_profiles(item_profiles);
        learner.dataset_fingerprint = fingerprint;
        learner.provenance = provenance;
        crate::nn::checkpoint::load_into(&mut learner, &tensors)?;
        Ok(learner)
    }
}

/// A learner with tower embeddings precomputed for every user and item, so
/// scoring a pair costs only the matching head. One embedding table per
/// draw; scores average over draws.
#[derive(Debug)]
pub struct FrozenLearner<'a> {
    pub learner: &'a WeakLearner,
    draws: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl<'a> FrozenLearner<'a> {
    /// Posterior-mean embeddings (ε = 0).
    pub fn deterministic(learner: &'a WeakLearner) -> Self {
        let s_user = learner.user_tower.bayes.deterministic();
        let s_item = learner.item_tower.bayes.deterministic();
        Self {
            learner,
            draws: vec![(
                learner.all_user_embeddings(&s_user),
                learner.all_item_embeddings(&s_item),
            )],
        }
    }

    /// `samples` global posterior draws shared across all pairs; the score
    /// of a pair is the mean matching output over draws.
    pub fn sampled(learner: &'a WeakLearner, samples: usize, seed: u64) -> Self {
        assert!(samples > 0, "need at least one draw");
        let mut draws = Vec::with_capacity(samples);
        for k in 0..samples {
            let mut rng = seeds::rng(seed, Stream::Predict, (1 << 63) | k as u64);
            let eps = learner.draw_eps(&mut rng);
            let noise = learner.materialize(&eps);
            draws.push((
                learner.all_user_embeddings(&noise.user),
                learner.all_item_embeddings(&noise.item),
            ));
        }
        Self { learner, draws }
    }

    /// Mean normalized score over the frozen draws.
    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        self.learner.check_pair(user, item)?;
        let mut sum = 0.0;
        for (users, items) in &self.draws {
            sum += self
                .learner
                .score_from_embeddings(&users[user as usize], &items[item as usize]);
        }
        Ok(sum / self.draws.len() as f64)
    }
}

impl Parameterized for WeakLearner {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = self.user_tower.tensors_prefixed("user_tower");
        out.extend(self.item_tower.tensors_prefixed("item_tower"));
        if let Some(att) = &self.attention {
            out.extend(att.tensors_prefixed("attention"));
        }
        if let Some(mlp) = &self.mlp {
            out.extend(mlp.tensors_prefixed("mlp"));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = self.user_tower.tensors_mut_prefixed("user_tower");
        out.extend(self.item_tower.tensors_mut_prefixed("item_tower"));
        if let Some(att) = &mut self.attention {
            out.extend(att.tensors_mut_prefixed("attention"));
        }
        if let Some(mlp) = &mut self.mlp {
            out.extend(mlp.tensors_mut_prefixed("mlp"));
        }
        out
    }
}

/// Gradients for every trainable tensor of a [`WeakLearner`], in the same
/// order and naming.
#[derive(Debug, Clone)]
pub struct LearnerGrad {
    pub user: TowerGrad,
    pub item: TowerGrad,
    pub attention: Option<AttentionGrad>,
    pub mlp: Option<MlpGrad>,
}

impl LearnerGrad {
    pub fn zeros_like(learner: &WeakLearner) -> Self {
        Self {
            user: TowerGrad::zeros_like(&learner.user_tower),
            item: TowerGrad::zeros_like(&learner.item_tower),
            attention: learner.attention.as_ref().map(AttentionGrad::zeros_like),
            mlp: learner.mlp.as_ref().map(MlpGrad::zeros_like),
        }
    }
}

impl Parameterized for LearnerGrad {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = self.user.tensors_prefixed("user_tower");
        out.extend(self.item.tensors_prefixed("item_tower"));
        if let Some(att) = &self.attention {
            out.extend(att.tensors_prefixed("attention"));
        }
        if let Some(mlp) = &self.mlp {
            out.extend(mlp.tensors_prefixed("mlp"));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = self.user.tensors_mut_prefixed("user_tower");
        out.extend(self.item.tensors_mut_prefixed("item_tower"));
        if let Some(att) = &mut self.attention {
            out.extend(att.tensors_mut_prefixed("attention"));
        }
        if let Some(mlp) = &mut self.mlp {
            out.extend(mlp.tensors_mut_prefixed("mlp"));
        }
        out
    }
}
