//! Bayes-by-Backprop machinery: Gaussian variational layers with
//! reparameterized sampling, the three prior families, and the Monte-Carlo
//! ELBO terms.
//!
//! A [`GaussianVariationalLayer`] holds one (μ, ρ) pair per weight and per
//! bias; σ = softplus(ρ) keeps scales positive. Sampling draws
//! `W = μ + σ ⊙ ε` and keeps ε so the backward pass can push gradients into
//! both μ and ρ. The KL contribution is estimated at the sampled point
//! (log q(W) − log P(W)), matching a one-sample Monte-Carlo objective.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_uniform, TensorMut, TensorRef};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// d softplus / dx.
#[inline]
pub fn softplus_grad(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Prior over the sampled weights of a variational layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum PriorSpec {
    /// Two-component zero-mean Gaussian scale mixture:
    /// `π N(0, σ₁²) + (1−π) N(0, σ₂²)`.
    Gsm { pi: f64, sigma1: f64, sigma2: f64 },
    /// `(1/2b) exp(−|w − μ| / b)`.
    Laplace { mu: f64, b: f64 },
    /// `N(μ, σ²)`.
    Isotropic { mu: f64, sigma: f64 },
}

impl PriorSpec {
    pub fn gsm_default() -> Self {
        PriorSpec::Gsm {
            pi: 0.5,
            sigma1: 1.0,
            sigma2: (-6.0f64).exp(),
        }
    }

    pub fn laplace_default() -> Self {
        PriorSpec::Laplace { mu: 0.0, b: 1.0 }
    }

    pub fn isotropic_default() -> Self {
        PriorSpec::Isotropic { mu: 0.0, sigma: 1.0 }
    }

    /// The three-family diversity cycle used by the ensemble.
    pub fn default_cycle() -> Vec<PriorSpec> {
        vec![
            Self::gsm_default(),
            Self::laplace_default(),
            Self::isotropic_default(),
        ]
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            PriorSpec::Gsm { .. } => "gsm",
            PriorSpec::Laplace { .. } => "laplace",
            PriorSpec::Isotropic { .. } => "isotropic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            PriorSpec::Gsm { pi, sigma1, sigma2 } => {
                if !(0.0..=1.0).contains(&pi) {
                    return bad(format!("gsm mixture weight {pi} outside [0,1]"));
                }
                if sigma1 <= 0.0 || sigma2 <= 0.0 {
                    return bad(format!("gsm scales must be positive (got {sigma1}, {sigma2})"));
                }
            }
            PriorSpec::Laplace { b, .. } => {
                if b <= 0.0 {
                    return bad(format!("laplace scale {b} must be positive"));
                }
            }
            PriorSpec::Isotropic { sigma, .. } => {
                if sigma <= 0.0 {
                    return bad(format!("isotropic sigma {sigma} must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Log-density of a single weight under this prior.
    pub fn log_density(&self, w: f64) -> f64 {
        match *self {
            PriorSpec::Gsm { pi, sigma1, sigma2 } => {
                // log-sum-exp over the two mixture components; ln(0) = -inf
                // degrades gracefully when π hits an endpoint.
                let l1 = pi.ln() + gaussian_log_density(w, 0.0, sigma1);
                let l2 = (1.0 - pi).ln() + gaussian_log_density(w, 0.0, sigma2);
                let m = l1.max(l2);
                m + ((l1 - m).exp() + (l2 - m).exp()).ln()
            }
            PriorSpec::Laplace { mu, b } => -(2.0 * b).ln() - (w - mu).abs() / b,
            PriorSpec::Isotropic { mu, sigma } => gaussian_log_density(w, mu, sigma),
        }
    }

    /// d log-density / dw.
    pub fn log_density_grad(&self, w: f64) -> f64 {
        match *self {
            PriorSpec::Gsm { pi, sigma1, sigma2 } => {
                let l1 = pi.ln() + gaussian_log_density(w, 0.0, sigma1);
                let l2 = (1.0 - pi).ln() + gaussian_log_density(w, 0.0, sigma2);
                let m = l1.max(l2);
                let lp = m + ((l1 - m).exp() + (l2 - m).exp()).ln();
                let r1 = (l1 - lp).exp();
                let r2 = (l2 - lp).exp();
                r1 * (-w / (sigma1 * sigma1)) + r2 * (-w / (sigma2 * sigma2))
            }
            PriorSpec::Laplace { mu, b } => -(w - mu).signum() / b,
            PriorSpec::Isotropic { mu, sigma } => -(w - mu) / (sigma * sigma),
        }
    }
}

#[inline]
fn gaussian_log_density(w: f64, mu: f64, sigma: f64) -> f64 {
    let d = (w - mu) / sigma;
    -sigma.ln() - HALF_LN_2PI - 0.5 * d * d
}

/// Sum of log prior densities over a weight tensor.
pub fn log_prior(prior: &PriorSpec, w: &[f64]) -> f64 {
    w.iter().map(|&wi| prior.log_density(wi)).sum()
}

/// Monte-Carlo ELBO loss for one sample:
/// `kl_weight · (log q − log P(w)) − log P(D|w)`.
pub fn elbo_loss(log_q: f64, log_prior: f64, log_likelihood: f64, kl_weight: f64) -> f64 {
    kl_weight * (log_q - log_prior) - log_likelihood
}

/// Affine layer whose weights and biases are diagonal-Gaussian posteriors.
/// Activation is identity (it produces the tower embedding).
#[derive(Debug, Clone)]
pub struct GaussianVariationalLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out x in` row-major.
    pub mu_w: Vec<f64>,
    pub rho_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub rho_b: Vec<f64>,
    pub prior: PriorSpec,
}

/// One reparameterized draw: the materialized weights plus the ε that
/// produced them (needed by the backward pass).
#[derive(Debug, Clone)]
pub struct SampledWeights {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub eps_w: Vec<f64>,
    pub eps_b: Vec<f64>,
}

impl GaussianVariationalLayer {
    /// μ initialized like a deterministic layer, ρ at −5 (σ ≈ 0.0067).
    pub fn init(in_dim: usize, out_dim: usize, prior: PriorSpec, rng: &mut impl Rng) -> Self {
        Self {
            in_dim,
            out_dim,
            mu_w: init_uniform(rng, in_dim, out_dim, in_dim * out_dim),
            rho_w: vec![-5.0; in_dim * out_dim],
            mu_b: vec![0.0; out_dim],
            rho_b: vec![-5.0; out_dim],
            prior,
        }
    }

    pub fn sigma_w(&self, i: usize) -> f64 {
        softplus(self.rho_w[i])
    }

    pub fn sigma_b(&self, i: usize) -> f64 {
        softplus(self.rho_b[i])
    }

    /// Materialize `W = μ + softplus(ρ) ⊙ ε` for a given noise draw.
    pub fn with_eps(&self, eps_w: Vec<f64>, eps_b: Vec<f64>) -> SampledWeights {
        assert_eq!(eps_w.len(), self.mu_w.len(), "eps_w shape");
        assert_eq!(eps_b.len(), self.mu_b.len(), "eps_b shape");
        let w = self
            .mu_w
            .iter()
            .zip(self.rho_w.iter())
            .zip(eps_w.iter())
            .map(|((&mu, &rho), &e)| mu + softplus(rho) * e)
            .collect();
        let b = self
            .mu_b
            .iter()
            .zip(self.rho_b.iter())
            .zip(eps_b.iter())
            .map(|((&mu, &rho), &e)| mu + softplus(rho) * e)
            .collect();
        SampledWeights { w, b, eps_w, eps_b }
    }

    /// Fresh standard-normal draw.
    pub fn sample(&self, rng: &mut impl Rng) -> SampledWeights {
        let eps_w = (0..self.mu_w.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let eps_b = (0..self.mu_b.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.with_eps(eps_w, eps_b)
    }

    /// ε = 0: weights evaluated at the posterior mean.
    pub fn deterministic(&self) -> SampledWeights {
        self.with_eps(vec![0.0; self.mu_w.len()], vec![0.0; self.mu_b.len()])
    }

    /// `z = W h + b` with the sampled weights (identity activation).
    pub fn forward(&self, h: &[f64], s: &SampledWeights) -> Vec<f64> {
        assert_eq!(h.len(), self.in_dim, "variational layer input length");
        let mut z = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &s.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = s.b[o];
            for (w, hi) in row.iter().zip(h.iter()) {
                acc += w * hi;
            }
            z.push(acc);
        }
        z
    }

    /// Data-path backward: given `dz`, accumulate dμ and dρ through the
    /// reparameterization (dW flows to μ 1:1 and to ρ via ε·sigmoid(ρ)),
    /// and return `dh`.
    pub fn backward(
        &self,
        h: &[f64],
        dz: &[f64],
        s: &SampledWeights,
        grad: &mut BayesGrad,
    ) -> Vec<f64> {
        debug_assert_eq!(dz.len(), self.out_dim);
        let mut dh = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let d = dz[o];
            if d != 0.0 {
                grad.mu_b[o] += d;
                grad.rho_b[o] += d * s.eps_b[o] * softplus_grad(self.rho_b[o]);
            }
            let base = o * self.in_dim;
            for i in 0..self.in_dim {
                let dw = d * h[i];
                grad.mu_w[base + i] += dw;
                grad.rho_w[base + i] += dw * s.eps_w[base + i] * softplus_grad(self.rho_w[base + i]);
                dh[i] += d * s.w[base + i];
            }
        }
        dh
    }

    /// `Σ log q(w_j | μ_j, σ_j)` over weights and biases.
    pub fn log_posterior(&self, s: &SampledWeights) -> f64 {
        let mut total = 0.0;
        for i in 0..self.mu_w.len() {
            total += gaussian_log_density(s.w[i], self.mu_w[i], softplus(self.rho_w[i]));
        }
        for i in 0..self.mu_b.len() {
            total += gaussian_log_density(s.b[i], self.mu_b[i], softplus(self.rho_b[i]));
        }
        total
    }

    /// `Σ log P(w_j)` over weights and biases.
    pub fn log_prior(&self, s: &SampledWeights) -> f64 {
        log_prior(&self.prior, &s.w) + log_prior(&self.prior, &s.b)
    }

    /// Sampled KL estimate `log q − log P(w)` for this draw.
    pub fn kl_sample(&self, s: &SampledWeights) -> f64 {
        self.log_posterior(s) - self.log_prior(s)
    }

    /// Accumulate `kl_weight · d(log q − log P(w)) / d(μ, ρ)` for the fixed
    /// draw `s`. The pathwise μ-derivative of log q cancels its direct
    /// μ-derivative exactly, leaving −d log P/dw on μ and
    /// `−sigmoid(ρ)/σ − d log P/dw · ε · sigmoid(ρ)` on ρ.
    pub fn kl_backward(&self, s: &SampledWeights, kl_weight: f64, grad: &mut BayesGrad) {
        let prior = &self.prior;
        for i in 0..self.mu_w.len() {
            let sp = softplus_grad(self.rho_w[i]);
            let sigma = softplus(self.rho_w[i]);
            let dp = prior.log_density_grad(s.w[i]);
            grad.mu_w[i] += kl_weight * (-dp);
            grad.rho_w[i] += kl_weight * (-sp / sigma - dp * s.eps_w[i] * sp);
        }
        for i in 0..self.mu_b.len() {
            let sp = softplus_grad(self.rho_b[i]);
            let sigma = softplus(self.rho_b[i]);
            let dp = prior.log_density_grad(s.b[i]);
            grad.mu_b[i] += kl_weight * (-dp);
            grad.rho_b[i] += kl_weight * (-sp / sigma - dp * s.eps_b[i] * sp);
        }
    }

    /// Zero the `⌊fraction·n⌋` WEIGHTS (biases untouched) with the lowest
    /// signal-to-noise ratio |μ|/σ: μ ← 0, ρ ← −40 (σ ≈ 4e−18). Returns the
    /// pruned weight indices, ascending.
    pub fn snr_prune(&mut self, fraction: f64) -> Vec<usize> {
        assert!(
            (0.0..=1.0).contains(&fraction),
            "prune fraction must be in [0, 1]"
        );
        let n = self.mu_w.len();
        let count = (fraction * n as f64).floor() as usize;
        if count == 0 {
            return Vec::new();
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let snr_a = self.mu_w[a].abs() / softplus(self.rho_w[a]);
            let snr_b = self.mu_w[b].abs() / softplus(self.rho_w[b]);
            snr_a.partial_cmp(&snr_b).unwrap().then(a.cmp(&b))
        });
        let mut pruned: Vec<usize> = order[..count].to_vec();
        pruned.sort_unstable();
        for &i in &pruned {
            self.mu_w[i] = 0.0;
            self.rho_w[i] = -40.0;
        }
        pruned
    }

    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: format!("{prefix}.mu_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &self.mu_w,
            },
            TensorRef {
                name: format!("{prefix}.rho_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &self.rho_w,
            },
            TensorRef {
                name: format!("{prefix}.mu_b"),
                shape: vec![self.out_dim],
                data: &self.mu_b,
            },
            TensorRef {
                name: format!("{prefix}.rho_b"),
                shape: vec![self.out_dim],
                data: &self.rho_b,
            },
        ]
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        vec![
            TensorMut {
                name: format!("{prefix}.mu_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &mut self.mu_w,
            },
            TensorMut {
                name: format!("{prefix}.rho_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &mut self.rho_w,
            },
            TensorMut {
                name: format!("{prefix}.mu_b"),
                shape: vec![self.out_dim],
                data: &mut self.mu_b,
            },
            TensorMut {
                name: format!("{prefix}.rho_b"),
                shape: vec![self.out_dim],
                data: &mut self.rho_b,
            },
        ]
    }
}

/// Gradients for one [`GaussianVariationalLayer`], same tensor order.
#[derive(Debug, Clone)]
pub struct BayesGrad {
    pub mu_w: Vec<f64>,
    pub rho_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub rho_b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl BayesGrad {
    pub fn zeros_like(layer: &GaussianVariationalLayer) -> Self {
        Self {
            mu_w: vec![0.0; layer.mu_w.len()],
            rho_w: vec![0.0; layer.rho_w.len()],
            mu_b: vec![0.0; layer.mu_b.len()],
            rho_b: vec![0.0; layer.rho_b.len()],
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
        }
    }

    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: format!("{prefix}.mu_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &self.mu_w,
            },
            TensorRef {
                name: format!("{prefix}.rho_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &self.rho_w,
            },
            TensorRef {
                name: format!("{prefix}.mu_b"),
                shape: vec![self.out_dim],
                data: &self.mu_b,
            },
            TensorRef {
                name: format!("{prefix}.rho_b"),
                shape: vec![self.out_dim],
                data: &self.rho_b,
            },
        ]
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        vec![
            TensorMut {
                name: format!("{prefix}.mu_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &mut self.mu_w,
            },
            TensorMut {
                name: format!("{prefix}.rho_w"),
                shape: vec![self.out_dim, self.in_dim],
                data: &mut self.rho_w,
            },
            TensorMut {
                name: format!("{prefix}.mu_b"),
                shape: vec![self.out_dim],
                data: &mut self.mu_b,
            },
            TensorMut {
                name: format!("{prefix}.rho_b"),
                shape: vec![self.out_dim],
                data: &mut self.rho_b,
            },
        ]
    }
}
