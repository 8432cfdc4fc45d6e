//! Multi-head scaled dot-product self-attention over interaction tokens.
//!
//! The element-wise product of the two tower embeddings (length d) is
//! reshaped into `num_tokens` tokens of `d_model = d / num_tokens` features.
//! Each head projects tokens with its own W_Q, W_K, W_V (`d_model x d_k`,
//! `d_k = d_model / num_heads`), attends with softmax(QKᵀ/√d_k), and the
//! head outputs are concatenated back to `d_model` per token. There is no
//! output projection; the flattened result feeds the prediction MLP.
//! Dropout (training only) acts on the post-softmax attention weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{init_uniform, TensorMut, TensorRef};

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub num_tokens: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub dropout: f64,
    /// Per head, `d_model x d_k` row-major.
    pub wq: Vec<Vec<f64>>,
    pub wk: Vec<Vec<f64>>,
    pub wv: Vec<Vec<f64>>,
}

/// Per-head forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax output (pre-dropout), `T x T`.
    pub a: Vec<f64>,
    /// Attention weights actually applied to V (post-dropout).
    pub a_used: Vec<f64>,
    /// Per-element keep scales (0 or 1/(1−p)); `None` when dropout was off.
    pub mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub x: Vec<f64>,
    pub heads: Vec<HeadCache>,
}

/// Gradients for an [`AttentionBlock`], same per-head layout.
#[derive(Debug, Clone)]
pub struct AttentionGrad {
    pub wq: Vec<Vec<f64>>,
    pub wk: Vec<Vec<f64>>,
    pub wv: Vec<Vec<f64>>,
    d_model: usize,
    d_k: usize,
}

impl AttentionBlock {
    /// `embedding_dim` must factor as `num_tokens · d_model` with `d_model`
    /// divisible by `num_heads`.
    pub fn init(
        embedding_dim: usize,
        num_tokens: usize,
        num_heads: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(embedding_dim % num_tokens == 0, "tokens must divide dim");
        let d_model = embedding_dim / num_tokens;
        assert!(d_model % num_heads == 0, "heads must divide token dim");
        let d_k = d_model / num_heads;
        fn proj(rng: &mut impl Rng, heads: usize, d_model: usize, d_k: usize) -> Vec<Vec<f64>> {
            (0..heads)
                .map(|_| init_uniform(rng, d_model, d_k, d_model * d_k))
                .collect()
        }
        Self {
            num_tokens,
            num_heads,
            d_model,
            d_k,
            dropout,
            wq: proj(rng, num_heads, d_model, d_k),
            wk: proj(rng, num_heads, d_model, d_k),
            wv: proj(rng, num_heads, d_model, d_k),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.num_tokens * self.d_model
    }

    /// `x` has length `num_tokens · d_model`. With `dropout_rng` given (and
    /// a positive rate) inverted dropout is applied to the attention
    /// weights; without it the pass is deterministic.
    pub fn forward(
        &self,
        x: &[f64],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, AttentionCache) {
        let t_n = self.num_tokens;
        let dm = self.d_model;
        let dk = self.d_k;
        assert_eq!(x.len(), t_n * dm, "attention input length");
        let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
        let mut out = vec![0.0; t_n * dm];
        let mut heads = Vec::with_capacity(self.num_heads);

        for h in 0..self.num_heads {
            let project = |w: &[f64]| -> Vec<f64> {
                let mut p = vec![0.0; t_n * dk];
                for t in 0..t_n {
                    for c in 0..dk {
                        let mut acc = 0.0;
                        for j in 0..dm {
                            acc += x[t * dm + j] * w[j * dk + c];
                        }
                        p[t * dk + c] = acc;
                    }
                }
                p
            };
            let q = project(&self.wq[h]);
            let k = project(&self.wk[h]);
            let v = project(&self.wv[h]);

            // Scores and row softmax.
            let mut a = vec![0.0; t_n * t_n];
            for r in 0..t_n {
                let row = &mut a[r * t_n..(r + 1) * t_n];
                for (c, slot) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for e in 0..dk {
                        s += q[r * dk + e] * k[c * dk + e];
                    }
                    *slot = s * inv_sqrt_dk;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - max).exp();
                    z += *slot;
                }
                for slot in row.iter_mut() {
                    *slot /= z;
                }
            }

            let (a_used, mask) = match dropout_rng.as_deref_mut() {
                Some(rng) if self.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - self.dropout);
                    let mask: Vec<f64> = (0..t_n * t_n)
                        .map(|_| {
                            if rng.gen::<f64>() < self.dropout {
                                0.0
                            } else {
                                keep
                            }
                        })
                        .collect();
                    let a_used: Vec<f64> =
                        a.iter().zip(mask.iter()).map(|(ai, mi)| ai * mi).collect();
                    (a_used, Some(mask))
                }
                _ => (a.clone(), None),
            };

            for t in 0..t_n {
                for c in 0..dk {
                    let mut acc = 0.0;
                    for r in 0..t_n {
                        acc += a_used[t * t_n + r] * v[r * dk + c];
                    }
                    out[t * dm + h * dk + c] = acc;
                }
            }
            heads.push(HeadCache {
                q,
                k,
                v,
                a,
                a_used,
                mask,
            });
        }
        (
            out,
            AttentionCache {
                x: x.to_vec(),
                heads,
            },
        )
    }

    /// Backward from `dout` (flattened `T x d_model`). Accumulates weight
    /// gradients and returns `dx`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dout: &[f64],
        grad: &mut AttentionGrad,
    ) -> Vec<f64> {
        let t_n = self.num_tokens;
        let dm = self.d_model;
        let dk = self.d_k;
        let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
        let x = &cache.x;
        let mut dx = vec![0.0; t_n * dm];

        for h in 0..self.num_heads {
            let hc = &cache.heads[h];
            // Slice this head's output gradient out of the concatenation.
            let mut d_o = vec![0.0; t_n * dk];
            for t in 0..t_n {
                for c in 0..dk {
                    d_o[t * dk + c] = dout[t * dm + h * dk + c];
                }
            }

            // dV = A_usedᵀ · dO ; dA_used = dO · Vᵀ.
            let mut d_v = vec![0.0; t_n * dk];
            let mut d_a_used = vec![0.0; t_n * t_n];
            for t in 0..t_n {
                for r in 0..t_n {
                    let a_tr = hc.a_used[t * t_n + r];
                    let mut s = 0.0;
                    for c in 0..dk {
                        d_v[r * dk + c] += a_tr * d_o[t * dk + c];
                        s += d_o[t * dk + c] * hc.v[r * dk + c];
                    }
                    d_a_used[t * t_n + r] = s;
                }
            }

            // Undo dropout, then softmax backward per row.
            let d_a: Vec<f64> = match &hc.mask {
                Some(mask) => d_a_used
                    .iter()
                    .zip(mask.iter())
                    .map(|(d, m)| d * m)
                    .collect(),
                None => d_a_used,
            };
            let mut d_s = vec![0.0; t_n * t_n];
            for r in 0..t_n {
                let a_row = &hc.a[r * t_n..(r + 1) * t_n];
                let da_row = &d_a[r * t_n..(r + 1) * t_n];
                let dot: f64 = a_row.iter().zip(da_row.iter()).map(|(a, d)| a * d).sum();
                for c in 0..t_n {
                    d_s[r * t_n + c] = a_row[c] * (da_row[c] - dot);
                }
            }

            // dQ = dS · K · s ; dK = dSᵀ · Q · s.
            let mut d_q = vec![0.0; t_n * dk];
            let mut d_k_ = vec![0.0; t_n * dk];
            for r in 0..t_n {
                for c in 0..t_n {
                    let ds = d_s[r * t_n + c] * inv_sqrt_dk;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..dk {
                        d_q[r * dk + e] += ds * hc.k[c * dk + e];
                        d_k_[c * dk + e] += ds * hc.q[r * dk + e];
                    }
                }
            }

            // Projection gradients and input gradient.
            let mut push = |d_p: &[f64], w: &[f64], gw: &mut [f64]| {
                for t in 0..t_n {
                    for c in 0..dk {
                        let d = d_p[t * dk + c];
                        if d == 0.0 {
                            continue;
                        }
                        for j in 0..dm {
                            gw[j * dk + c] += x[t * dm + j] * d;
                            dx[t * dm + j] += w[j * dk + c] * d;
                        }
                    }
                }
            };
            push(&d_q, &self.wq[h], &mut grad.wq[h]);
            push(&d_k_, &self.wk[h], &mut grad.wk[h]);
            push(&d_v, &self.wv[h], &mut grad.wv[h]);
        }
        dx
    }

    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(self.num_heads * 3);
        for h in 0..self.num_heads {
            out.push(TensorRef {
                name: format!("{prefix}.h{h}.wq"),
                shape: vec![self.d_model, self.d_k],
                data: &self.wq[h],
            });
            out.push(TensorRef {
                name: format!("{prefix}.h{h}.wk"),
                shape: vec![self.d_model, self.d_k],
                data: &self.wk[h],
            });
            out.push(TensorRef {
                name: format!("{prefix}.h{h}.wv"),
                shape: vec![self.d_model, self.d_k],
                data: &self.wv[h],
            });
        }
        out
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        let (d_model, d_k) = (self.d_model, self.d_k);
        let mut out = Vec::with_capacity(self.num_heads * 3);
        for (h, ((q, k), v)) in self
            .wq
            .iter_mut()
            .zip(self.wk.iter_mut())
            .zip(self.wv.iter_mut())
            .enumerate()
        {
            out.push(TensorMut {
                name: format!("{prefix}.h{h}.wq"),
                shape: vec![d_model, d_k],
                data: q,
            });
            out.push(TensorMut {
                name: format!("{prefix}.h{h}.wk"),
                shape: vec![d_model, d_k],
                data: k,
            });
            out.push(TensorMut {
                name: format!("{prefix}.h{h}.wv"),
                shape: vec![d_model, d_k],
                data: v,
            });
        }
        out
    }
}

impl AttentionGrad {
    pub fn zeros_like(block: &AttentionBlock) -> Self {
        let zero = || vec![vec![0.0; block.d_model * block.d_k]; block.num_heads];
        Self {
            wq: zero(),
            wk: zero(),
            wv: zero(),
            d_model: block.d_model,
            d_k: block.d_k,
        }
    }

    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for h in 0..self.wq.len() {
            out.push(TensorRef {
                name: format!("{prefix}.h{h}.wq"),
                shape: vec![self.d_model, self.d_k],
                data: &self.wq[h],
            });
            out.push(TensorRef {
                name: format!("{prefix}.h{h}.wk"),
                shape: vec![self.d_model, self.d_k],
                data: &self.wk[h],
            });
            out.push(TensorRef {
                name: format!("{prefix}.h{h}.wv"),
                shape: vec![self.d_model, self.d_k],
                data: &self.wv[h],
            });
        }
        out
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        let (d_model, d_k) = (self.d_model, self.d_k);
        let mut out = Vec::new();
        for (h, ((q, k), v)) in self
            .wq
            .iter_mut()
            .zip(self.wk.iter_mut())
            .zip(self.wv.iter_mut())
            .enumerate()
        {
            out.push(TensorMut {
                name: format!("{prefix}.h{h}.wq"),
                shape: vec![d_model, d_k],
                data: q,
            });
            out.push(TensorMut {
                name: format!("{prefix}.h{h}.wk"),
                shape: vec![d_model, d_k],
                data: k,
            });
            out.push(TensorMut {
                name: format!("{prefix}.h{h}.wv"),
                shape: vec![d_model, d_k],
                data: v,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Parameterized, TensorMut, TensorRef};
    use crate::seeds::{self, Stream};

    fn block(dim: usize, tokens: usize, heads: usize) -> AttentionBlock {
        let mut rng = seeds::rng(21, Stream::LearnerInit, 0);
        AttentionBlock::init(dim, tokens, heads, 0.0, &mut rng)
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let b = block(16, 4, 2);
        let mut rng = seeds::rng(1, Stream::LearnerTraining, 0);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, cache) = b.forward(&x, None);
        for head in &cache.heads {
            for r in 0..4 {
                let sum: f64 = head.a[r * 4..(r + 1) * 4].iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_token_single_head_equals_value_projection() {
        // With one token the softmax is the scalar 1, so the output reduces
        // to x · W_V. Compare against an independent naive evaluation.
        let b = block(8, 1, 1);
        let mut rng = seeds::rng(2, Stream::LearnerTraining, 0);
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, _) = b.forward(&x, None);
        for c in 0..8 {
            let mut want = 0.0;
            for j in 0..8 {
                want += x[j] * b.wv[0][j * 8 + c];
            }
            assert!((out[c] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn token_permutation_equivariance() {
        let b = block(24, 4, 3);
        let mut rng = seeds::rng(3, Stream::LearnerTraining, 0);
        let x: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (out, _) = b.forward(&x, None);

        let perm = [2usize, 0, 3, 1];
        let dm = 6;
        let mut x_perm = vec![0.0; 24];
        for (new_t, &old_t) in perm.iter().enumerate() {
            x_perm[new_t * dm..(new_t + 1) * dm].copy_from_slice(&x[old_t * dm..(old_t + 1) * dm]);
        }
        let (out_perm, _) = b.forward(&x_perm, None);
        for (new_t, &old_t) in perm.iter().enumerate() {
            for j in 0..dm {
                assert!(
                    (out_perm[new_t * dm + j] - out[old_t * dm + j]).abs() < 1e-12,
                    "token {old_t}->{new_t} feature {j}"
                );
            }
        }
    }

    struct AttOnly(AttentionBlock);
    impl Parameterized for AttOnly {
        fn tensors(&self) -> Vec<TensorRef<'_>> {
            self.0.tensors_prefixed("att")
        }
        fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
            self.0.tensors_mut_prefixed("att")
        }
    }
    struct AttGradOnly(AttentionGrad);
    impl Parameterized for AttGradOnly {
        fn tensors(&self) -> Vec<TensorRef<'_>> {
            self.0.tensors_prefixed("att")
        }
        fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
            self.0.tensors_mut_prefixed("att")
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeds::rng(4, Stream::LearnerTraining, 0);
        let mut model = AttOnly(block(16, 4, 2));
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Loss: sum of squared outputs.
        let loss = |m: &AttOnly| -> f64 {
            let (out, _) = m.0.forward(&x, None);
            out.iter().map(|o| o * o).sum()
        };

        let (out, cache) = model.0.forward(&x, None);
        let dout: Vec<f64> = out.iter().map(|o| 2.0 * o).collect();
        let mut grad = AttGradOnly(AttentionGrad::zeros_like(&model.0));
        let dx = model.0.backward(&cache, &dout, &mut grad.0);

        let numeric = crate::nn::gradcheck::finite_difference_gradients(&mut model, loss, 1e-5);
        let err = crate::nn::gradcheck::max_rel_err_all(&grad, &numeric, 1e-3);
        assert!(err < 1e-6, "attention weight grad err {err}");

        // Input gradient by direct perturbation.
        let mut x2 = x.clone();
        for i in 0..16 {
            let h = 1e-6;
            let orig = x2[i];
            x2[i] = orig + h;
            let (o, _) = model.0.forward(&x2, None);
            let fp: f64 = o.iter().map(|v| v * v).sum();
            x2[i] = orig - h;
            let (o, _) = model.0.forward(&x2, None);
            let fm: f64 = o.iter().map(|v| v * v).sum();
            x2[i] = orig;
            let n = (fp - fm) / (2.0 * h);
            assert!((dx[i] - n).abs() < 1e-6, "dx[{i}]: {} vs {n}", dx[i]);
        }
    }

    #[test]
    fn dropout_scales_and_zeroes() {
        let mut b = block(16, 4, 2);
        b.dropout = 0.5;
        let mut rng = seeds::rng(5, Stream::LearnerTraining, 0);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut drop_rng = seeds::rng(6, Stream::LearnerTraining, 1);
        let (_, cache) = b.forward(&x, Some(&mut drop_rng));
        let head = &cache.heads[0];
        let mask = head.mask.as_ref().unwrap();
        assert!(mask.iter().any(|&m| m == 0.0));
        assert!(mask.iter().any(|&m| (m - 2.0).abs() < 1e-12));
        for (used, (a, m)) in head.a_used.iter().zip(head.a.iter().zip(mask.iter())) {
            assert!((used - a * m).abs() < 1e-15);
        }
        // Deterministic mode ignores dropout entirely.
        let (out1, _) = b.forward(&x, None);
        let (out2, _) = b.forward(&x, None);
        assert_eq!(out1, out2);
    }
}
