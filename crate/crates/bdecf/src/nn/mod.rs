//! Dense-network kernels: layers, activations, parameter plumbing.
//!
//! All tensors are flat row-major `Vec<f64>` with explicit dimensions.
//! Every trainable struct exposes its parameters through [`Parameterized`]
//! in a fixed, documented order; gradient structs mirror that order exactly,
//! which is what lets one optimizer, one checkpoint writer, and one
//! finite-difference harness serve every model in the crate.

pub mod checkpoint;
pub mod gradcheck;
mod optimizer;

pub use optimizer::{Optimizer, OptimizerKind};

use rand::Rng;

use crate::error::{Error, Result};

/// Element-wise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation OUTPUT `y = apply(z)`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable view of one named parameter tensor.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Anything with a fixed ordered list of named parameter tensors.
///
/// The order must be identical between `tensors` and `tensors_mut`, and a
/// model and its gradient struct must list tensors in the same order with
/// the same shapes.
pub trait Parameterized {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn assert_finite(&self) -> Result<()> {
        for t in self.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(t.name));
            }
        }
        Ok(())
    }
}

/// Element-wise `into += from`, tensor by tensor.
pub fn accumulate<A: Parameterized, B: Parameterized>(into: &mut A, from: &B) {
    let from_t = from.tensors();
    let mut into_t = into.tensors_mut();
    assert_eq!(into_t.len(), from_t.len(), "tensor list mismatch");
    for (dst, src) in into_t.iter_mut().zip(from_t.iter()) {
        debug_assert_eq!(dst.shape, src.shape, "shape mismatch on {}", dst.name);
        for (d, s) in dst.data.iter_mut().zip(src.data.iter()) {
            *d += s;
        }
    }
}

/// Multiply every parameter by `c`.
pub fn scale<A: Parameterized>(target: &mut A, c: f64) {
    for t in target.tensors_mut().iter_mut() {
        for v in t.data.iter_mut() {
            *v *= c;
        }
    }
}

/// Glorot-style uniform draw in ±sqrt(6 / (fan_in + fan_out)).
pub fn init_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Fully connected layer, `weight` stored out-major (`out x in`).
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: init_uniform(rng, in_dim, out_dim, in_dim * out_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "dense input length");
        let mut y = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.bias[o];
            for (w, xi) in row.iter().zip(x.iter()) {
                z += w * xi;
            }
            y.push(self.activation.apply(z));
        }
        y
    }

    /// Backward from `dy = dL/dy` given the cached input `x` and output `y`.
    /// Accumulates into `grad` and returns `dx`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut DenseGrad) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let dz = dy[o] * self.activation.grad_from_output(y[o]);
            if dz == 0.0 {
                continue;
            }
            grad.bias[o] += dz;
            let wrow = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += dz * x[i];
                dx[i] += dz * wrow[i];
            }
        }
        dx
    }
}

/// Gradients for one [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl DenseGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
        }
    }
}

/// First tower layer over a sparse rating row. The weight matrix is stored
/// TRANSPOSED (`in x out`, row per input coordinate) so that each nonzero
/// input touches one contiguous row; the forward pass is then a bias plus a
/// short sum of scaled rows instead of a full matrix product.
#[derive(Debug, Clone)]
pub struct SparseDense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in x out` row-major; row `i` is column `i` of the logical `out x in`
    /// weight matrix.
    pub weight_t: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl SparseDense {
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight_t: init_uniform(rng, in_dim, out_dim, in_dim * out_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// `x` is a sparse vector of (index, value) pairs sorted by index.
    pub fn forward(&self, x: &[(u32, f64)]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(i, v) in x {
            assert!((i as usize) < self.in_dim, "sparse index out of range");
            let row = &self.weight_t[i as usize * self.out_dim..(i as usize + 1) * self.out_dim];
            for (zo, w) in z.iter_mut().zip(row.iter()) {
                *zo += v * w;
            }
        }
        for zo in z.iter_mut() {
            *zo = self.activation.apply(*zo);
        }
        z
    }

    /// Input gradients are never needed (this is the input layer), so only
    /// parameter gradients are accumulated.
    pub fn backward(&self, x: &[(u32, f64)], y: &[f64], dy: &[f64], grad: &mut SparseDenseGrad) {
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dz = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            dz[o] = dy[o] * self.activation.grad_from_output(y[o]);
            grad.bias[o] += dz[o];
        }
        for &(i, v) in x {
            let grow =
                &mut grad.weight_t[i as usize * self.out_dim..(i as usize + 1) * self.out_dim];
            for (g, d) in grow.iter_mut().zip(dz.iter()) {
                *g += v * d;
            }
        }
    }
}

/// Gradients for one [`SparseDense`].
#[derive(Debug, Clone)]
pub struct SparseDenseGrad {
    pub weight_t: Vec<f64>,
    pub bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl SparseDenseGrad {
    pub fn zeros_like(layer: &SparseDense) -> Self {
        Self {
            weight_t: vec![0.0; layer.weight_t.len()],
            bias: vec![0.0; layer.bias.len()],
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
        }
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer inputs cached by [`Mlp::forward_cached`]; `inputs[i]` feeds
/// layer `i`, `output` is the final activation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// `dims = [d0, d1, .., dn]` builds n layers; `activations.len() == n`.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2);
        assert_eq!(activations.len(), dims.len() - 1);
        let layers = (0..dims.len() - 1)
            .map(|i| DenseLayer::init(dims[i], dims[i + 1], activations[i], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let next = layer.forward(&h);
            inputs.push(h);
            h = next;
        }
        MlpCache { inputs, output: h }
    }

    /// Returns `dx`; accumulates parameter gradients.
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grad: &mut MlpGrad) -> Vec<f64> {
        let mut dy = dout.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let y = if idx + 1 < self.layers.len() {
                &cache.inputs[idx + 1]
            } else {
                &cache.output
            };
            dy = layer.backward(&cache.inputs[idx], y, &dy, &mut grad.layers[idx]);
        }
        dy
    }
}

/// Gradients for an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }
}

impl DenseLayer {
    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: format!("{prefix}.weight"),
                shape: vec![self.out_dim, self.in_dim],
                data: &self.weight,
            },
            TensorRef {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &self.bias,
            },
        ]
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        vec![
            TensorMut {
                name: format!("{prefix}.weight"),
                shape: vec![self.out_dim, self.in_dim],
                data: &mut self.weight,
            },
            TensorMut {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &mut self.bias,
            },
        ]
    }
}

impl DenseGrad {
    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: format!("{prefix}.weight"),
                shape: vec![self.out_dim, self.in_dim],
                data: &self.weight,
            },
            TensorRef {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &self.bias,
            },
        ]
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        vec![
            TensorMut {
                name: format!("{prefix}.weight"),
                shape: vec![self.out_dim, self.in_dim],
                data: &mut self.weight,
            },
            TensorMut {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &mut self.bias,
            },
        ]
    }
}

impl SparseDense {
    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: format!("{prefix}.weight_t"),
                shape: vec![self.in_dim, self.out_dim],
                data: &self.weight_t,
            },
            TensorRef {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &self.bias,
            },
        ]
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        vec![
            TensorMut {
                name: format!("{prefix}.weight_t"),
                shape: vec![self.in_dim, self.out_dim],
                data: &mut self.weight_t,
            },
            TensorMut {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &mut self.bias,
            },
        ]
    }
}

impl SparseDenseGrad {
    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: format!("{prefix}.weight_t"),
                shape: vec![self.in_dim, self.out_dim],
                data: &self.weight_t,
            },
            TensorRef {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &self.bias,
            },
        ]
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        vec![
            TensorMut {
                name: format!("{prefix}.weight_t"),
                shape: vec![self.in_dim, self.out_dim],
                data: &mut self.weight_t,
            },
            TensorMut {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &mut self.bias,
            },
        ]
    }
}

impl Mlp {
    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors_prefixed(&format!("{prefix}.l{i}")))
            .collect()
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.tensors_mut_prefixed(&format!("{prefix}.l{i}")))
            .collect()
    }
}

impl MlpGrad {
    pub fn tensors_prefixed(&self, prefix: &str) -> Vec<TensorRef<'_>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors_prefixed(&format!("{prefix}.l{i}")))
            .collect()
    }

    pub fn tensors_mut_prefixed(&mut self, prefix: &str) -> Vec<TensorMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.tensors_mut_prefixed(&format!("{prefix}.l{i}")))
            .collect()
    }
}

impl Parameterized for DenseLayer {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.tensors_prefixed("dense")
    }
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        self.tensors_mut_prefixed("dense")
    }
}

impl Parameterized for DenseGrad {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.tensors_prefixed("dense")
    }
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        self.tensors_mut_prefixed("dense")
    }
}

impl Parameterized for Mlp {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.tensors_prefixed("mlp")
    }
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        self.tensors_mut_prefixed("mlp")
    }
}

impl Parameterized for MlpGrad {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.tensors_prefixed("mlp")
    }
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        self.tensors_mut_prefixed("mlp")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{self, Stream};

    fn rng() -> rand_chacha::ChaCha8Rng {
        seeds::rng(7, Stream::LearnerInit, 0)
    }

    #[test]
    fn zero_layer_relu_gives_zeros() {
        let layer = DenseLayer {
            in_dim: 3,
            out_dim: 2,
            weight: vec![0.0; 6],
            bias: vec![0.0; 2],
            activation: Activation::Relu,
        };
        assert_eq!(layer.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_weights_relu_clips_negatives() {
        let layer = DenseLayer {
            in_dim: 2,
            out_dim: 2,
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 2],
            activation: Activation::Relu,
        };
        assert_eq!(layer.forward(&[-1.0, 2.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn forward_matches_triple_loop_oracle() {
        let mut r = rng();
        let layer = DenseLayer::init(4, 3, Activation::Identity, &mut r);
        let x: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let got = layer.forward(&x);
        // Naive oracle.
        let mut want = vec![0.0; 3];
        for o in 0..3 {
            want[o] = layer.bias[o];
            for i in 0..4 {
                want[o] += layer.weight[o * 4 + i] * x[i];
            }
        }
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_activation_is_affine_linear() {
        let mut r = rng();
        let layer = DenseLayer::init(5, 4, Activation::Identity, &mut r);
        let x: Vec<f64> = (0..5).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let mixed: Vec<f64> = x.iter().zip(y.iter()).map(|(xi, yi)| a * xi + b * yi).collect();
        let f_mixed = layer.forward(&mixed);
        let fx = layer.forward(&x);
        let fy = layer.forward(&y);
        for o in 0..4 {
            let want = a * fx[o] + b * fy[o] - (a + b - 1.0) * layer.bias[o];
            assert!((f_mixed[o] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn sparse_forward_equals_dense_forward() {
        let mut r = rng();
        let sparse = SparseDense::init(6, 4, Activation::Relu, &mut r);
        // Equivalent dense layer: transpose weight_t into out-major.
        let mut weight = vec![0.0; 24];
        for i in 0..6 {
            for o in 0..4 {
                weight[o * 6 + i] = sparse.weight_t[i * 4 + o];
            }
        }
        let dense = DenseLayer {
            in_dim: 6,
            out_dim: 4,
            weight,
            bias: sparse.bias.clone(),
            activation: Activation::Relu,
        };
        let sparse_x = vec![(1u32, 0.8), (4u32, 0.2)];
        let mut dense_x = vec![0.0; 6];
        dense_x[1] = 0.8;
        dense_x[4] = 0.2;
        let a = sparse.forward(&sparse_x);
        let b = dense.forward(&dense_x);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_shapes_and_cache() {
        let mut r = rng();
        let mlp = Mlp::init(
            &[6, 4, 1],
            &[Activation::Relu, Activation::Sigmoid],
            &mut r,
        );
        let x: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let cache = mlp.forward_cached(&x);
        assert_eq!(cache.output.len(), 1);
        assert!(cache.output[0] > 0.0 && cache.output[0] < 1.0);
        assert_eq!(cache.inputs.len(), 2);
        assert_eq!(mlp.forward(&x), cache.output);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut r = rng();
        let mut layer = DenseLayer::init(4, 3, Activation::Relu, &mut r);
        let x: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        // Scalar loss: sum of outputs squared.
        let loss = |l: &DenseLayer| -> f64 { l.forward(&x).iter().map(|y| y * y).sum() };

        let y = layer.forward(&x);
        let dy: Vec<f64> = y.iter().map(|yo| 2.0 * yo).collect();
        let mut grad = DenseGrad::zeros_like(&layer);
        let dx = layer.backward(&x, &y, &dy, &mut grad);

        let numeric = gradcheck::finite_difference_gradients(&mut layer, loss, 1e-5);
        let err_w = gradcheck::max_rel_err(&grad.weight, &numeric[0], 1e-3);
        let err_b = gradcheck::max_rel_err(&grad.bias, &numeric[1], 1e-3);
        assert!(err_w < 1e-6, "weight grad err {err_w}");
        assert!(err_b < 1e-6, "bias grad err {err_b}");

        // Input gradient via direct perturbation.
        let mut x2 = x.clone();
        for i in 0..4 {
            let orig = x2[i];
            x2[i] = orig + 1e-6;
            let fp: f64 = layer.forward(&x2).iter().map(|y| y * y).sum();
            x2[i] = orig - 1e-6;
            let fm: f64 = layer.forward(&x2).iter().map(|y| y * y).sum();
            x2[i] = orig;
            assert!((dx[i] - (fp - fm) / 2e-6).abs() < 1e-6);
        }
    }

    #[test]
    fn accumulate_and_scale_work() {
        let mut r = rng();
        let layer = DenseLayer::init(3, 2, Activation::Identity, &mut r);
        let mut a = DenseGrad::zeros_like(&layer);
        let mut b = DenseGrad::zeros_like(&layer);
        a.weight[0] = 1.0;
        b.weight[0] = 2.0;
        b.bias[1] = 4.0;
        accumulate(&mut a, &b);
        assert_eq!(a.weight[0], 3.0);
        assert_eq!(a.bias[1], 4.0);
        scale(&mut a, 0.5);
        assert_eq!(a.weight[0], 1.5);
        assert_eq!(a.bias[1], 2.0);
    }
}
