//! Central finite-difference verification of analytic gradients.
//!
//! Public (not test-only) because the acceptance suite and the examples use
//! it to demonstrate the gradient contract on full models.

use super::Parameterized;

/// Numeric gradient of `loss` with respect to every parameter of `model`,
/// by central differences with step `h`. Returns one vector per tensor, in
/// the model's canonical tensor order.
///
/// The loss closure must be deterministic: any sampling inside it has to be
/// frozen (fixed ε, fixed dropout mask) or the differences are meaningless.
pub fn finite_difference_gradients<M: Parameterized>(
    model: &mut M,
    mut loss: impl FnMut(&M) -> f64,
    h: f64,
) -> Vec<Vec<f64>> {
    let layout: Vec<usize> = model.tensors().iter().map(|t| t.data.len()).collect();
    let mut out = Vec::with_capacity(layout.len());
    for (ti, &len) in layout.iter().enumerate() {
        let mut grad = Vec::with_capacity(len);
        for i in 0..len {
            let orig = model.tensors()[ti].data[i];
            model.tensors_mut()[ti].data[i] = orig + h;
            let fp = loss(model);
            model.tensors_mut()[ti].data[i] = orig - h;
            let fm = loss(model);
            model.tensors_mut()[ti].data[i] = orig;
            grad.push((fp - fm) / (2.0 * h));
        }
        out.push(grad);
    }
    out
}

/// Largest relative error between analytic and numeric gradients:
/// `|a - n| / max(|a|, |n|, floor)` over all coordinates. The floor keeps
/// near-zero gradients from blowing up the ratio; differences below it are
/// judged absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// [`max_rel_err`] across a whole model: analytic gradients come from a
/// Parameterized gradient struct, numeric ones from
/// [`finite_difference_gradients`].
pub fn max_rel_err_all<G: Parameterized>(analytic: &G, numeric: &[Vec<f64>], floor: f64) -> f64 {
    let tensors = analytic.tensors();
    assert_eq!(tensors.len(), numeric.len(), "tensor count mismatch");
    tensors
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| max_rel_err(a.data, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{TensorMut, TensorRef};

    /// One scalar parameter w with loss w^2.
    struct Quad {
        w: Vec<f64>,
    }

    impl Parameterized for Quad {
        fn tensors(&self) -> Vec<TensorRef<'_>> {
            vec![TensorRef {
                name: "w".into(),
                shape: vec![1],
                data: &self.w,
            }]
        }
        fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
            vec![TensorMut {
                name: "w".into(),
                shape: vec![1],
                data: &mut self.w,
            }]
        }
    }

    #[test]
    fn quadratic_gradient_is_two_w() {
        let mut q = Quad { w: vec![3.0] };
        let g = finite_difference_gradients(&mut q, |m| m.w[0] * m.w[0], 1e-5);
        assert!((g[0][0] - 6.0).abs() < 1e-8);
        // Parameter restored after probing.
        assert_eq!(q.w[0], 3.0);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut q = Quad { w: vec![1.5] };
        let g = finite_difference_gradients(&mut q, |_| 42.0, 1e-5);
        assert_eq!(g[0][0], 0.0);
    }

    #[test]
    fn rel_err_floor_handles_zero_gradients() {
        assert_eq!(max_rel_err(&[0.0], &[0.0], 1e-3), 0.0);
        assert!(max_rel_err(&[1e-9], &[0.0], 1e-3) < 1e-5);
        assert!(max_rel_err(&[1.0], &[1.1], 1e-3) > 0.05);
    }
}
