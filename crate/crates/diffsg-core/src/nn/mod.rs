//! Minimal differentiable substrate: dense layers, SiLU, Adam, and a
//! finite-difference gradient checker.
//!
//! Everything is 64-bit and allocation-explicit. There is no autodiff
//! graph; each layer exposes an explicit `forward`/`backward` pair and the
//! networks in this crate chain them by hand.

mod adam;
mod dense;
mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use dense::{DenseGrad, DenseLayer};
pub use gradcheck::finite_diff_check;

/// SiLU activation `x * sigmoid(x)` applied elementwise.
pub fn silu(x: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = v * sigmoid(v);
    }
}

/// Backward pass of [`silu`]: `out[i] = upstream[i] * silu'(x[i])`.
///
/// The derivative is `sigmoid(x) * (1 + x * (1 - sigmoid(x)))`.
pub fn silu_backward(x: &[f64], upstream: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), upstream.len());
    assert_eq!(x.len(), out.len());
    for i in 0..x.len() {
        let s = sigmoid(x[i]);
        out[i] = upstream[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Returns true when every entry is finite.
pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}
