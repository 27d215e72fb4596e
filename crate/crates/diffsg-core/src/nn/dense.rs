//! Dense (fully connected) layer with explicit forward/backward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A dense layer `y = W x + b` with row-major `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major, `out_dim * in_dim` entries.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Initializes weights from a zero-mean normal with std `1/sqrt(in_dim)`
    /// (fan-in scaling) and zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid_argument(format!(
                "dense layer dims must be >= 1, got {in_dim}x{out_dim}"
            )));
        }
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.normal() * scale).collect();
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        })
    }

    /// A layer with explicit contents; used by tests and checkpoint loading.
    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::invalid_argument(format!(
                "dense layer parts have wrong length for {in_dim}x{out_dim}"
            )));
        }
        Ok(DenseLayer { in_dim, out_dim, weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `out = W x + b`. Errors when `x` has the wrong length.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out)?;
        Ok(out)
    }

    /// Allocation-free forward pass.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::invalid_argument(format!(
                "dense forward: input len {} != in_dim {}",
                x.len(),
                self.in_dim
            )));
        }
        assert_eq!(out.len(), self.out_dim);
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x.iter()) {
                acc += w * xv;
            }
            *out_v = acc + self.bias[o];
        }
        Ok(())
    }

    /// Backward pass. Given the forward input `x` and the upstream gradient
    /// `dL/dy`, accumulates `dL/dW = upstream ⊗ x` and `dL/db = upstream`
    /// into `grad` and `dL/dx = W^T upstream` into `grad_x`.
    ///
    /// All outputs are accumulated (`+=`); zero the buffers first when
    /// overwrite semantics are wanted.
    pub fn backward_into(
        &self,
        x: &[f64],
        upstream: &[f64],
        grad: &mut DenseGrad,
        grad_x: &mut [f64],
    ) -> Result<()> {
        if x.len() != self.in_dim || upstream.len() != self.out_dim {
            return Err(Error::invalid_argument(format!(
                "dense backward: got input len {} (in_dim {}), upstream len {} (out_dim {})",
                x.len(),
                self.in_dim,
                upstream.len(),
                self.out_dim
            )));
        }
        assert_eq!(grad_x.len(), self.in_dim);
        assert_eq!(grad.weight.len(), self.weight.len());
        for o in 0..self.out_dim {
            let dz = upstream[o];
            grad.bias[o] += dz;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += dz * x[i];
                grad_x[i] += row[i] * dz;
            }
        }
        Ok(())
    }

    /// [`backward_into`](Self::backward_into) without the input gradient,
    /// for layers whose inputs are leaves (embeddings, conditions).
    pub fn backward_params_only(
        &self,
        x: &[f64],
        upstream: &[f64],
        grad: &mut DenseGrad,
    ) -> Result<()> {
        if x.len() != self.in_dim || upstream.len() != self.out_dim {
            return Err(Error::invalid_argument(format!(
                "dense backward: got input len {} (in_dim {}), upstream len {} (out_dim {})",
                x.len(),
                self.in_dim,
                upstream.len(),
                self.out_dim
            )));
        }
        for o in 0..self.out_dim {
            let dz = upstream[o];
            grad.bias[o] += dz;
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += dz * x[i];
            }
        }
        Ok(())
    }

    /// Convenience wrapper returning freshly allocated gradients.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(DenseGrad, Vec<f64>)> {
        let mut grad = DenseGrad::zeros_like(self);
        let mut grad_x = vec![0.0; self.in_dim];
        self.backward_into(x, upstream, &mut grad, &mut grad_x)?;
        Ok((grad, grad_x))
    }
}

/// Gradient buffer matching a [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        DenseGrad {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn fill_zero(&mut self) {
        self.weight.fill(0.0);
        self.bias.fill(0.0);
    }
}
