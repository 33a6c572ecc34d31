//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers for a list of parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn for_shapes(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes.into_iter().map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c))).unzip();
        Self { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl Adam {
    /// One update of every parameter in `params` from the matching gradient.
    pub fn step(&self, params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState) -> Result<(), TensorError> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(TensorError::Contract(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::Shape { op: "adam_step", lhs: p.shape(), rhs: g.shape() });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
