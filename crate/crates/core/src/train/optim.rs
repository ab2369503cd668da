use std::collections::HashMap;

use crate::autodiff::{Parameter, Real};

/// Adaptive moment estimation with bias correction. State is keyed by
/// parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
    step: u64,
    moments: HashMap<String, (Vec<Real>, Vec<Real>)>,
}

impl Adam {
    pub fn new(lr: Real, betas: (Real, Real)) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients and clears them.
    /// Parameters without a gradient are left untouched.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut Parameter>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params {
            if !p.trainable() {
                continue;
            }
            let Some(grad) = p.tensor.grad().map(|g| g.to_vec()) else { continue };
            let n = grad.len();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let data = p.tensor.data_mut();
            for i in 0..n {
                let g = grad[i] + self.weight_decay * data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            p.tensor.zero_grad();
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(params: &[&mut Parameter]) -> Real {
    params
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flat_map(|g| g.iter().map(|v| v * v))
        .sum::<Real>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Parameter], max_norm: Real) -> Real {
    let norm = grad_norm(params);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}
