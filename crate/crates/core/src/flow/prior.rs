use rand::Rng;

use crate::autodiff::{Real, Tensor, Var};
use crate::error::Result;
use crate::rng::normal;

const HALF_LN_2PI: Real = 0.918_938_533_204_672_8;

/// Standard normal prior over the flattened latent. The temperature only
/// scales samples; densities are always evaluated at unit variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrior {
    pub temperature: Real,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

impl GaussianPrior {
    pub fn new(temperature: Real) -> Self {
        Self { temperature }
    }

    /// Per-sample `Σ[-z²/2 - ln(2π)/2]` for `z: (B, D)`.
    pub fn log_prob<'t>(&self, z: Var<'t>) -> Result<Var<'t>> {
        let d = z.shape()[1] as Real;
        Ok(z.square().sum_axes(&[1])?.mul_scalar(-0.5).add_scalar(-d * HALF_LN_2PI))
    }

    /// Same as [`log_prob`](Self::log_prob) on plain values.
    pub fn log_prob_values(&self, z: &Tensor) -> Vec<Real> {
        let d = z.row_len();
        (0..z.rows())
            .map(|i| {
                -0.5 * z.row(i).iter().map(|v| v * v).sum::<Real>() - d as Real * HALF_LN_2PI
            })
            .collect()
    }

    /// `n` draws from `N(0, τ²I)` in `dim` dimensions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> Tensor {
        let data = (0..n * dim).map(|_| self.temperature * normal(rng)).collect();
        Tensor::new(vec![n, dim], data).expect("shape")
    }
}
