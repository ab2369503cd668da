use std::f64::consts::PI;

use super::Dataset;
use crate::autodiff::{Real, Tensor};
use crate::flow::Layout;
use crate::rng::{normal, SeedStream};
use rand::Rng;

/// Ground truth of the ring mixture: equal-weight isotropic Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct Toy2dParams {
    pub centers: Vec<[Real; 2]>,
    pub std: Real,
    pub radius: Real,
}

impl Toy2dParams {
    pub fn ring(classes: usize) -> Self {
        let radius = 3.0;
        let centers = (0..classes)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / classes as f64;
                [radius * a.cos() as Real, radius * a.sin() as Real]
            })
            .collect();
        Self {
            centers,
            std: 0.35,
            radius,
        }
    }

    /// Mixture log-density at a point.
    pub fn log_density(&self, p: [Real; 2]) -> Real {
        let var = self.std * self.std;
        let log_norm = -(2.0 * PI as Real * var).ln() - (self.centers.len() as Real).ln();
        let terms: Vec<Real> = self
            .centers
            .iter()
            .map(|c| {
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                log_norm - d2 / (2.0 * var)
            })
            .collect();
        let m = terms.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<Real>().ln()
    }
}

/// `n` points from a ring of `classes` Gaussian blobs. The single attribute is
/// the sign of each point's radial offset from its blob center.
pub fn gen_toy2d(stream: SeedStream, classes: usize, n: usize) -> (Dataset, Toy2dParams) {
    assert!(classes >= 2, "toy2d needs at least two classes");
    let params = Toy2dParams::ring(classes);
    let mut rng = stream.rng();
    let mut x = Vec::with_capacity(2 * n);
    let mut ids = Vec::with_capacity(n);
    let mut attrs = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..classes);
        let c = params.centers[k];
        let (e0, e1) = (normal(&mut rng), normal(&mut rng));
        let radial = (e0 * c[0] + e1 * c[1]) / params.radius;
        x.push(c[0] + params.std * e0);
        x.push(c[1] + params.std * e1);
        ids.push(k);
        attrs.push(u8::from(radial > 0.0));
    }
    let ds = Dataset::new(
        Tensor::new(vec![n, 2], x).expect("shape"),
        Layout::vector(2),
        ids,
        classes,
        attrs,
        vec!["radial".into()],
        false,
    )
    .expect("consistent toy data");
    (ds, params)
}
