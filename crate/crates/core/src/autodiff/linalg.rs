//! Small dense linear algebra: LU with partial pivoting and friends.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Packed `PA = LU` factorization (unit-diagonal L below, U on and above).
#[derive(Clone, Debug)]
pub struct LuFactors {
    n: usize,
    lu: Vec<Real>,
    perm: Vec<usize>,
    swaps: usize,
}

/// Factorizes a square matrix. An exactly zero pivot is reported as a
/// singular transform carrying the pivot index.
pub fn lu_factor(m: &Tensor) -> Result<LuFactors> {
    let shape = m.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::InvalidShape(format!("LU of non-square shape {shape:?}")));
    }
    let n = shape[0];
    let mut lu = m.data().to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut swaps = 0;
    for k in 0..n {
        let (mut p, mut best) = (k, lu[k * n + k].abs());
        for i in k + 1..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(Error::SingularTransform { pivot: k });
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
            swaps += 1;
        }
        let pivot = lu[k * n + k];
        for i in k + 1..n {
            let f = lu[i * n + k] / pivot;
            lu[i * n + k] = f;
            if f != 0.0 {
                for j in k + 1..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
    }
    Ok(LuFactors { n, lu, perm, swaps })
}

impl LuFactors {
    /// `(log|det|, sign)`.
    pub fn log_abs_det(&self) -> (Real, Real) {
        let mut sign: Real = if self.swaps % 2 == 0 { 1.0 } else { -1.0 };
        let mut acc = 0.0;
        for k in 0..self.n {
            let u = self.lu[k * self.n + k];
            if u < 0.0 {
                sign = -sign;
            }
            acc += u.abs().ln();
        }
        (acc, sign)
    }

    /// Solves `A x = b` for one right-hand side.
    pub fn solve(&self, b: &[Real]) -> Vec<Real> {
        let n = self.n;
        let mut x: Vec<Real> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    /// Row-major inverse.
    pub fn inverse(&self) -> Vec<Real> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        inv
    }
}

pub fn inverse(m: &Tensor) -> Result<Tensor> {
    let lu = lu_factor(m)?;
    Tensor::new(m.shape().to_vec(), lu.inverse())
}

pub fn determinant(m: &Tensor) -> Result<Real> {
    match lu_factor(m) {
        Ok(lu) => {
            let (l, s) = lu.log_abs_det();
            Ok(s * l.exp())
        }
        Err(Error::SingularTransform { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Random orthogonal matrix: modified Gram-Schmidt on a Gaussian matrix.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    loop {
        let mut cols: Vec<Vec<Real>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as Real).collect())
            .collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: Real = (0..n).map(|r| cols[i][r] * cols[j][r]).sum();
                for r in 0..n {
                    cols[i][r] -= dot * cols[j][r];
                }
            }
            let norm = cols[i].iter().map(|v| v * v).sum::<Real>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            cols[i].iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            let mut data = vec![0.0; n * n];
            for (c, col) in cols.iter().enumerate() {
                for r in 0..n {
                    data[r * n + c] = col[r];
                }
            }
            return Tensor::new(vec![n, n], data).expect("square");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_and_diagonal() {
        let (l, s) = lu_factor(&Tensor::eye(3)).unwrap().log_abs_det();
        assert_eq!((l, s), (0.0, 1.0));
        let d = Tensor::from_rows(&[[2.0, 0.0], [0.0, 0.5]]).unwrap();
        let (l, s) = lu_factor(&d).unwrap().log_abs_det();
        assert!(l.abs() < 1e-15);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn singular_reports_pivot() {
        let m = Tensor::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        match lu_factor(&m) {
            Err(Error::SingularTransform { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::new(
            vec![4, 4],
            (0..16).map(|_| rng.random::<f64>() as Real - 0.5).collect(),
        )
        .unwrap();
        let inv = inverse(&m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let v: Real = (0..4).map(|k| m.data()[i * 4 + k] * inv.data()[k * 4 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_has_unit_abs_det() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let q = orthogonal(5, &mut rng);
        let (l, _) = lu_factor(&q).unwrap().log_abs_det();
        assert!(l.abs() < 1e-10);
    }
}
