#![allow(dead_code)]

use caglow::autodiff::{Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: Real = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: Real, hi: Real, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error with a floor so that
/// vanishing gradients are compared absolutely.
pub fn rel_err(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central-difference gradient of a scalar function of several tensors,
/// evaluated without any gradient tracking.
pub fn numeric_grads(f: &dyn Fn(&[Tensor]) -> Real, inputs: &[Tensor]) -> Vec<Vec<Real>> {
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].numel());
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            minus[k].data_mut()[i] -= FD_STEP;
            g.push((f(&plus) - f(&minus)) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

/// Compares tape gradients of `build` against central differences; returns
/// the worst relative error.
pub fn check_grads(build: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>, inputs: &[Tensor]) -> Real {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let loss = build(&tape, &vars);
    tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x)).collect();
        build(&t, &vs).item()
    };
    let numeric = numeric_grads(&eval, inputs);
    let mut worst: Real = 0.0;
    for (v, num) in vars.iter().zip(&numeric) {
        let analytic = tape.grad(*v).map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; num.len()]);
        for (a, n) in analytic.iter().zip(num) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

/// Determinant by Laplace expansion over column subsets (bitmask dynamic
/// programming, O(n·2ⁿ)); independent of any factorization.
pub fn det_by_minors(m: &[Real], n: usize) -> Real {
    assert!(n <= 20);
    // minors[mask] = det of rows [0, popcount(mask)) restricted to columns in mask
    let mut minors = vec![0.0; 1 << n];
    minors[0] = 1.0;
    for mask in 1usize..(1 << n) {
        let row = mask.count_ones() as usize - 1;
        let mut acc = 0.0;
        let mut sign_pos = 0;
        for c in 0..n {
            if mask & (1 << c) != 0 {
                let sub = minors[mask & !(1 << c)];
                let sign = if sign_pos % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * m[row * n + c] * sub;
                sign_pos += 1;
            }
        }
        minors[mask] = acc;
    }
    minors[(1 << n) - 1]
}

/// Determinant by the permutation (Leibniz) expansion; tiny matrices only.
pub fn det_by_permutations(m: &[Real], n: usize) -> Real {
    fn rec(m: &[Real], n: usize, row: usize, used: &mut Vec<bool>, acc: Real, total: &mut Real, perm: &mut Vec<usize>) {
        if row == n {
            // sign of permutation via inversion count
            let mut inv = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if perm[i] > perm[j] {
                        inv += 1;
                    }
                }
            }
            let s = if inv % 2 == 0 { 1.0 } else { -1.0 };
            *total += s * acc;
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                perm.push(c);
                rec(m, n, row + 1, used, acc * m[row * n + c], total, perm);
                perm.pop();
                used[c] = false;
            }
        }
    }
    let mut total = 0.0;
    rec(m, n, 0, &mut vec![false; n], 1.0, &mut total, &mut Vec::new());
    total
}

/// Dense Jacobian of `f: R^d → R^d` by central differences.
pub fn jacobian_fd(f: &dyn Fn(&[Real]) -> Vec<Real>, x: &[Real]) -> Vec<Real> {
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    jac
}

/// Compares parameter gradients of a scalar loss against central differences
/// over at most `per_tensor` entries of every parameter; returns the worst
/// relative error.
pub fn check_param_grads<M: caglow::nn::Module>(
    model: &mut M,
    loss: &dyn for<'t> Fn(&M, &'t Tape) -> Var<'t>,
    per_tensor: usize,
) -> Real {
    model.zero_grad();
    {
        let tape = Tape::new();
        let l = loss(model, &tape);
        tape.backward(l).unwrap();
        tape.accumulate_into(model.parameters_mut());
    }
    let analytic: Vec<Vec<Real>> = model
        .parameters()
        .iter()
        .map(|p| p.tensor.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
        .collect();
    let eval = |m: &M| {
        let tape = Tape::new();
        loss(m, &tape).item()
    };
    let mut worst: Real = 0.0;
    for k in 0..analytic.len() {
        let n = analytic[k].len();
        let stride = (n / per_tensor).max(1);
        for i in (0..n).step_by(stride) {
            let orig = model.parameters()[k].tensor.data()[i];
            model.parameters_mut()[k].tensor.data_mut()[i] = orig + FD_STEP;
            let plus = eval(model);
            model.parameters_mut()[k].tensor.data_mut()[i] = orig - FD_STEP;
            let minus = eval(model);
            model.parameters_mut()[k].tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k][i], numeric));
        }
    }
    worst
}
