//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values live in plain [`Tensor`]s. Differentiable computations are recorded
//! on a [`Tape`] that is built fresh for every step and dropped afterwards;
//! [`Var`] is a cheap handle to one node of that tape. Model parameters are
//! bound onto the tape by name, so the same [`Parameter`] used twice in a graph
//! accumulates a single gradient.

mod linalg;
mod shape;
mod tape;
mod tensor;

pub use linalg::{determinant, inverse, lu_factor, orthogonal, LuFactors};
pub use tape::{ReduceKind, Tape, Var};
pub use tensor::{Parameter, Tensor};

#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// Row-major `c = a·b + beta·c` with explicit strides, so transposed operands
/// need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    rsa: isize,
    csa: isize,
    b: &[Real],
    rsb: isize,
    csb: isize,
    beta: Real,
    c: &mut [Real],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices covering the strided extents; all call
    // sites in this crate use dense row-major buffers of exactly m*k, k*n, m*n.
    unsafe {
        #[cfg(not(feature = "single-precision"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "single-precision")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
