//! Minimal dense/conv building blocks with hand-written backward passes.
//!
//! Activations are stored as row-major matrices whose rows are channels and
//! whose columns enumerate `(sample, position)` pairs, so a batch of feature
//! maps is laid out channel × batch × height × width.

mod adam;
mod conv;
mod params;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv3x3, ConvCache};
pub use params::{Param, ParamSet};

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `a` is `m × k` (or `k × m` when `ta`), `b` is `k × n` (or `n × k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // row-major extents whose lengths are asserted in debug builds, and
    // `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of SiLU at the pre-activation `x`.
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
