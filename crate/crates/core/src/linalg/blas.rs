//! Level-1 helpers written so LLVM vectorizes them. Summation order is fixed,
//! so results are bitwise reproducible for a given build.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y -= alpha * x`
#[inline]
pub(crate) fn axpy_neg(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= alpha * xi;
    }
}

/// Builds a Householder reflector `H = I - tau v v^T` with `v[0] = 1` that maps
/// `x` to `(beta, 0, ..., 0)`. On return `x[0] = beta` and `x[1..]` holds
/// `v[1..]`. Returns `tau` (zero when `x` is already zero below the head).
pub(crate) fn make_householder(x: &mut [f64]) -> f64 {
    let tail_norm = norm2(&x[1..]);
    if tail_norm == 0.0 {
        return 0.0;
    }
    let x0 = x[0];
    let norm = x0.hypot(tail_norm);
    let beta = if x0 >= 0.0 { -norm } else { norm };
    let scale = 1.0 / (x0 - beta);
    for v in &mut x[1..] {
        *v *= scale;
    }
    x[0] = beta;
    (beta - x0) / beta
}

/// Applies `H = I - tau v v^T` (with `v = [1, v_tail]`) to `y`.
#[inline]
pub(crate) fn apply_householder(v_tail: &[f64], tau: f64, y: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let (head, rest) = y.split_first_mut().expect("non-empty");
    let w = *head + dot(v_tail, rest);
    let tw = tau * w;
    *head -= tw;
    axpy_neg(tw, v_tail, rest);
}
