//! Matrix kernels. All products go through `matrixmultiply`, which is
//! single-threaded here and therefore reduces in a fixed order.

/// Strided read-only matrix view into a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `[rows, cols]` view starting at `offset`.
    pub fn rm(data: &'a [f64], offset: usize, cols: usize) -> Self {
        Self { data, offset, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `[cols, rows]` block.
    pub fn rm_t(data: &'a [f64], offset: usize, stored_cols: usize) -> Self {
        Self { data, offset, rs: 1, cs: stored_cols }
    }

    pub fn strided(data: &'a [f64], offset: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rs, cs }
    }
}

/// `c[m x n] = beta * c + a[m x k] * b[k x n]` over strided views, with `c`
/// row-major from `c_off` with row stride `c_rs`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    c_off: usize,
    c_rs: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                c[c_off + i * c_rs..c_off + i * c_rs + n].fill(0.0);
            }
        }
        return;
    }
    let last = |off: usize, rs: usize, cs: usize, r: usize, cc: usize| off + (r - 1) * rs + (cc - 1) * cs;
    assert!(last(a.offset, a.rs, a.cs, m, k) < a.data.len(), "gemm: lhs view out of bounds");
    assert!(last(b.offset, b.rs, b.cs, k, n) < b.data.len(), "gemm: rhs view out of bounds");
    assert!(last(c_off, c_rs, 1, m, n) < c.len(), "gemm: output view out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every view was bounds-checked above against its backing slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            c_rs as isize,
            1,
        );
    }
}

/// Row-major product `a[m x k] * b[k x n]`; either operand may be supplied
/// transposed (stored as `[k x m]` / `[n x k]`).
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let av = if a_t { MatRef::rm_t(a, 0, m) } else { MatRef::rm(a, 0, k) };
    let bv = if b_t { MatRef::rm_t(b, 0, k) } else { MatRef::rm(b, 0, n) };
    gemm_strided(m, k, n, av, bv, &mut c, 0, n, false);
    c
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044_715 * x * x * x);
    0.5 * x * (1.0 + fast_tanh(u))
}

/// `tanh` through a single `exp`; within a few ulps of the library call.
#[inline]
pub(crate) fn fast_tanh(u: f64) -> f64 {
    if u.abs() < 0.125 {
        return u.tanh();
    }
    if u.abs() > 20.0 {
        return u.signum();
    }
    let e = (2.0 * u).exp();
    (e - 1.0) / (e + 1.0)
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044_715 * x * x * x);
    let t = fast_tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x)
}

/// Numerically stable in-place softmax over one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let c = gemm(2, 3, 2, &a, false, &b, false);
        assert_eq!(c, vec![4.0, 5.0, 10.0, 11.0]);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        assert_eq!(gemm(2, 3, 2, &at, true, &bt, true), c);
    }

    #[test]
    fn fast_tanh_matches_library() {
        for i in -4000..4000 {
            let u = i as f64 * 0.0071;
            assert!((fast_tanh(u) - u.tanh()).abs() < 1e-14, "{u}");
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
