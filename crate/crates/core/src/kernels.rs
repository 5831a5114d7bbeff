//! Dense matrix kernels over row-major slices. All of them accumulate into `out`.

/// `out[m x n] += a[m x k] * b[k x n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), out);
}

/// `out[m x n] += a[m x k] * b[n x k]^T`
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (1, k), out);
}

/// `out[p x q] += a[r x p]^T * b[r x q]`
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], r: usize, p: usize, q: usize) {
    gemm(p, r, q, a, (1, p), b, (q, 1), out);
}

/// `out[m x n] += A[m x k] * B[k x n]` with `(row, column)` strides for A and B.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), out: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n, "gemm operand sizes");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_product() {
        let a: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b: [f64; 6] = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut out = [0.0; 4];
        matmul(&a, &b, &mut out, 2, 3, 2);
        assert_eq!(out, [58.0, 64.0, 139.0, 154.0]);

        // b^T stored as 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut out2 = [0.0; 4];
        matmul_nt(&a, &bt, &mut out2, 2, 3, 2);
        assert_eq!(out2, out);

        // a^T stored as 3x2, so a^T^T * b == a * b
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut out3 = [0.0; 4];
        matmul_tn(&at, &b, &mut out3, 3, 2, 2);
        assert_eq!(out3, out);
    }
}
