//! Dense row-major tensors and the matrix kernels behind the sequence
//! models. Everything is `f64`; shapes are dynamic.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// A dense row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows/cols of a tensor interpreted as 2-D (trailing dim = cols).
    pub fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("empty shape");
        (self.data.len() / cols, cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `C = A(m x k) · B(k x n)`, row-major, accumulating into a fresh buffer.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    gemm_nn_acc(m, k, n, a, b, c);
}

/// `C += A · B`; the vectorization-friendly ikj loop.
pub fn gemm_nn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `C += A^T(k x m)^T... `: computes `C(k_cols) = A(m x k)^T · B(m x n)`,
/// i.e. `C[k x n] += sum_r a[r, :]^T b[r, :]`.
pub fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for r in 0..m {
        let a_row = &a[r * k..(r + 1) * k];
        let b_row = &b[r * n..(r + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `C += A(m x k) · B(n x k)^T` via a scratch transpose of `B`.
pub fn gemm_nt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let mut bt = vec![0.0; k * n];
    for r in 0..n {
        for cc in 0..k {
            bt[cc * n + r] = b[r * k + cc];
        }
    }
    gemm_nn_acc(m, k, n, a, &bt, c);
}

/// Grouped matmul: `g` independent `m x k · k x n` products laid out
/// contiguously.
pub fn bmm_nn(g: usize, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    c.fill(0.0);
    for i in 0..g {
        gemm_nn_acc(m, k, n, &a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n],
            &mut c[i * m * n..(i + 1) * m * n]);
    }
}

/// Grouped `A · B^T`: `g` independent `m x k` by `n x k` products.
pub fn bmm_nt(g: usize, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    c.fill(0.0);
    for i in 0..g {
        gemm_nt_acc(m, k, n, &a[i * m * k..(i + 1) * m * k], &b[i * n * k..(i + 1) * n * k],
            &mut c[i * m * n..(i + 1) * m * n]);
    }
}

/// Grouped `A · B` accumulate.
pub fn bmm_nn_acc(g: usize, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..g {
        gemm_nn_acc(m, k, n, &a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n],
            &mut c[i * m * n..(i + 1) * m * n]);
    }
}

/// Grouped `A^T · B` accumulate, used by grouped backward passes.
pub fn bmm_tn_acc(g: usize, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..g {
        gemm_tn_acc(m, k, n, &a[i * m * k..(i + 1) * m * k], &b[i * m * n..(i + 1) * m * n],
            &mut c[i * k * n..(i + 1) * k * n]);
    }
}

/// Grouped `A · B^T` accumulate.
pub fn bmm_nt_acc(g: usize, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..g {
        gemm_nt_acc(m, k, n, &a[i * m * k..(i + 1) * m * k], &b[i * n * k..(i + 1) * n * k],
            &mut c[i * m * n..(i + 1) * m * n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_nn_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm_nn(2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_tn_matches_explicit_transpose() {
        let m = 3;
        let k = 4;
        let n = 2;
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.7 + 0.2).collect();
        let mut c = vec![0.0; k * n];
        gemm_tn_acc(m, k, n, &a, &b, &mut c);
        let mut want = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                for r in 0..m {
                    want[i * n + j] += a[r * k + i] * b[r * n + j];
                }
            }
        }
        for (x, y) in c.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_nt_matches_explicit_transpose() {
        let m = 2;
        let k = 3;
        let n = 4;
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 - 2.5).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        gemm_nt_acc(m, k, n, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..n {
                let mut want = 0.0;
                for kk in 0..k {
                    want += a[i * k + kk] * b[j * k + kk];
                }
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bmm_groups_are_independent() {
        let g = 2;
        let (m, k, n) = (2, 2, 2);
        let a: Vec<f64> = (0..g * m * k).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..g * k * n).map(|i| (i % 3) as f64).collect();
        let mut c = vec![0.0; g * m * n];
        bmm_nn(g, m, k, n, &a, &b, &mut c);
        for i in 0..g {
            let mut single = vec![0.0; m * n];
            gemm_nn(m, k, n, &a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n], &mut single);
            assert_eq!(&c[i * m * n..(i + 1) * m * n], single.as_slice());
        }
    }
}
