//! Dense row-major matrices and the symmetric eigensolver used throughout the
//! crate.
//!
//! The eigensolver is a cyclic Jacobi iteration with the usual threshold
//! strategy: plane rotations annihilate one off-diagonal element at a time and
//! the accumulated rotations form the eigenvector matrix. Jacobi is foolproof
//! for real symmetric input and delivers the reconstruction accuracy the walk
//! and Fisher modules rely on.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows processed per parallel task in the batched matrix products. Fixed so
/// that results are bitwise identical for any worker count.
const GEMM_CHUNK_ROWS: usize = 128;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols));
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Mat {
            rows: n_rows,
            cols: n_cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Default sweep cap for [`sym_eigen`]. Cyclic Jacobi converges in well under
/// ten sweeps for the matrix sizes used here; hitting the cap signals
/// pathological input.
pub const DEFAULT_MAX_SWEEPS: usize = 50;

/// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the orthogonal matrix whose
/// columns are the matching eigenvectors, so `V · diag(λ) · Vᵀ` reconstructs
/// the input. Fails with [`Error::NoConvergence`] if the off-diagonal mass has
/// not vanished after `max_sweeps` sweeps.
pub fn sym_eigen(a: &Mat, max_sweeps: usize) -> Result<(Vec<f64>, Mat)> {
    assert_eq!(a.rows(), a.cols(), "sym_eigen needs a square matrix");
    let n = a.rows();
    let mut a = a.clone();
    let mut v = Mat::identity(n);
    // Current eigenvalue estimates and the per-sweep accumulators of the
    // classic Jacobi bookkeeping.
    let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    for sweep in 0..max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].abs())
            .sum();
        if off == 0.0 {
            return Ok(sort_eigenpairs(d, v));
        }
        // Skip tiny rotations during the first sweeps.
        let threshold = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };

        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let g = 100.0 * apq.abs();
                // Once an element is negligible relative to both diagonal
                // entries, set it to zero and move on.
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    a[(p, q)] = 0.0;
                    continue;
                }
                if apq.abs() <= threshold {
                    continue;
                }

                let h = d[q] - d[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        t = -t;
                    }
                    t
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                z[p] -= h;
                z[q] += h;
                d[p] -= h;
                d[q] += h;
                a[(p, q)] = 0.0;

                let rotate = |x: &mut Mat, i: usize, j: usize, k: usize, l: usize| {
                    let g = x[(i, j)];
                    let h = x[(k, l)];
                    x[(i, j)] = g - s * (h + g * tau);
                    x[(k, l)] = h + s * (g - h * tau);
                };
                for j in 0..p {
                    rotate(&mut a, j, p, j, q);
                }
                for j in (p + 1)..q {
                    rotate(&mut a, p, j, j, q);
                }
                for j in (q + 1)..n {
                    rotate(&mut a, p, j, q, j);
                }
                for j in 0..n {
                    rotate(&mut v, j, p, j, q);
                }
            }
        }

        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }

    Err(Error::NoConvergence { max_sweeps })
}

fn sort_eigenpairs(d: Vec<f64>, v: Mat) -> (Vec<f64>, Mat) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let eigenvectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    (eigenvalues, eigenvectors)
}

/// `out = x · wᵀ` with `x: m×k`, `w: n×k`, `out: m×n`.
///
/// The batch rows are split into fixed-size chunks evaluated in parallel;
/// every output element is reduced in a fixed order, so results do not depend
/// on the worker count.
pub fn gemm_nt(out: &mut Mat, x: &Mat, w: &Mat) {
    assert_eq!(x.cols(), w.cols());
    assert_eq!((out.rows(), out.cols()), (x.rows(), w.rows()));
    let (k, n) = (x.cols(), w.rows());
    out.data
        .par_chunks_mut(GEMM_CHUNK_ROWS * n)
        .zip(x.data.par_chunks(GEMM_CHUNK_ROWS * k))
        .for_each(|(out_chunk, x_chunk)| {
            let m = x_chunk.len() / k;
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    x_chunk.as_ptr(),
                    k as isize,
                    1,
                    w.data.as_ptr(),
                    1,
                    k as isize,
                    0.0,
                    out_chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// `out = a · b` with `a: m×k`, `b: k×n`, `out: m×n`.
pub fn gemm_nn(out: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols(), b.rows());
    assert_eq!((out.rows(), out.cols()), (a.rows(), b.cols()));
    let (k, n) = (a.cols(), b.cols());
    out.data
        .par_chunks_mut(GEMM_CHUNK_ROWS * n)
        .zip(a.data.par_chunks(GEMM_CHUNK_ROWS * k))
        .for_each(|(out_chunk, a_chunk)| {
            let m = a_chunk.len() / k;
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a_chunk.as_ptr(),
                    k as isize,
                    1,
                    b.data.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    out_chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// `out = aᵀ · b` with `a: k×m`, `b: k×n`, `out: m×n`.
///
/// Chunked over output rows (columns of `a`); the reduction over `k` happens
/// inside a single `dgemm` call per chunk, in a fixed order.
pub fn gemm_tn(out: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.rows(), b.rows());
    assert_eq!((out.rows(), out.cols()), (a.cols(), b.cols()));
    let (k, n) = (a.rows(), b.cols());
    let a_cols = a.cols();
    out.data
        .par_chunks_mut(GEMM_CHUNK_ROWS * n)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let row0 = chunk_idx * GEMM_CHUNK_ROWS;
            let m = out_chunk.len() / n;
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr().add(row0),
                    1,
                    a_cols as isize,
                    b.data.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    out_chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(values: &[f64], vectors: &Mat) -> Mat {
        let n = values.len();
        Mat::from_fn(n, n, |r, c| {
            (0..n)
                .map(|k| vectors[(r, k)] * values[k] * vectors[(c, k)])
                .sum()
        })
    }

    #[test]
    fn eigen_zero_matrix() {
        let a = Mat::zeros(4, 4);
        let (values, vectors) = sym_eigen(&a, DEFAULT_MAX_SWEEPS).unwrap();
        assert!(values.iter().all(|&v| v == 0.0));
        assert!(reconstruct(&values, &vectors).max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn eigen_two_by_two() {
        let mut a = Mat::zeros(2, 2);
        a[(0, 1)] = -0.7;
        a[(1, 0)] = -0.7;
        let (values, vectors) = sym_eigen(&a, DEFAULT_MAX_SWEEPS).unwrap();
        assert!((values[0] + 0.7).abs() < 1e-14);
        assert!((values[1] - 0.7).abs() < 1e-14);
        assert!(reconstruct(&values, &vectors).max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn eigen_reconstruction_and_orthogonality() {
        // Deterministic full symmetric matrix.
        let n = 12;
        let a = Mat::from_fn(n, n, |r, c| {
            let (r, c) = (r.min(c) as f64, r.max(c) as f64);
            ((r * 31.0 + c * 17.0).sin() + 0.3 * (r - c).cos()) / (1.0 + (r - c).abs())
        });
        let a = Mat::from_fn(n, n, |r, c| 0.5 * (a[(r, c)] + a[(c, r)]));
        let (values, vectors) = sym_eigen(&a, DEFAULT_MAX_SWEEPS).unwrap();
        assert!(values.windows(2).all(|w| w[0] <= w[1]), "ascending order");
        assert!(reconstruct(&values, &vectors).max_abs_diff(&a) < 1e-12);
        let vt_v = {
            let mut out = Mat::zeros(n, n);
            gemm_tn(&mut out, &vectors, &vectors);
            out
        };
        assert!(vt_v.max_abs_diff(&Mat::identity(n)) < 1e-12);
    }

    #[test]
    fn eigen_no_convergence_error() {
        let n = 8;
        let a = Mat::from_fn(n, n, |r, c| 1.0 / (1.0 + (r + c) as f64));
        match sym_eigen(&a, 1) {
            Err(Error::NoConvergence { max_sweeps: 1 }) => {}
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn gemm_variants_match_naive() {
        let m = 150; // crosses the chunk boundary
        let k = 17;
        let n = 9;
        let x = Mat::from_fn(m, k, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        let w = Mat::from_fn(n, k, |r, c| ((r + c * 5) as f64 * 0.11).cos());
        let naive = Mat::from_fn(m, n, |r, c| {
            (0..k).map(|j| x[(r, j)] * w[(c, j)]).sum()
        });
        let mut out = Mat::zeros(m, n);
        gemm_nt(&mut out, &x, &w);
        assert!(out.max_abs_diff(&naive) < 1e-12);

        let b = w.transpose(); // k×n
        let mut out2 = Mat::zeros(m, n);
        gemm_nn(&mut out2, &x, &b);
        assert!(out2.max_abs_diff(&naive) < 1e-12);

        // out3 = xᵀ·x, compare against the naive product.
        let gram = Mat::from_fn(k, k, |r, c| {
            (0..m).map(|i| x[(i, r)] * x[(i, c)]).sum()
        });
        let mut out3 = Mat::zeros(k, k);
        gemm_tn(&mut out3, &x, &x);
        assert!(out3.max_abs_diff(&gram) < 1e-10);
    }
}
