//! Symmetric positive-definite factorizations used by the Green operator and
//! the principal eigenpair iteration.
//!
//! Two storage schemes: a dense column-major Cholesky factor and a banded
//! factor for matrices whose nonzeros stay within a fixed distance of the
//! diagonal (tridiagonal diffusion stencils in practice).

use nalgebra::DMatrix;

/// Reason a factorization was refused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PivotFailure {
    pub index: usize,
    pub pivot: f64,
}

/// Largest `|i - j|` with a nonzero entry.
pub(crate) fn bandwidth(a: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut bw = 0;
    for j in 0..n {
        let col = a.column(j);
        for i in 0..n {
            if col[i] != 0.0 {
                bw = bw.max(i.abs_diff(j));
            }
        }
    }
    bw
}

// Pivots at or below this fraction of the largest diagonal entry are treated as
// zero. A singular PSD matrix factors with O(n eps) residual pivots.
fn pivot_floor(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    (n.max(1) as f64) * f64::EPSILON * max_diag
}

#[derive(Debug, Clone)]
pub(crate) struct DenseCholesky {
    n: usize,
    // unit lower factor L below the diagonal and D on it, column-major;
    // entries above the diagonal are garbage
    l: Vec<f64>,
}

impl DenseCholesky {
    /// `A = L D L^T`; a pivot `d_j` at or below the floor is refused.
    pub fn new(a: &DMatrix<f64>) -> Result<Self, PivotFailure> {
        let n = a.nrows();
        let floor = pivot_floor(a);
        let mut l = a.as_slice().to_vec();
        for j in 0..n {
            let (done, rest) = l.split_at_mut(j * n);
            let col_j = &mut rest[..n];
            // left-looking update: col_j[j..] -= (L[j,k] d_k) * col_k[j..];
            // the diagonal slot of col_k holds d_k
            for k in 0..j {
                let col_k = &done[k * n..(k + 1) * n];
                let w = col_k[j] * col_k[k];
                if w != 0.0 {
                    for (t, s) in col_j[j..].iter_mut().zip(&col_k[j..]) {
                        *t -= w * s;
                    }
                }
            }
            let pivot = col_j[j];
            if !(pivot > floor) || !pivot.is_finite() {
                return Err(PivotFailure { index: j, pivot });
            }
            for v in &mut col_j[j + 1..] {
                *v /= pivot;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let l = &self.l;
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            let yj = b[j];
            if yj != 0.0 {
                for (bi, c) in b[j + 1..].iter_mut().zip(&col[j + 1..]) {
                    *bi -= yj * c;
                }
            }
        }
        for j in 0..n {
            b[j] /= l[j * n + j];
        }
        for j in (0..n).rev() {
            let col = &l[j * n..(j + 1) * n];
            let dot: f64 = col[j + 1..].iter().zip(&b[j + 1..]).map(|(c, x)| c * x).sum();
            b[j] -= dot;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i-bw..i] at offsets 0..bw and d_i at offset bw
    rows: Vec<f64>,
}

impl BandedCholesky {
    pub fn new(a: &DMatrix<f64>, bw: usize) -> Result<Self, PivotFailure> {
        let n = a.nrows();
        let floor = pivot_floor(a);
        let w = bw + 1;
        let mut rows = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = a[(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= rows[at(i, k)] * rows[at(k, k)] * rows[at(j, k)];
                }
                if i == j {
                    if !(sum > floor) || !sum.is_finite() {
                        return Err(PivotFailure { index: i, pivot: sum });
                    }
                    rows[at(i, i)] = sum;
                } else {
                    rows[at(i, j)] = sum / rows[at(j, j)];
                }
            }
        }
        Ok(Self { n, bw, rows })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.rows[at(i, k)] * b[k];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.rows[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.rows[at(k, i)] * b[k];
            }
            b[i] = s;
        }
    }
}

/// `L D L^T` factor of a symmetric positive-definite matrix, banded when that
/// pays off.
#[derive(Debug, Clone)]
pub(crate) enum SpdFactor {
    Dense(DenseCholesky),
    Banded(BandedCholesky),
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, bw: usize) -> Result<Self, PivotFailure> {
        let n = a.nrows();
        if 4 * (bw + 1) <= n {
            BandedCholesky::new(a, bw).map(SpdFactor::Banded)
        } else {
            DenseCholesky::new(a).map(SpdFactor::Dense)
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            SpdFactor::Dense(f) => f.solve_in_place(b),
            SpdFactor::Banded(f) => f.solve_in_place(b),
        }
    }

    pub fn is_banded(&self) -> bool {
        matches!(self, SpdFactor::Banded(_))
    }
}

/// `y = A x` skipping entries outside the band.
pub(crate) fn band_matvec(a: &DMatrix<f64>, bw: usize, x: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let mut y = vec![0.0; n];
    if bw + 1 >= n {
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for (yi, aij) in y.iter_mut().zip(a.column(j).iter()) {
                    *yi += aij * xj;
                }
            }
        }
    } else {
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw + 1).min(n);
            *yi = (lo..hi).map(|j| a[(i, j)] * x[j]).sum();
        }
    }
    y
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}
