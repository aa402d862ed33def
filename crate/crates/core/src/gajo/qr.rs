//! Least-squares solving through an upper-triangular square-root information
//! factor: dense Householder QR for one-shot systems, and Givens row insertion
//! for factors that grow as measurements arrive.

use nalgebra::{DMatrix, DVector};

use super::GajoError;

/// Relative size below which a diagonal entry of `R` counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Upper-triangular `R` and right-hand side `d` with `RᵀR = AᵀA` and
/// `Rᵀd = Aᵀb` for every row absorbed so far.
///
/// Rows are stored densely; `row_end[j]` bounds the nonzeros of row `j`, so
/// inserting a row from a banded system only touches the band.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareRootInfo {
    r: DMatrix<f64>,
    d: DVector<f64>,
    row_end: Vec<usize>,
    /// Squared norm of the part of `b` outside the range of `A`.
    residual_sq: f64,
    scratch: Vec<f64>,
}

impl SquareRootInfo {
    pub fn new(n: usize) -> Self {
        Self {
            r: DMatrix::zeros(n, n),
            d: DVector::zeros(n),
            row_end: (0..n).collect(),
            residual_sq: 0.0,
            scratch: vec![0.0; n],
        }
    }

    pub fn from_parts(r: DMatrix<f64>, d: DVector<f64>) -> Result<Self, GajoError> {
        let n = r.nrows();
        if r.ncols() != n || d.len() != n {
            return Err(GajoError::LengthMismatch {
                got: r.ncols().max(d.len()),
                expected: n,
            });
        }
        let row_end = (0..n)
            .map(|i| (i..n).rev().find(|&j| r[(i, j)] != 0.0).map_or(i, |j| j + 1))
            .collect();
        Ok(Self {
            r,
            d,
            row_end,
            residual_sq: 0.0,
            scratch: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn residual_sq(&self) -> f64 {
        self.residual_sq
    }

    /// `RᵀR`, the Gauss-Newton information matrix.
    pub fn information(&self) -> DMatrix<f64> {
        self.r.transpose() * &self.r
    }

    /// Appends `k` zero columns (new unknowns ordered last).
    pub fn add_columns(&mut self, k: usize) {
        let n = self.dim();
        let m = n + k;
        self.r = self.r.clone().resize(m, m, 0.0);
        self.d = self.d.clone().resize_vertically(m, 0.0);
        self.row_end.extend(n..m);
        self.scratch.resize(m, 0.0);
    }

    /// Absorbs the row `[0 … 0, coeffs, 0 … 0]·x = rhs`, with `coeffs`
    /// starting at column `start`, using Givens rotations.
    pub fn add_row(&mut self, start: usize, coeffs: &[f64], mut rhs: f64) {
        let n = self.dim();
        assert!(start + coeffs.len() <= n, "row exceeds factor width");
        let w = &mut self.scratch;
        w[start..start + coeffs.len()].copy_from_slice(coeffs);
        let mut hi = start + coeffs.len();
        let mut j = start;
        while j < hi {
            let a = w[j];
            if a == 0.0 {
                j += 1;
                continue;
            }
            let rjj = self.r[(j, j)];
            let rho = rjj.hypot(a);
            let (c, s) = (rjj / rho, a / rho);
            let end = hi.max(self.row_end[j]);
            for col in j..end {
                let rv = self.r[(j, col)];
                let wv = w[col];
                self.r[(j, col)] = c * rv + s * wv;
                w[col] = -s * rv + c * wv;
            }
            w[j] = 0.0;
            let dv = self.d[j];
            self.d[j] = c * dv + s * rhs;
            rhs = -s * dv + c * rhs;
            self.row_end[j] = end;
            hi = end;
            j += 1;
        }
        for v in &mut w[start..hi] {
            *v = 0.0;
        }
        self.residual_sq += rhs * rhs;
    }

    /// Back-substitution for `R x = d`.
    pub fn solve(&self) -> Result<DVector<f64>, GajoError> {
        let n = self.dim();
        let scale = (0..n).map(|i| self.r[(i, i)].abs()).fold(0.0, f64::max);
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let rii = self.r[(i, i)];
            if rii.abs() <= RANK_TOL * scale || rii == 0.0 {
                return Err(GajoError::RankDeficient { column: i });
            }
            let mut acc = self.d[i];
            for j in i + 1..self.row_end[i] {
                acc -= self.r[(i, j)] * x[j];
            }
            x[i] = acc / rii;
        }
        Ok(x)
    }

    /// Fixes the first `k` unknowns at `fixed` and returns the factor of the
    /// remaining ones, conditioned on that choice.
    pub fn condition_on_leading(&self, k: usize, fixed: &[f64]) -> SquareRootInfo {
        let n = self.dim();
        assert_eq!(fixed.len(), k);
        let m = n - k;
        let mut out = SquareRootInfo::new(m);
        for i in k..n {
            for j in i..self.row_end[i] {
                out.r[(i - k, j - k)] = self.r[(i, j)];
            }
            out.d[i - k] = self.d[i];
            out.row_end[i - k] = self.row_end[i].max(i + 1) - k;
        }
        out.residual_sq = self.residual_sq;
        let mut coeffs = Vec::new();
        for i in 0..k {
            if self.row_end[i] <= k {
                let mut rhs = self.d[i];
                for j in i..self.row_end[i] {
                    rhs -= self.r[(i, j)] * fixed[j];
                }
                out.residual_sq += rhs * rhs;
                continue;
            }
            let mut rhs = self.d[i];
            for j in i..k {
                rhs -= self.r[(i, j)] * fixed[j];
            }
            coeffs.clear();
            coeffs.extend((k..self.row_end[i]).map(|j| self.r[(i, j)]));
            out.add_row(0, &coeffs, rhs);
        }
        out
    }
}

/// Householder QR of `A` followed by back-substitution: returns the
/// least-squares solution of `A x ≈ b` together with its square-root
/// information factor.
pub fn qr_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, SquareRootInfo), GajoError> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(GajoError::LengthMismatch { got: b.len(), expected: m });
    }
    if m < n {
        return Err(GajoError::Underdetermined { rows: m, cols: n });
    }
    let col_scale = (0..n).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let mut a = a.clone();
    let mut b = b.clone();
    let mut v = DVector::<f64>::zeros(m);
    for k in 0..n {
        let norm = a.view((k, k), (m - k, 1)).norm();
        if norm <= RANK_TOL * col_scale || norm == 0.0 {
            return Err(GajoError::RankDeficient { column: k });
        }
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
        for i in k..m {
            v[i] = a[(i, k)];
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..m).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i] * a[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                a[(i, j)] -= f * v[i];
            }
        }
        let dot: f64 = (k..m).map(|i| v[i] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            b[i] -= f * v[i];
        }
    }
    let r = a.view((0, 0), (n, n)).upper_triangle();
    let d = b.rows(0, n).into_owned();
    let residual_sq = b.rows(n, m - n).norm_squared();
    let mut info = SquareRootInfo::from_parts(r, d)?;
    info.residual_sq = residual_sq;
    let x = info.solve()?;
    Ok((x, info))
}
