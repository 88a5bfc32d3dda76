//! Small dense and block-banded linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Serialize a `DMatrix<f64>` as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Same as [`serde_rows`] for an optional matrix.
pub mod serde_rows_opt {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| super::from_rows(&r).map_err(D::Error::custom))
            .transpose()
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Checks that `m` is square, symmetric and positive semidefinite.
pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Config(format!("{what} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Config(format!("{what} must be symmetric")));
    }
    if m.nrows() > 0 {
        let (min, max) = sym_eig_range(m);
        if min < -1e-10 * max.abs().max(1.0) {
            return Err(Error::Config(format!(
                "{what} must be positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
    }
    Ok(())
}

/// Solve a symmetric positive definite system, falling back to LU when the
/// Cholesky factorization fails on a numerically indefinite matrix.
pub fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// Symmetric positive definite block-tridiagonal matrix with `d x d` blocks.
///
/// `diag[l]` is block `(l, l)` and `upper[l]` is block `(l, l+1)`; block
/// `(l+1, l)` is `upper[l]^T`. In node-major ordering the scalar bandwidth is
/// `2d - 1` on each side of the diagonal.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn new(nblocks: usize, d: usize) -> Self {
        Self {
            diag: vec![DMatrix::zeros(d, d); nblocks],
            upper: vec![DMatrix::zeros(d, d); nblocks.saturating_sub(1)],
        }
    }

    pub fn nblocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_dim(&self) -> usize {
        self.diag.first().map_or(0, |b| b.nrows())
    }

    /// Expand to a dense matrix (tests and diagnostics).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.block_dim();
        let n = self.nblocks() * d;
        let mut m = DMatrix::zeros(n, n);
        for (l, b) in self.diag.iter().enumerate() {
            m.view_mut((l * d, l * d), (d, d)).copy_from(b);
        }
        for (l, b) in self.upper.iter().enumerate() {
            m.view_mut((l * d, (l + 1) * d), (d, d)).copy_from(b);
            m.view_mut(((l + 1) * d, l * d), (d, d))
                .copy_from(&b.transpose());
        }
        m
    }

    /// Solve `A x = rhs` by block Cholesky, `rhs` given per block.
    ///
    /// Returns the index of the first block whose Schur complement is not
    /// positive definite on failure.
    pub fn solve(&self, rhs: &[DVector<f64>]) -> std::result::Result<Vec<DVector<f64>>, usize> {
        let n = self.nblocks();
        assert_eq!(rhs.len(), n, "rhs block count");
        if n == 0 {
            return Ok(Vec::new());
        }
        // A = L L^T with L block lower bidiagonal: diagonal factors `lower[l]`
        // and sub-diagonal blocks `sub[l]` at position (l+1, l).
        let mut lower: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);

        let mut schur = self.diag[0].clone();
        let mut b = rhs[0].clone();
        for l in 0..n {
            let chol = schur.clone().cholesky().ok_or(l)?;
            let ll = chol.l();
            let yl = ll
                .solve_lower_triangular(&b)
                .expect("cholesky factor has positive diagonal");
            if l + 1 < n {
                // sub^T = L_l^{-1} U_l
                let st = ll
                    .solve_lower_triangular(&self.upper[l])
                    .expect("cholesky factor has positive diagonal");
                let s = st.transpose();
                schur = &self.diag[l + 1] - &s * &st;
                b = &rhs[l + 1] - &s * &yl;
                sub.push(s);
            }
            lower.push(ll);
            y.push(yl);
        }

        let mut x = vec![DVector::zeros(0); n];
        for l in (0..n).rev() {
            let mut r = y[l].clone();
            if l + 1 < n {
                r -= sub[l].transpose() * &x[l + 1];
            }
            x[l] = lower[l]
                .tr_solve_lower_triangular(&r)
                .expect("cholesky factor has positive diagonal");
        }
        Ok(x)
    }
}
