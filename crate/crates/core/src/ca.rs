//! Correspondence-analysis transform of contingency tables.

use faer::Mat;

use crate::error::{input, Result};
use crate::svd::SvdFactors;

/// `M = R^{-1/2} (X - r c^T / N) C^{-1/2}` together with the margins used.
#[derive(Clone, Debug)]
pub struct CaDecomposition {
    pub m: Mat<f64>,
    pub row_sums: Vec<f64>,
    pub col_sums: Vec<f64>,
    pub total: f64,
}

fn margins(x: &Mat<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let (n, p) = (x.nrows(), x.ncols());
    let mut r = vec![0.0; n];
    let mut c = vec![0.0; p];
    for j in 0..p {
        for i in 0..n {
            r[i] += x[(i, j)];
            c[j] += x[(i, j)];
        }
    }
    let total = r.iter().sum();
    (r, c, total)
}

pub fn ca_transform(x: &Mat<f64>) -> Result<CaDecomposition> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let v = x[(i, j)];
            if !(v >= 0.0) || !v.is_finite() {
                return input(format!(
                    "correspondence analysis needs nonnegative finite counts; cell ({i}, {j}) is {v}"
                ));
            }
        }
    }
    ca_transform_unchecked(x)
}

/// As [`ca_transform`] but only requires positive margins (used on imputed tables).
pub(crate) fn ca_transform_unchecked(x: &Mat<f64>) -> Result<CaDecomposition> {
    let (r, c, total) = margins(x);
    if let Some(i) = r.iter().position(|&v| !(v > 0.0)) {
        return input(format!("row {i} of the table has a nonpositive sum"));
    }
    if let Some(j) = c.iter().position(|&v| !(v > 0.0)) {
        return input(format!("column {j} of the table has a nonpositive sum"));
    }
    let m = Mat::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - r[i] * c[j] / total) / (r[i] * c[j]).sqrt());
    Ok(CaDecomposition { m, row_sums: r, col_sums: c, total })
}

/// `R^{1/2} mu C^{1/2} + r c^T / N`.
pub fn ca_backtransform(mu: &Mat<f64>, dec: &CaDecomposition) -> Result<Mat<f64>> {
    let (n, p) = (dec.row_sums.len(), dec.col_sums.len());
    if mu.nrows() != n || mu.ncols() != p {
        return input(format!("estimate is {}x{} but the table is {n}x{p}", mu.nrows(), mu.ncols()));
    }
    let (r, c, t) = (&dec.row_sums, &dec.col_sums, dec.total);
    Ok(Mat::from_fn(n, p, |i, j| mu[(i, j)] * (r[i] * c[j]).sqrt() + r[i] * c[j] / t))
}

/// Principal coordinates of rows and columns from the factors of a CA-scale matrix.
#[derive(Clone, Debug)]
pub struct CaCoordinates {
    pub rows: Mat<f64>,
    pub cols: Mat<f64>,
    /// Singular values (square roots of the principal inertias).
    pub d: Vec<f64>,
}

/// `F = D_r^{-1/2} U S` and `G = D_c^{-1/2} V S` with masses `r/N`, `c/N`.
pub fn ca_coordinates(factors: &SvdFactors, dec: &CaDecomposition) -> CaCoordinates {
    let k = factors.d.len();
    let t = dec.total;
    let rows =
        Mat::from_fn(factors.u.nrows(), k, |i, l| factors.u[(i, l)] * factors.d[l] / (dec.row_sums[i] / t).sqrt());
    let cols =
        Mat::from_fn(factors.v.nrows(), k, |j, l| factors.v[(j, l)] * factors.d[l] / (dec.col_sums[j] / t).sqrt());
    CaCoordinates { rows, cols, d: factors.d.clone() }
}
