//! The data container shared by every estimator: a dense `n x p` matrix with
//! an optional observation mask, plus column centering/scaling and its inverse.

use faer::Mat;

use crate::error::{input, Result};

/// Observation mask, column-major, `true` = observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    nrows: usize,
    ncols: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn all_observed(nrows: usize, ncols: usize) -> Self {
        Mask { nrows, ncols, observed: vec![true; nrows * ncols] }
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(nrows * ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                observed.push(f(i, j));
            }
        }
        Mask { nrows, ncols, observed }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i + j * self.nrows]
    }

    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.observed[i + j * self.nrows] = observed;
    }

    pub fn n_missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len() - self.n_missing()
    }

    /// Observed cells in column-major order.
    pub fn observed_cells(&self) -> Vec<(usize, usize)> {
        self.cells(true)
    }

    /// Missing cells in column-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        self.cells(false)
    }

    fn cells(&self, which: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.ncols {
            for i in 0..self.nrows {
                if self.is_observed(i, j) == which {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Every row and every column keeps at least one observed entry.
    pub fn has_full_coverage(&self) -> bool {
        self.coverage_violation().is_none()
    }

    /// First row or column without any observed entry.
    pub fn coverage_violation(&self) -> Option<String> {
        for i in 0..self.nrows {
            if !(0..self.ncols).any(|j| self.is_observed(i, j)) {
                return Some(format!("row {i} has no observed entry"));
            }
        }
        for j in 0..self.ncols {
            if !(0..self.nrows).any(|i| self.is_observed(i, j)) {
                return Some(format!("column {j} has no observed entry"));
            }
        }
        None
    }
}

/// Observed data `X`, possibly with missing cells.
///
/// Missing cells are stored as NaN in `values`; the mask is authoritative.
#[derive(Clone, Debug)]
pub struct DataMatrix {
    values: Mat<f64>,
    mask: Option<Mask>,
}

impl DataMatrix {
    /// A fully observed matrix. Every entry must be finite.
    pub fn new(values: Mat<f64>) -> Result<Self> {
        check_shape(values.nrows(), values.ncols())?;
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return input(format!("entry ({i}, {j}) is not finite"));
                }
            }
        }
        Ok(DataMatrix { values, mask: None })
    }

    /// Build from a matrix where NaN marks a missing cell.
    pub fn from_nan(values: Mat<f64>) -> Result<Self> {
        let (n, p) = (values.nrows(), values.ncols());
        check_shape(n, p)?;
        let mask = Mask::from_fn(n, p, |i, j| !values[(i, j)].is_nan());
        Self::with_mask(values, mask)
    }

    /// Build from values plus an explicit mask; values under missing cells are discarded.
    pub fn with_mask(mut values: Mat<f64>, mask: Mask) -> Result<Self> {
        let (n, p) = (values.nrows(), values.ncols());
        check_shape(n, p)?;
        if mask.nrows() != n || mask.ncols() != p {
            return input(format!("mask is {}x{} but values are {n}x{p}", mask.nrows(), mask.ncols()));
        }
        if let Some(msg) = mask.coverage_violation() {
            return input(msg);
        }
        for j in 0..p {
            for i in 0..n {
                if mask.is_observed(i, j) {
                    if !values[(i, j)].is_finite() {
                        return input(format!("observed entry ({i}, {j}) is not finite"));
                    }
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        let mask = if mask.n_missing() == 0 { None } else { Some(mask) };
        Ok(DataMatrix { values, mask })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    /// The mask, materialised even when every cell is observed.
    pub fn mask_or_full(&self) -> Mask {
        self.mask.clone().unwrap_or_else(|| Mask::all_observed(self.nrows(), self.ncols()))
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.is_observed(i, j))
    }

    pub fn has_missing(&self) -> bool {
        self.mask.is_some()
    }

    pub fn n_missing(&self) -> usize {
        self.mask.as_ref().map_or(0, Mask::n_missing)
    }

    pub fn n_observed(&self) -> usize {
        self.nrows() * self.ncols() - self.n_missing()
    }

    /// Error unless every cell is observed; `context` names the caller.
    pub fn require_complete(&self, context: &str) -> Result<()> {
        if self.has_missing() {
            return input(format!(
                "{context} needs a fully observed matrix ({} missing cells); use the imputation routines instead",
                self.n_missing()
            ));
        }
        Ok(())
    }

    /// Observed-cell mean of each column.
    pub fn observed_column_means(&self) -> Vec<f64> {
        (0..self.ncols())
            .map(|j| {
                let (sum, count) = (0..self.nrows())
                    .filter(|&i| self.is_observed(i, j))
                    .fold((0.0, 0usize), |(s, c), i| (s + self.values[(i, j)], c + 1));
                sum / count as f64
            })
            .collect()
    }
}

fn check_shape(n: usize, p: usize) -> Result<()> {
    if n < 2 || p < 2 {
        return input(format!("matrix must be at least 2x2, got {n}x{p}"));
    }
    Ok(())
}

/// Column means (and optional scales) removed from a matrix, kept so the
/// transformation can be undone on estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterState {
    pub column_means: Vec<f64>,
    pub column_scales: Vec<f64>,
    pub applied: bool,
}

impl CenterState {
    /// The identity transformation for `p` columns.
    pub fn identity(p: usize) -> Self {
        CenterState { column_means: vec![0.0; p], column_scales: vec![1.0; p], applied: false }
    }

    pub fn is_scaled(&self) -> bool {
        self.column_scales.iter().any(|&s| s != 1.0)
    }

    /// `(x - mean) / scale`, column-wise, in place.
    pub fn apply(&self, m: &mut Mat<f64>) {
        if !self.applied {
            return;
        }
        for j in 0..m.ncols() {
            let (mu, s) = (self.column_means[j], self.column_scales[j]);
            for i in 0..m.nrows() {
                m[(i, j)] = (m[(i, j)] - mu) / s;
            }
        }
    }

    /// `x * scale + mean`, column-wise, in place.
    pub fn restore(&self, m: &mut Mat<f64>) {
        if !self.applied {
            return;
        }
        for j in 0..m.ncols() {
            let (mu, s) = (self.column_means[j], self.column_scales[j]);
            for i in 0..m.nrows() {
                m[(i, j)] = m[(i, j)] * s + mu;
            }
        }
    }

    #[inline]
    pub fn restore_entry(&self, value: f64, j: usize) -> f64 {
        if self.applied {
            value * self.column_scales[j] + self.column_means[j]
        } else {
            value
        }
    }
}

/// Subtract observed-cell column means. Missing cells stay missing.
pub fn center_columns(x: &DataMatrix) -> (DataMatrix, CenterState) {
    center_scale_columns(x, true, false)
}

/// Optional centering and scaling by the observed-cell standard deviation
/// (`n_obs - 1` denominator; constant columns keep scale 1).
pub fn center_scale_columns(x: &DataMatrix, center: bool, scale: bool) -> (DataMatrix, CenterState) {
    let p = x.ncols();
    if !center && !scale {
        return (x.clone(), CenterState::identity(p));
    }
    let state = CenterState::fit(&x.values, x.mask.as_ref(), center, scale);
    let mut values = x.values().clone();
    state.apply(&mut values);
    let centered = DataMatrix { values, mask: x.mask.clone() };
    (centered, state)
}

impl CenterState {
    /// Column means (and scales) over the cells marked observed in `mask`.
    pub fn fit(values: &Mat<f64>, mask: Option<&Mask>, center: bool, scale: bool) -> Self {
        let (n, p) = (values.nrows(), values.ncols());
        if !center && !scale {
            return CenterState::identity(p);
        }
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        for j in 0..p {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in 0..n {
                if mask.is_none_or(|m| m.is_observed(i, j)) {
                    sum += values[(i, j)];
                    count += 1;
                }
            }
            let m = sum / count as f64;
            if center {
                means[j] = m;
            }
            if scale && count > 1 {
                let mut ss = 0.0;
                for i in 0..n {
                    if mask.is_none_or(|mk| mk.is_observed(i, j)) {
                        ss += (values[(i, j)] - m).powi(2);
                    }
                }
                let var = ss / (count - 1) as f64;
                if var > 0.0 {
                    scales[j] = var.sqrt();
                }
            }
        }
        CenterState { column_means: means, column_scales: scales, applied: true }
    }

    /// Plain column means of a complete matrix.
    pub fn from_means(values: &Mat<f64>) -> Self {
        CenterState::fit(values, None, true, false)
    }
}
