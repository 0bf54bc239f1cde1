//! Stable autoencoders and the iterated stable autoencoder (ISA).

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ca::{ca_backtransform, ca_coordinates, ca_transform, CaDecomposition};
use crate::diagnostics::{record, Diagnostic};
use crate::error::{input, Error, Result};
use crate::matrix::{center_columns, CenterState, DataMatrix};
use crate::missing::{hide_cells, iterative_impute, ImputeOptions, ImputeRule, IsaRule};
use crate::noise::estim_sigma_mad;
use crate::result::{count_nonzero, CaOutput, ShrinkageResult, TuningParams, RANK_TOL};
use crate::svd::{compute_svd, low_rank_product};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    Binomial { delta: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0) || !sigma.is_finite() => {
                input(format!("Gaussian noise needs sigma > 0, got {sigma}"))
            }
            NoiseModel::Binomial { delta } if !(delta > 0.0 && delta < 1.0) => {
                input(format!("Binomial noise needs delta in (0, 1), got {delta}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Binomial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transformation {
    #[default]
    None,
    Ca,
}

fn check_counts(values: &Mat<f64>) -> Result<()> {
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            let v = values[(i, j)];
            if !(v >= 0.0) || v.fract() != 0.0 {
                return input(format!("Binomial noise needs nonnegative integer counts; cell ({i}, {j}) is {v}"));
            }
        }
    }
    Ok(())
}

/// Diagonal of `S`: the summed bootstrap variance of each column.
///
/// Gaussian: `n sigma^2`. Binomial: `delta/(1-delta)` times the column sum.
pub fn noise_regularizer(x: &DataMatrix, model: NoiseModel) -> Result<Vec<f64>> {
    x.require_complete("noise regularizer")?;
    model.validate()?;
    if let NoiseModel::Binomial { .. } = model {
        check_counts(x.values())?;
    }
    Ok(regularizer(x.values(), model, None))
}

/// Regularizer without input checks. With a CA decomposition the Binomial
/// variance is carried through the transform with margins held fixed.
pub(crate) fn regularizer(values: &Mat<f64>, model: NoiseModel, ca: Option<&CaDecomposition>) -> Vec<f64> {
    let (n, p) = (values.nrows(), values.ncols());
    match model {
        NoiseModel::Gaussian { sigma } => vec![n as f64 * sigma * sigma; p],
        NoiseModel::Binomial { delta } => {
            let w = delta / (1.0 - delta);
            (0..p)
                .map(|j| {
                    w * (0..n)
                        .map(|i| match ca {
                            Some(dec) => values[(i, j)] / (dec.row_sums[i] * dec.col_sums[j]),
                            None => values[(i, j)],
                        })
                        .sum::<f64>()
                })
                .collect()
        }
    }
}

/// Solve `(A^T A + diag(s)) B = A^T A`; pseudo-inverse when singular.
fn gram_solve(a: MatRef<'_, f64>, s: &[f64]) -> Result<(Mat<f64>, bool)> {
    let gram = a.transpose() * a;
    let p = gram.nrows();
    let sys = Mat::from_fn(p, p, |i, j| gram[(i, j)] + if i == j { s[i] } else { 0.0 });
    if s.iter().all(|&v| v > 0.0) {
        if let Ok(llt) = sys.llt(Side::Lower) {
            return Ok((llt.solve(&gram), false));
        }
    }
    let evd = sys
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition of a {p}x{p} system failed: {e:?}")))?;
    let ev = evd.S().column_vector();
    let q = evd.U();
    let top = (0..p).map(|l| ev[l].abs()).fold(0.0, f64::max);
    let tol = top * p as f64 * f64::EPSILON * 10.0;
    let singular = (0..p).any(|l| ev[l] <= tol);
    if !singular {
        if let Ok(llt) = sys.llt(Side::Lower) {
            return Ok((llt.solve(&gram), false));
        }
    }
    let inv = Mat::from_fn(p, p, |i, j| {
        let mut acc = 0.0;
        for l in 0..p {
            if ev[l] > tol {
                acc += q[(i, l)] * q[(j, l)] / ev[l];
            }
        }
        acc
    });
    Ok((&inv * &gram, singular))
}

/// `B = (X^T X + diag(S))^{-1} X^T X` and `mu = X B`.
///
/// Returns `(B, mu, fallback)` where `fallback` flags a minimum-norm solve.
pub fn stable_autoencoder(x: MatRef<'_, f64>, s: &[f64]) -> Result<(Mat<f64>, Mat<f64>, bool)> {
    if s.len() != x.ncols() {
        return input(format!("regularizer has {} entries for {} columns", s.len(), x.ncols()));
    }
    if let Some(v) = s.iter().find(|v| !(**v >= 0.0)) {
        return input(format!("regularizer entries must be nonnegative, got {v}"));
    }
    let (b, fallback) = gram_solve(x, s)?;
    let mu = x * &b;
    Ok((b, mu, fallback))
}

/// One ISA update `working (mu^T mu + S)^{-1} mu^T mu`.
///
/// For wide matrices with `S > 0` the `n x n` push-through form is used.
fn isa_step(working: MatRef<'_, f64>, mu: MatRef<'_, f64>, s: &[f64]) -> Result<(Mat<f64>, bool)> {
    let (n, p) = (mu.nrows(), mu.ncols());
    if p > n && s.iter().all(|&v| v > 0.0) {
        let mu_s = Mat::from_fn(n, p, |i, j| mu[(i, j)] / s[j]);
        let k = {
            let mut k = &mu_s * mu.transpose();
            for i in 0..n {
                k[(i, i)] += 1.0;
            }
            k
        };
        let llt = k
            .llt(Side::Lower)
            .map_err(|e| Error::Numerical(format!("Cholesky of a {n}x{n} ISA system failed: {e:?}")))?;
        let w_s = Mat::from_fn(n, p, |i, j| working[(i, j)] / s[j]);
        let left = &w_s * mu.transpose();
        let right = llt.solve(mu);
        return Ok((&left * &right, false));
    }
    let (b, fallback) = gram_solve(mu, s)?;
    Ok((working * &b, fallback))
}

pub(crate) struct IsaFit {
    pub mu: Mat<f64>,
    pub nb_iter: usize,
    pub converged: bool,
    pub last_change: f64,
    pub fallback: bool,
}

/// Fixed-point iteration from `mu = working` until the squared change is at
/// most `threshold` or `maxiter` updates have run.
pub(crate) fn isa_iterate(working: MatRef<'_, f64>, s: &[f64], maxiter: usize, threshold: f64) -> Result<IsaFit> {
    let mut mu = working.to_owned();
    let mut fallback = false;
    let mut last_change = f64::INFINITY;
    for t in 1..=maxiter.max(1) {
        let (next, fb) = isa_step(working, mu.as_ref(), s)?;
        fallback |= fb;
        last_change = (&next - &mu).norm_l2().powi(2);
        mu = next;
        if last_change <= threshold {
            return Ok(IsaFit { mu, nb_iter: t, converged: true, last_change, fallback });
        }
    }
    Ok(IsaFit { mu, nb_iter: maxiter.max(1), converged: false, last_change, fallback })
}

#[derive(Clone, Debug)]
pub struct IsaOptions {
    /// Defaults to Binomial with the CA transformation, Gaussian otherwise.
    pub noise: Option<NoiseKind>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub transformation: Transformation,
    /// Relative cutoff on singular values when counting `nb_eigen`.
    pub svd_cutoff: f64,
    pub maxiter: usize,
    pub threshold: f64,
    /// Number of components kept in the reported factors.
    pub nu: Option<usize>,
    pub center: bool,
    pub delta_cv: EstimDeltaOptions,
}

impl Default for IsaOptions {
    fn default() -> Self {
        IsaOptions {
            noise: None,
            sigma: None,
            delta: None,
            transformation: Transformation::None,
            svd_cutoff: 1e-3,
            maxiter: 1000,
            threshold: 1e-6,
            nu: None,
            center: true,
            delta_cv: EstimDeltaOptions::default(),
        }
    }
}

impl IsaOptions {
    pub fn noise_kind(&self) -> NoiseKind {
        self.noise.unwrap_or(match self.transformation {
            Transformation::Ca => NoiseKind::Binomial,
            Transformation::None => NoiseKind::Gaussian,
        })
    }
}

pub fn isa(x: &DataMatrix, opts: &IsaOptions) -> Result<ShrinkageResult> {
    x.require_complete("isa")?;
    let (n, p) = (x.nrows(), x.ncols());
    if !(opts.svd_cutoff >= 0.0) {
        return input(format!("svd cutoff must be nonnegative, got {}", opts.svd_cutoff));
    }
    if let Some(nu) = opts.nu {
        if nu == 0 || nu > n.min(p) {
            return input(format!("nu = {nu} must lie in 1..={}", n.min(p)));
        }
    }
    let kind = opts.noise_kind();
    let mut diagnostics = Vec::new();
    let mut params = TuningParams::default();
    if kind == NoiseKind::Binomial || opts.transformation == Transformation::Ca {
        check_counts(x.values())?;
    }
    let model = match kind {
        NoiseKind::Gaussian => {
            let sigma = match opts.sigma {
                Some(s) => s,
                None => {
                    let est = estim_sigma_mad(x, opts.center)?;
                    record(&mut diagnostics, Diagnostic::SigmaEstimated { method: "MAD".into(), sigma: est.sigma });
                    est.sigma
                }
            };
            params.sigma = Some(sigma);
            NoiseModel::Gaussian { sigma }
        }
        NoiseKind::Binomial => {
            let delta = match opts.delta {
                Some(d) => d,
                None => {
                    let cv = EstimDeltaOptions { transformation: opts.transformation, ..opts.delta_cv.clone() };
                    let sel = estim_delta(x, &cv)?;
                    record(&mut diagnostics, Diagnostic::DeltaEstimated { delta: sel.delta });
                    sel.delta
                }
            };
            params.delta = Some(delta);
            NoiseModel::Binomial { delta }
        }
    };
    model.validate()?;

    let (working, state, dec) = match opts.transformation {
        Transformation::Ca => {
            let dec = ca_transform(x.values())?;
            (dec.m.clone(), CenterState::identity(p), Some(dec))
        }
        Transformation::None if kind == NoiseKind::Gaussian && opts.center => {
            let (c, st) = center_columns(x);
            (c.values().clone(), st, None)
        }
        Transformation::None => (x.values().clone(), CenterState::identity(p), None),
    };
    let s = regularizer(x.values(), model, dec.as_ref());
    let fit = isa_iterate(working.as_ref(), &s, opts.maxiter, opts.threshold)?;
    if fit.fallback {
        record(&mut diagnostics, Diagnostic::MinimumNormFallback);
    }
    if !fit.converged {
        record(&mut diagnostics, Diagnostic::NotConverged { iterations: fit.nb_iter, last_change: fit.last_change });
    }

    let work_top = compute_svd(working.as_ref(), Some(1))?.d.first().copied().unwrap_or(0.0);
    let factors = compute_svd(fit.mu.as_ref(), None)?;
    let nb_eigen = count_nonzero(&factors.d, work_top, opts.svd_cutoff);
    let keep = count_nonzero(&factors.d, factors.d.first().copied().unwrap_or(0.0), RANK_TOL);
    let low_rank = factors.truncate(opts.nu.map_or(keep, |nu| nu.min(keep)));
    let mut mu_hat = fit.mu.clone();
    let ca = match dec {
        Some(dec) => {
            mu_hat = ca_backtransform(&fit.mu, &dec)?;
            let coords = ca_coordinates(&low_rank.truncate(nb_eigen.min(low_rank.rank())), &dec);
            Some(Box::new(CaOutput { decomposition: dec, mu_hat_transformed: fit.mu, coordinates: coords }))
        }
        None => {
            state.restore(&mut mu_hat);
            None
        }
    };
    Ok(ShrinkageResult {
        mu_hat,
        nb_eigen,
        singval: factors.d,
        low_rank,
        center: state,
        params,
        criterion: None,
        nb_iter: Some(fit.nb_iter),
        converged: fit.converged,
        diagnostics,
        ca,
    })
}

/// `U diag(d) V^T` of the reported factors (transformed scale, centering not restored).
pub fn low_rank_matrix(res: &ShrinkageResult) -> Mat<f64> {
    low_rank_product(&res.low_rank, &res.low_rank.d)
}

#[derive(Clone, Debug)]
pub struct EstimDeltaOptions {
    pub grid: Vec<f64>,
    pub nbsim: usize,
    pub pna: f64,
    pub maxiter: usize,
    pub threshold: f64,
    pub transformation: Transformation,
    pub seed: u64,
    /// Inner ISA budget per imputation step.
    pub isa_maxiter: usize,
    pub isa_threshold: f64,
}

impl Default for EstimDeltaOptions {
    fn default() -> Self {
        EstimDeltaOptions {
            grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            nbsim: 10,
            pna: 0.10,
            maxiter: 1000,
            threshold: 1e-8,
            transformation: Transformation::None,
            seed: 0,
            isa_maxiter: 1000,
            isa_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaSelection {
    pub grid: Vec<f64>,
    /// One row per replicate, one column per grid value.
    pub msep: Vec<Vec<f64>>,
    pub delta: f64,
}

impl DeltaSelection {
    pub fn mean_msep(&self) -> Vec<f64> {
        let reps = self.msep.len() as f64;
        (0..self.grid.len()).map(|g| self.msep.iter().map(|r| r[g]).sum::<f64>() / reps).collect()
    }
}

/// Choose `delta` by repeated hold-out with the iterative ISA imputer.
pub fn estim_delta(x: &DataMatrix, opts: &EstimDeltaOptions) -> Result<DeltaSelection> {
    x.require_complete("estim_delta")?;
    check_counts(x.values())?;
    if opts.grid.is_empty() {
        return input("delta grid is empty");
    }
    if let Some(d) = opts.grid.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return input(format!("delta grid values must lie in (0, 1), got {d}"));
    }
    if opts.nbsim == 0 {
        return input("nbsim must be positive");
    }
    if !(opts.pna > 0.0 && opts.pna < 0.5) {
        return input(format!("pNA must lie in (0, 0.5), got {}", opts.pna));
    }
    let msep: Vec<Vec<f64>> = (0..opts.nbsim)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let (masked, hidden) = hide_cells(x, opts.pna, opts.seed, "estim-delta", rep as u64)?;
            opts.grid
                .iter()
                .map(|&delta| {
                    let rule = ImputeRule::Isa(IsaRule {
                        model: NoiseModel::Binomial { delta },
                        transformation: opts.transformation,
                        maxiter: opts.isa_maxiter,
                        threshold: opts.isa_threshold,
                    });
                    let imp = iterative_impute(
                        &masked,
                        &rule,
                        &ImputeOptions {
                            threshold: opts.threshold,
                            maxiter: opts.maxiter,
                            center: false,
                            ..Default::default()
                        },
                    )?;
                    let err: f64 =
                        hidden.iter().map(|&(i, j)| (imp.complete_obs[(i, j)] - x.values()[(i, j)]).powi(2)).sum();
                    Ok(err / hidden.len() as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut sel = DeltaSelection { grid: opts.grid.clone(), msep, delta: opts.grid[0] };
    let means = sel.mean_msep();
    let mut best = 0;
    for g in 1..means.len() {
        if means[g] < means[best] {
            best = g;
        }
    }
    sel.delta = opts.grid[best];
    Ok(sel)
}
