//! Noise level and rank estimation.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{record, Diagnostic};
use crate::error::{input, Result};
use crate::matrix::{center_columns, DataMatrix};
use crate::missing::{hide_cells, iterative_impute, ImputeOptions, ImputeRule};
use crate::shrinkage::ShrinkSpec;
use crate::svd::singular_values;

/// Integrand of the Marchenko-Pastur CDF after `x = (1 + beta) - 2 sqrt(beta) cos t`.
fn mp_integrand(t: f64, beta: f64) -> f64 {
    // half-angle form: the 0/0 at t = 0 for beta = 1 cancels analytically
    let sb = beta.sqrt();
    let (s2, c2) = (0.5 * t).sin_cos();
    let gap = (1.0 - sb).powi(2);
    let den = gap + 4.0 * sb * s2 * s2;
    if den <= 0.0 {
        return 2.0 * c2 * c2 / (PI * sb);
    }
    8.0 * s2 * s2 * c2 * c2 / (PI * den)
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    let half = (tol / 2.0).max(1e-16);
    simpson(f, a, m, fa, flm, fm, left, half, depth - 1) + simpson(f, m, b, fm, frm, fb, right, half, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 30)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return input(format!("Marchenko-Pastur ratio beta must lie in (0, 1], got {beta}"));
    }
    Ok(())
}

/// Marchenko-Pastur CDF (unit variance, ratio `beta`).
pub fn mp_cdf(x: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let (lo, hi) = mp_support(beta);
    if x <= lo {
        return Ok(0.0);
    }
    if x >= hi {
        return Ok(1.0);
    }
    let c = 1.0 + beta;
    let r = 2.0 * beta.sqrt();
    let theta = ((c - x) / r).clamp(-1.0, 1.0).acos();
    Ok(integrate(|t| mp_integrand(t, beta), 0.0, theta, 1e-13))
}

pub fn mp_support(beta: f64) -> (f64, f64) {
    let s = beta.sqrt();
    ((1.0 - s).powi(2), (1.0 + s).powi(2))
}

/// Median of the Marchenko-Pastur law with ratio `beta`.
pub fn mp_median(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let (mut lo, mut hi) = mp_support(beta);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mp_cdf(mid, beta)? < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SigmaMethod {
    #[serde(rename = "MAD")]
    Mad,
    #[serde(rename = "LN")]
    Ln,
}

#[derive(Clone, Debug, Serialize)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub method: SigmaMethod,
    pub k_used: Option<usize>,
    pub k_estimated: bool,
    pub diagnostics: Vec<Diagnostic>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn prepared(x: &DataMatrix, center: bool, what: &str) -> Result<DataMatrix> {
    x.require_complete(what)?;
    Ok(if center { center_columns(x).0 } else { x.clone() })
}

/// `median(d) / sqrt(N mu_beta)` with `N = max(n, p)`, `beta = min/max`.
pub fn estim_sigma_mad(x: &DataMatrix, center: bool) -> Result<SigmaEstimate> {
    let work = prepared(x, center, "MAD noise estimation")?;
    let (n, p) = (x.nrows(), x.ncols());
    let big = n.max(p) as f64;
    let beta = n.min(p) as f64 / big;
    let mut d = singular_values(work.values().as_ref())?;
    let sigma = median(&mut d) / (big * mp_median(beta)?).sqrt();
    Ok(SigmaEstimate { sigma, method: SigmaMethod::Mad, k_used: None, k_estimated: false, diagnostics: Vec::new() })
}

/// Residual variance after a rank-`k` fit, `||X - X_k||^2 / (np - nk - kp + k^2)`.
///
/// Estimates `k` by cross-validation when it is not given.
pub fn estim_sigma_ln(x: &DataMatrix, k: Option<usize>, center: bool, cv: &RankCvOptions) -> Result<SigmaEstimate> {
    let work = prepared(x, center, "low-noise noise estimation")?;
    let (n, p) = (x.nrows(), x.ncols());
    let mut diagnostics = Vec::new();
    let (k, k_estimated) = match k {
        Some(k) => (k, false),
        None => {
            let k = estim_rank_cv(&work, &RankCvOptions { center: false, ..cv.clone() })?;
            record(&mut diagnostics, Diagnostic::RankEstimated { k });
            (k, true)
        }
    };
    let (nf, pf, kf) = (n as f64, p as f64, k as f64);
    let denom = nf * pf - nf * kf - kf * pf + kf * kf;
    if k >= n.min(p) || denom <= 0.0 {
        return input(format!("rank k = {k} leaves no residual degrees of freedom for a {n}x{p} matrix"));
    }
    let d = singular_values(work.values().as_ref())?;
    let rss: f64 = d.iter().skip(k).map(|v| v * v).sum();
    Ok(SigmaEstimate {
        sigma: (rss / denom).sqrt(),
        method: SigmaMethod::Ln,
        k_used: Some(k),
        k_estimated,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankCvOptions {
    /// Largest candidate rank; `None` means `min(20, min(n-1, p) - 1)`.
    pub k_max: Option<usize>,
    pub pna: f64,
    pub nbsim: usize,
    pub seed: u64,
    pub center: bool,
    pub maxiter: usize,
}

impl Default for RankCvOptions {
    fn default() -> Self {
        RankCvOptions { k_max: None, pna: 0.05, nbsim: 10, seed: 0, center: true, maxiter: 1000 }
    }
}

/// Rank selection by repeated hold-out: hide cells, impute with a rank-`k`
/// truncation for each candidate, score the hidden cells.
///
/// Returns the smallest `k` with minimal mean prediction error.
pub fn estim_rank_cv(x: &DataMatrix, opts: &RankCvOptions) -> Result<usize> {
    Ok(rank_cv_errors(x, opts)?.0)
}

/// The selected rank and the mean hold-out error of each candidate `0..=k_max`.
pub fn rank_cv_errors(x: &DataMatrix, opts: &RankCvOptions) -> Result<(usize, Vec<f64>)> {
    let (n, p) = (x.nrows(), x.ncols());
    let cap = (n - 1).min(p);
    if cap < 1 {
        return input(format!("a {n}x{p} matrix is too small for rank cross-validation"));
    }
    let k_max = opts.k_max.unwrap_or_else(|| 20.min(cap - 1));
    if k_max + 1 > cap {
        return input(format!("k_max = {k_max} must be at most min(n-1, p) - 1 = {}", cap - 1));
    }
    if !(opts.pna > 0.0 && opts.pna < 0.5) {
        return input(format!("pNA must lie in (0, 0.5), got {}", opts.pna));
    }
    if opts.nbsim == 0 {
        return input("nbsim must be positive");
    }
    let scale: f64 = x.mask_or_full().observed_cells().iter().map(|&(i, j)| x.values()[(i, j)].powi(2)).sum();
    let threshold = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let per_rep: Vec<Vec<f64>> = (0..opts.nbsim)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let (masked, hidden) = hide_cells(x, opts.pna, opts.seed, "rank-cv", rep as u64)?;
            (0..=k_max)
                .map(|k| {
                    let fit = iterative_impute(
                        &masked,
                        &ImputeRule::Shrink(ShrinkSpec::Hard { k }),
                        &ImputeOptions { threshold, maxiter: opts.maxiter, center: opts.center, ..Default::default() },
                    )?;
                    let err: f64 =
                        hidden.iter().map(|&(i, j)| (fit.complete_obs[(i, j)] - x.values()[(i, j)]).powi(2)).sum();
                    Ok(err / hidden.len() as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let means: Vec<f64> = (0..=k_max).map(|k| per_rep.iter().map(|r| r[k]).sum::<f64>() / opts.nbsim as f64).collect();
    let mut best = 0;
    for k in 1..=k_max {
        if means[k] < means[best] {
            best = k;
        }
    }
    Ok((best, means))
}
