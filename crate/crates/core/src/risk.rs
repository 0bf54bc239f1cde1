//! Stein risk criteria on complete data and the `adashrink` estimator.

use faer::{Mat, Side};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{record, Diagnostic};
use crate::error::{input, Error, Result};
use crate::matrix::{center_columns, CenterState, DataMatrix};
use crate::noise::estim_sigma_mad;
use crate::result::{ShrinkageResult, TuningParams};
use crate::rng;
use crate::search::scan_then_refine;
use crate::shrinkage::{atn_value, shrink_atn};
use crate::svd::compute_svd;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "SURE")]
    Sure,
    #[serde(rename = "GSURE")]
    Gsure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskValue {
    pub criterion: Criterion,
    pub value: f64,
    pub rss: f64,
    pub divergence: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// GSURE denominator vanished; `value` is `+inf`.
    pub degenerate: bool,
    /// Divergence estimated on a subsample of cells.
    pub approximate: bool,
}

fn check_atn(lambda: f64, gamma: f64) -> Result<()> {
    shrink_atn(&[], lambda, gamma).map(|_| ())
}

/// Derivative of `d max(1 - (lambda/d)^gamma, 0)` in `d`.
fn atn_slope(d: f64, lambda: f64, gamma: f64) -> f64 {
    if d <= lambda {
        0.0
    } else {
        1.0 + (gamma - 1.0) * (lambda / d).powf(gamma)
    }
}

/// Divergence of the ATN spectral estimator on an `n x p` matrix with
/// singular values `d` (missing trailing values are zeros).
pub fn div_closed_form(d: &[f64], lambda: f64, gamma: f64, n: usize, p: usize) -> Result<f64> {
    check_atn(lambda, gamma)?;
    let r = n.min(p);
    if d.len() > r {
        return input(format!("{} singular values given for a {n}x{p} matrix", d.len()));
    }
    if lambda == 0.0 {
        return Ok((n * p) as f64);
    }
    let f: Vec<f64> = d.iter().map(|&v| atn_value(v, lambda, gamma)).collect();
    let gap = (n as f64 - p as f64).abs();
    let top = d.first().copied().unwrap_or(0.0);
    let tie = 1e-9 * top;
    let mut div = 0.0;
    for l in 0..d.len() {
        if f[l] == 0.0 {
            continue;
        }
        div += atn_slope(d[l], lambda, gamma) + gap * f[l] / d[l];
        // pairs with the structural zeros beyond d.len()
        div += 2.0 * (r - d.len()) as f64 * f[l] / d[l];
    }
    for l in 0..d.len() {
        for m in (l + 1)..d.len() {
            if f[l] == 0.0 && f[m] == 0.0 {
                continue;
            }
            let pair = if (d[l] - d[m]).abs() <= tie {
                // limit of (g(a) - g(b)) / (a^2 - b^2) with g(x) = x f(x)
                let c = 0.5 * (d[l] + d[m]);
                let fc = atn_value(c, lambda, gamma);
                (fc + c * atn_slope(c, lambda, gamma)) / (2.0 * c)
            } else {
                (d[l] * f[l] - d[m] * f[m]) / (d[l] * d[l] - d[m] * d[m])
            };
            div += 2.0 * pair;
        }
    }
    Ok(div)
}

/// Spectral residual `sum (d - f(d))^2 = sum d^2 min((lambda/d)^(2 gamma), 1)`.
pub fn spectral_rss(d: &[f64], lambda: f64, gamma: f64) -> f64 {
    d.iter()
        .map(|&v| {
            let r = v - atn_value(v, lambda, gamma);
            r * r
        })
        .sum()
}

pub fn sure(d: &[f64], lambda: f64, gamma: f64, sigma: f64, n: usize, p: usize) -> Result<RiskValue> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return input(format!("SURE needs a positive noise level, got {sigma}"));
    }
    let divergence = div_closed_form(d, lambda, gamma, n, p)?;
    let rss = spectral_rss(d, lambda, gamma);
    let s2 = sigma * sigma;
    Ok(RiskValue {
        criterion: Criterion::Sure,
        value: -((n * p) as f64) * s2 + rss + 2.0 * s2 * divergence,
        rss,
        divergence,
        lambda,
        gamma,
        degenerate: false,
        approximate: false,
    })
}

/// `rss / (1 - div/m)^2`, with `+inf` when `div >= m`.
pub(crate) fn gsure_value(rss: f64, divergence: f64, m: f64) -> (f64, bool) {
    let shrink = 1.0 - divergence / m;
    if shrink <= 0.0 {
        (f64::INFINITY, true)
    } else {
        (rss / (shrink * shrink), false)
    }
}

pub fn gsure(d: &[f64], lambda: f64, gamma: f64, n: usize, p: usize) -> Result<RiskValue> {
    let divergence = div_closed_form(d, lambda, gamma, n, p)?;
    let rss = spectral_rss(d, lambda, gamma);
    let (value, degenerate) = gsure_value(rss, divergence, (n * p) as f64);
    Ok(RiskValue { criterion: Criterion::Gsure, value, rss, divergence, lambda, gamma, degenerate, approximate: false })
}

/// Divergence of the centred pipeline `x -> colmeans(x) + ATN(x - colmeans(x))`,
/// with `d` the singular values of the column-centred `n x p` matrix.
///
/// Centred rows live in an `(n - 1)`-dimensional subspace, so the ATN part is
/// the closed form on an `(n - 1) x p` problem; the column means add `p`.
pub fn div_centered(d: &[f64], lambda: f64, gamma: f64, n: usize, p: usize) -> Result<f64> {
    if n < 2 {
        return input(format!("centring needs at least two rows, got {n}"));
    }
    let r = (n - 1).min(p);
    Ok(p as f64 + div_closed_form(&d[..d.len().min(r)], lambda, gamma, n - 1, p)?)
}

/// SURE or GSURE of the spectral pipeline, centred or not. The criterion
/// always counts all `np` cells.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_risk(
    criterion: Criterion,
    d: &[f64],
    lambda: f64,
    gamma: f64,
    sigma: Option<f64>,
    n: usize,
    p: usize,
    center: bool,
) -> Result<RiskValue> {
    if !center {
        return match criterion {
            Criterion::Gsure => gsure(d, lambda, gamma, n, p),
            Criterion::Sure => {
                sure(d, lambda, gamma, sigma.ok_or_else(|| Error::Input("SURE needs sigma".into()))?, n, p)
            }
        };
    }
    let divergence = div_centered(d, lambda, gamma, n, p)?;
    let rss = spectral_rss(d, lambda, gamma);
    let m = (n * p) as f64;
    let (value, degenerate) = match criterion {
        Criterion::Gsure => gsure_value(rss, divergence, m),
        Criterion::Sure => {
            let s = sigma.ok_or_else(|| Error::Input("SURE needs sigma".into()))?;
            if !(s > 0.0) || !s.is_finite() {
                return input(format!("SURE needs a positive noise level, got {s}"));
            }
            (-m * s * s + rss + 2.0 * s * s * divergence, false)
        }
    };
    Ok(RiskValue { criterion, value, rss, divergence, lambda, gamma, degenerate, approximate: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct QutResult {
    pub lambda_qut: f64,
    pub nbsim: usize,
    pub quantile_level: f64,
    /// Largest singular value of each null draw, in draw order.
    pub null_maxima: Vec<f64>,
}

/// Type-7 (linear interpolation) empirical quantile.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Largest singular value through the smaller Gram matrix.
pub(crate) fn top_singular_value(x: &Mat<f64>) -> Result<f64> {
    let g = if x.ncols() <= x.nrows() { x.transpose() * x } else { x * x.transpose() };
    let ev = g.self_adjoint_eigenvalues(Side::Lower).map_err(|e| {
        Error::Numerical(format!("eigenvalues of a {}x{} Gram matrix failed: {e:?}", g.nrows(), g.ncols()))
    })?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Quantile universal threshold: the `quantile_level` quantile of the largest
/// singular value of pure `N(0, sigma^2)` noise, centered like the data.
pub fn qut_lambda(
    n: usize,
    p: usize,
    sigma: f64,
    nbsim: usize,
    quantile_level: f64,
    center: bool,
    seed: u64,
) -> Result<QutResult> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return input(format!("QUT needs a positive noise level, got {sigma}"));
    }
    if nbsim < 100 {
        return input(format!("QUT needs at least 100 null simulations, got {nbsim}"));
    }
    if !(quantile_level > 0.0 && quantile_level < 1.0) {
        return input(format!("quantile level must lie in (0, 1), got {quantile_level}"));
    }
    if n < 2 || p < 2 {
        return input(format!("invalid dimensions {n}x{p}"));
    }
    let unit: Vec<f64> = (0..nbsim)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, "qut", r as u64);
            let mut e = Mat::from_fn(n, p, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut g));
            if center {
                CenterState::from_means(&e).apply(&mut e);
            }
            top_singular_value(&e)
        })
        .collect::<Result<_>>()?;
    let null_maxima: Vec<f64> = unit.iter().map(|v| v * sigma).collect();
    let lambda_qut = quantile(&unit, quantile_level) * sigma;
    Ok(QutResult { lambda_qut, nbsim, quantile_level, null_maxima })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdaMethod {
    #[default]
    #[serde(rename = "GSURE")]
    Gsure,
    #[serde(rename = "SURE")]
    Sure,
    #[serde(rename = "QUT")]
    Qut,
}

/// `1.0, 1.1, ..., 5.0`.
pub fn default_gamma_seq() -> Vec<f64> {
    (0..=40).map(|i| 1.0 + i as f64 / 10.0).collect()
}

#[derive(Clone, Debug)]
pub struct AdashrinkOptions {
    pub sigma: Option<f64>,
    pub method: AdaMethod,
    pub gamma_seq: Vec<f64>,
    pub lambda0: Option<f64>,
    pub center: bool,
    pub nbsim: usize,
    pub quantile_level: f64,
    pub seed: u64,
}

impl Default for AdashrinkOptions {
    fn default() -> Self {
        AdashrinkOptions {
            sigma: None,
            method: AdaMethod::Gsure,
            gamma_seq: default_gamma_seq(),
            lambda0: None,
            center: true,
            nbsim: 500,
            quantile_level: 0.95,
            seed: 0,
        }
    }
}

pub(crate) fn check_gamma_seq(gamma_seq: &[f64]) -> Result<()> {
    if gamma_seq.is_empty() {
        return input("gamma sequence is empty");
    }
    if let Some(g) = gamma_seq.iter().find(|g| !(**g >= 1.0) || !g.is_finite()) {
        return input(format!("every gamma must be a finite value of at least 1, got {g}"));
    }
    Ok(())
}

/// Bounds of the log-threshold search: `[log(d_min 1e-3), log(10 d_1)]`.
pub(crate) fn log_lambda_bounds(d: &[f64]) -> (f64, f64) {
    let top = d.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let dmin = d.iter().copied().filter(|&v| v > 1e-12 * top).fold(top, f64::min);
    ((dmin * 1e-3).ln(), (10.0 * top).ln())
}

/// Median of the nonzero singular values.
pub(crate) fn median_singular_value(d: &[f64]) -> f64 {
    let top = d.first().copied().unwrap_or(0.0);
    let mut v: Vec<f64> = d.iter().copied().filter(|&x| x > 1e-12 * top).collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Minimise `crit(lambda)` over log-lambda by scanning the kinks (the singular
/// values and their geometric midpoints) and refining with Brent.
fn minimise_spectral(d: &[f64], lambda0: f64, crit: impl Fn(f64) -> f64) -> (f64, f64) {
    let (lo, hi) = log_lambda_bounds(d);
    let top = d.first().copied().unwrap_or(0.0);
    let pos: Vec<f64> = d.iter().copied().filter(|&v| v > 1e-12 * top).collect();
    let mut cands = vec![lo, hi, lambda0.ln().clamp(lo, hi)];
    for (l, &v) in pos.iter().enumerate() {
        cands.push(v.ln());
        if let Some(&w) = pos.get(l + 1) {
            cands.push(0.5 * (v.ln() + w.ln()));
        }
    }
    let m = scan_then_refine(|t| crit(t.exp()), &cands, 1e-6);
    (m.x.exp(), m.fx)
}

/// Criterion values on a `lambda x gamma` grid (for plotting).
#[allow(clippy::too_many_arguments)]
pub fn risk_surface(
    d: &[f64],
    n: usize,
    p: usize,
    criterion: Criterion,
    sigma: Option<f64>,
    center: bool,
    lambdas: &[f64],
    gammas: &[f64],
) -> Result<Vec<RiskValue>> {
    let mut out = Vec::with_capacity(lambdas.len() * gammas.len());
    for &g in gammas {
        for &l in lambdas {
            out.push(pipeline_risk(criterion, d, l, g, sigma, n, p, center)?);
        }
    }
    Ok(out)
}

/// Adaptive trace-norm estimator with `(lambda, gamma)` chosen by SURE, GSURE or QUT.
pub fn adashrink(x: &DataMatrix, opts: &AdashrinkOptions) -> Result<ShrinkageResult> {
    x.require_complete("adashrink")?;
    check_gamma_seq(&opts.gamma_seq)?;
    if let Some(s) = opts.sigma {
        if !(s > 0.0) || !s.is_finite() {
            return input(format!("sigma must be positive and finite, got {s}"));
        }
    }
    if let Some(l0) = opts.lambda0 {
        if !(l0 > 0.0) || !l0.is_finite() {
            return input(format!("lambda0 must be positive and finite, got {l0}"));
        }
    }
    let (n, p) = (x.nrows(), x.ncols());
    let (work, state) = if opts.center { center_columns(x) } else { (x.clone(), CenterState::identity(p)) };
    let factors = compute_svd(work.values().as_ref(), None)?;
    let d = &factors.d;
    let mut diagnostics = Vec::new();
    let sigma = match (opts.sigma, opts.method) {
        (Some(s), _) => Some(s),
        (None, AdaMethod::Gsure) => None,
        (None, _) => {
            let est = estim_sigma_mad(&work, false)?;
            if !(est.sigma > 0.0) {
                return input("noise level could not be estimated (MAD gave 0); pass sigma explicitly");
            }
            record(&mut diagnostics, Diagnostic::SigmaEstimated { method: "MAD".into(), sigma: est.sigma });
            Some(est.sigma)
        }
    };
    let lambda0 = opts.lambda0.unwrap_or_else(|| median_singular_value(d));
    let (lambda, gamma, value) = match opts.method {
        AdaMethod::Qut => {
            let s = sigma.expect("sigma resolved above");
            let q = qut_lambda(n, p, s, opts.nbsim, opts.quantile_level, opts.center, opts.seed)?;
            let mut best: Option<(f64, f64)> = None;
            for &g in &opts.gamma_seq {
                let v = pipeline_risk(Criterion::Sure, d, q.lambda_qut, g, Some(s), n, p, opts.center)?.value;
                if best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((g, v));
                }
            }
            let (g, v) = best.expect("nonempty gamma sequence");
            (q.lambda_qut, g, v)
        }
        method => {
            let per_gamma: Vec<(f64, f64)> = opts
                .gamma_seq
                .par_iter()
                .map(|&g| {
                    let criterion = if method == AdaMethod::Gsure { Criterion::Gsure } else { Criterion::Sure };
                    minimise_spectral(d, lambda0, |l| {
                        pipeline_risk(criterion, d, l, g, sigma, n, p, opts.center)
                            .map(|r| r.value)
                            .unwrap_or(f64::INFINITY)
                    })
                })
                .collect();
            let mut best = 0;
            for i in 1..per_gamma.len() {
                if per_gamma[i].1 < per_gamma[best].1 {
                    best = i;
                }
            }
            (per_gamma[best].0, opts.gamma_seq[best], per_gamma[best].1)
        }
    };
    let shrunk = shrink_atn(d, lambda, gamma)?;
    let params = TuningParams { lambda: Some(lambda), gamma: Some(gamma), sigma, ..Default::default() };
    let mut out = ShrinkageResult::from_spectrum(&factors, shrunk, state, params)?;
    out.criterion = Some(value);
    out.diagnostics = diagnostics;
    Ok(out)
}
