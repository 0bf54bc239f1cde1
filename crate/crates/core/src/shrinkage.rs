//! Spectrum-to-spectrum shrinkage rules and the `optishrink` estimator.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{record, Diagnostic};
use crate::error::{input, Result};
use crate::matrix::{center_columns, CenterState, DataMatrix};
use crate::noise::{estim_rank_cv, estim_sigma_ln, estim_sigma_mad, RankCvOptions};
use crate::result::{ShrinkageResult, TuningParams};
use crate::svd::compute_svd;

/// Loss under which the asymptotic shrinker is optimal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymptLoss {
    #[default]
    Frobenius,
    Operator,
    Nuclear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShrinkSpec {
    Hard { k: usize },
    Soft { lambda: f64 },
    Atn { lambda: f64, gamma: f64 },
    Asympt { sigma: f64, loss: AsymptLoss },
    LowNoise { sigma: f64, k: usize },
}

impl ShrinkSpec {
    /// Shrink the spectrum `d` of an `n x p` matrix.
    pub fn apply(&self, d: &[f64], n: usize, p: usize) -> Result<Vec<f64>> {
        match *self {
            ShrinkSpec::Hard { k } => shrink_hard(d, k),
            ShrinkSpec::Soft { lambda } => shrink_soft(d, lambda),
            ShrinkSpec::Atn { lambda, gamma } => shrink_atn(d, lambda, gamma),
            ShrinkSpec::Asympt { sigma, loss } => shrink_asympt(d, sigma, n, p, loss),
            ShrinkSpec::LowNoise { sigma, k } => shrink_lownoise(d, sigma, k),
        }
    }

    /// Check parameter domains without a spectrum at hand.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShrinkSpec::Hard { .. } => Ok(()),
            ShrinkSpec::Soft { lambda } => check_lambda(lambda),
            ShrinkSpec::Atn { lambda, gamma } => shrink_atn(&[], lambda, gamma).map(|_| ()),
            ShrinkSpec::Asympt { sigma, loss } => shrink_asympt(&[], sigma, 2, 2, loss).map(|_| ()),
            ShrinkSpec::LowNoise { sigma, .. } => shrink_lownoise(&[], sigma, 0).map(|_| ()),
        }
    }
}

fn check_len(k: usize, d: &[f64], what: &str) -> Result<()> {
    if k > d.len() {
        return input(format!("{what}: rank {k} exceeds the spectrum length {}", d.len()));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return input(format!("threshold lambda must be nonnegative, got {lambda}"));
    }
    Ok(())
}

pub fn shrink_hard(d: &[f64], k: usize) -> Result<Vec<f64>> {
    check_len(k, d, "hard thresholding")?;
    Ok(d.iter().enumerate().map(|(l, &v)| if l < k { v } else { 0.0 }).collect())
}

pub fn shrink_soft(d: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    Ok(d.iter().map(|&v| (v - lambda).max(0.0)).collect())
}

/// `d max(1 - (lambda/d)^gamma, 0)`; exactly zero when `d <= lambda`.
#[inline]
pub fn atn_value(d: f64, lambda: f64, gamma: f64) -> f64 {
    if d <= lambda {
        0.0
    } else if gamma == 1.0 {
        d - lambda
    } else {
        d * (1.0 - (lambda / d).powf(gamma))
    }
}

pub fn shrink_atn(d: &[f64], lambda: f64, gamma: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if !(gamma >= 1.0) {
        return input(format!("ATN exponent gamma must be at least 1, got {gamma}"));
    }
    Ok(d.iter().map(|&v| atn_value(v, lambda, gamma)).collect())
}

/// Low-noise rule `d (d^2 - sigma^2)/d^2` on the first `k` components.
///
/// `sigma` is in singular-value units; for per-entry noise `s` on an `n`-row
/// matrix pass `sqrt(n) * s`.
pub fn shrink_lownoise(d: &[f64], sigma: f64, k: usize) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return input(format!("noise level must be nonnegative, got {sigma}"));
    }
    check_len(k, d, "low-noise shrinkage")?;
    let s2 = sigma * sigma;
    Ok(d.iter()
        .enumerate()
        .map(|(l, &v)| {
            if l >= k || v <= sigma {
                0.0
            } else if sigma == 0.0 {
                v
            } else {
                v * ((v * v - s2) / (v * v)).max(0.0)
            }
        })
        .collect())
}

/// Signal singular value predicted by the spiked model, in units of `sigma sqrt(N)`.
fn spiked_signal(y: f64, beta: f64) -> f64 {
    let a = y * y - beta - 1.0;
    ((a + (a * a - 4.0 * beta).max(0.0).sqrt()) / 2.0).sqrt()
}

/// Asymptotically optimal shrinker for white noise of level `sigma`.
///
/// Works in units of `sigma sqrt(N)` with `N = max(n, p)` and
/// `beta = min(n, p)/max(n, p)`, so the rule is the same for `X` and `X^T`.
/// Values at or below the bulk edge `(1 + sqrt(beta)) sigma sqrt(N)` map to 0.
pub fn shrink_asympt(d: &[f64], sigma: f64, n: usize, p: usize, loss: AsymptLoss) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return input(format!("asymptotic shrinkage needs a positive finite sigma, got {sigma}"));
    }
    if n < 1 || p < 1 {
        return input(format!("invalid dimensions {n}x{p}"));
    }
    let big = n.max(p) as f64;
    let beta = n.min(p) as f64 / big;
    let scale = sigma * big.sqrt();
    let edge = 1.0 + beta.sqrt();
    Ok(d.iter()
        .map(|&v| {
            let y = v / scale;
            if !(y > edge) {
                return 0.0;
            }
            let eta = match loss {
                AsymptLoss::Frobenius => {
                    let a = y * y - beta - 1.0;
                    (a * a - 4.0 * beta).max(0.0).sqrt() / y
                }
                AsymptLoss::Operator => spiked_signal(y, beta),
                AsymptLoss::Nuclear => {
                    let x = spiked_signal(y, beta);
                    let x2 = x * x;
                    ((x2 * x2 - beta - beta.sqrt() * x * y) / (x2 * y)).max(0.0)
                }
            };
            (eta * scale).min(v)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptiMethod {
    #[default]
    #[serde(rename = "ASYMPT")]
    Asympt,
    #[serde(rename = "LN")]
    LowNoise,
}

#[derive(Clone, Debug)]
pub struct OptishrinkOptions {
    pub method: OptiMethod,
    pub loss: AsymptLoss,
    pub sigma: Option<f64>,
    pub k: Option<usize>,
    pub center: bool,
    /// Used only when the low-noise method has to estimate `k`.
    pub rank_cv: RankCvOptions,
}

impl Default for OptishrinkOptions {
    fn default() -> Self {
        OptishrinkOptions {
            method: OptiMethod::Asympt,
            loss: AsymptLoss::Frobenius,
            sigma: None,
            k: None,
            center: true,
            rank_cv: RankCvOptions::default(),
        }
    }
}

pub fn optishrink(x: &DataMatrix, opts: &OptishrinkOptions) -> Result<ShrinkageResult> {
    x.require_complete("optishrink")?;
    let (n, p) = (x.nrows(), x.ncols());
    if let Some(s) = opts.sigma {
        if !(s >= 0.0) || !s.is_finite() {
            return input(format!("sigma must be nonnegative and finite, got {s}"));
        }
    }
    let (work, state) = if opts.center { center_columns(x) } else { (x.clone(), CenterState::identity(p)) };
    let factors = compute_svd(work.values().as_ref(), None)?;
    let mut diagnostics = Vec::new();
    let mut params = TuningParams::default();
    let shrunk = match opts.method {
        OptiMethod::Asympt => {
            let sigma = match opts.sigma {
                Some(s) => s,
                None => {
                    let est = estim_sigma_mad(&work, false)?;
                    record(&mut diagnostics, Diagnostic::SigmaEstimated { method: "MAD".into(), sigma: est.sigma });
                    est.sigma
                }
            };
            params.sigma = Some(sigma);
            if sigma == 0.0 {
                factors.d.clone()
            } else {
                shrink_asympt(&factors.d, sigma, n, p, opts.loss)?
            }
        }
        OptiMethod::LowNoise => {
            let cap = (n - 1).min(p);
            let k = match opts.k {
                Some(k) if k > cap => {
                    return input(format!("rank k = {k} exceeds min(n-1, p) = {cap}"));
                }
                Some(k) => k,
                None => {
                    let k = estim_rank_cv(&work, &RankCvOptions { center: false, ..opts.rank_cv.clone() })?;
                    record(&mut diagnostics, Diagnostic::RankEstimated { k });
                    k
                }
            };
            let sigma = match opts.sigma {
                Some(s) => s,
                None => estim_sigma_ln(&work, Some(k), false, &opts.rank_cv)?.sigma,
            };
            params.k = Some(k);
            params.sigma = Some(sigma);
            shrink_lownoise(&factors.d, (n as f64).sqrt() * sigma, k)?
        }
    };
    let mut out = ShrinkageResult::from_spectrum(&factors, shrunk, state, params)?;
    out.diagnostics = diagnostics;
    Ok(out)
}
