//! Simulated low-rank data and the Monte Carlo experiments built on it.

use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{input, Result};
use crate::matrix::{CenterState, DataMatrix, Mask};
use crate::missing::{
    imputeada, insert_missing, iterative_impute, sure_miss, FdOptions, ImputeOptions, ImputeRule, ImputeadaOptions,
    MissingMechanism,
};
use crate::risk::{sure, AdaMethod};
use crate::rng;
use crate::shrinkage::{shrink_soft, ShrinkSpec};
use crate::svd::{compute_svd, reconstruct, singular_values};

#[derive(Clone, Debug)]
pub struct SimulationBundle {
    pub x: Mat<f64>,
    pub mu: Mat<f64>,
    pub sigma: f64,
    pub k: usize,
    pub snr: f64,
    pub seed: u64,
}

/// `X = mu + sigma Z`: `mu` is the rank-`k` truncation of a standard Gaussian
/// matrix scaled to unit Frobenius norm and `sigma = 1 / (snr sqrt(np))`.
pub fn lrsim(n: usize, p: usize, k: usize, snr: f64, seed: u64) -> Result<SimulationBundle> {
    if n == 0 || p == 0 {
        return input(format!("dimensions must be positive, got {n}x{p}"));
    }
    if k == 0 || k > n.min(p) {
        return input(format!("rank k = {k} must satisfy 1 <= k <= min(n, p) = {}", n.min(p)));
    }
    if !(snr > 0.0) || !snr.is_finite() {
        return input(format!("snr must be positive and finite, got {snr}"));
    }
    let mut g = rng::stream(seed, "lrsim-signal", 0);
    let raw = Mat::from_fn(n, p, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut g));
    let f = compute_svd(raw.as_ref(), Some(k))?;
    let norm = f.d.iter().map(|d| d * d).sum::<f64>().sqrt();
    let shrunk: Vec<f64> = f.d.iter().map(|d| d / norm).collect();
    let mu = reconstruct(&f, &shrunk, &CenterState::identity(p))?;
    let sigma = 1.0 / (snr * ((n * p) as f64).sqrt());
    let mut g = rng::stream(seed, "lrsim-noise", 0);
    let x = Mat::from_fn(n, p, |i, j| mu[(i, j)] + sigma * Distribution::<f64>::sample(&StandardNormal, &mut g));
    Ok(SimulationBundle { x, mu, sigma, k, snr, seed })
}

/// Mean squared error over the cells `hidden` marks as missing.
pub fn msep(completed: &Mat<f64>, truth: &Mat<f64>, hidden: &Mask) -> Result<f64> {
    if completed.nrows() != truth.nrows() || completed.ncols() != truth.ncols() {
        return input(format!(
            "completed matrix is {}x{} but the truth is {}x{}",
            completed.nrows(),
            completed.ncols(),
            truth.nrows(),
            truth.ncols()
        ));
    }
    if hidden.nrows() != truth.nrows() || hidden.ncols() != truth.ncols() {
        return input("mask shape differs from the data");
    }
    let cells = hidden.missing_cells();
    if cells.is_empty() {
        return input("no hidden cells to score");
    }
    let s: f64 = cells.iter().map(|&(i, j)| (completed[(i, j)] - truth[(i, j)]).powi(2)).sum();
    Ok(s / cells.len() as f64)
}

/// One replicate of an experiment: labels plus named metrics, in column order.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRecord {
    pub rep: usize,
    pub seed: u64,
    pub mechanism: Option<String>,
    pub arm: Option<String>,
    pub metrics: Vec<(String, f64)>,
}

impl ExperimentRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _)| m == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mechanism: Option<String>,
    pub arm: Option<String>,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of the mean, `sd / sqrt(count)`.
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub reps: usize,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub records: Vec<ExperimentRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn aggregate(&self, mechanism: Option<&str>, arm: Option<&str>, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.mechanism.as_deref() == mechanism && a.arm.as_deref() == arm && a.metric == metric)
    }
}

/// Mean, sd and standard error of every metric within each (mechanism, arm)
/// group, in order of first appearance.
pub fn aggregate_records(records: &[ExperimentRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(Option<String>, Option<String>, String)> = Vec::new();
    for r in records {
        for (m, _) in &r.metrics {
            let key = (r.mechanism.clone(), r.arm.clone(), m.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(mechanism, arm, metric)| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.mechanism == mechanism && r.arm == arm)
                .filter_map(|r| r.metric(&metric))
                .collect();
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            let sd = if count > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
            } else {
                0.0
            };
            Aggregate { mechanism, arm, metric, count, mean, sd, se: sd / (count as f64).sqrt() }
        })
        .collect()
}

fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn report<C: Serialize>(
    name: &str,
    config: &C,
    reps: usize,
    seed: u64,
    records: Vec<ExperimentRecord>,
) -> Result<ExperimentReport> {
    let config =
        serde_json::to_value(config).map_err(|e| crate::Error::Input(format!("config not serialisable: {e}")))?;
    let aggregates = aggregate_records(&records);
    Ok(ExperimentReport {
        name: name.into(),
        seed,
        reps,
        config_hash: config_hash(&config),
        config,
        records,
        aggregates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub snr: f64,
    /// Soft threshold; `0.5 sigma (sqrt(n) + sqrt(p))` when absent.
    pub lambda: Option<f64>,
    pub rate: f64,
    pub threshold: f64,
    pub maxiter: usize,
    pub center: bool,
    pub fd_cells: Option<usize>,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            n: 50,
            p: 30,
            k: 5,
            snr: 0.5,
            lambda: None,
            rate: 0.2,
            threshold: 1e-8,
            maxiter: 1000,
            center: false,
            fd_cells: None,
        }
    }
}

impl BiasConfig {
    pub fn lambda_for(&self, sigma: f64) -> f64 {
        self.lambda.unwrap_or(0.5 * sigma * ((self.n as f64).sqrt() + (self.p as f64).sqrt()))
    }
}

fn bias_replicate(cfg: &BiasConfig, rep: usize, seed: u64) -> Result<ExperimentRecord> {
    let sim = lrsim(cfg.n, cfg.p, cfg.k, cfg.snr, rng::child_seed(seed, "bias-sim", rep as u64))?;
    let (n, p) = (cfg.n, cfg.p);
    let sigma = sim.sigma;
    let lambda = cfg.lambda_for(sigma);
    let sq = |a: &Mat<f64>, b: &Mat<f64>| (a - b).norm_l2().powi(2);

    // complete data: soft thresholding and its closed-form SURE
    let (work, state) = if cfg.center {
        crate::matrix::center_columns(&DataMatrix::new(sim.x.clone())?)
    } else {
        (DataMatrix::new(sim.x.clone())?, CenterState::identity(p))
    };
    let f = compute_svd(work.values().as_ref(), None)?;
    let fit = reconstruct(&f, &shrink_soft(&f.d, lambda)?, &state)?;
    let mse_complete = sq(&fit, &sim.mu);
    let sure_complete = sure(&f.d, lambda, 1.0, sigma, n, p)?.value;

    // 20% MCAR, iterative soft-thresholding, risk on the observed cells
    let masked = insert_missing(
        &DataMatrix::new(sim.x.clone())?,
        MissingMechanism::mcar(cfg.rate),
        rng::child_seed(seed, "bias-mask", rep as u64),
    )?;
    let fd = FdOptions {
        impute: ImputeOptions {
            threshold: cfg.threshold,
            maxiter: cfg.maxiter,
            center: cfg.center,
            ..Default::default()
        },
        cells: cfg.fd_cells,
        seed: rng::child_seed(seed, "bias-fd", rep as u64),
        ..Default::default()
    };
    let (risk_miss, imputed) = sure_miss(&masked, lambda, 1.0, sigma, &fd)?;
    let mask = masked.mask_or_full();
    let mse_obs: f64 =
        mask.observed_cells().iter().map(|&(i, j)| (imputed.mu_hat[(i, j)] - sim.mu[(i, j)]).powi(2)).sum();

    // SURE applied to the imputed matrix as if it were fully observed
    let mut completed = imputed.complete_obs.clone();
    let comp_state = if cfg.center { CenterState::from_means(&completed) } else { CenterState::identity(p) };
    comp_state.apply(&mut completed);
    let d_comp = singular_values(completed.as_ref())?;
    let sure_comp = sure(&d_comp, lambda, 1.0, sigma, n, p)?.value;
    let mse_all = sq(&imputed.mu_hat, &sim.mu);

    Ok(ExperimentRecord {
        rep,
        seed: sim.seed,
        mechanism: None,
        arm: None,
        metrics: vec![
            ("mse_complete".into(), mse_complete),
            ("sure_complete".into(), sure_complete),
            ("mse_observed".into(), mse_obs),
            ("sure_miss".into(), risk_miss.value),
            ("mse_imputed".into(), mse_all),
            ("sure_comp".into(), sure_comp),
            ("bias_complete".into(), mse_complete - sure_complete),
            ("bias_sure_miss".into(), mse_obs - risk_miss.value),
            ("bias_sure_comp".into(), mse_all - sure_comp),
            ("lambda".into(), lambda),
            ("nb_iter".into(), imputed.nb_iter as f64),
        ],
    })
}

/// Bias of SURE on complete data, of SURE with missing values (finite-difference
/// divergence, observed-cell risk), and of SURE applied to the imputed matrix.
pub fn bias_experiment(cfg: &BiasConfig, reps: usize, seed: u64) -> Result<ExperimentReport> {
    if reps == 0 {
        return input("reps must be at least 1");
    }
    let records: Vec<ExperimentRecord> =
        (0..reps).into_par_iter().map(|r| bias_replicate(cfg, r, seed)).collect::<Result<_>>()?;
    report("bias", cfg, reps, seed, records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub snr: f64,
    pub rate: f64,
    pub mechanisms: Vec<String>,
    /// Gamma grid of the ATN arm.
    pub gamma_seq: Vec<f64>,
    /// Cells sampled for the divergence in the ATN arm (all when absent).
    pub fd_cells: Option<usize>,
    /// Number of thresholds on the oracle grid of the soft arm.
    pub lambda_grid: usize,
    pub threshold: f64,
    pub maxiter: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            n: 100,
            p: 30,
            k: 2,
            snr: 1.0,
            rate: 0.2,
            mechanisms: vec!["mcar".into(), "mar".into()],
            gamma_seq: vec![1.0, 1.5, 2.0, 3.0, 4.0, 5.0],
            fd_cells: Some(150),
            lambda_grid: 20,
            threshold: 1e-8,
            maxiter: 1000,
        }
    }
}

pub const ARMS: [&str; 3] = ["atn", "soft_oracle", "mean"];

fn mechanism(name: &str, rate: f64) -> Result<MissingMechanism> {
    match name {
        "mcar" => Ok(MissingMechanism::mcar(rate)),
        "mar" => Ok(MissingMechanism::mar(rate)),
        other => input(format!("unknown missing-data mechanism {other:?} (expected mcar or mar)")),
    }
}

/// Thresholds for the soft-oracle arm: geometric between `1e-2 d_1` and `d_1`
/// of the centered mean-imputed matrix.
pub fn soft_lambda_grid(x: &DataMatrix, size: usize) -> Result<Vec<f64>> {
    let mut z = x.values().clone();
    let means = x.observed_column_means();
    for (i, j) in x.mask_or_full().missing_cells() {
        z[(i, j)] = means[j];
    }
    CenterState::fit(&z, x.mask(), true, false).apply(&mut z);
    let d1 = singular_values(z.as_ref())?[0];
    if size < 2 {
        return Ok(vec![d1 * 0.1]);
    }
    Ok((0..size).map(|t| d1 * 10f64.powf(-2.0 + 2.0 * t as f64 / (size - 1) as f64)).collect())
}

fn comparison_replicate(cfg: &ComparisonConfig, mech: &str, rep: usize, seed: u64) -> Result<Vec<ExperimentRecord>> {
    let sim = lrsim(cfg.n, cfg.p, cfg.k, cfg.snr, rng::child_seed(seed, "msep-sim", rep as u64))?;
    let full = DataMatrix::new(sim.x.clone())?;
    let masked = insert_missing(
        &full,
        mechanism(mech, cfg.rate)?,
        rng::child_seed(seed, &format!("msep-mask-{mech}"), rep as u64),
    )?;
    let mask = masked.mask_or_full();
    let record = |arm: &str, metrics: Vec<(String, f64)>| ExperimentRecord {
        rep,
        seed: sim.seed,
        mechanism: Some(mech.into()),
        arm: Some(arm.into()),
        metrics,
    };
    let mut out = Vec::with_capacity(3);

    let ada = imputeada(
        &masked,
        &ImputeadaOptions {
            method: AdaMethod::Gsure,
            gamma_seq: cfg.gamma_seq.clone(),
            threshold: cfg.threshold,
            maxiter: cfg.maxiter,
            fd_cells: cfg.fd_cells,
            seed: rng::child_seed(seed, "msep-ada", rep as u64),
            ..Default::default()
        },
    )?;
    out.push(record(
        "atn",
        vec![
            ("msep".into(), msep(&ada.complete_obs, &sim.mu, &mask)?),
            ("lambda".into(), ada.params.lambda.unwrap_or(f64::NAN)),
            ("gamma".into(), ada.params.gamma.unwrap_or(f64::NAN)),
        ],
    ));

    let grid = soft_lambda_grid(&masked, cfg.lambda_grid)?;
    let opts = ImputeOptions { threshold: cfg.threshold, maxiter: cfg.maxiter, ..Default::default() };
    let mut best = (f64::INFINITY, f64::NAN);
    for &lambda in &grid {
        let res = iterative_impute(&masked, &ImputeRule::Shrink(ShrinkSpec::Soft { lambda }), &opts)?;
        let e = msep(&res.complete_obs, &sim.mu, &mask)?;
        if e < best.0 {
            best = (e, lambda);
        }
    }
    out.push(record("soft_oracle", vec![("msep".into(), best.0), ("lambda".into(), best.1), ("gamma".into(), 1.0)]));

    let means = masked.observed_column_means();
    let mean_fill = Mat::from_fn(cfg.n, cfg.p, |i, j| if mask.is_observed(i, j) { sim.x[(i, j)] } else { means[j] });
    out.push(record(
        "mean",
        vec![
            ("msep".into(), msep(&mean_fill, &sim.mu, &mask)?),
            ("lambda".into(), f64::NAN),
            ("gamma".into(), f64::NAN),
        ],
    ));
    Ok(out)
}

/// Prediction error of ATN (GSURE-selected), soft thresholding with the
/// oracle threshold and mean imputation, per missing-data mechanism. The
/// error is measured against the signal on the missing cells.
pub fn comparison_experiment(cfg: &ComparisonConfig, reps: usize, seed: u64) -> Result<ExperimentReport> {
    if reps == 0 {
        return input("reps must be at least 1");
    }
    for m in &cfg.mechanisms {
        mechanism(m, cfg.rate)?;
    }
    let jobs: Vec<(String, usize)> =
        cfg.mechanisms.iter().flat_map(|m| (0..reps).map(move |r| (m.clone(), r))).collect();
    let nested: Vec<Vec<ExperimentRecord>> =
        jobs.par_iter().map(|(m, r)| comparison_replicate(cfg, m, *r, seed)).collect::<Result<_>>()?;
    report("msep", cfg, reps, seed, nested.into_iter().flatten().collect())
}

/// Mean MSEP per arm and mechanism, one row per arm.
pub fn msep_table(report: &ExperimentReport) -> Vec<(String, Vec<(String, f64)>)> {
    let mut mechs: Vec<String> = Vec::new();
    for r in &report.records {
        if let Some(m) = &r.mechanism {
            if !mechs.contains(m) {
                mechs.push(m.clone());
            }
        }
    }
    ARMS.iter()
        .map(|&arm| {
            let cols = mechs
                .iter()
                .filter_map(|m| report.aggregate(Some(m), Some(arm), "msep").map(|a| (m.clone(), a.mean)))
                .collect();
            (arm.to_string(), cols)
        })
        .collect()
}
