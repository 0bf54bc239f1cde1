use faer::Mat;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::fd::{gsure_miss, sure_miss, FdOptions};
use super::impute::{iterative_impute, ImputationResult, ImputeOptions, ImputeRule, Init};
use crate::error::{input, Result};
use crate::matrix::{CenterState, DataMatrix};
use crate::risk::{check_gamma_seq, default_gamma_seq, log_lambda_bounds, AdaMethod};
use crate::rng;
use crate::search::descending_scan;
use crate::shrinkage::ShrinkSpec;
use crate::svd::singular_values;

#[derive(Clone, Debug)]
pub struct ImputeadaOptions {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    /// `Gsure` or `Sure`; `Qut` is rejected.
    pub method: AdaMethod,
    pub gamma_seq: Vec<f64>,
    pub center: bool,
    pub scale: bool,
    pub threshold: f64,
    pub nb_init: usize,
    pub maxiter: usize,
    pub lambda0: Option<f64>,
    pub seed: u64,
    pub fd_step_scale: f64,
    pub fd_tol: f64,
    pub fd_cells: Option<usize>,
    /// Tolerance of the search over log-lambda.
    pub lambda_tol: f64,
    /// Brent iterations of the final refinement.
    pub search_maxiter: usize,
    /// Step of the descending scan over log-lambda.
    pub scan_step: f64,
    /// Scan stops after this many points above the running minimum.
    pub scan_patience: usize,
}

impl Default for ImputeadaOptions {
    fn default() -> Self {
        ImputeadaOptions {
            lambda: None,
            gamma: None,
            sigma: None,
            method: AdaMethod::Gsure,
            gamma_seq: default_gamma_seq(),
            center: true,
            scale: false,
            threshold: 1e-8,
            nb_init: 1,
            maxiter: 1000,
            lambda0: None,
            seed: 0,
            fd_step_scale: f64::EPSILON.sqrt(),
            fd_tol: 1e-6,
            fd_cells: None,
            lambda_tol: 1e-2,
            search_maxiter: 50,
            scan_step: 1.5f64.ln(),
            scan_patience: 2,
        }
    }
}

fn positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => input(format!("{name} must be positive and finite, got {x}")),
        _ => Ok(()),
    }
}

/// Starting values: column means for the first initialisation, then draws from
/// a normal with each column's observed mean and standard deviation.
fn initialisation(x: &DataMatrix, r: usize, seed: u64) -> Init {
    if r == 0 {
        return Init::ColumnMeans;
    }
    let st = CenterState::fit(x.values(), x.mask(), true, true);
    let mut g = rng::stream(seed, "imputeada-init", r as u64);
    let mut v = Mat::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let law = Normal::new(st.column_means[j], st.column_scales[j]).expect("finite scale");
        for i in 0..x.nrows() {
            if !x.is_observed(i, j) {
                v[(i, j)] = law.sample(&mut g);
            }
        }
    }
    Init::Values(v)
}

/// Iterative ATN imputation with `(lambda, gamma)` selected by SURE or GSURE
/// computed with finite-difference divergence.
pub fn imputeada(x: &DataMatrix, opts: &ImputeadaOptions) -> Result<ImputationResult> {
    if opts.method == AdaMethod::Qut {
        return input("QUT selection is not available with missing values; use GSURE or SURE");
    }
    positive("sigma", opts.sigma)?;
    positive("lambda", opts.lambda)?;
    positive("lambda0", opts.lambda0)?;
    if opts.method == AdaMethod::Sure && opts.sigma.is_none() && !(opts.lambda.is_some() && opts.gamma.is_some()) {
        return input("SURE selection: it is necessary to specify the variance of the noise (sigma)");
    }
    if opts.nb_init == 0 {
        return input("nb_init must be at least 1");
    }
    if !(opts.scan_step > 0.0) || !opts.scan_step.is_finite() || opts.scan_patience == 0 {
        return input("the threshold scan needs a positive step and a patience of at least 1");
    }
    let impute_opts = |init: Init| ImputeOptions {
        threshold: opts.threshold,
        maxiter: opts.maxiter,
        center: opts.center,
        scale: opts.scale,
        init,
    };
    if let (Some(lambda), Some(gamma)) = (opts.lambda, opts.gamma) {
        let rule = ImputeRule::Shrink(ShrinkSpec::Atn { lambda, gamma });
        let mut res = iterative_impute(x, &rule, &impute_opts(Init::ColumnMeans))?;
        res.params.sigma = opts.sigma;
        return Ok(res);
    }
    let gammas = match opts.gamma {
        Some(g) => vec![g],
        None => opts.gamma_seq.clone(),
    };
    check_gamma_seq(&gammas)?;

    let mut best: Option<ImputationResult> = None;
    for r in 0..opts.nb_init {
        let init = initialisation(x, r, opts.seed);
        let fd = FdOptions {
            impute: impute_opts(init.clone()),
            step_scale: opts.fd_step_scale,
            tol: opts.fd_tol,
            cells: opts.fd_cells,
            seed: rng::child_seed(opts.seed, "imputeada-fd", r as u64),
        };
        let eval = |lambda: f64, gamma: f64| -> Result<ImputationResult> {
            match opts.method {
                AdaMethod::Sure => sure_miss(x, lambda, gamma, opts.sigma.expect("checked"), &fd).map(|(_, f)| f),
                _ => gsure_miss(x, lambda, gamma, &fd).map(|(_, f)| f),
            }
        };
        let score = |f: &ImputationResult| f.criterion.as_ref().map_or(f64::INFINITY, |c| c.value);

        let fits: Vec<ImputationResult> = match opts.lambda {
            Some(lambda) => gammas.par_iter().map(|&g| eval(lambda, g)).collect::<Result<_>>()?,
            None => {
                // scan down from the top singular value of the initial completion
                let d = initial_spectrum(x, &init, opts)?;
                let (lo, _) = log_lambda_bounds(&d);
                let hi = d[0].max(f64::MIN_POSITIVE).ln().max(lo);
                let start = opts.lambda0.map_or(hi, |l| l.ln().clamp(lo, hi));
                gammas
                    .par_iter()
                    .map(|&g| {
                        // keep the lowest-scoring fit seen so the winner is not refitted
                        let mut kept: Option<(f64, ImputationResult)> = None;
                        let m = descending_scan(
                            |t| match eval(t.exp(), g) {
                                Ok(f) => {
                                    let v = score(&f);
                                    if kept.as_ref().is_none_or(|(k, _)| v < *k) {
                                        kept = Some((v, f));
                                    }
                                    v
                                }
                                Err(_) => f64::INFINITY,
                            },
                            start,
                            lo,
                            opts.scan_step,
                            opts.scan_patience,
                            opts.lambda_tol,
                            opts.search_maxiter,
                        );
                        match kept {
                            Some((_, f)) => Ok(f),
                            None => eval(m.x.exp(), g),
                        }
                    })
                    .collect::<Result<_>>()?
            }
        };
        for f in fits {
            if best.as_ref().is_none_or(|b| score(&f) < score(b)) {
                best = Some(f);
            }
        }
    }
    let mut res = best.expect("at least one initialisation");
    res.params.sigma = opts.sigma;
    Ok(res)
}

fn initial_spectrum(x: &DataMatrix, init: &Init, opts: &ImputeadaOptions) -> Result<Vec<f64>> {
    let mut z = x.values().clone();
    let means = x.observed_column_means();
    for (i, j) in x.mask_or_full().missing_cells() {
        z[(i, j)] = match init {
            Init::ColumnMeans => means[j],
            Init::Values(v) => v[(i, j)],
        };
    }
    if opts.center || opts.scale {
        CenterState::fit(&z, x.mask(), opts.center, opts.scale).apply(&mut z);
    }
    singular_values(z.as_ref())
}
