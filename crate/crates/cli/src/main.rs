mod config;
mod error;
mod io;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lowrank::isa::{isa, IsaOptions, NoiseKind, Transformation};
use lowrank::missing::{imputeada, ImputeadaOptions};
use lowrank::noise::{estim_sigma_ln, estim_sigma_mad, RankCvOptions};
use lowrank::result::ShrinkageResult;
use lowrank::risk::{adashrink, default_gamma_seq, risk_surface, AdaMethod, AdashrinkOptions, Criterion};
use lowrank::shrinkage::{optishrink, AsymptLoss, OptiMethod, OptishrinkOptions};
use lowrank::sim::{
    bias_experiment, comparison_experiment, lrsim, msep, msep_table, BiasConfig, ComparisonConfig, ExperimentReport,
};
use lowrank::svd::singular_values;
use lowrank::{CenterState, Diagnostic, Mat};
use serde_json::{json, Value};

use error::CliError;
use io::{default_header, fmt_num, read_table, Format, Writer};

#[derive(Parser, Debug)]
#[command(name = "lowrank", version, about = "Low-rank matrix estimation from noisy and incomplete data")]
struct Cli {
    /// Worker threads for Monte Carlo and finite-difference loops.
    #[arg(long, global = true, env = "LOWRANK_THREADS")]
    threads: Option<usize>,
    /// Token marking a missing cell in input files.
    #[arg(long, global = true, default_value = "NA")]
    na_token: String,
    /// Seed from which every random stream is derived.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Format of matrix and table outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate X = mu + noise with a rank-k signal of unit Frobenius norm.
    Simulate(SimulateArgs),
    /// Denoise a complete matrix.
    Denoise(DenoiseArgs),
    /// Estimate the noise standard deviation; prints JSON.
    EstimateNoise(NoiseArgs),
    /// Impute missing cells with the adaptive trace-norm estimator.
    Impute(ImputeArgs),
    /// Run a Monte Carlo experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 4.0)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DenoiseMethod {
    Adashrink,
    Optishrink,
    Isa,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AdaCriterion {
    Gsure,
    Sure,
    Qut,
}

impl From<AdaCriterion> for AdaMethod {
    fn from(c: AdaCriterion) -> Self {
        match c {
            AdaCriterion::Gsure => AdaMethod::Gsure,
            AdaCriterion::Sure => AdaMethod::Sure,
            AdaCriterion::Qut => AdaMethod::Qut,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptiArg {
    Asympt,
    Ln,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Frobenius,
    Operator,
    Nuclear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Binomial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransformArg {
    None,
    Ca,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: DenoiseMethod,
    #[arg(long)]
    out: PathBuf,
    /// Do not center the columns.
    #[arg(long)]
    no_center: bool,
    /// Noise standard deviation (estimated when absent).
    #[arg(long)]
    sigma: Option<f64>,
    /// adashrink: tuning criterion.
    #[arg(long, value_enum, default_value_t = AdaCriterion::Gsure)]
    criterion: AdaCriterion,
    /// adashrink: comma-separated gamma grid.
    #[arg(long, value_delimiter = ',')]
    gamma_seq: Option<Vec<f64>>,
    /// adashrink: starting threshold.
    #[arg(long)]
    lambda0: Option<f64>,
    /// adashrink: null simulations for QUT.
    #[arg(long, default_value_t = 500)]
    nbsim: usize,
    /// adashrink: quantile level for QUT.
    #[arg(long, default_value_t = 0.95)]
    quantile_level: f64,
    /// adashrink: also write risk_surface.csv on this many thresholds.
    #[arg(long)]
    risk_surface: Option<usize>,
    /// optishrink: method.
    #[arg(long, value_enum, default_value_t = OptiArg::Asympt)]
    opt_method: OptiArg,
    /// optishrink: loss of the asymptotic shrinker.
    #[arg(long, value_enum, default_value_t = LossArg::Frobenius)]
    loss: LossArg,
    /// optishrink (LN): signal rank, estimated when absent.
    #[arg(long)]
    k: Option<usize>,
    /// isa: noise model (binomial by default with --transformation ca).
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// isa: binomial noise parameter (cross-validated when absent).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum, default_value_t = TransformArg::None)]
    transformation: TransformArg,
    #[arg(long, default_value_t = 1e-3)]
    svd_cutoff: f64,
    #[arg(long, default_value_t = 1000)]
    maxiter: usize,
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    /// isa: components kept in the reported factors.
    #[arg(long)]
    nu: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseMethod {
    Mad,
    Ln,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = NoiseMethod::Mad)]
    method: NoiseMethod,
    /// Signal rank for LN (cross-validated when absent).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    no_center: bool,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = AdaCriterion::Gsure)]
    method: AdaCriterion,
    #[arg(long, value_delimiter = ',')]
    gamma_seq: Option<Vec<f64>>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    no_center: bool,
    #[arg(long)]
    scale: bool,
    #[arg(long, default_value_t = 1e-8)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    nb_init: usize,
    #[arg(long, default_value_t = 1000)]
    maxiter: usize,
    /// Relative finite-difference step.
    #[arg(long)]
    fd_step: Option<f64>,
    /// Estimate the divergence on this many sampled cells.
    #[arg(long)]
    fd_cells: Option<usize>,
    /// Complete matrix to score the imputation against.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExperimentName {
    Bias,
    Msep,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    name: ExperimentName,
    /// Key-value configuration file (defaults when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replicates (100 for bias, 20 for msep by default).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn warnings(diags: &[Diagnostic]) -> Vec<String> {
    diags.iter().map(|d| d.to_string()).collect()
}

fn opt(v: Option<f64>) -> Value {
    v.filter(|x| x.is_finite()).map_or(Value::Null, Value::from)
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, w: &Writer) -> Result<(), CliError> {
    let sim = lrsim(a.n, a.p, a.k, a.snr, seed)?;
    let header = default_header(a.p);
    w.matrix("X", &header, &sim.x)?;
    w.matrix("mu", &header, &sim.mu)?;
    w.json(
        "meta.json",
        &json!({
            "sigma": sim.sigma,
            "seed": seed,
            "config": {"n": a.n, "p": a.p, "k": a.k, "snr": a.snr},
        }),
    )
}

fn shrink_summary(method: &str, n: usize, p: usize, r: &ShrinkageResult) -> Value {
    json!({
        "method": method,
        "n": n,
        "p": p,
        "nb_eigen": r.nb_eigen,
        "lambda": opt(r.params.lambda),
        "gamma": opt(r.params.gamma),
        "sigma": opt(r.params.sigma),
        "delta": opt(r.params.delta),
        "k": r.params.k,
        "criterion": opt(r.criterion),
        "nb_iter": r.nb_iter,
        "converged": r.converged,
        "warnings": warnings(&r.diagnostics),
    })
}

fn cmd_denoise(a: &DenoiseArgs, cli: &Cli, w: &Writer) -> Result<(), CliError> {
    let table = read_table(&a.input, &cli.na_token)?;
    if table.has_missing() {
        return Err(CliError::Usage(format!(
            "{} has {} missing cells; denoise needs complete data, use the impute command",
            a.input.display(),
            table.mask.n_missing()
        )));
    }
    let x = table.data()?;
    let (n, p) = (x.nrows(), x.ncols());
    let center = !a.no_center;
    let (name, res) = match a.method {
        DenoiseMethod::Adashrink => {
            let opts = AdashrinkOptions {
                sigma: a.sigma,
                method: a.criterion.into(),
                gamma_seq: a.gamma_seq.clone().unwrap_or_else(default_gamma_seq),
                lambda0: a.lambda0,
                center,
                nbsim: a.nbsim,
                quantile_level: a.quantile_level,
                seed: cli.seed,
            };
            let res = adashrink(&x, &opts)?;
            if let Some(size) = a.risk_surface {
                write_risk_surface(w, &table.values, center, &opts, &res, size)?;
            }
            ("adashrink", res)
        }
        DenoiseMethod::Optishrink => {
            let opts = OptishrinkOptions {
                method: match a.opt_method {
                    OptiArg::Asympt => OptiMethod::Asympt,
                    OptiArg::Ln => OptiMethod::LowNoise,
                },
                loss: match a.loss {
                    LossArg::Frobenius => AsymptLoss::Frobenius,
                    LossArg::Operator => AsymptLoss::Operator,
                    LossArg::Nuclear => AsymptLoss::Nuclear,
                },
                sigma: a.sigma,
                k: a.k,
                center,
                rank_cv: RankCvOptions { seed: cli.seed, ..Default::default() },
            };
            ("optishrink", optishrink(&x, &opts)?)
        }
        DenoiseMethod::Isa => {
            let mut opts = IsaOptions {
                noise: a.noise.map(|k| match k {
                    NoiseArg::Gaussian => NoiseKind::Gaussian,
                    NoiseArg::Binomial => NoiseKind::Binomial,
                }),
                sigma: a.sigma,
                delta: a.delta,
                transformation: match a.transformation {
                    TransformArg::None => Transformation::None,
                    TransformArg::Ca => Transformation::Ca,
                },
                svd_cutoff: a.svd_cutoff,
                maxiter: a.maxiter,
                threshold: a.threshold,
                nu: a.nu,
                center,
                ..Default::default()
            };
            opts.delta_cv.seed = cli.seed;
            ("isa", isa(&x, &opts)?)
        }
    };
    for d in &res.diagnostics {
        log::warn!("{d}");
    }
    match &res.ca {
        Some(ca) => {
            w.matrix("mu_hat", &table.header, &ca.mu_hat_transformed)?;
            w.matrix("ca_mu_hat", &table.header, &res.mu_hat)?;
            let dims: Vec<String> = (1..=ca.coordinates.d.len()).map(|l| format!("Dim{l}")).collect();
            w.matrix("ca_rows", &dims, &ca.coordinates.rows)?;
            w.matrix("ca_cols", &dims, &ca.coordinates.cols)?;
        }
        None => w.matrix("mu_hat", &table.header, &res.mu_hat)?,
    }
    let mut work = table.values.clone();
    if center && res.ca.is_none() {
        CenterState::from_means(&work).apply(&mut work);
    }
    let d = match &res.ca {
        Some(ca) => singular_values(ca.decomposition.m.as_ref())?,
        None => singular_values(work.as_ref())?,
    };
    let rows: Vec<Vec<String>> = (0..res.singval.len().max(d.len()))
        .map(|l| {
            vec![
                (l + 1).to_string(),
                d.get(l).map_or(String::new(), |v| fmt_num(*v)),
                res.singval.get(l).map_or(String::new(), |v| fmt_num(*v)),
            ]
        })
        .collect();
    w.rows("singval", &["component", "d", "shrunk"], &rows)?;
    w.json("summary.json", &shrink_summary(name, n, p, &res))
}

fn write_risk_surface(
    w: &Writer,
    values: &Mat<f64>,
    center: bool,
    opts: &AdashrinkOptions,
    res: &ShrinkageResult,
    size: usize,
) -> Result<(), CliError> {
    let (n, p) = (values.nrows(), values.ncols());
    let mut work = values.clone();
    if center {
        CenterState::from_means(&work).apply(&mut work);
    }
    let d = singular_values(work.as_ref())?;
    let top = d[0];
    let size = size.max(2);
    let lambdas: Vec<f64> = (0..size).map(|t| top * 10f64.powf(-3.0 + 3.3 * t as f64 / (size - 1) as f64)).collect();
    let (criterion, sigma) = match opts.method {
        AdaMethod::Gsure => (Criterion::Gsure, None),
        _ => (Criterion::Sure, res.params.sigma),
    };
    let surface = risk_surface(&d, n, p, criterion, sigma, center, &lambdas, &opts.gamma_seq)?;
    let rows: Vec<Vec<String>> =
        surface.iter().map(|r| vec![fmt_num(r.lambda), fmt_num(r.gamma), fmt_num(r.value)]).collect();
    w.rows("risk_surface", &["lambda", "gamma", "criterion"], &rows)
}

fn cmd_estimate_noise(a: &NoiseArgs, cli: &Cli) -> Result<(), CliError> {
    let table = read_table(&a.input, &cli.na_token)?;
    if table.has_missing() {
        return Err(CliError::Usage("noise estimation needs complete data".into()));
    }
    let x = table.data()?;
    let center = !a.no_center;
    let est = match a.method {
        NoiseMethod::Mad => estim_sigma_mad(&x, center)?,
        NoiseMethod::Ln => estim_sigma_ln(&x, a.k, center, &RankCvOptions { seed: cli.seed, ..Default::default() })?,
    };
    for d in &est.diagnostics {
        log::warn!("{d}");
    }
    let out = json!({
        "sigma": est.sigma,
        "method": match a.method { NoiseMethod::Mad => "MAD", NoiseMethod::Ln => "LN" },
        "k": est.k_used,
        "k_estimated": est.k_estimated,
        "warnings": warnings(&est.diagnostics),
    });
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&out).expect("json")).map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_impute(a: &ImputeArgs, cli: &Cli, w: &Writer) -> Result<(), CliError> {
    let table = read_table(&a.input, &cli.na_token)?;
    let x = table.data()?;
    let (n, p) = (x.nrows(), x.ncols());
    let mut opts = ImputeadaOptions {
        lambda: a.lambda,
        gamma: a.gamma,
        sigma: a.sigma,
        method: a.method.into(),
        gamma_seq: a.gamma_seq.clone().unwrap_or_else(default_gamma_seq),
        center: !a.no_center,
        scale: a.scale,
        threshold: a.threshold,
        nb_init: a.nb_init,
        maxiter: a.maxiter,
        lambda0: a.lambda0,
        seed: cli.seed,
        fd_cells: a.fd_cells,
        ..Default::default()
    };
    if let Some(s) = a.fd_step {
        opts.fd_step_scale = s;
    }
    let res = imputeada(&x, &opts)?;
    for d in &res.diagnostics {
        log::warn!("{d}");
    }
    w.matrix_with("completeObs", &table.header, n, p, |i, j| {
        if table.mask.is_observed(i, j) {
            table.raw[i][j].clone()
        } else {
            fmt_num(res.complete_obs[(i, j)])
        }
    })?;
    w.matrix("mu_hat", &table.header, &res.mu_hat)?;
    let mut summary = json!({
        "n": n,
        "p": p,
        "n_missing": table.mask.n_missing(),
        "lambda": opt(res.params.lambda),
        "gamma": opt(res.params.gamma),
        "sigma": opt(res.params.sigma),
        "criterion": res.criterion.as_ref().map_or(Value::Null, |c| opt(Some(c.value))),
        "criterion_name": res.criterion.as_ref().map_or(Value::Null, |c| json!(match c.criterion { Criterion::Sure => "SURE", Criterion::Gsure => "GSURE" })),
        "divergence": res.criterion.as_ref().map_or(Value::Null, |c| opt(Some(c.divergence))),
        "nb_iter": res.nb_iter,
        "converged": res.converged,
        "warnings": warnings(&res.diagnostics),
    });
    if let Some(truth_path) = &a.truth {
        let truth = read_table(truth_path, &cli.na_token)?;
        if truth.has_missing() || truth.values.nrows() != n || truth.values.ncols() != p {
            return Err(CliError::Usage(format!("{} must be a complete {n}x{p} matrix", truth_path.display())));
        }
        if table.has_missing() {
            let means = x.observed_column_means();
            let mean_fill =
                Mat::from_fn(n, p, |i, j| if table.mask.is_observed(i, j) { table.values[(i, j)] } else { means[j] });
            summary["msep"] = json!(msep(&res.complete_obs, &truth.values, &table.mask)?);
            summary["msep_mean_imputation"] = json!(msep(&mean_fill, &truth.values, &table.mask)?);
        }
    }
    w.json("summary.json", &summary)
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<String>, CliError> {
    path.as_ref()
        .map(|p| fs::read_to_string(p).map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display()))))
        .transpose()
}

fn write_report(w: &Writer, rep: &ExperimentReport) -> Result<(), CliError> {
    let metric_names: Vec<String> =
        rep.records.first().map(|r| r.metrics.iter().map(|(m, _)| m.clone()).collect()).unwrap_or_default();
    let mut header: Vec<&str> = vec!["rep", "seed", "mechanism", "arm"];
    header.extend(metric_names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = rep
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.rep.to_string(),
                r.seed.to_string(),
                r.mechanism.clone().unwrap_or_default(),
                r.arm.clone().unwrap_or_default(),
            ];
            row.extend(metric_names.iter().map(|m| r.metric(m).map_or(String::new(), fmt_num)));
            row
        })
        .collect();
    w.rows("records", &header, &rows)?;
    w.json(
        "summary.json",
        &json!({
            "name": rep.name,
            "seed": rep.seed,
            "reps": rep.reps,
            "config_hash": rep.config_hash,
            "config": rep.config,
            "aggregates": rep.aggregates,
        }),
    )
}

fn cmd_experiment(a: &ExperimentArgs, seed: u64, w: &Writer) -> Result<(), CliError> {
    let text = read_config(&a.config)?;
    match a.name {
        ExperimentName::Bias => {
            let cfg: BiasConfig = text.as_deref().map(config::load).transpose()?.unwrap_or_default();
            let rep = bias_experiment(&cfg, a.reps.unwrap_or(100), seed)?;
            write_report(w, &rep)?;
            let cols = ["bias_complete", "bias_sure_miss", "bias_sure_comp"];
            let rows: Vec<Vec<String>> = rep
                .records
                .iter()
                .map(|r| cols.iter().map(|c| fmt_num(r.metric(c).unwrap_or(f64::NAN))).collect())
                .collect();
            w.rows("bias", &cols, &rows)
        }
        ExperimentName::Msep => {
            let cfg: ComparisonConfig = text.as_deref().map(config::load).transpose()?.unwrap_or_default();
            let rep = comparison_experiment(&cfg, a.reps.unwrap_or(20), seed)?;
            write_report(w, &rep)?;
            let table = msep_table(&rep);
            let mut header = vec!["arm".to_string()];
            header.extend(cfg.mechanisms.iter().cloned());
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|(arm, cols)| {
                    let mut row = vec![arm.clone()];
                    row.extend(
                        cfg.mechanisms
                            .iter()
                            .map(|m| cols.iter().find(|(c, _)| c == m).map_or(String::new(), |(_, v)| fmt_num(*v))),
                    );
                    row
                })
                .collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            w.rows("table", &header, &rows)
        }
    }
}

fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Simulate(a) => Some(&a.out),
        Command::Denoise(a) => Some(&a.out),
        Command::Impute(a) => Some(&a.out),
        Command::Experiment(a) => Some(&a.out),
        Command::EstimateNoise(_) => None,
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
    }
    let dir = out_dir(&cli.command);
    if let Some(d) = dir {
        Writer::create(d)?;
    }
    let w = Writer { dir: dir.unwrap_or(Path::new(".")), format: cli.format };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, cli.seed, &w),
        Command::Denoise(a) => cmd_denoise(a, cli, &w),
        Command::EstimateNoise(a) => cmd_estimate_noise(a, cli),
        Command::Impute(a) => cmd_impute(a, cli, &w),
        Command::Experiment(a) => cmd_experiment(a, cli.seed, &w),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
