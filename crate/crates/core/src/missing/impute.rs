use faer::Mat;
use rand_distr::{Distribution, StandardNormal};

use crate::ca::{ca_backtransform, ca_transform_unchecked};
use crate::diagnostics::{record, Diagnostic};
use crate::error::{input, Error, Result};
use crate::isa::{isa_iterate, regularizer, NoiseModel, Transformation};
use crate::matrix::{CenterState, DataMatrix, Mask};
use crate::result::TuningParams;
use crate::risk::RiskValue;
use crate::rng;
use crate::shrinkage::ShrinkSpec;
use crate::svd::{low_rank_product, spectral_map, subspace_refine};

/// ISA run inside each imputation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsaRule {
    pub model: NoiseModel,
    pub transformation: Transformation,
    pub maxiter: usize,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImputeRule {
    Shrink(ShrinkSpec),
    Isa(IsaRule),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum Init {
    /// Observed column means.
    #[default]
    ColumnMeans,
    /// Starting values for the missing cells, read from a full matrix.
    Values(Mat<f64>),
}

#[derive(Clone, Debug)]
pub struct ImputeOptions {
    pub threshold: f64,
    pub maxiter: usize,
    pub center: bool,
    pub scale: bool,
    pub init: Init,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions { threshold: 1e-6, maxiter: 1000, center: true, scale: false, init: Init::ColumnMeans }
    }
}

#[derive(Clone, Debug)]
pub struct ImputationResult {
    /// Observed cells verbatim, missing cells from `mu_hat`.
    pub complete_obs: Mat<f64>,
    pub mu_hat: Mat<f64>,
    pub nb_iter: usize,
    pub converged: bool,
    pub last_change: f64,
    /// Shrunk spectrum of the final fit (empty for ISA rules).
    pub singval: Vec<f64>,
    pub params: TuningParams,
    pub criterion: Option<RiskValue>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Rank used by the warm-started subspace kernel, when it applies.
fn subspace_rank(spec: &ShrinkSpec, n: usize, p: usize) -> Option<usize> {
    let r = match *spec {
        ShrinkSpec::Hard { k } | ShrinkSpec::LowNoise { k, .. } => k,
        _ => return None,
    };
    let small = n.min(p);
    (small >= 60 && r >= 1 && r + 10 <= small / 2).then_some(r)
}

/// Iteration state: the completed matrix on the raw scale plus the fixed
/// standardisation and whatever the kernel carries between steps.
#[derive(Clone, Debug)]
pub(crate) struct State {
    pub completed: Mat<f64>,
    pub standard: CenterState,
    basis: Option<Mat<f64>>,
    isa_s: Option<Vec<f64>>,
}

pub(crate) struct Engine<'a> {
    pub x: &'a DataMatrix,
    pub mask: Mask,
    pub missing: Vec<(usize, usize)>,
    rule: ImputeRule,
    pub center: bool,
    pub scale: bool,
    subspace: Option<usize>,
}

pub(crate) struct Run {
    pub fit: Mat<f64>,
    pub nb_iter: usize,
    pub converged: bool,
    pub last_change: f64,
    pub singval: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(x: &'a DataMatrix, rule: ImputeRule, center: bool, scale: bool) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        let mask = x.mask_or_full();
        if let Some(msg) = mask.coverage_violation() {
            return input(msg);
        }
        let spectral_center = match rule {
            ImputeRule::Shrink(spec) => {
                spec.validate()?;
                if let ShrinkSpec::Hard { k } | ShrinkSpec::LowNoise { k, .. } = spec {
                    if k > n.min(p) {
                        return input(format!("rank {k} exceeds min(n, p) = {}", n.min(p)));
                    }
                }
                center
            }
            ImputeRule::Isa(rule) => {
                rule.model.validate()?;
                center
                    && rule.transformation == Transformation::None
                    && matches!(rule.model, NoiseModel::Gaussian { .. })
            }
        };
        let subspace = match rule {
            ImputeRule::Shrink(spec) => subspace_rank(&spec, n, p),
            ImputeRule::Isa(_) => None,
        };
        Ok(Engine { x, missing: mask.missing_cells(), mask, rule, center: spectral_center, scale, subspace })
    }

    pub fn params(&self) -> TuningParams {
        let mut t = TuningParams::default();
        match self.rule {
            ImputeRule::Shrink(ShrinkSpec::Atn { lambda, gamma }) => {
                t.lambda = Some(lambda);
                t.gamma = Some(gamma);
            }
            ImputeRule::Shrink(ShrinkSpec::Soft { lambda }) => {
                t.lambda = Some(lambda);
                t.gamma = Some(1.0);
            }
            ImputeRule::Shrink(ShrinkSpec::Hard { k }) => t.k = Some(k),
            ImputeRule::Shrink(ShrinkSpec::LowNoise { sigma, k }) => {
                t.k = Some(k);
                t.sigma = Some(sigma);
            }
            ImputeRule::Shrink(ShrinkSpec::Asympt { sigma, .. }) => t.sigma = Some(sigma),
            ImputeRule::Isa(r) => match r.model {
                NoiseModel::Gaussian { sigma } => t.sigma = Some(sigma),
                NoiseModel::Binomial { delta } => t.delta = Some(delta),
            },
        }
        t
    }

    pub fn standardisation(&self, values: &Mat<f64>) -> CenterState {
        if !self.center && !self.scale {
            return CenterState::identity(values.ncols());
        }
        CenterState::fit(values, Some(&self.mask), self.center, self.scale)
    }

    pub fn initial_state(&self, init: &Init) -> Result<State> {
        let (n, p) = (self.x.nrows(), self.x.ncols());
        let mut completed = self.x.values().clone();
        let means = self.x.observed_column_means();
        for &(i, j) in &self.missing {
            completed[(i, j)] = match init {
                Init::ColumnMeans => means[j],
                Init::Values(v) => {
                    if v.nrows() != n || v.ncols() != p {
                        return input(format!("initial values are {}x{}, data are {n}x{p}", v.nrows(), v.ncols()));
                    }
                    v[(i, j)]
                }
            };
        }
        if let Some(bad) = self.missing.iter().find(|&&(i, j)| !completed[(i, j)].is_finite()) {
            return input(format!("initial value for cell {bad:?} is not finite"));
        }
        let standard = self.standardisation(&completed);
        let isa_s = match self.rule {
            ImputeRule::Isa(rule) => Some(match rule.transformation {
                Transformation::Ca => {
                    let dec = ca_transform_unchecked(&completed)?;
                    regularizer(&completed, rule.model, Some(&dec))
                }
                Transformation::None => regularizer(&completed, rule.model, None),
            }),
            ImputeRule::Shrink(_) => None,
        };
        let basis = self.subspace.map(|r| {
            let l = (r + 10).min(n.min(p));
            let mut g = rng::stream(0, "impute-subspace", 0);
            Mat::from_fn(p, l, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut g))
        });
        Ok(State { completed, standard, basis, isa_s })
    }

    /// Fit of the current completed matrix, on the raw scale.
    pub fn fit(&self, state: &mut State) -> Result<(Mat<f64>, Vec<f64>)> {
        let (n, p) = (self.x.nrows(), self.x.ncols());
        let mut z = state.completed.clone();
        state.standard.apply(&mut z);
        let (mut fit, singval) = match self.rule {
            ImputeRule::Shrink(spec) => {
                if let (Some(r), Some(basis)) = (self.subspace, state.basis.as_ref()) {
                    let (factors, next) = subspace_refine(z.as_ref(), r, basis.as_ref(), 1)?;
                    state.basis = Some(next);
                    let shrunk = spec.apply(&factors.d, n, p)?;
                    (low_rank_product(&factors, &shrunk), shrunk)
                } else {
                    let cap = if self.center { (n - 1).min(p) } else { n.min(p) };
                    let mut failure = None;
                    let mut shrunk_out = Vec::new();
                    let (fit, _) = spectral_map(z.as_ref(), |d| match spec.apply(d, n, p) {
                        Ok(shrunk) => {
                            let ratios = (0..d.len())
                                .map(|l| if l < cap && d[l] > 0.0 { shrunk[l] / d[l] } else { 0.0 })
                                .collect();
                            shrunk_out = (0..d.len()).map(|l| if l < cap { shrunk[l] } else { 0.0 }).collect();
                            ratios
                        }
                        Err(e) => {
                            failure = Some(e);
                            vec![0.0; d.len()]
                        }
                    })?;
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    (fit, shrunk_out)
                }
            }
            ImputeRule::Isa(rule) => {
                let s = state.isa_s.as_ref().expect("ISA regularizer set at initialisation");
                let fit = match rule.transformation {
                    Transformation::None => isa_iterate(z.as_ref(), s, rule.maxiter, rule.threshold)?.mu,
                    Transformation::Ca => {
                        let dec = ca_transform_unchecked(&z)?;
                        let mu = isa_iterate(dec.m.as_ref(), s, rule.maxiter, rule.threshold)?.mu;
                        ca_backtransform(&mu, &dec)?
                    }
                };
                (fit, Vec::new())
            }
        };
        state.standard.restore(&mut fit);
        Ok((fit, singval))
    }

    /// One imputation step: fit, then overwrite the missing cells.
    pub fn step(&self, state: &mut State) -> Result<(Mat<f64>, Vec<f64>)> {
        let (fit, singval) = self.fit(state)?;
        for &(i, j) in &self.missing {
            state.completed[(i, j)] = fit[(i, j)];
        }
        Ok((fit, singval))
    }

    pub fn run(&self, state: &mut State, threshold: f64, maxiter: usize) -> Result<Run> {
        if maxiter == 0 {
            return input("maxiter must be positive");
        }
        let (mut prev, mut singval) = self.step(state)?;
        if self.missing.is_empty() {
            return Ok(Run { fit: prev, nb_iter: 1, converged: true, last_change: 0.0, singval });
        }
        let mut last_change = f64::INFINITY;
        for it in 2..=maxiter {
            let (fit, sv) = self.step(state)?;
            last_change = (&fit - &prev).norm_l2().powi(2);
            if !last_change.is_finite() {
                return Err(Error::Numerical(format!("imputation diverged at iteration {it}")));
            }
            prev = fit;
            singval = sv;
            if last_change <= threshold {
                return Ok(Run { fit: prev, nb_iter: it, converged: true, last_change, singval });
            }
        }
        Ok(Run { fit: prev, nb_iter: maxiter, converged: false, last_change, singval })
    }

    pub fn finish(&self, state: &State, run: Run) -> ImputationResult {
        let mut diagnostics = Vec::new();
        if !run.converged {
            record(
                &mut diagnostics,
                Diagnostic::NotConverged { iterations: run.nb_iter, last_change: run.last_change },
            );
        }
        ImputationResult {
            complete_obs: state.completed.clone(),
            mu_hat: run.fit,
            nb_iter: run.nb_iter,
            converged: run.converged,
            last_change: run.last_change,
            singval: run.singval,
            params: self.params(),
            criterion: None,
            diagnostics,
        }
    }
}

/// Alternate a low-rank fit of the completed matrix with refilling the missing
/// cells from the fit, until the squared change of the fit is at most
/// `threshold` or `maxiter` fits have run.
pub fn iterative_impute(x: &DataMatrix, rule: &ImputeRule, opts: &ImputeOptions) -> Result<ImputationResult> {
    if !(opts.threshold >= 0.0) {
        return input(format!("threshold must be nonnegative, got {}", opts.threshold));
    }
    let engine = Engine::new(x, *rule, opts.center, opts.scale)?;
    let mut state = engine.initial_state(&opts.init)?;
    let run = engine.run(&mut state, opts.threshold, opts.maxiter)?;
    Ok(engine.finish(&state, run))
}
