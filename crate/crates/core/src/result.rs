use faer::Mat;
use serde::Serialize;

use crate::ca::{CaCoordinates, CaDecomposition};
use crate::diagnostics::Diagnostic;
use crate::error::Result;
use crate::matrix::CenterState;
use crate::svd::{reconstruct, SvdFactors};

/// Relative tolerance below which a shrunk singular value counts as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Tuning values selected or used by an estimator; absent fields do not apply.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TuningParams {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub k: Option<usize>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ShrinkageResult {
    pub mu_hat: Mat<f64>,
    pub nb_eigen: usize,
    /// Shrunk spectrum, one value per input singular value.
    pub singval: Vec<f64>,
    /// Factors of `mu_hat` before centering is restored.
    pub low_rank: SvdFactors,
    pub center: CenterState,
    pub params: TuningParams,
    pub criterion: Option<f64>,
    pub nb_iter: Option<usize>,
    pub converged: bool,
    pub diagnostics: Vec<Diagnostic>,
    /// Present when the estimate was computed on the correspondence-analysis scale.
    pub ca: Option<Box<CaOutput>>,
}

#[derive(Clone, Debug)]
pub struct CaOutput {
    pub decomposition: CaDecomposition,
    /// Denoised matrix on the transformed scale, `U diag(singval) V^T`.
    pub mu_hat_transformed: Mat<f64>,
    pub coordinates: CaCoordinates,
}

/// Number of entries of `shrunk` above `rel * reference`.
pub fn count_nonzero(shrunk: &[f64], reference: f64, rel: f64) -> usize {
    let cut = rel * reference.max(0.0);
    shrunk.iter().filter(|&&s| s > cut).count()
}

impl ShrinkageResult {
    /// Assemble a result from the factors of the (centered) data and a shrunk spectrum.
    pub fn from_spectrum(
        factors: &SvdFactors,
        shrunk: Vec<f64>,
        center: CenterState,
        params: TuningParams,
    ) -> Result<Self> {
        let mu_hat = reconstruct(factors, &shrunk, &center)?;
        let top = factors.d.first().copied().unwrap_or(0.0);
        let nb_eigen = count_nonzero(&shrunk, top, RANK_TOL);
        let keep: Vec<usize> = (0..shrunk.len()).filter(|&l| shrunk[l] > RANK_TOL * top).collect();
        let low_rank = SvdFactors {
            u: Mat::from_fn(factors.u.nrows(), keep.len(), |i, c| factors.u[(i, keep[c])]),
            d: keep.iter().map(|&l| shrunk[l]).collect(),
            v: Mat::from_fn(factors.v.nrows(), keep.len(), |j, c| factors.v[(j, keep[c])]),
        };
        Ok(ShrinkageResult {
            mu_hat,
            nb_eigen,
            singval: shrunk,
            low_rank,
            center,
            params,
            criterion: None,
            nb_iter: None,
            converged: true,
            diagnostics: Vec::new(),
            ca: None,
        })
    }
}
