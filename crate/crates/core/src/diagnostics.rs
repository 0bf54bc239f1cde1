use std::fmt;

use serde::Serialize;

/// Structured warning records attached to estimator results.
///
/// Each record is also forwarded to the `log` facade at debug level when it
/// is created; records from inner fits (cross-validation, FD reruns) only
/// show up there.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    SigmaEstimated { method: String, sigma: f64 },
    RankEstimated { k: usize },
    DeltaEstimated { delta: f64 },
    NotConverged { iterations: usize, last_change: f64 },
    MinimumNormFallback,
    ApproximateDivergence { cells_used: usize, cells_observed: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::SigmaEstimated { method, sigma } => {
                write!(f, "sigma estimated by {method}: {sigma:.6}")
            }
            Diagnostic::RankEstimated { k } => {
                write!(f, "k was estimated by cross-validation: k = {k}")
            }
            Diagnostic::DeltaEstimated { delta } => {
                write!(f, "delta estimated by cross-validation: {delta}")
            }
            Diagnostic::NotConverged { iterations, last_change } => {
                write!(f, "no convergence after {iterations} iterations (last change {last_change:.3e})")
            }
            Diagnostic::MinimumNormFallback => {
                write!(f, "singular normal equations, used minimum-norm solution")
            }
            Diagnostic::ApproximateDivergence { cells_used, cells_observed } => {
                write!(f, "divergence estimated on {cells_used} of {cells_observed} observed cells")
            }
        }
    }
}

pub(crate) fn record(sink: &mut Vec<Diagnostic>, diag: Diagnostic) {
    log::debug!("{diag}");
    sink.push(diag);
}
