use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::matrix::{DataMatrix, Mask};
use crate::rng;

const MAX_DRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MissingMechanism {
    /// Every cell missing independently with probability `rate`.
    Mcar { rate: f64 },
    /// Cells of each target column missing with probability
    /// `logistic(a + slope * q_i)`, `q_i` the centred rank of row `i` in the
    /// driver column; `a` is calibrated so the expected overall rate is `rate`.
    Mar { rate: f64, slope: f64 },
}

impl MissingMechanism {
    pub fn mcar(rate: f64) -> Self {
        MissingMechanism::Mcar { rate }
    }

    pub fn mar(rate: f64) -> Self {
        MissingMechanism::Mar { rate, slope: 4.0 }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            MissingMechanism::Mcar { rate } | MissingMechanism::Mar { rate, .. } => rate,
        }
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Index of the observed column with the largest sample variance.
pub fn mar_driver(x: &DataMatrix) -> usize {
    let (n, p) = (x.nrows(), x.ncols());
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..p {
        let m = (0..n).map(|i| x.values()[(i, j)]).sum::<f64>() / n as f64;
        let v = (0..n).map(|i| (x.values()[(i, j)] - m).powi(2)).sum::<f64>();
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Per-row missingness probability for MAR target columns.
fn mar_probabilities(x: &DataMatrix, driver: usize, rate: f64, slope: f64) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x.values()[(a, driver)].total_cmp(&x.values()[(b, driver)]).then(a.cmp(&b)));
    let mut q = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = (rank as f64 + 0.5) / n as f64 - 0.5;
    }
    // targets carry all the missingness: their mean probability must be rate p/(p-1)
    let target = rate * p as f64 / (p - 1) as f64;
    let mean_prob = |a: f64| q.iter().map(|&qi| logistic(a + slope * qi)).sum::<f64>() / n as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    if !(target < mean_prob(hi)) {
        return input(format!("MAR rate {rate} is not reachable with one never-missing driver column out of {p}"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    Ok(q.iter().map(|&qi| logistic(a + slope * qi)).collect())
}

/// Insert missing values into a complete matrix. Masks that leave a row or a
/// column without observed cells are redrawn (at most 100 draws).
pub fn insert_missing(x: &DataMatrix, mechanism: MissingMechanism, seed: u64) -> Result<DataMatrix> {
    x.require_complete("insert_missing")?;
    let rate = mechanism.rate();
    if !(rate > 0.0 && rate < 0.9) {
        return input(format!("missing rate must lie in (0, 0.9), got {rate}"));
    }
    let (n, p) = (x.nrows(), x.ncols());
    let (driver, probs) = match mechanism {
        MissingMechanism::Mcar { .. } => (None, None),
        MissingMechanism::Mar { slope, .. } => {
            if !(slope >= 0.0) || !slope.is_finite() {
                return input(format!("MAR slope must be nonnegative and finite, got {slope}"));
            }
            let d = mar_driver(x);
            (Some(d), Some(mar_probabilities(x, d, rate, slope)?))
        }
    };
    for attempt in 0..MAX_DRAWS {
        let mut g = rng::stream(seed, "insert-missing", attempt as u64);
        let mask = Mask::from_fn(n, p, |i, j| {
            let u: f64 = g.random();
            match (&probs, driver) {
                (Some(pr), Some(d)) => j == d || u >= pr[i],
                _ => u >= rate,
            }
        });
        if mask.has_full_coverage() {
            return DataMatrix::with_mask(x.values().clone(), mask);
        }
    }
    input(format!(
        "no mask with an observed cell in every row and column after {MAX_DRAWS} draws (rate {rate}, {n}x{p})"
    ))
}

/// Hide `round(pna * n_observed)` observed cells chosen uniformly.
///
/// Returns the masked matrix and the hidden cells in column-major order.
pub fn hide_cells(
    x: &DataMatrix,
    pna: f64,
    seed: u64,
    label: &str,
    rep: u64,
) -> Result<(DataMatrix, Vec<(usize, usize)>)> {
    let observed = x.mask_or_full().observed_cells();
    let count = (pna * observed.len() as f64).round() as usize;
    if count == 0 || count >= observed.len() {
        return input(format!("hiding a fraction {pna} of {} observed cells is degenerate", observed.len()));
    }
    let base = x.mask_or_full();
    for attempt in 0..MAX_DRAWS {
        let mut g = rng::stream(seed, label, rep * MAX_DRAWS as u64 + attempt as u64);
        let mut picked: Vec<usize> = sample(&mut g, observed.len(), count).into_vec();
        picked.sort_unstable();
        let hidden: Vec<(usize, usize)> = picked.iter().map(|&c| observed[c]).collect();
        let mut mask = base.clone();
        for &(i, j) in &hidden {
            mask.set(i, j, false);
        }
        if mask.has_full_coverage() {
            let mut values = x.values().clone();
            for &(i, j) in &hidden {
                values[(i, j)] = f64::NAN;
            }
            return Ok((DataMatrix::with_mask(values, mask)?, hidden));
        }
    }
    input(format!("could not hide {count} cells while keeping every row and column observed after {MAX_DRAWS} draws"))
}
