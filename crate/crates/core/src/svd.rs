//! Singular value decompositions and spectral reconstruction.

use faer::{Mat, MatRef, Side};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input, Error, Result};
use crate::matrix::CenterState;
use crate::rng;

/// `X = U diag(d) V^T` with `d` nonincreasing and nonnegative.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Mat<f64>,
    pub d: Vec<f64>,
    pub v: Mat<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    /// Keep the leading `r` components.
    pub fn truncate(&self, r: usize) -> SvdFactors {
        let r = r.min(self.d.len());
        SvdFactors { u: self.u.subcols(0, r).to_owned(), d: self.d[..r].to_vec(), v: self.v.subcols(0, r).to_owned() }
    }

    /// An empty factorisation of an `n x p` zero matrix.
    pub fn empty(n: usize, p: usize) -> SvdFactors {
        SvdFactors { u: Mat::zeros(n, 0), d: Vec::new(), v: Mat::zeros(p, 0) }
    }
}

/// How to compute a (possibly truncated) SVD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SvdMethod {
    /// Full dense decomposition, truncated afterwards if a budget is given.
    Dense,
    /// Randomized block subspace iteration; only meaningful with a rank budget.
    Subspace { oversample: usize, power_iters: usize, seed: u64 },
}

impl SvdMethod {
    pub fn subspace() -> Self {
        SvdMethod::Subspace { oversample: 10, power_iters: 4, seed: 0 }
    }
}

/// Dense SVD of `x`, keeping `rank_budget` leading components (all by default).
pub fn compute_svd(x: MatRef<'_, f64>, rank_budget: Option<usize>) -> Result<SvdFactors> {
    compute_svd_with(x, rank_budget, SvdMethod::Dense)
}

pub fn compute_svd_with(x: MatRef<'_, f64>, rank_budget: Option<usize>, method: SvdMethod) -> Result<SvdFactors> {
    let (n, p) = (x.nrows(), x.ncols());
    let full = n.min(p);
    let r = rank_budget.unwrap_or(full);
    if r > full {
        return input(format!("rank budget {r} exceeds min(n, p) = {full} for a {n}x{p} matrix"));
    }
    check_finite(x)?;
    match method {
        SvdMethod::Subspace { oversample, power_iters, seed } if r < full => {
            subspace_svd(x, r, oversample, power_iters, seed)
        }
        _ => dense_svd(x).map(|f| f.truncate(r)),
    }
}

fn check_finite(x: MatRef<'_, f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return input(format!("entry ({i}, {j}) of the {}x{} matrix is not finite", x.nrows(), x.ncols()));
            }
        }
    }
    Ok(())
}

fn dense_svd(x: MatRef<'_, f64>) -> Result<SvdFactors> {
    let svd = x
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD of {}x{} matrix failed: {e:?}", x.nrows(), x.ncols())))?;
    let d: Vec<f64> = svd.S().column_vector().iter().map(|s| s.max(0.0)).collect();
    Ok(SvdFactors { u: svd.U().to_owned(), d, v: svd.V().to_owned() })
}

/// Singular values only, nonincreasing.
pub fn singular_values(x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_finite(x)?;
    let s = x.singular_values().map_err(|e| {
        Error::Numerical(format!("singular values of {}x{} matrix failed: {e:?}", x.nrows(), x.ncols()))
    })?;
    Ok(s.into_iter().map(|v| v.max(0.0)).collect())
}

fn orthonormalize(y: &Mat<f64>) -> Mat<f64> {
    y.qr().compute_thin_Q()
}

fn subspace_svd(x: MatRef<'_, f64>, r: usize, oversample: usize, power_iters: usize, seed: u64) -> Result<SvdFactors> {
    let (n, p) = (x.nrows(), x.ncols());
    let l = (r + oversample).min(n.min(p));
    let mut rng = rng::stream(seed, "subspace-svd", 0);
    let omega = Mat::from_fn(p, l, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let start = orthonormalize(&omega);
    Ok(subspace_refine(x, r, start.as_ref(), power_iters)?.0)
}

/// Block subspace iteration from a starting right basis `v0` (p x l).
///
/// Returns the rank-`r` factors and the refined `p x l` right basis, which can
/// seed the next call when `x` changes slowly (iterative imputation).
pub(crate) fn subspace_refine(
    x: MatRef<'_, f64>,
    r: usize,
    v0: MatRef<'_, f64>,
    power_iters: usize,
) -> Result<(SvdFactors, Mat<f64>)> {
    let mut q = orthonormalize(&(x * v0));
    for _ in 0..power_iters {
        let w = orthonormalize(&(x.transpose() * &q));
        q = orthonormalize(&(x * &w));
    }
    let b = q.transpose() * x;
    let small = dense_svd(b.as_ref())?;
    let u = &q * &small.u;
    let v_basis = small.v.clone();
    let factors = SvdFactors { u, d: small.d, v: small.v }.truncate(r);
    Ok((factors, v_basis))
}

/// `U diag(shrunk) V^T`, then undo centering/scaling.
pub fn reconstruct(factors: &SvdFactors, shrunk: &[f64], state: &CenterState) -> Result<Mat<f64>> {
    if shrunk.len() != factors.d.len() {
        return input(format!(
            "shrunk spectrum has {} values but the factorisation has {}",
            shrunk.len(),
            factors.d.len()
        ));
    }
    if let Some(bad) = shrunk.iter().find(|s| !(**s >= 0.0)) {
        return input(format!("shrunk singular values must be nonnegative, got {bad}"));
    }
    let mut out = low_rank_product(factors, shrunk);
    state.restore(&mut out);
    Ok(out)
}

pub(crate) fn low_rank_product(factors: &SvdFactors, shrunk: &[f64]) -> Mat<f64> {
    let (n, p) = (factors.u.nrows(), factors.v.nrows());
    let keep: Vec<usize> = (0..shrunk.len()).filter(|&l| shrunk[l] != 0.0).collect();
    if keep.is_empty() {
        return Mat::zeros(n, p);
    }
    let us = Mat::from_fn(n, keep.len(), |i, c| factors.u[(i, keep[c])] * shrunk[keep[c]]);
    let vk = Mat::from_fn(p, keep.len(), |j, c| factors.v[(j, keep[c])]);
    &us * vk.transpose()
}

/// Apply a spectral map `U diag(w_l d_l) V^T` given per-component ratios `w`.
///
/// Works through the eigendecomposition of the smaller Gram matrix and never
/// forms `U` (or `V`) explicitly: with `p <= n` the fit is `Z V diag(w) V^T`.
/// This is the inner kernel of the iterative imputation loops. `ratios`
/// receives the nonincreasing singular values and returns `w`.
pub(crate) fn spectral_map(
    z: MatRef<'_, f64>,
    ratios: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Result<(Mat<f64>, Vec<f64>)> {
    let (n, p) = (z.nrows(), z.ncols());
    let tall = p <= n;
    let gram = if tall { z.transpose() * z } else { z * z.transpose() };
    let m = gram.nrows();
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition for a {n}x{p} spectral map failed: {e:?}")))?;
    let evals = evd.S().column_vector();
    let basis = evd.U();
    // nondecreasing eigenvalues -> nonincreasing singular values
    let d: Vec<f64> = (0..m).rev().map(|c| evals[c].max(0.0).sqrt()).collect();
    let w = ratios(&d);
    let keep: Vec<usize> = (0..m).filter(|&l| w[l] != 0.0).collect();
    if keep.is_empty() {
        return Ok((Mat::zeros(n, p), d));
    }
    let k = keep.len();
    let vk = Mat::from_fn(m, k, |r, c| basis[(r, m - 1 - keep[c])]);
    let vw = Mat::from_fn(m, k, |r, c| vk[(r, c)] * w[keep[c]]);
    let fit = if tall {
        let zv = z * &vk;
        zv * vw.transpose()
    } else {
        let uz = vk.transpose() * z;
        vw * uz
    };
    Ok((fit, d))
}
