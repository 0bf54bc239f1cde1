//! One-dimensional minimisation used for threshold selection.

/// Outcome of a scalar minimisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's parabolic/golden-section minimiser on `[a, b]`, started at `x0`.
///
/// `tol` is an absolute tolerance on `x`. Non-finite values are treated as
/// `+inf`, so sentinel-valued regions are avoided rather than fatal.
pub fn brent(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, x0: f64, tol: f64, maxiter: usize) -> Minimum {
    let x = x0.clamp(a.min(b), a.max(b));
    let fx = f(x);
    let mut m = brent_from(f, a, b, (x, fx), tol, maxiter);
    m.evals += 1;
    m
}

/// `brent` started from a point inside `[a, b]` whose value is already known.
pub(crate) fn brent_from(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    (x0, f0): (f64, f64),
    tol: f64,
    maxiter: usize,
) -> Minimum {
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut x = x0.clamp(a, b);
    let mut fx = if f0.is_nan() { f64::INFINITY } else { f0 };
    let mut evals = 0;
    let (mut w, mut v) = (x, x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..maxiter {
        let m = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(u);
        evals += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum { x, fx, evals }
}

/// Evaluate `f` on sorted `candidates`, then refine with Brent inside the
/// bracket formed by the neighbours of the best candidate.
///
/// Suited to piecewise-smooth criteria whose kinks sit at known locations.
pub fn scan_then_refine(mut f: impl FnMut(f64) -> f64, candidates: &[f64], tol: f64) -> Minimum {
    let mut xs: Vec<f64> = candidates.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    assert!(!xs.is_empty(), "scan_then_refine needs at least one candidate");
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for i in 1..xs.len() {
        if fs[i] < fs[best] || fs[best].is_nan() {
            best = i;
        }
    }
    let mut out = Minimum { x: xs[best], fx: fs[best], evals: xs.len() };
    let lo = xs[best.saturating_sub(1)];
    let hi = xs[(best + 1).min(xs.len() - 1)];
    if hi > lo {
        let refined = brent_from(&mut f, lo, hi, (xs[best], fs[best]), tol, 200);
        out.evals += refined.evals;
        if refined.fx < out.fx {
            out.x = refined.x;
            out.fx = refined.fx;
        }
    }
    out
}

/// Walk down from `hi` towards `lo` in steps of `step`, stop once `patience`
/// consecutive points sit above the running minimum, then refine with Brent
/// between the neighbours of the best point.
///
/// Suited to criteria that are flat above the top singular value and blow up
/// (and get expensive) towards zero.
pub fn descending_scan(
    mut f: impl FnMut(f64) -> f64,
    hi: f64,
    lo: f64,
    step: f64,
    patience: usize,
    tol: f64,
    maxiter: usize,
) -> Minimum {
    assert!(step > 0.0 && hi >= lo, "descending_scan needs step > 0 and hi >= lo");
    let mut xs = Vec::new();
    let mut fs = Vec::new();
    let mut best = 0;
    let mut worse = 0;
    let mut x = hi;
    loop {
        let v = f(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        xs.push(x);
        fs.push(v);
        let i = xs.len() - 1;
        if v < fs[best] {
            best = i;
            worse = 0;
        } else if i > 0 {
            worse += 1;
        }
        if worse >= patience.max(1) || x <= lo {
            break;
        }
        x = (x - step).max(lo);
    }
    let mut out = Minimum { x: xs[best], fx: fs[best], evals: xs.len() };
    let upper = xs[best.saturating_sub(1)];
    let lower = xs[(best + 1).min(xs.len() - 1)];
    if upper > lower {
        let refined = brent_from(&mut f, lower, upper, (xs[best], fs[best]), tol, maxiter);
        out.evals += refined.evals;
        if refined.fx < out.fx {
            out.x = refined.x;
            out.fx = refined.fx;
        }
    }
    out
}
