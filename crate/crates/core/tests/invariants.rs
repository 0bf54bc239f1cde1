use lowrank::isa::{noise_regularizer, stable_autoencoder, NoiseModel};
use lowrank::missing::{iterative_impute, ImputeOptions, ImputeRule};
use lowrank::noise::{estim_sigma_ln, estim_sigma_mad, RankCvOptions};
use lowrank::risk::{adashrink, div_centered, div_closed_form, sure, AdashrinkOptions};
use lowrank::shrinkage::{shrink_asympt, shrink_atn, shrink_hard, AsymptLoss, ShrinkSpec};
use lowrank::sim::lrsim;
use lowrank::svd::{compute_svd, reconstruct};
use lowrank::{CenterState, DataMatrix, Mask, Mat};
use proptest::prelude::*;

fn matrix(max_n: usize, max_p: usize) -> impl Strategy<Value = Mat<f64>> {
    (2..=max_n, 2..=max_p).prop_flat_map(|(n, p)| {
        prop::collection::vec(-100.0f64..100.0, n * p).prop_map(move |v| Mat::from_fn(n, p, |i, j| v[i + n * j]))
    })
}

fn rel_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn center_then_restore_is_identity(x in matrix(12, 9)) {
        let state = CenterState::from_means(&x);
        let mut y = x.clone();
        state.apply(&mut y);
        for j in 0..x.ncols() {
            let m: f64 = (0..x.nrows()).map(|i| y[(i, j)]).sum::<f64>() / x.nrows() as f64;
            prop_assert!(m.abs() <= 1e-12 * x.norm_max().max(1.0));
        }
        state.restore(&mut y);
        prop_assert!(rel_diff(&y, &x) <= 1e-12);
    }

    #[test]
    fn svd_is_descending_and_reconstructs(x in matrix(12, 12)) {
        let f = compute_svd(x.as_ref(), None).unwrap();
        prop_assert!(f.d.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.d.iter().all(|&v| v >= 0.0));
        let back = reconstruct(&f, &f.d, &CenterState::identity(x.ncols())).unwrap();
        prop_assert!(rel_diff(&back, &x) <= 1e-10);
    }

    #[test]
    fn divergences_are_bounded(x in matrix(10, 10), t in 0.0f64..1.2, gamma in 1.0f64..5.0) {
        // the ATN slope exceeds 1 for gamma > 1, so only soft thresholding is capped at np
        let (n, p) = (x.nrows(), x.ncols());
        let np = (n * p) as f64;
        let d = compute_svd(x.as_ref(), None).unwrap().d;
        let lambda = t * d[0];
        let div = div_closed_form(&d, lambda, gamma, n, p).unwrap();
        prop_assert!(div >= -1e-9, "{div}");
        prop_assert!(div_closed_form(&d, lambda, 1.0, n, p).unwrap() <= np + 1e-9);
        let mut c = x.clone();
        CenterState::from_means(&x).apply(&mut c);
        let dc = compute_svd(c.as_ref(), None).unwrap().d;
        let divc = div_centered(&dc, lambda, gamma, n, p).unwrap();
        prop_assert!(divc >= p as f64 - 1e-9, "{divc}");
        prop_assert!(div_centered(&dc, lambda, 1.0, n, p).unwrap() <= np + 1e-9);
    }

    #[test]
    fn sure_is_continuous_between_singular_values(x in matrix(8, 8), gamma in 1.0f64..4.0, u in 0.05f64..0.95) {
        let (n, p) = (x.nrows(), x.ncols());
        let d = compute_svd(x.as_ref(), None).unwrap().d;
        prop_assume!(d[0] - d[1] > 1e-3 * d[0]);
        let lambda = d[1] + u * (d[0] - d[1]);
        let h = 1e-9 * d[0];
        let a = sure(&d, lambda - h, gamma, 1.0, n, p).unwrap().value;
        let b = sure(&d, lambda + h, gamma, 1.0, n, p).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }

    #[test]
    fn sure_jump_at_a_crossing_is_the_slope_term(x in matrix(8, 8), gamma in 1.0f64..4.0, sigma in 0.1f64..3.0) {
        let (n, p) = (x.nrows(), x.ncols());
        let d = compute_svd(x.as_ref(), None).unwrap().d;
        prop_assume!(d[0] - d[1] > 1e-2 * d[0]);
        let gap = |h: f64| sure(&d, d[0] - h, gamma, sigma, n, p).unwrap().value - sure(&d, d[0] + h, gamma, sigma, n, p).unwrap().value;
        // the smooth part contributes linearly in h; extrapolate it away
        let h = 1e-7 * d[0];
        let jump = 2.0 * gap(h) - gap(2.0 * h);
        let scale = d[0] * d[0] * 1e-12 + 1e-9;
        prop_assert!((jump - 2.0 * sigma * sigma * gamma).abs() <= 1e-6 * sigma * sigma * gamma + scale, "{jump}");
    }

    #[test]
    fn mad_is_scale_equivariant_and_ln_too_at_fixed_k(x in matrix(14, 10), c in 0.01f64..100.0) {
        let y = &x * faer::Scale(c);
        let (dx, dy) = (DataMatrix::new(x.clone()).unwrap(), DataMatrix::new(y).unwrap());
        let a = estim_sigma_mad(&dx, true).unwrap().sigma;
        let b = estim_sigma_mad(&dy, true).unwrap().sigma;
        prop_assert!((b - c * a).abs() <= 1e-10 * (c * a).max(1e-300));
        let opts = RankCvOptions::default();
        let a = estim_sigma_ln(&dx, Some(1), true, &opts).unwrap().sigma;
        // a rank-one centred matrix leaves only rounding noise
        prop_assume!(a > 1e-8 * x.norm_l2());
        let b = estim_sigma_ln(&dy, Some(1), true, &opts).unwrap().sigma;
        prop_assert!((b - c * a).abs() <= 1e-10 * (c * a).max(1e-300));
    }

    #[test]
    fn gaussian_autoencoder_keeps_singular_vectors(x in matrix(10, 8), sigma in 0.01f64..20.0) {
        let n = x.nrows();
        let s = noise_regularizer(&DataMatrix::new(x.clone()).unwrap(), NoiseModel::Gaussian { sigma }).unwrap();
        let (_, mu, _) = stable_autoencoder(x.as_ref(), &s).unwrap();
        let f = compute_svd(x.as_ref(), None).unwrap();
        let ns2 = n as f64 * sigma * sigma;
        let shrunk: Vec<f64> = f.d.iter().map(|&d| d * d * d / (d * d + ns2)).collect();
        let want = reconstruct(&f, &shrunk, &CenterState::identity(x.ncols())).unwrap();
        prop_assert!((&mu - &want).norm_l2() <= 1e-8 * want.norm_l2().max(1e-12));
    }

    #[test]
    fn imputation_keeps_observed_cells(x in matrix(12, 8), seed in 0u64..1000, lambda in 0.0f64..50.0) {
        let (n, p) = (x.nrows(), x.ncols());
        let mask = Mask::from_fn(n, p, |i, j| !(i * 31 + j * 17 + seed as usize).is_multiple_of(5) || i == j % n);
        prop_assume!(mask.has_full_coverage());
        let dm = DataMatrix::with_mask(x.clone(), mask.clone()).unwrap();
        let rule = ImputeRule::Shrink(ShrinkSpec::Atn { lambda, gamma: 2.0 });
        let res = iterative_impute(&dm, &rule, &ImputeOptions::default()).unwrap();
        for j in 0..p {
            for i in 0..n {
                if mask.is_observed(i, j) {
                    prop_assert_eq!(res.complete_obs[(i, j)], x[(i, j)]);
                } else {
                    prop_assert_eq!(res.complete_obs[(i, j)], res.mu_hat[(i, j)]);
                }
            }
        }
        let again = iterative_impute(&dm, &rule, &ImputeOptions::default()).unwrap();
        prop_assert_eq!(again.mu_hat, res.mu_hat);
    }
}

#[test]
fn adashrink_is_deterministic() {
    let sim = lrsim(40, 25, 3, 1.0, 9).unwrap();
    let x = DataMatrix::new(sim.x).unwrap();
    let opts = AdashrinkOptions::default();
    let a = adashrink(&x, &opts).unwrap();
    let b = adashrink(&x, &opts).unwrap();
    assert_eq!(a.mu_hat, b.mu_hat);
    assert_eq!(a.params, b.params);
}

#[test]
fn lrsim_checks_hold_on_the_acceptance_grid() {
    for (n, p, k, snr) in [(200, 500, 10, 4.0), (200, 500, 100, 0.5), (50, 30, 5, 0.5), (100, 30, 2, 1.0)] {
        let sim = lrsim(n, p, k, snr, 1).unwrap();
        assert!((sim.mu.norm_l2() - 1.0).abs() < 1e-12);
        assert!((sim.sigma - 1.0 / (snr * ((n * p) as f64).sqrt())).abs() < 1e-15);
        let d = compute_svd(sim.mu.as_ref(), None).unwrap().d;
        assert!(d[k - 1] > 1e-8 && d.get(k).is_none_or(|&v| v < 1e-10 * d[0]), "rank of mu");
        if n * p >= 10_000 {
            let e = (&sim.x - &sim.mu).norm_l2().powi(2) / ((n * p) as f64 * sim.sigma * sim.sigma);
            assert!((0.9..=1.1).contains(&e), "{e}");
        }
    }
}

#[test]
fn frobenius_shrinker_beats_the_rank_oracle_on_average() {
    let (n, p, k) = (100, 100, 5);
    let (mut asym, mut hard) = (0.0, 0.0);
    for seed in 0..50 {
        let sim = lrsim(n, p, k, 1.0, seed).unwrap();
        let f = compute_svd(sim.x.as_ref(), None).unwrap();
        let id = CenterState::identity(p);
        let a = reconstruct(&f, &shrink_asympt(&f.d, sim.sigma, n, p, AsymptLoss::Frobenius).unwrap(), &id).unwrap();
        let h = reconstruct(&f, &shrink_hard(&f.d, k).unwrap(), &id).unwrap();
        asym += (&a - &sim.mu).norm_l2().powi(2);
        hard += (&h - &sim.mu).norm_l2().powi(2);
    }
    assert!(asym <= hard, "{asym} vs {hard}");
}

#[test]
fn mad_and_ln_agree_on_simulated_data() {
    let mut gap = 0.0;
    for seed in 0..10 {
        let sim = lrsim(200, 500, 10, 4.0, seed).unwrap();
        let x = DataMatrix::new(sim.x).unwrap();
        let mad = estim_sigma_mad(&x, true).unwrap().sigma;
        let ln = estim_sigma_ln(&x, Some(10), true, &RankCvOptions::default()).unwrap().sigma;
        gap += (mad - ln).abs() / sim.sigma;
    }
    assert!(gap / 10.0 <= 0.1, "{}", gap / 10.0);
}

#[test]
fn atn_fit_through_the_pipeline_matches_the_shrinker() {
    let sim = lrsim(30, 20, 2, 2.0, 4).unwrap();
    let x = DataMatrix::new(sim.x.clone()).unwrap();
    let res = adashrink(&x, &AdashrinkOptions { center: false, ..Default::default() }).unwrap();
    let f = compute_svd(sim.x.as_ref(), None).unwrap();
    let (l, g) = (res.params.lambda.unwrap(), res.params.gamma.unwrap());
    let want = reconstruct(&f, &shrink_atn(&f.d, l, g).unwrap(), &CenterState::identity(20)).unwrap();
    assert!(rel_diff(&res.mu_hat, &want) <= 1e-10);
}
