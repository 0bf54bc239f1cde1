//! Acceptance suite. Prints one PASS/FAIL line per criterion and a failure
//! count. With `ACCEPTANCE_STRICT=1` any failure also makes the exit status
//! nonzero. An optional first argument filters criteria by name prefix,
//! e.g. `cargo test --test acceptance -- 7.`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use faer::{Mat, Side};
use lowrank::ca::{ca_backtransform, ca_transform};
use lowrank::isa::{noise_regularizer, stable_autoencoder, NoiseModel};
use lowrank::noise::{estim_sigma_ln, estim_sigma_mad, mp_median, RankCvOptions};
use lowrank::risk::{adashrink, div_closed_form, sure, AdaMethod, AdashrinkOptions};
use lowrank::shrinkage::{shrink_asympt, shrink_atn, shrink_hard, shrink_lownoise, shrink_soft, AsymptLoss};
use lowrank::sim::{bias_experiment, comparison_experiment, lrsim, msep_table, BiasConfig, ComparisonConfig};
use lowrank::svd::{compute_svd, reconstruct, singular_values};
use lowrank::{CenterState, DataMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

type Check = fn() -> (bool, String);
type Files = Vec<(String, Vec<u8>)>;

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn c1_rank_recovery() -> (bool, String) {
    let t0 = Instant::now();
    let mut hits = 0;
    let mut ranks = Vec::new();
    for seed in 0..20u64 {
        let sim = lrsim(200, 500, 10, 4.0, seed).unwrap();
        let res = adashrink(&DataMatrix::new(sim.x).unwrap(), &AdashrinkOptions::default()).unwrap();
        ranks.push(res.nb_eigen);
        if res.nb_eigen == 10 {
            hits += 1;
        }
    }
    let el = t0.elapsed();
    (
        hits >= 18 && el <= Duration::from_secs(120),
        format!("nb_eigen = 10 in {hits}/20 (ranks {ranks:?}), {:.1}s (limit 120s)", secs(el)),
    )
}

fn c2_noise_estimation() -> (bool, String) {
    let (mut ln, mut mad) = (Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let sim = lrsim(200, 500, 10, 4.0, seed).unwrap();
        let x = DataMatrix::new(sim.x).unwrap();
        ln.push(estim_sigma_ln(&x, Some(10), true, &RankCvOptions::default()).unwrap().sigma);
        mad.push(estim_sigma_mad(&x, true).unwrap().sigma);
    }
    let (ln_m, _) = mean_se(&ln);
    let (mad_m, _) = mean_se(&mad);
    let ln_ok = (ln_m / 7.906e-4 - 1.0).abs() <= 0.10;
    let mad_ok = (mad_m / 8.1e-4 - 1.0).abs() <= 0.15;
    (ln_ok && mad_ok, format!("mean LN {ln_m:.4e} (7.906e-4 +-10%), mean MAD {mad_m:.4e} (8.1e-4 +-15%)"))
}

fn c3_low_snr_gamma() -> (bool, String) {
    let mut hits = 0;
    let mut gammas = Vec::new();
    for seed in 0..20u64 {
        let sim = lrsim(200, 500, 100, 0.5, seed).unwrap();
        let res = adashrink(&DataMatrix::new(sim.x).unwrap(), &AdashrinkOptions::default()).unwrap();
        let g = res.params.gamma.unwrap();
        gammas.push(g);
        if g <= 1.6 + 1e-12 {
            hits += 1;
        }
    }
    (hits >= 16, format!("gamma <= 1.6 in {hits}/20 (gammas {gammas:?})"))
}

fn c4_sure_complete() -> (bool, String) {
    let t0 = Instant::now();
    let cfg = BiasConfig::default();
    let (n, p) = (cfg.n, cfg.p);
    let mut diff = Vec::new();
    for seed in 0..100u64 {
        let sim = lrsim(n, p, cfg.k, cfg.snr, 1000 + seed).unwrap();
        let lambda = cfg.lambda_for(sim.sigma);
        let f = compute_svd(sim.x.as_ref(), None).unwrap();
        let shrunk = shrink_soft(&f.d, lambda).unwrap();
        let mu_hat = reconstruct(&f, &shrunk, &CenterState::identity(p)).unwrap();
        let mse = (&mu_hat - &sim.mu).norm_l2().powi(2);
        let s = sure(&f.d, lambda, 1.0, sim.sigma, n, p).unwrap().value;
        diff.push(mse - s);
    }
    let (m, se) = mean_se(&diff);
    let el = t0.elapsed();
    (
        m.abs() <= 2.0 * se && el <= Duration::from_secs(60),
        format!("mean(MSE - SURE) = {m:.4e}, 2 SE = {:.4e}, {:.1}s (limit 60s)", 2.0 * se, secs(el)),
    )
}

fn c5_sure_miss() -> (bool, String) {
    let t0 = Instant::now();
    let rep = bias_experiment(&BiasConfig::default(), 100, 2024).unwrap();
    let el = t0.elapsed();
    let miss = rep.aggregate(None, None, "bias_sure_miss").unwrap();
    let comp = rep.aggregate(None, None, "bias_sure_comp").unwrap();
    let ok = miss.mean.abs() <= 2.0 * miss.se && comp.mean.abs() > 2.0 * comp.se && el <= Duration::from_secs(1800);
    (
        ok,
        format!(
            "SURE^miss bias {:.4e} (2 SE {:.4e}); SURE^comp bias {:.4e} (2 SE {:.4e}); {:.0}s (limit 1800s)",
            miss.mean,
            2.0 * miss.se,
            comp.mean,
            2.0 * comp.se,
            secs(el)
        ),
    )
}

fn c6_msep_ordering() -> (bool, String) {
    let cfg = ComparisonConfig { mechanisms: vec!["mcar".into()], ..Default::default() };
    let t0 = Instant::now();
    let rep = comparison_experiment(&cfg, 20, 2024).unwrap();
    let get = |arm: &str| msep_table(&rep).into_iter().find(|(a, _)| a == arm).map(|(_, c)| c[0].1).unwrap();
    let (atn, soft, mean) = (get("atn"), get("soft_oracle"), get("mean"));
    (
        atn <= soft && soft <= mean,
        format!("mean MSEP atn {atn:.4e} <= soft_oracle {soft:.4e} <= mean {mean:.4e} ({:.0}s)", secs(t0.elapsed())),
    )
}

fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(n, p, |_, _| Distribution::<f64>::sample(&StandardNormal, rng))
}

fn atn_estimate(x: &Mat<f64>, lambda: f64, gamma: f64) -> Mat<f64> {
    let f = compute_svd(x.as_ref(), None).unwrap();
    let shrunk = shrink_atn(&f.d, lambda, gamma).unwrap();
    reconstruct(&f, &shrunk, &CenterState::identity(x.ncols())).unwrap()
}

fn c7_divergence_fd() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (n, p) in [(5usize, 4usize), (8, 8)] {
        let x = gaussian(n, p, &mut rng);
        let d = singular_values(x.as_ref()).unwrap();
        let r = d.len();
        let lambdas =
            [0.5 * d[r - 1], 0.5 * (d[0] + d[1]), 0.5 * (d[1] + d[2]), 0.5 * (d[r - 2] + d[r - 1]), 1.5 * d[0]];
        for gamma in [1.0, 1.5, 3.0] {
            for &lambda in &lambdas {
                let mut fd = 0.0;
                for i in 0..n {
                    for j in 0..p {
                        let mut up = x.clone();
                        up[(i, j)] += h;
                        let mut dn = x.clone();
                        dn[(i, j)] -= h;
                        fd += (atn_estimate(&up, lambda, gamma)[(i, j)] - atn_estimate(&dn, lambda, gamma)[(i, j)])
                            / (2.0 * h);
                    }
                }
                let cf = div_closed_form(&d, lambda, gamma, n, p).unwrap();
                let err = if lambda >= d[0] { (cf - fd).abs() } else { (cf - fd).abs() / fd.abs() };
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    (
        worst <= 1e-3,
        format!("closed form vs central FD over {cases} cases: worst relative error {worst:.2e} (limit 1e-3)"),
    )
}

fn c7_gaussian_autoencoder() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut worst: f64 = 0.0;
    for (n, p) in [(20usize, 8usize), (8, 20), (30, 30)] {
        let x = gaussian(n, p, &mut rng);
        let sigma = 0.3;
        let s = noise_regularizer(&DataMatrix::new(x.clone()).unwrap(), NoiseModel::Gaussian { sigma }).unwrap();
        let (_, mu, _) = stable_autoencoder(x.as_ref(), &s).unwrap();
        let f = compute_svd(x.as_ref(), None).unwrap();
        let ns2 = n as f64 * sigma * sigma;
        let shrunk: Vec<f64> = f.d.iter().map(|&d| d * d * d / (d * d + ns2)).collect();
        let want = reconstruct(&f, &shrunk, &CenterState::identity(p)).unwrap();
        worst = worst.max((&mu - &want).norm_l2() / want.norm_l2());
    }
    (
        worst <= 1e-8,
        format!("stable autoencoder vs d^3/(d^2 + n sigma^2): worst relative error {worst:.2e} (limit 1e-8)"),
    )
}

fn c7_binomial_bootstrap() -> (bool, String) {
    let counts = [[3.0, 10.0, 1.0], [7.0, 2.0, 12.0], [5.0, 5.0, 4.0], [1.0, 8.0, 9.0]];
    let (n, p) = (4, 3);
    let x = Mat::from_fn(n, p, |i, j| counts[i][j]);
    let delta = 0.3;
    let s = noise_regularizer(&DataMatrix::new(x).unwrap(), NoiseModel::Binomial { delta }).unwrap();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut sum = vec![vec![0.0f64; p]; n];
    let mut sq = vec![vec![0.0f64; p]; n];
    for _ in 0..draws {
        for i in 0..n {
            for j in 0..p {
                let v =
                    Binomial::new(counts[i][j] as u64, 1.0 - delta).unwrap().sample(&mut rng) as f64 / (1.0 - delta);
                sum[i][j] += v;
                sq[i][j] += v * v;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..p {
        let boot: f64 = (0..n)
            .map(|i| {
                let m = sum[i][j] / draws as f64;
                sq[i][j] / draws as f64 - m * m
            })
            .sum();
        worst = worst.max((boot - s[j]).abs() / s[j]);
    }
    (
        worst <= 0.02,
        format!("binomial regularizer vs bootstrap column variance: worst relative gap {worst:.4} (limit 0.02)"),
    )
}

fn c7_ca() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, p) = (rng.random_range(2..12), rng.random_range(2..9));
        let x = Mat::from_fn(n, p, |_, _| rng.random_range(1..50) as f64);
        let dec = ca_transform(&x).unwrap();
        let back = ca_backtransform(&dec.m, &dec).unwrap();
        for j in 0..p {
            for i in 0..n {
                worst = worst.max((back[(i, j)] - x[(i, j)]).abs() / x[(i, j)]);
            }
        }
    }
    let r = [2.0, 5.0, 3.0, 7.0];
    let c = [4.0, 6.0, 1.0];
    let indep = Mat::from_fn(4, 3, |i, j| r[i] * c[j]);
    let m = ca_transform(&indep).unwrap().m;
    let zero = (0..3).flat_map(|j| (0..4).map(move |i| (i, j))).map(|(i, j)| m[(i, j)].abs()).fold(0.0, f64::max);
    (
        worst <= 1e-10 && zero <= 1e-12,
        format!("round-trip worst relative error {worst:.2e} (limit 1e-10); independence table max |M| {zero:.2e}"),
    )
}

fn c7_shrinker_properties() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let mut bad = Vec::new();
    for t in 0..1000 {
        let len = rng.random_range(1..15);
        let mut d: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..50.0)).collect();
        d.sort_by(|a, b| b.total_cmp(a));
        let lambda = rng.random_range(0.0..60.0);
        let gamma = rng.random_range(1.0..6.0);
        let k = rng.random_range(0..=len);
        let sigma = rng.random_range(0.05..3.0);
        let (n, p) = (len + rng.random_range(0..20), len);
        let soft = shrink_soft(&d, lambda).unwrap();
        if shrink_atn(&d, lambda, 1.0).unwrap().iter().zip(&soft).any(|(a, b)| (a - b).abs() > 1e-12 * b.max(1.0)) {
            bad.push(format!("spectrum {t}: atn(gamma=1) != soft"));
        }
        let outputs = vec![
            ("hard", shrink_hard(&d, k).unwrap()),
            ("soft", soft),
            ("atn", shrink_atn(&d, lambda, gamma).unwrap()),
            ("lownoise", shrink_lownoise(&d, sigma, k).unwrap()),
            ("asympt-fro", shrink_asympt(&d, sigma, n, p, AsymptLoss::Frobenius).unwrap()),
            ("asympt-op", shrink_asympt(&d, sigma, n, p, AsymptLoss::Operator).unwrap()),
            ("asympt-nuc", shrink_asympt(&d, sigma, n, p, AsymptLoss::Nuclear).unwrap()),
        ];
        for (name, s) in outputs {
            let dominated = s.iter().zip(&d).all(|(v, di)| *v >= 0.0 && *v <= *di + 1e-12);
            let monotone = s.windows(2).all(|w| w[0] >= w[1] - 1e-12);
            if !dominated || !monotone {
                bad.push(format!("spectrum {t}: {name} dominated={dominated} monotone={monotone}"));
            }
        }
    }
    (
        bad.is_empty(),
        format!(
            "1000 random spectra, 7 shrinkers: {} violations {:?}",
            bad.len(),
            bad.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn c7_qut_coverage() -> (bool, String) {
    let (n, p, level) = (50, 50, 0.95);
    let runs = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(76);
    let opts = AdashrinkOptions {
        sigma: Some(1.0),
        method: AdaMethod::Qut,
        nbsim: 500,
        quantile_level: level,
        seed: 7,
        ..Default::default()
    };
    let mut zero = 0;
    for _ in 0..runs {
        let x = gaussian(n, p, &mut rng);
        if adashrink(&DataMatrix::new(x).unwrap(), &opts).unwrap().nb_eigen == 0 {
            zero += 1;
        }
    }
    let frac = zero as f64 / runs as f64;
    ((frac - level).abs() <= 0.05, format!("null runs with mu_hat = 0: {frac:.4} ({level} +- 0.05)"))
}

fn c7_mp_median() -> (bool, String) {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let e = gaussian(n, n, &mut rng);
    let w = (e.transpose() * &e) * faer::Scale(1.0 / n as f64);
    let mut ev: Vec<f64> = w.self_adjoint_eigenvalues(Side::Lower).unwrap();
    ev.sort_by(|a, b| a.total_cmp(b));
    let emp = 0.5 * (ev[n / 2 - 1] + ev[n / 2]);
    let m = mp_median(1.0).unwrap();
    (
        (m - emp).abs() <= 0.01,
        format!("mp_median(1) = {m:.5}, Monte Carlo {emp:.5}, |diff| {:.5} (limit 0.01)", (m - emp).abs()),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lowrank")
}

fn files(dir: &Path) -> Files {
    let mut out: Files = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn c8_determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let run = |args: &[&str]| -> std::process::Output {
        let o = Command::new(bin()).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    let sim = root.join("sim");
    run(&[
        "simulate",
        "--n",
        "40",
        "--p",
        "15",
        "--k",
        "2",
        "--snr",
        "2",
        "--seed",
        "5",
        "--out",
        sim.to_str().unwrap(),
    ]);
    let x = sim.join("X.csv");
    // the same matrix with a few NA cells, and a count table
    let text = std::fs::read_to_string(&x).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for (r, line) in lines.iter_mut().enumerate().skip(1) {
        let mut cells: Vec<&str> = line.split(',').collect();
        let j = (r * 7) % cells.len();
        if r % 3 != 0 {
            cells[j] = "NA";
        }
        *line = cells.join(",");
    }
    let xna = root.join("xna.csv");
    std::fs::write(&xna, lines.join("\n") + "\n").unwrap();
    let counts = root.join("counts.csv");
    let mut t = String::from("a,b,c,d,e\n");
    for i in 0..12 {
        let row: Vec<String> = (0..5).map(|j| ((i * 3 + j * 5) % 11 + 1 + (i % 4) * j).to_string()).collect();
        t += &row.join(",");
        t += "\n";
    }
    std::fs::write(&counts, t).unwrap();
    let bias_cfg = root.join("bias.cfg");
    std::fs::write(&bias_cfg, "n = 14\np = 8\nk = 2\nfd_cells = 25\n").unwrap();
    let msep_cfg = root.join("msep.cfg");
    std::fs::write(&msep_cfg, "n = 20\np = 8\nk = 2\ngamma_seq = [1, 2]\nfd_cells = 20\nlambda_grid = 5\n").unwrap();

    let (xs, xnas, cs) = (x.to_str().unwrap(), xna.to_str().unwrap(), counts.to_str().unwrap());
    let (bc, mc) = (bias_cfg.to_str().unwrap(), msep_cfg.to_str().unwrap());
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--n", "30", "--p", "12", "--k", "3", "--snr", "1.5"]),
        ("adashrink", vec!["denoise", "--input", xs, "--method", "adashrink", "--risk-surface", "6"]),
        ("qut", vec!["denoise", "--input", xs, "--method", "adashrink", "--criterion", "qut", "--nbsim", "100"]),
        ("optishrink-ln", vec!["denoise", "--input", xs, "--method", "optishrink", "--opt-method", "ln"]),
        ("isa-binomial", vec!["denoise", "--input", cs, "--method", "isa", "--noise", "binomial"]),
        ("isa-ca", vec!["denoise", "--input", cs, "--method", "isa", "--transformation", "ca", "--delta", "0.3"]),
        ("noise-ln", vec!["estimate-noise", "--input", xs, "--method", "ln"]),
        ("impute", vec!["impute", "--input", xnas, "--fd-cells", "60", "--gamma-seq", "1,2", "--nb-init", "2"]),
        ("bias", vec!["experiment", "--name", "bias", "--config", bc, "--reps", "3"]),
        ("msep", vec!["experiment", "--name", "msep", "--config", mc, "--reps", "2"]),
    ];
    let mut mismatched = Vec::new();
    for (label, args) in &commands {
        let mut reference: Option<(Vec<u8>, Files)> = None;
        for threads in ["1", "4", "8"] {
            let out: PathBuf = root.join(format!("{label}-{threads}"));
            let mut full: Vec<&str> = vec!["--threads", threads, "--seed", "11"];
            full.extend(args.iter().copied());
            if args[0] != "estimate-noise" {
                full.extend(["--out", out.to_str().unwrap()]);
            }
            let o = run(&full);
            let got = (o.stdout, if out.exists() { files(&out) } else { Vec::new() });
            match &reference {
                None => reference = Some(got),
                Some(r) if *r != got => mismatched.push(format!("{label} (threads {threads})")),
                _ => {}
            }
        }
    }
    (
        mismatched.is_empty(),
        format!("{} commands x threads 1/4/8 byte-identical; mismatches {mismatched:?}", commands.len()),
    )
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<(&str, Check)> = vec![
        ("1 rank recovery", c1_rank_recovery),
        ("2 noise estimation", c2_noise_estimation),
        ("3 low-SNR gamma", c3_low_snr_gamma),
        ("4 SURE unbiased (complete)", c4_sure_complete),
        ("5 SURE^miss unbiased, SURE^comp biased", c5_sure_miss),
        ("6 MSEP ordering", c6_msep_ordering),
        ("7.1 divergence vs FD", c7_divergence_fd),
        ("7.2 Gaussian autoencoder", c7_gaussian_autoencoder),
        ("7.3 binomial regularizer", c7_binomial_bootstrap),
        ("7.4 CA transform", c7_ca),
        ("7.5 shrinker properties", c7_shrinker_properties),
        ("7.6 QUT coverage", c7_qut_coverage),
        ("7.7 MP median", c7_mp_median),
        ("8 CLI determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.starts_with(f)) {
            continue;
        }
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!("{} [{name}] {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{failed} acceptance criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
