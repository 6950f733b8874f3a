//! Acceptance checks. Each criterion prints one PASS/FAIL line with the
//! measured quantities; the process exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kdebias_core::bias_analysis::{bias_report, bias_scaling_study, exact_bias, moment_term, mse_study, BiasReport};
use kdebias_core::lower_bound_lab::{
    blowup_sweep, geometric, moment_finiteness_report, spike_decay_deviation, FarPlacement, ScheduleKind,
};
use kdebias_core::{
    BandwidthMatrix, DensityModel, GaussianComponent, GaussianMixture, Kernel, Matrix, QuadOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn main() {
    let checks: [(&str, Check); 9] = [
        ("gaussian convolution oracle", gaussian_oracle),
        ("moment-term identities", moment_identities),
        ("bias order reproduction", bias_order),
        ("remainder bound holds on grid", remainder_bound_grid),
        ("spike-train blow-up rate", blowup_rate),
        ("mse rate", mse_rate),
        ("hadamard ratio", hadamard),
        ("spike-train kernel integrity", adversarial_integrity),
        ("cli determinism across thread counts", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        if !out.pass {
            failures += 1;
        }
        println!(
            "{} criterion {} ({name}) [{:.1}s]: {}",
            if out.pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            out.detail
        );
    }
    println!("{} of {} criteria passed", checks.len() - failures, checks.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).expect("square matrix")
}

/// Random SPD matrix Q·diag(λ)·Qᵀ with eigenvalues in [lo, hi], built from a
/// random rotation (Gram–Schmidt on uniform random columns).
fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Matrix {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &q {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let lambda: Vec<f64> = (0..d).map(|_| lo * (hi / lo).powf(rng.random::<f64>())).collect();
    let mut m = Matrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = (0..d).map(|k| q[k][i] * lambda[k] * q[k][j]).sum();
        }
    }
    m.symmetrized()
}

// 1 ------------------------------------------------------------------------

fn gaussian_oracle() -> Outcome {
    let start = Instant::now();
    let kernel1 = Kernel::gaussian(1);
    let kernel2 = Kernel::gaussian(2);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let cases: Vec<(Matrix, Vec<f64>, Matrix, Vec<f64>)> = (0..20)
        .map(|i| {
            let d = 1 + i % 2;
            let sigma = random_spd(&mut rng, d, 0.3, 2.0);
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let h = random_spd(&mut rng, d, 0.05, 0.8);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            (sigma, mean, h, x)
        })
        .collect();
    let errors: Vec<f64> = cases
        .par_iter()
        .map(|(sigma, mean, h, x)| {
            let d = mean.len();
            let kernel = if d == 1 { &kernel1 } else { &kernel2 };
            let model: DensityModel =
                GaussianMixture::new(vec![GaussianComponent::new(1.0, mean.clone(), sigma.clone()).unwrap()])
                    .unwrap()
                    .into();
            let hm = BandwidthMatrix::new(h.clone()).unwrap();
            let bias = exact_bias(kernel, &hm, &model, x, &QuadOptions::for_dim(d)).unwrap().value;
            let smoothed = sigma.add(&h.mul(&h.transpose())).symmetrized();
            let smoothed_model: DensityModel =
                GaussianMixture::new(vec![GaussianComponent::new(1.0, mean.clone(), smoothed).unwrap()])
                    .unwrap()
                    .into();
            let oracle = smoothed_model.pdf(x).unwrap() - model.pdf(x).unwrap();
            (bias - oracle).abs()
        })
        .collect();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-6 && within(elapsed, 30),
        detail: format!("20 cases, max |bias - closed form| = {worst:.3e} (tol 1e-6), {:.1}s (limit 30s)", elapsed.as_secs_f64()),
    }
}

// 2 ------------------------------------------------------------------------

fn moment_identities() -> Outcome {
    let opts = QuadOptions::for_dim(2);
    let model: DensityModel = GaussianMixture::new(vec![
        GaussianComponent::new(0.6, vec![0.3, -0.2], matrix(&[vec![0.8, 0.3], vec![0.3, 0.5]])).unwrap(),
        GaussianComponent::new(0.4, vec![-0.7, 0.5], matrix(&[vec![0.4, -0.1], vec![-0.1, 0.9]])).unwrap(),
    ])
    .unwrap()
    .into();
    let h = BandwidthMatrix::new(matrix(&[vec![0.3, 0.1], vec![0.1, 0.2]])).unwrap();
    let x = [0.1, 0.4];
    let mut worst_low: f64 = 0.0;
    let mut worst_high: f64 = 0.0;
    for kernel in [Kernel::gaussian(2), Kernel::epanechnikov(2), Kernel::higher_order4(2)] {
        for j in 0..=1 {
            worst_low = worst_low.max(moment_term(&kernel, &h, &model, &x, j, &opts).unwrap().abs());
        }
        if matches!(kernel, Kernel::HigherOrder4 { .. }) {
            for j in 2..=3 {
                worst_high = worst_high.max(moment_term(&kernel, &h, &model, &x, j, &opts).unwrap().abs());
            }
        }
    }
    Outcome {
        pass: worst_low < 1e-10 && worst_high < 1e-8,
        detail: format!(
            "max |mu_0|,|mu_1| = {worst_low:.3e} (tol 1e-10); fourth-order max |mu_2|,|mu_3| = {worst_high:.3e} (tol 1e-8)"
        ),
    }
}

// 3 ------------------------------------------------------------------------

/// Two-component mixture in d = 1 and query points where both the second
/// and fourth derivatives are clearly non-zero.
fn scaling_mixture() -> DensityModel {
    GaussianMixture::isotropic(&[(0.5, vec![-0.8], 1.0), (0.5, vec![1.0], 0.8)]).unwrap().into()
}

const SCALING_QUERIES: [f64; 3] = [-1.0, 1.0, 2.25];

fn bias_order() -> Outcome {
    let start = Instant::now();
    let model = scaling_mixture();
    let opts = QuadOptions::for_dim(1).with_tol(1e-13, 1e-15);
    let hs = geometric(0.25, 0.5, 6);
    let mut pass = true;
    let mut parts = Vec::new();
    for &x in &SCALING_QUERIES {
        let f2 = model.deriv_tensor(&[x], 2).unwrap().data[0];
        let f4 = model.deriv_tensor(&[x], 4).unwrap().data[0];
        if f2.abs() < 0.05 || f4.abs() < 0.05 {
            pass = false;
            parts.push(format!("x={x}: degenerate derivatives f''={f2:.3} f''''={f4:.3}"));
        }
    }
    for (kernel, target, tol) in [(Kernel::gaussian(1), 2.0, 0.1), (Kernel::higher_order4(1), 4.0, 0.2)] {
        let slopes: Vec<f64> = SCALING_QUERIES
            .par_iter()
            .map(|&x| bias_scaling_study(&kernel, &model, &[x], &hs, &opts).unwrap().fit.slope)
            .collect();
        for (x, s) in SCALING_QUERIES.iter().zip(&slopes) {
            pass &= (s - target).abs() <= tol;
            parts.push(format!("{:?} x={x}: {s:.4}", kernel.kind()));
        }
        parts.push(format!("target {target}±{tol}"));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 120);
    Outcome { pass, detail: format!("slopes {}; {:.1}s (limit 120s)", parts.join(", "), elapsed.as_secs_f64()) }
}

// 4 ------------------------------------------------------------------------

fn remainder_bound_grid() -> Outcome {
    let kernels = [Kernel::gaussian(2), Kernel::epanechnikov(2)];
    let densities: [DensityModel; 2] = [
        GaussianMixture::standard(2).into(),
        GaussianMixture::new(vec![
            GaussianComponent::new(0.5, vec![0.4, 0.0], matrix(&[vec![0.5, 0.2], vec![0.2, 0.4]])).unwrap(),
            GaussianComponent::new(0.5, vec![-0.5, 0.3], matrix(&[vec![0.3, -0.1], vec![-0.1, 0.6]])).unwrap(),
        ])
        .unwrap()
        .into(),
    ];
    let shape = matrix(&[vec![1.0, 0.3], vec![0.3, 0.6]]);
    let bandwidths: Vec<BandwidthMatrix> = geometric(0.5, 0.5, 6)
        .into_iter()
        .map(|s| {
            let mut m = shape.clone();
            for i in 0..2 {
                for j in 0..2 {
                    m[(i, j)] *= s;
                }
            }
            BandwidthMatrix::new(m).unwrap()
        })
        .collect();
    let queries = [vec![0.0, 0.0], vec![0.6, -0.4], vec![-1.0, 0.8]];
    let mut cells = Vec::new();
    for k in &kernels {
        for f in &densities {
            for h in &bandwidths {
                for x in &queries {
                    cells.push((k, f, h, x));
                }
            }
        }
    }
    let opts = QuadOptions::for_dim(2);
    let reports: Vec<BiasReport> =
        cells.par_iter().map(|(k, f, h, x)| bias_report(k, h, f, x, 2, None, &opts).unwrap()).collect();
    let violations = reports.iter().filter(|r| !r.bound_satisfied).count();
    let (lo, hi) = reports
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.margin_ratio), b.max(r.margin_ratio)));
    Outcome {
        pass: violations == 0 && reports.len() == 72,
        detail: format!(
            "{} cells, {violations} violations, margin ratio |R|/(bound·‖h‖²) in [{lo:.3e}, {hi:.3e}]",
            reports.len()
        ),
    }
}

// 5 ------------------------------------------------------------------------

fn blowup_rate() -> Outcome {
    let start = Instant::now();
    let opts = |d| QuadOptions::for_dim(d);
    let eps = geometric(0.5, 0.5, 6);
    let p2 = Kernel::adversarial(1.0, 2, 2, 10_000).unwrap();
    let p1 = Kernel::adversarial(0.5, 2, 1, 10_000).unwrap();
    let (Kernel::AdversarialRadial(a2), Kernel::AdversarialRadial(a1)) = (p2, p1) else { unreachable!() };
    let run2 = blowup_sweep(a2, ScheduleKind::Balanced, &eps, FarPlacement::SpikeAligned, &opts(2)).unwrap();
    let run1 = blowup_sweep(a1, ScheduleKind::Balanced, &eps, FarPlacement::SpikeAligned, &opts(1)).unwrap();
    let elapsed = start.elapsed();
    let ok2 = run2.strictly_increasing && (run2.fit.slope - (-1.0)).abs() <= 0.3 && run2.excluded == 0;
    let ok1 = (run1.fit.slope - (-0.5)).abs() <= 0.3 && run1.excluded == 0;
    Outcome {
        pass: ok2 && ok1 && within(elapsed, 300),
        detail: format!(
            "d=2 p=1 slope {:.4} (target -1±0.3, increasing={}); d=1 p=0.5 slope {:.4} (target -0.5±0.3); {:.1}s (limit 300s)",
            run2.fit.slope,
            run2.strictly_increasing,
            run1.fit.slope,
            elapsed.as_secs_f64()
        ),
    }
}

// 6 ------------------------------------------------------------------------

fn mse_rate() -> Outcome {
    let start = Instant::now();
    let model: DensityModel = GaussianMixture::standard(1).into();
    let n_values: Vec<u64> = (10..=17).map(|e| 1u64 << e).collect();
    let study = mse_study(&Kernel::gaussian(1), &model, &[0.0], &n_values, 200, 7, 1.06).unwrap();
    let elapsed = start.elapsed();
    let slope = study.fit.slope;
    Outcome {
        pass: (slope - (-0.8)).abs() <= 0.15 && within(elapsed, 600),
        detail: format!(
            "slope {slope:.4} (bootstrap se {:.4}, target -0.8±0.15); {:.1}s (limit 600s)",
            study.slope_stderr_bootstrap,
            elapsed.as_secs_f64()
        ),
    }
}

// 7 ------------------------------------------------------------------------

fn hadamard() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_product: f64 = 0.0;
    for i in 0..1000 {
        let d = [2, 3, 5][i % 3];
        let m = random_spd(&mut rng, d, 1e-2, 10.0);
        let h = BandwidthMatrix::new(m).unwrap();
        let ratio = h.det() / h.op_norm().powi(d as i32);
        worst_ratio = worst_ratio.max(ratio);
        worst_product = worst_product.max((h.balance_ratio() * h.hadamard_ratio() - 1.0).abs());
    }
    Outcome {
        pass: worst_ratio <= 1.0 + 1e-12 && worst_product <= 1e-10,
        detail: format!(
            "1000 matrices: max |h|/‖h‖^d = {worst_ratio:.6}, max |balance·hadamard - 1| = {worst_product:.3e}"
        ),
    }
}

// 8 ------------------------------------------------------------------------

fn adversarial_integrity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, ell, d) in [(1.0, 2, 1), (2.0, 1, 2)] {
        let Kernel::AdversarialRadial(params) = Kernel::adversarial(p, ell, d, 10_000).unwrap() else {
            unreachable!()
        };
        let rows = moment_finiteness_report(&params, ell as usize).unwrap();
        let mass = rows[0].value;
        let worst_change = rows.iter().map(|r| r.rel_change).fold(0.0, f64::max);
        let all_converged = rows.iter().all(|r| r.converged);
        let decay = spike_decay_deviation(&params);
        pass &= (mass - 1.0).abs() <= 1e-6 && all_converged && worst_change < 1e-6 && decay <= 1e-10;
        parts.push(format!(
            "p={p} ell={ell} d={d}: mass {mass:.12}, max doubling change {worst_change:.2e}, decay deviation {decay:.2e}"
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

// 9 ------------------------------------------------------------------------

fn run_cli(args: &[&str], threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_kdebias"))
        .args(args)
        .args(["--threads", &threads.to_string(), "--seed", "11"])
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {status}"))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    write_points(&dir.path().join("samples.csv"), 2, 5000, 3);
    write_points(&dir.path().join("queries.csv"), 2, 64, 4);
    let runs: Vec<(Vec<String>, Vec<String>)> = vec![
        (
            vec![
                "estimate".into(),
                "--samples".into(),
                path("samples.csv"),
                "--queries".into(),
                path("queries.csv"),
                "--kernel".into(),
                r#"{"kind":"gaussian","dim":2}"#.into(),
                "--bandwidth".into(),
                "[[0.3,0.05],[0.05,0.2]]".into(),
                "--out".into(),
                path("est.csv"),
            ],
            vec![path("est.csv")],
        ),
        (
            vec![
                "bias-report".into(),
                "--h".into(),
                "0.5,0.25,0.125".into(),
                "--queries".into(),
                "[[-1.0],[0.0],[0.7]]".into(),
                "--out".into(),
                path("bias.json"),
            ],
            vec![path("bias.json"), path("bias.csv")],
        ),
        (
            vec![
                "mse-scaling".into(),
                "--n-values".into(),
                "256,512,1024,2048".into(),
                "--replicates".into(),
                "60".into(),
                "--out".into(),
                path("mse.json"),
            ],
            vec![path("mse.json"), path("mse.csv")],
        ),
        (
            vec![
                "blowup-demo".into(),
                "--dim".into(),
                "1".into(),
                "--eps-steps".into(),
                "3".into(),
                "--n-max".into(),
                "2000".into(),
                "--out".into(),
                path("blowup.json"),
            ],
            vec![path("blowup.json"), path("blowup.csv")],
        ),
    ];
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (args, outputs) in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let mut reference: Option<Vec<Vec<u8>>> = None;
        for threads in [1, 2, 8] {
            if let Err(e) = run_cli(&args, threads) {
                return Outcome { pass: false, detail: e };
            }
            let bytes: Vec<Vec<u8>> = outputs.iter().map(|p| std::fs::read(p).unwrap()).collect();
            match &reference {
                None => reference = Some(bytes),
                Some(r) if *r != bytes => mismatches.push(format!("{} at {threads} threads", args[0])),
                Some(_) => {}
            }
        }
        files += outputs.len();
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!(
            "{} commands, {files} output files compared at 1/2/8 threads; mismatches: {}",
            runs.len(),
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join(", ") }
        ),
    }
}

fn write_points(path: &Path, d: usize, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = (1..=d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for _ in 0..n {
        let row: Vec<String> = (0..d).map(|_| format!("{}", rng.random_range(-2.0..2.0))).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}
