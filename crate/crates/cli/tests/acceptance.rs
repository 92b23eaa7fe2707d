//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are never captured.
//! Positional numeric arguments select criteria; `--ignored` or
//! `--include-ignored` adds the full-scale coverage study.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cotwave::cot::{estimate_cw_between_models, fit_conditional_model, pooled_w2sq};
use cotwave::rng::substream;
use cotwave::simbench::{generate, run_coverage_experiment, run_rate_experiment, true_cw2, SCENARIOS};
use cotwave::wavelet::{cascade_evaluate, FunctionKind};
use cotwave::{
    bootstrap_ci, build_filter, builtin_scenario, empirical_w2sq, fit_density, gelbrich_w2sq, solve_assignment,
    BootstrapConfig, CostMatrix, CostSpec, CotConfig, EstimatorConfig, Group, Points, SampleSize, WaveletBasis,
};
use rand::Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn budget(n_z: usize, n_y: usize) -> CotConfig {
    CotConfig { n_z: SampleSize::Fixed(n_z), n_y: SampleSize::Fixed(n_y), ..Default::default() }
}

fn permutation_minimum(cost: &CostMatrix) -> f64 {
    fn rec(cost: &CostMatrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let n = cost.size();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.size()], 0.0, &mut best);
    best / cost.size() as f64
}

/// 1. Assignment solver against brute force, 50 instances for each N in 2..=7.
fn ot_exactness() -> Verdict {
    let mut rng = substream(1, &[]);
    let mut worst = 0.0f64;
    for n in 2..=7 {
        for _ in 0..50 {
            let cost = CostMatrix::from_fn(n, |_, _| rng.random::<f64>());
            let got = solve_assignment(&cost).unwrap().value;
            worst = worst.max((got - permutation_minimum(&cost)).abs());
        }
    }
    verdict(worst <= 1e-10, format!("max |solver - brute force| = {worst:.2e} over 300 instances (tol 1e-10)"))
}

/// 2. One-dimensional clouds against the sorted matching.
fn one_dimensional_oracle() -> Verdict {
    let mut rng = substream(2, &[]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let mut a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
        let got = empirical_w2sq(&Points::from_scalars(&a), &Points::from_scalars(&b), &CostSpec::default()).unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let sorted = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
        worst = worst.max((got - sorted).abs());
    }
    verdict(worst <= 1e-10, format!("max |solver - sorted matching| = {worst:.2e} over 100 instances (tol 1e-10)"))
}

fn random_spd<R: Rng>(rng: &mut R) -> [f64; 4] {
    let angle = rng.random::<f64>() * std::f64::consts::PI;
    let (c, s) = (angle.cos(), angle.sin());
    let l1 = 0.01 + 0.03 * rng.random::<f64>();
    let l2 = 0.01 + 0.03 * rng.random::<f64>();
    [l1 * c * c + l2 * s * s, (l1 - l2) * c * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c]
}

fn gaussian_cloud<R: Rng>(rng: &mut R, n: usize, mean: [f64; 2], cov: [f64; 4]) -> Points {
    let l00 = cov[0].sqrt();
    let l10 = cov[2] / l00;
    let l11 = (cov[3] - l10 * l10).sqrt();
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        coords.push(mean[0] + l00 * a);
        coords.push(mean[1] + l10 * a + l11 * b);
    }
    Points::new(2, coords).unwrap()
}

/// 3. 1e5-point Gaussian clouds against the closed form, 2% relative error.
fn gelbrich_consistency() -> Verdict {
    let mut rng = substream(3, &[]);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let m0 = [rng.random::<f64>(), rng.random::<f64>()];
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let dist = 0.2 + 0.3 * rng.random::<f64>();
        let m1 = [m0[0] + dist * angle.cos(), m0[1] + dist * angle.sin()];
        let (s0, s1) = (random_spd(&mut rng), random_spd(&mut rng));
        let exact = gelbrich_w2sq(&m0, &s0, &m1, &s1).unwrap();
        let a = gaussian_cloud(&mut rng, 100_000, m0, s0);
        let b = gaussian_cloud(&mut rng, 100_000, m1, s1);
        let empirical = empirical_w2sq(&a, &b, &CostSpec::default()).unwrap();
        worst = worst.max((empirical - exact).abs() / exact);
    }
    verdict(worst <= 0.02, format!("max relative error {:.3}% over 10 pairs (tol 2%)", 100.0 * worst))
}

/// 4. Fitted joints are densities and both conditional models share one covariate marginal.
fn density_validity() -> Verdict {
    let cfg = EstimatorConfig::default();
    let mut worst_mass = 0.0f64;
    let mut min_value = f64::INFINITY;
    let mut shared = true;
    for (k, name) in SCENARIOS.iter().enumerate() {
        let model = builtin_scenario(name).unwrap();
        for n in [500, 2000] {
            let sim = generate(&model, n, &mut substream(4, &[k as u64, n as u64])).unwrap();
            for arm in [&sim.control, &sim.treated] {
                let est = fit_density(arm, &cfg).unwrap();
                let mass = est.grid_table().iter().sum::<f64>() * est.grid().cell_volume();
                worst_mass = worst_mass.max((mass - 1.0).abs());
                min_value = min_value.min(est.grid_table().iter().copied().fold(f64::INFINITY, f64::min));
            }
            let model = fit_conditional_model(&sim.control, &sim.treated, &cfg).unwrap();
            let (p, q) = (model.z_marginal(Group::Control), model.z_marginal(Group::Treated));
            shared &= p.len() == q.len() && p.iter().zip(q).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    verdict(
        min_value >= 0.0 && worst_mass <= 1e-6 && shared,
        format!(
            "min density {min_value:.2e}, max |mass - 1| = {worst_mass:.2e} (tol 1e-6), covariate marginals bitwise identical: {shared}"
        ),
    )
}

/// 5. The conditional value dominates the pooled value on 10 fitted models.
fn conditional_dominates() -> Verdict {
    let (n_z, n_y) = (100, 50);
    let cfg = budget(n_z, n_y);
    let mut failures = Vec::new();
    let mut margin = f64::INFINITY;
    for k in 0..10u64 {
        let name = SCENARIOS[k as usize % SCENARIOS.len()];
        let model = builtin_scenario(name).unwrap();
        let sim = generate(&model, 1000, &mut substream(5, &[k])).unwrap();
        let fitted = fit_conditional_model(&sim.control, &sim.treated, &EstimatorConfig::default()).unwrap();
        let est = estimate_cw_between_models(&fitted, &CotConfig { seed: k, ..cfg.clone() }).unwrap();
        let pooled = pooled_w2sq(&fitted, n_z * n_y, &CostSpec::default(), k).unwrap();
        let slack = est.value - (pooled - 3.0 * est.mc_std_error);
        margin = margin.min(slack);
        if slack < 0.0 {
            failures.push(format!("{name}#{k}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "10 models, smallest slack {margin:.2e}, violations: {}",
            if failures.is_empty() { "none".into() } else { failures.join(", ") }
        ),
    )
}

/// 6. Scenario s2 at n = 3000: small mean error and replicate agreement with the oracle.
fn oracle_agreement() -> Verdict {
    let model = builtin_scenario("s2_dy2_dz2").unwrap();
    let oracle = true_cw2(&model, 1_000_000, 6).unwrap().value;
    let cfg = budget(120, 120);
    let mut errors = Vec::new();
    let mut within = 0;
    for rep in 0..20u64 {
        let sim = generate(&model, 3000, &mut substream(6, &[rep])).unwrap();
        let cot = CotConfig { seed: rep, ..cfg.clone() };
        let boot = BootstrapConfig { b: 100, seed: rep, ..Default::default() };
        let ci = bootstrap_ci(&sim.control, &sim.treated, &cot, &boot).unwrap();
        let err = (ci.point - oracle).abs();
        if err <= 4.0 * ci.sd_hat {
            within += 1;
        }
        errors.push(err);
    }
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    // "small": mean absolute error at most a tenth of the target value
    let pass = within >= 17 && mean_error <= 0.1 * oracle;
    verdict(
        pass,
        format!(
            "oracle {oracle:.5}, mean |error| {mean_error:.2e} (tol {:.2e}), {within}/20 within 4 bootstrap sd (need 17)",
            0.1 * oracle
        ),
    )
}

/// 7. Error decreases in n with log-log slope at most -0.25.
fn rate_trend() -> Verdict {
    let model = builtin_scenario("loc_dy1_dz1").unwrap();
    let report = run_rate_experiment(&model, &[250, 500, 1000, 2000], 50, &budget(200, 300), 7).unwrap();
    let errors: Vec<f64> = report.summaries.iter().map(|s| s.mean_error).collect();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let slope = report.log_log_slope.unwrap_or(f64::NAN);
    let listed: Vec<String> = report.summaries.iter().map(|s| format!("{}:{:.2e}", s.n, s.mean_error)).collect();
    verdict(
        decreasing && slope <= -0.25,
        format!(
            "mean errors [{}], slope {slope:.3} (need <= -0.25), strictly decreasing: {decreasing}",
            listed.join(", ")
        ),
    )
}

/// 8. Coverage of bootstrap intervals for scenario s1 at n = 2000.
fn coverage(reps: usize, band: (f64, f64)) -> Verdict {
    let model = builtin_scenario("s1_dy2_dz1").unwrap();
    let boot = BootstrapConfig { b: 100, ..Default::default() };
    let report = run_coverage_experiment(&model, 2000, reps, &budget(120, 120), &boot, 8).unwrap();
    let c = report.summaries[0].coverage.unwrap_or(f64::NAN);
    verdict(
        (band.0..=band.1).contains(&c),
        format!(
            "coverage {:.1}% over {reps} reps, B = 100 (band [{:.0}%, {:.0}%])",
            100.0 * c,
            100.0 * band.0,
            100.0 * band.1
        ),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_cotwave")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "cotwave {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// 9. Byte-identical CLI outputs across reruns and thread counts.
fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let model = builtin_scenario("s1_dy2_dz1").unwrap();
    let sim = generate(&model, 300, &mut substream(9, &[])).unwrap();
    let mut csv = String::from("w,y1,y2,z1\n");
    for (w, arm) in [(0, &sim.control), (1, &sim.treated)] {
        for row in arm.points().rows() {
            csv.push_str(&format!("{w},{},{},{}\n", row[0], row[1], row[2]));
        }
    }
    std::fs::write(dir.path().join("data.csv"), csv).unwrap();
    let estimate = |threads: &str| {
        run_cli(&["--threads", threads, "estimate", "data.csv", "--nz", "40", "--ny", "40", "--seed", "3"], dir.path())
    };
    let simulate = |threads: &str, out: &str| {
        run_cli(
            &[
                "--threads",
                threads,
                "simulate",
                "loc_dy1_dz1",
                "rates",
                "--n",
                "100,200",
                "--reps",
                "3",
                "--nz",
                "20",
                "--ny",
                "20",
                "--oracle-points",
                "2000",
                "--seed",
                "5",
                "--out",
                out,
            ],
            dir.path(),
        );
        let read = |ext: &str| std::fs::read(dir.path().join(out).join(format!("loc_dy1_dz1_rates.{ext}"))).unwrap();
        (read("csv"), read("json"))
    };
    let e4 = estimate("4");
    let estimate_same = e4 == estimate("4") && e4 == estimate("1");
    let s4 = simulate("4", "a");
    let simulate_same = s4 == simulate("4", "b") && s4 == simulate("1", "c");
    verdict(
        estimate_same && simulate_same,
        format!("estimate identical: {estimate_same}, simulate identical: {simulate_same} (threads 4, 4, 1)"),
    )
}

/// 10. Filter invariants, Haar closed forms, db4 cascade and level-wise Gram matrices.
fn wavelet_correctness() -> Verdict {
    let mut filter_defect = 0.0f64;
    for order in 1..=10 {
        let f = build_filter(order).unwrap();
        filter_defect = filter_defect.max(f.orthonormality_defect()).max(f.vanishing_moment_defect());
    }
    let haar = WaveletBasis::new(1, 1, 0, 4, 6).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut haar_exact = build_filter(1).unwrap().taps() == [h, h];
    for level in 0..=4u32 {
        let n = 1usize << level;
        let amp = (n as f64).sqrt();
        for k in 0..n {
            for (x, inside, first_half) in [
                ((k as f64 + 0.25) / n as f64, true, true),
                ((k as f64 + 0.75) / n as f64, true, false),
                (((k + 1) % n) as f64 / n as f64 + 0.5 / n as f64 * 0.5, n == 1, true),
            ] {
                let phi = haar.eval_1d(FunctionKind::Scaling, level, k, x).unwrap();
                let psi = haar.eval_1d(FunctionKind::Wavelet, level, k, x).unwrap();
                let (want_phi, want_psi) = match (inside, first_half) {
                    (false, _) => (0.0, 0.0),
                    (true, true) => (amp, amp),
                    (true, false) => (amp, -amp),
                };
                haar_exact &= phi == want_phi && psi == want_psi;
            }
        }
    }
    let db4 = build_filter(4).unwrap();
    let residual = cascade_evaluate(&db4, 12).unwrap().refinement_residual(&db4);

    // midpoint quadrature of all scaling and wavelet functions at each level
    let basis = WaveletBasis::new(4, 1, 0, 5, 12).unwrap();
    let points = 1usize << 14;
    let mut gram_defect = 0.0f64;
    for level in 2..=5u32 {
        let n = 1usize << level;
        let funcs: Vec<Vec<f64>> = [FunctionKind::Scaling, FunctionKind::Wavelet]
            .iter()
            .flat_map(|&kind| (0..n).map(move |k| (kind, k)))
            .map(|(kind, k)| {
                (0..points).map(|i| basis.eval_1d(kind, level, k, (i as f64 + 0.5) / points as f64).unwrap()).collect()
            })
            .collect();
        for a in 0..funcs.len() {
            for b in 0..=a {
                let g = funcs[a].iter().zip(&funcs[b]).map(|(x, y)| x * y).sum::<f64>() / points as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                gram_defect = gram_defect.max((g - target).abs());
            }
        }
    }
    verdict(
        filter_defect <= 1e-12 && haar_exact && residual < 1e-6 && gram_defect <= 1e-3,
        format!(
            "filter defect {filter_defect:.1e} (tol 1e-12), Haar exact: {haar_exact}, db4 cascade residual {residual:.1e} (tol 1e-6), Gram defect {gram_defect:.1e} (tol 1e-3)"
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let only_ignored = args.iter().any(|a| a == "--ignored");
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    type Check = Box<dyn Fn() -> Verdict>;
    let mut criteria: Vec<(usize, &str, Check)> = vec![
        (1, "OT exactness", Box::new(ot_exactness)),
        (2, "1D OT oracle", Box::new(one_dimensional_oracle)),
        (3, "Gelbrich consistency", Box::new(gelbrich_consistency)),
        (4, "density validity", Box::new(density_validity)),
        (5, "conditional >= unconditional", Box::new(conditional_dominates)),
        (6, "oracle agreement", Box::new(oracle_agreement)),
        (7, "rate trend", Box::new(rate_trend)),
        (8, "coverage (smoke: 20 reps)", Box::new(|| coverage(20, (0.70, 1.0)))),
        (9, "determinism", Box::new(determinism)),
        (10, "wavelet correctness", Box::new(wavelet_correctness)),
    ];
    if only_ignored {
        criteria.clear();
    }
    if full {
        criteria.push((8, "coverage (full: 100 reps)", Box::new(|| coverage(100, (0.85, 0.99)))));
    }
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| verdict(false, "panicked"));
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id} ({name}): {} [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion check(s) failed");
        std::process::exit(1);
    }
}
