//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use lqframes::experiments::{
    recovery_trial, run_bounds_table, run_phase_transition, run_separation_sweep, trial_seed,
    CellParams, CellResult, ExperimentKind, ExperimentSpec, Figure1Config, RecoveryCell,
    SeparationCell,
};
use lqframes::frames::{
    canonical_dual, cosparse_signal, frame_bounds, hard_threshold, random_tight_frame, Frame,
};
use lqframes::qrip::{
    beta, check_recovery_condition, error_constants, estimate_qrip, varrho, MeasurementEnsemble,
    QripSearch,
};
use lqframes::rng;
use lqframes::separation::{
    build_stacked, drip_mip_condition, solve_split_analysis, theta_tilde, SeparationProblem,
};
use lqframes::solvers::{irls_analysis, smoothed_objective, LqProblem, SolverConfig, SolverMethod};

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn figure1(report: &mut Report) {
    let config = Figure1Config::default();
    let params = CellParams::Recovery(config.cell);
    let solver = SolverConfig::default();
    let mut successes = 0;
    let mut slowest = 0.0f64;
    let mut errors = Vec::new();
    for t in 0..config.trials {
        let seed = trial_seed(config.seed, &params, t);
        let started = Instant::now();
        let trial = recovery_trial(
            &config.cell,
            seed,
            config.sigma,
            SolverMethod::Irls,
            &solver,
        );
        slowest = slowest.max(started.elapsed().as_secs_f64());
        match trial {
            Ok(trial) => {
                let err = trial.relative_error();
                if err <= 1e-4 {
                    successes += 1;
                }
                errors.push(err);
            }
            Err(e) => {
                println!("  trial {t} failed: {e}");
                errors.push(f64::INFINITY);
            }
        }
    }
    errors.sort_by(f64::total_cmp);
    report.check(
        "figure1 recovery (n=100, d=110, m=50, q=0.7, s=25)",
        successes >= 18 && slowest < 10.0,
        format!(
            "{successes}/20 trials at rel. error <= 1e-4 (need 18), median error {:.2e}, slowest trial {slowest:.2} s (need < 10 s)",
            errors[errors.len() / 2]
        ),
    );
}

fn beta_constants(report: &mut Report) {
    let (b1, b0) = (beta(1.0), beta(1e-6));
    report.check(
        "beta constants",
        (b1 - 3.8407).abs() <= 1e-3 && (b0 - 1.0602).abs() <= 1e-3,
        format!("beta(1) = {b1:.6} (target 3.8407 +- 1e-3), beta(1e-6) = {b0:.6} (target 1.0602 +- 1e-3)"),
    );
}

fn moment_oracle(report: &mut Report) {
    const DRAWS: usize = 1_000_000;
    let mut stream = rng::stream(2024);
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| StandardNormal.sample(&mut stream))
        .collect();
    let mut worst = 0.0f64;
    let mut pass = true;
    for q in [0.25, 0.5, 0.7, 1.0] {
        let vals: Vec<f64> = draws.iter().map(|g: &f64| g.abs().powf(q)).collect();
        let mean = vals.iter().sum::<f64>() / DRAWS as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (DRAWS - 1) as f64;
        let z = (mean - varrho(q, 1.0)).abs() / (var / DRAWS as f64).sqrt();
        worst = worst.max(z);
        pass &= z <= 3.0;
    }
    report.check(
        "moment oracle E|g|^q",
        pass,
        format!("largest deviation {worst:.2} standard errors over q in {{0.25, 0.5, 0.7, 1}} (need <= 3)"),
    );
}

fn exact_delta(report: &mut Report) {
    let n = 6;
    let id = DMatrix::identity(n, n);
    let mut worst = 0.0f64;
    for s in 1..=3 {
        let est = estimate_qrip(&id, &id, 1.0, s, &QripSearch::exhaustive(20, 0))
            .expect("exhaustive search");
        worst = worst.max((est.delta - ((s as f64).sqrt() - 1.0)).abs());
    }
    report.check(
        "exact delta for A = D = I, q = 1",
        worst <= 1e-6,
        format!("max |delta_s - (sqrt(s) - 1)| over s = 1..3 is {worst:.2e} (need <= 1e-6)"),
    );
}

fn condition_equivalence(report: &mut Report) {
    let mut stream = rng::stream(77);
    let mut agree = 0;
    let mut holds = 0;
    for _ in 0..100 {
        let q = stream.random_range(0.05..=1.0);
        let s = stream.random_range(1..20usize);
        let a = s + stream.random_range(1..60usize);
        let kappa = 1.0 + stream.random_range(0.0..0.5f64).powi(2);
        let delta_a = stream.random_range(0.0..0.6);
        let delta_sa = stream.random_range(0.0..0.9);
        let v =
            check_recovery_condition(delta_a, delta_sa, s, a, kappa, q).expect("valid grid point");
        holds += v.holds as usize;
        agree += ((v.theta < 1.0) == v.holds) as usize;
    }
    report.check(
        "theta < 1 iff recovery condition",
        agree == 100,
        format!("{agree}/100 grid points agree ({holds} satisfy the condition)"),
    );

    let mut agree = 0;
    let mut holds = 0;
    for _ in 0..100 {
        let q = stream.random_range(0.05..=1.0);
        let rho = stream.random_range(0.01..0.99);
        let u = stream.random_range(0.0..1.1);
        let delta = 1.0 + stream.random_range(0.0..3.0);
        let iota = stream.random_range(2..5usize);
        let direct = drip_mip_condition(u, delta, rho, q, iota);
        let via_theta = theta_tilde(u, delta, rho, q, iota).is_some_and(|t| t < 1.0);
        holds += direct as usize;
        agree += (direct == via_theta) as usize;
    }
    report.check(
        "theta~ < 1 iff RIP-coherence condition",
        agree == 100,
        format!("{agree}/100 grid points agree ({holds} satisfy the condition)"),
    );
}

fn bounds_trend(report: &mut Report) {
    let (s, d) = (10, 200);
    let qs = [1e-3, 0.1, 0.5, 1.0];
    let base = run_bounds_table(&qs, s, d, 1.0).expect("bounds");
    let doubled = run_bounds_table(&qs, s, 2 * d, 1.0).expect("bounds");
    let coeffs: Vec<f64> = base
        .iter()
        .zip(&doubled)
        .map(|(x, y)| (y.m_min - x.m_min) / 2f64.ln())
        .collect();
    let decreasing = coeffs.windows(2).all(|w| w[0] < w[1]);
    let vanishing = coeffs[0] <= 1e-2 * coeffs[3];
    report.check(
        "log(d/s) coefficient of m_min vanishes as q -> 0",
        decreasing && vanishing,
        format!(
            "coefficients at q = 1e-3, 0.1, 0.5, 1: {:.3e}, {:.3e}, {:.3e}, {:.3e}",
            coeffs[0], coeffs[1], coeffs[2], coeffs[3]
        ),
    );
}

fn min_m_reaching(cells: &[CellResult], q: f64, rate: f64) -> Option<usize> {
    cells
        .iter()
        .filter_map(|c| match c.params {
            CellParams::Recovery(r) if r.q == q && c.success_rate >= rate => Some(r.m),
            _ => None,
        })
        .min()
}

fn phase_spec(n: usize, d: usize, s: usize, ms: &[usize]) -> ExperimentSpec {
    let grid = [0.5, 1.0]
        .iter()
        .flat_map(|&q| {
            ms.iter()
                .map(move |&m| CellParams::Recovery(RecoveryCell { n, d, m, q, s }))
        })
        .collect();
    ExperimentSpec {
        kind: ExperimentKind::PhaseTransition,
        grid,
        trials_per_cell: 20,
        success_threshold: 1e-4,
        master_seed: 0,
        method: SolverMethod::Irls,
        sigma: 1.0,
        kappa: 1.0,
    }
}

fn phase_transition(report: &mut Report) {
    let ms = [8, 16, 24, 32, 40, 48, 56, 64];
    let cells = run_phase_transition(&phase_spec(64, 80, 8, &ms)).expect("sweep");
    let failed: usize = cells.iter().map(|c| c.errors).sum();
    let total: usize = cells.iter().map(|c| c.trials).sum();
    let (m05, m10) = (
        min_m_reaching(&cells, 0.5, 0.9),
        min_m_reaching(&cells, 1.0, 0.9),
    );
    report.check(
        "fewer measurements for smaller q (n=64, d=80, s=8)",
        matches!((m05, m10), (Some(x), Some(y)) if x <= y),
        format!(
            "minimal m at 90% success: q=0.5 -> {m05:?}, q=1 -> {m10:?}; {failed}/{total} trials could not generate a signal"
        ),
    );

    let ms = [4, 8, 12, 16, 20, 24, 32, 40, 48];
    let cells = run_phase_transition(&phase_spec(64, 80, 20, &ms)).expect("sweep");
    let (m05, m10) = (
        min_m_reaching(&cells, 0.5, 0.9),
        min_m_reaching(&cells, 1.0, 0.9),
    );
    println!("INFO  supplementary sweep at s=20 (n=64, d=80): minimal m at 90% success: q=0.5 -> {m05:?}, q=1 -> {m10:?}");
}

fn separation(report: &mut Report) {
    let cell = SeparationCell {
        n: 32,
        m: 24,
        q: 0.7,
        s1: 2,
        s2: 2,
    };
    let spec = ExperimentSpec {
        kind: ExperimentKind::SeparationSweep,
        grid: vec![CellParams::Separation(cell)],
        trials_per_cell: 20,
        success_threshold: 1e-3,
        master_seed: 0,
        method: SolverMethod::Irls,
        sigma: 1.0,
        kappa: 1.0,
    };
    let result = run_separation_sweep(&spec).expect("sweep").remove(0);
    let successes = (result.success_rate * 20.0).round() as usize;

    let frame = random_tight_frame(16, 20, 9).expect("frame");
    let signal = cosparse_signal(&frame, 10, 10).expect("signal").signal;
    let a = rng::gaussian_matrix(10, 16, 1.0, &mut rng::stream(11));
    let y = &a * &signal;
    let single = irls_analysis(
        &LqProblem::new(a.clone(), y.clone(), frame.clone(), 0.7).expect("problem"),
        &SolverConfig::default(),
    )
    .expect("solve");
    let split = solve_split_analysis(
        &SeparationProblem::new(vec![frame], a, y, 0.7).expect("problem"),
        &SolverConfig::default(),
    )
    .expect("solve");
    let identical = single.iterates == split.result.iterates;

    report.check(
        "spikes + Hadamard separation (n=32, s1=s2=2, m=24, q=0.7)",
        successes >= 18 && identical,
        format!(
            "{successes}/20 joint recoveries at rel. error <= 1e-3 (need 18), mu1 = {:.4}; single-dictionary trace identical: {identical} ({} iterates)",
            result.mu1.unwrap_or(f64::NAN),
            single.iterates.len()
        ),
    );
}

fn invariant_suites(report: &mut Report) {
    let mut bounds_ok = 0;
    let mut isometry_worst = 0.0f64;
    let mut surrogate_worst = f64::NEG_INFINITY;
    let mut feasibility_worst = 0.0f64;
    let mut solver_errors = 0;
    for seed in 0..50u64 {
        let mut stream = rng::substream(seed, &[0xACCE]);

        let raw = rng::gaussian_matrix(8, 13, 1.0, &mut stream);
        let (lower, upper) = frame_bounds(&raw).expect("frame");
        let within = (0..100).all(|_| {
            let f = rng::gaussian_vector(8, &mut stream);
            let energy = raw.tr_mul(&f).norm_squared();
            let scale = f.norm_squared();
            energy >= lower * scale * (1.0 - 1e-10) && energy <= upper * scale * (1.0 + 1e-10)
        });
        bounds_ok += within as usize;

        let dicts = vec![
            random_tight_frame(8, 8, seed).expect("frame"),
            random_tight_frame(8, 12, seed + 1000).expect("frame"),
            random_tight_frame(8, 15, seed + 2000).expect("frame"),
        ];
        let a = rng::gaussian_matrix(5, 8, 1.0, &mut stream);
        let stacked = build_stacked(&dicts, &a).expect("stack");
        for _ in 0..100 {
            let f = rng::gaussian_vector(24, &mut stream);
            let rel = (stacked.psi.tr_mul(&f).norm() - f.norm()).abs() / f.norm();
            isometry_worst = isometry_worst.max(rel);
        }

        let frame = random_tight_frame(20, 24, seed + 3000).expect("frame");
        let signal = cosparse_signal(&frame, 10, seed + 4000)
            .expect("signal")
            .signal;
        let a = rng::gaussian_matrix(12, 20, 1.0, &mut stream);
        let y = &a * &signal;
        let q = 0.3 + 0.7 * (seed as f64 / 49.0);
        let problem = LqProblem::new(a.clone(), y.clone(), frame.clone(), q).expect("problem");
        match irls_analysis(&problem, &SolverConfig::default()) {
            Ok(res) => {
                for (j, sigma) in res.smoothing.iter().enumerate() {
                    let before = smoothed_objective(&res.iterates[j], frame.matrix(), q, *sigma);
                    let after = smoothed_objective(&res.iterates[j + 1], frame.matrix(), q, *sigma);
                    surrogate_worst = surrogate_worst.max(after - before);
                }
                for f in &res.iterates {
                    feasibility_worst = feasibility_worst.max((&a * f - &y).norm() / y.norm());
                }
            }
            Err(_) => solver_errors += 1,
        }
    }
    report.check(
        "frame bounds bracket sampled energies",
        bounds_ok == 50,
        format!("{bounds_ok}/50 seeds, 100 vectors each"),
    );
    report.check(
        "stacked analysis operator is an isometry",
        isometry_worst <= 1e-10,
        format!("largest relative deviation {isometry_worst:.2e} over 50 seeds x 100 vectors (need <= 1e-10)"),
    );
    report.check(
        "IRLS surrogate non-increase",
        surrogate_worst <= 1e-10 && solver_errors == 0,
        format!("largest increase {surrogate_worst:.2e} over 50 seeds (need <= 1e-10), solver errors {solver_errors}"),
    );
    report.check(
        "IRLS iterates feasible",
        feasibility_worst <= 1e-8 && solver_errors == 0,
        format!("largest ||A f^j - y|| / ||y|| = {feasibility_worst:.2e} (need <= 1e-8)"),
    );
}

fn error_bound(report: &mut Report) {
    let (n, d, m, s, a) = (4, 5, 3, 1, 2);
    let mut evaluated = 0;
    let mut holds = 0;
    let mut within = 0;
    let mut worst_ratio = 0.0f64;
    for seed in 0..50u64 {
        for q in [0.2, 0.5, 1.0] {
            let frame = random_tight_frame(n, d, seed).expect("frame");
            let dual = canonical_dual(&frame).expect("dual");
            let sigma = MeasurementEnsemble::normalized_sigma(m, q);
            let a_mat =
                MeasurementEnsemble::gaussian(m, n, sigma, rng::derive_seed(seed, &[1])).matrix;
            let search = QripSearch::exhaustive(200, seed);
            let delta_a = estimate_qrip(&a_mat, dual.matrix(), q, a, &search)
                .expect("delta_a")
                .delta;
            let delta_sa = estimate_qrip(&a_mat, dual.matrix(), q, s + a, &search)
                .expect("delta_sa")
                .delta;
            let Ok(verdict) =
                check_recovery_condition(delta_a, delta_sa, s, a, frame.condition(), q)
            else {
                continue;
            };
            evaluated += 1;
            if !verdict.holds {
                continue;
            }
            holds += 1;
            let constants =
                error_constants(verdict.theta, verdict.rho, q, frame.lower_bound(), delta_a)
                    .expect("constants");
            let mut stream = rng::substream(seed, &[2]);
            let f: DVector<f64> = rng::gaussian_vector(n, &mut stream);
            let y = &a_mat * &f;
            let problem = LqProblem::new(
                a_mat.clone(),
                y,
                Frame::new(frame.matrix().clone()).unwrap(),
                q,
            )
            .unwrap();
            let f_hat = irls_analysis(&problem, &SolverConfig::default())
                .expect("solve")
                .f_hat;
            let tail = hard_threshold(&frame.analyze(&f), s, q).residual_q_norm;
            let bound = constants.c1 * tail / (s as f64).powf(1.0 / q - 0.5);
            let err = (&f_hat - &f).norm();
            worst_ratio = worst_ratio.max(err / bound);
            within += (err <= bound) as usize;
        }
    }
    report.check(
        "error bound on tiny instance (n=4, d=5, m=3, s=1, a=2)",
        within == holds,
        format!(
            "150 instances over q in {{0.2, 0.5, 1}}: condition evaluable on {evaluated}, holds on {holds}, bound met on {within}/{holds} (largest error/bound {worst_ratio:.3}); remaining {} vacuous",
            150 - holds
        ),
    );
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    figure1(&mut report);
    beta_constants(&mut report);
    moment_oracle(&mut report);
    exact_delta(&mut report);
    condition_equivalence(&mut report);
    bounds_trend(&mut report);
    phase_transition(&mut report);
    separation(&mut report);
    invariant_suites(&mut report);
    error_bound(&mut report);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
