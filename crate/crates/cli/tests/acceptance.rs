//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

#![allow(non_snake_case)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use common::{block_diag, golden_section_max, posterior, random_instance, random_shape, spd, Instance};
use i2c_cli::experiments::{eval, lqr_equiv, trajopt, TrajoptRun};
use i2c_cli::{resolve, ExperimentKind, TrajoptOutcome};
use i2c_core::controller::{extract_controller, riccati_backward, scale_matrices};
use i2c_core::engine::{
    backward_pass, em_iterate, forward_pass, m_step_alpha, EmConfig, LinearProblem, MessageState, ObservationTerm, Priors, TerminalMode,
    TraceRecord,
};
use i2c_core::linalg::{Mat, Vector};
use i2c_core::lqr::{solve_lqr, LqrCost};
use i2c_core::models::linear_c1;
use i2c_core::sim::EvalReport;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn timed(id: usize, name: &'static str, limit: Duration, check: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (ok, detail) = check();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let detail =
        format!("{detail}; {:.2} s (limit {} s){}", elapsed.as_secs_f64(), limit.as_secs(), if in_time { "" } else { ", too slow" });
    Verdict { id, name, passed: ok && in_time, detail }
}

/// Largest elementwise difference relative to the largest reference entry.
fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

fn rel_vec(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

fn abs_rel(a: &Mat, b: &Mat) -> f64 {
    common::rel_err(a, b, 1.0)
}

fn smoothed(problem: &LinearProblem, priors: &Priors, alpha: f64, mode: TerminalMode) -> Vec<MessageState> {
    let mut msgs = forward_pass(problem, priors, alpha, None).expect("forward pass");
    backward_pass(&mut msgs, mode).expect("backward pass");
    msgs
}

fn instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (s, dx, du, horizon) = random_shape(&mut rng);
            random_instance(s, dx, du, horizon)
        })
        .collect()
}

/// The linear test system in the LQR limit.
fn lqr_limit() -> (LinearProblem, LqrCost, Priors, f64) {
    let env = linear_c1();
    let cost = LqrCost {
        Q: Mat::identity(2, 2) * 10.0,
        R: Mat::identity(1, 1),
        Qf: Mat::identity(2, 2) * 10.0,
        x_goal: Vector::from_vec(vec![10.0, 10.0]),
        u_goal: Vector::zeros(1),
    };
    let obs = ObservationTerm {
        E: Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        F: Mat::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
        e: Vector::zeros(3),
        target: Vector::from_vec(vec![10.0, 10.0, 0.0]),
        weight: block_diag(&cost.Q, &cost.R),
    };
    let problem = LinearProblem::new(vec![env.model], vec![obs; 61]).expect("valid problem");
    let priors = Priors::isotropic(Vector::zeros(2), 1e-8, 1, 100.0, 60).expect("valid priors");
    (problem, cost, priors, 1e5)
}

fn criterion_1() -> (bool, String) {
    let config = resolve(ExperimentKind::LqrEquiv, None, None, &[]).expect("default config");
    let outcome = lqr_equiv(&config).expect("lqr-equiv runs");
    let four_digits = |v: f64, r: f64| if r == 0.0 { v.abs() < 5e-5 } else { (v - r).abs() <= 5e-5 * r.abs() };
    let (s0, s59) = (&outcome.i2c.steps[0], &outcome.i2c.steps[59]);
    let spots = four_digits(s0.K[(0, 0)], -5.87778697521724)
        && four_digits(s0.K[(0, 1)], -8.22536251310138)
        && four_digits(s0.k[0], 141.031494883186)
        && four_digits(s59.K[(0, 0)], -1.0)
        && four_digits(s59.K[(0, 1)], 0.0)
        && four_digits(s59.k[0], 10.0);
    let err = outcome.diff.max_rel_err;
    (err < 1e-3 && spots, format!("max relative gain error {err:.2e}, spot values {}", if spots { "match" } else { "differ" }))
}

fn criterion_2(cases: &[Instance]) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for inst in cases {
        let msgs = smoothed(&inst.problem(), &inst.priors, inst.alpha, TerminalMode::QfEqualsQ);
        let ctrl = extract_controller(&msgs).expect("controller");
        let joint = posterior(inst);
        for (t, m) in msgs.iter().enumerate() {
            let (mx, sx) = joint.x_marginal(t);
            let (mu, su) = joint.u_marginal(t);
            let (x, u) = (m.x_marginal().unwrap(), m.u_marginal().unwrap());
            let (K, k, S) = joint.conditional(t);
            let step = &ctrl.steps[t];
            worst = [
                common::rel_err_vec(&x.mean, &mx, 1.0),
                abs_rel(&x.cov, &sx),
                common::rel_err_vec(&u.mean, &mu, 1.0),
                abs_rel(&u.cov, &su),
                abs_rel(&step.K, &K),
                common::rel_err_vec(&step.k, &k, 1.0),
                abs_rel(&step.cov, &S),
            ]
            .into_iter()
            .fold(worst, f64::max);
        }
    }
    (worst < 1e-6, format!("{} instances, worst error {worst:.2e}", cases.len()))
}

fn criterion_3(cases: &[Instance]) -> (bool, String) {
    let mut worst_riccati: f64 = 0.0;
    for inst in cases {
        for mode in [TerminalMode::QfEqualsQ, TerminalMode::KappaScale { kappa: 3.0 }] {
            let msgs = smoothed(&inst.problem(), &inst.priors, inst.alpha, mode);
            let closed = riccati_backward(&msgs, mode).expect("riccati");
            for (m, r) in msgs.iter().zip(&closed) {
                let b = m.backward().unwrap();
                worst_riccati = worst_riccati.max(abs_rel(&r.precision, &b.precision)).max(common::rel_err_vec(&r.info, &b.info, 1.0));
            }
        }
    }
    let (problem, cost, priors, alpha) = lqr_limit();
    let msgs = smoothed(&problem, &priors, alpha, TerminalMode::QfEqualsQ);
    let (_, value) = solve_lqr(&problem.dynamics, &cost, 60).expect("lqr");
    let mut worst_limit: f64 = 0.0;
    for (t, m) in msgs.iter().enumerate() {
        let b = m.backward().unwrap();
        worst_limit = worst_limit.max(rel(&b.precision, &(&value.P[t] * alpha))).max(rel_vec(&(-&b.info), &(&value.p[t] * alpha)));
    }
    (worst_riccati < 1e-9 && worst_limit < 1e-6, format!("Riccati vs messages {worst_riccati:.2e}, LQR limit {worst_limit:.2e}"))
}

fn criterion_4() -> (bool, String) {
    let (problem, cost, priors, alpha) = lqr_limit();
    let msgs = smoothed(&problem, &priors, alpha, TerminalMode::QfEqualsQ);
    let ctrl = extract_controller(&msgs).expect("controller");
    let (_, value) = solve_lqr(&problem.dynamics, &cost, 60).expect("lqr");
    let B = &problem.dynamics[0].B;
    let worst = (0..60)
        .map(|t| {
            let reference = (&cost.R + B.transpose() * &value.P[t + 1] * B).try_inverse().expect("invertible");
            rel(&(&ctrl.steps[t].cov * alpha), &reference)
        })
        .fold(0.0, f64::max);
    (worst < 1e-4, format!("worst relative error {worst:.2e}"))
}

fn cap_violations(trace: &[TraceRecord], final_alpha: f64, delta: f64) -> usize {
    let mut alphas: Vec<f64> = trace.iter().map(|r| r.alpha).collect();
    alphas.push(final_alpha);
    alphas.windows(2).filter(|w| w[1] > w[0] / delta * (1.0 + 1e-15)).count()
}

fn criterion_5(runs: &[(&'static str, &TrajoptOutcome, f64)]) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for inst in instances(20, 77) {
        let msgs = smoothed(&inst.problem(), &inst.priors, inst.alpha, TerminalMode::QfEqualsQ);
        let update = m_step_alpha(&msgs, inst.alpha, 1e-12).expect("m-step");
        let joint = posterior(&inst);
        let (dx, du) = inst.dims();
        let mut expected = 0.0;
        for (t, o) in inst.observations.iter().enumerate() {
            let mut H = Mat::zeros(o.E.nrows(), joint.mean.len());
            H.view_mut((0, joint.x(t)), (o.E.nrows(), dx)).copy_from(&o.E);
            H.view_mut((0, joint.u(t)), (o.E.nrows(), du)).copy_from(&o.F);
            let r = &o.target - &o.e - &H * &joint.mean;
            expected += (r.transpose() * &o.weight * &r)[(0, 0)] + (&o.weight * &H * &joint.cov * H.transpose()).trace();
        }
        let dz = (dx + du) as f64;
        let horizon = inst.horizon() as f64;
        let best = golden_section_max(|a: f64| 0.5 * horizon * dz * a.ln() - 0.5 * a * expected, 1e-8, 1e6, 1e-12);
        worst = worst.max((update.alpha_star - best).abs() / best);
    }

    let mut violations = 0;
    let mut checked = 0;
    for inst in instances(10, 8) {
        let cfg = EmConfig { alpha_init: inst.alpha, delta_alpha_inv: 0.9, max_iters: 15, convergence_tol: 0.0, ..Default::default() };
        let result = em_iterate(&inst.problem(), &inst.priors, &cfg).expect("em");
        violations += cap_violations(&result.trace, result.alpha, 0.9);
        checked += 1;
    }
    for (_, outcome, delta) in runs {
        violations += cap_violations(&outcome.result.trace, outcome.result.alpha, *delta);
        checked += 1;
    }
    (worst < 1e-6 && violations == 0, format!("closed form vs numeric {worst:.2e}, {violations} cap violations over {checked} runs"))
}

fn criterion_6() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let n = 1 + (seed as usize % 3);
        let lam = spd(&mut ChaCha8Rng::seed_from_u64(seed), n, 0.7, 0.3);
        let id = Mat::identity(n, n);
        let (big, small) = (&id * 1e8, &id * 1e-8);
        let zero = Mat::zeros(n, n);

        let s = scale_matrices(&big, &big, &lam).expect("scale matrices");
        let checks = [(&s.gamma, &zero), (&s.noisy_precision, &zero)];
        worst = checks.iter().map(|(a, b)| (*a - *b).amax()).fold(worst, f64::max);
        worst = worst.max((&s.psi - &id * 2.0).amax()).max((&s.gamma * &lam * &s.psi).amax());

        let s = scale_matrices(&big, &small, &lam).expect("scale matrices");
        worst = worst.max(s.gamma.amax()).max((&s.psi * &s.gamma - &id).amax()).max((&s.noisy_precision - &lam).amax());

        let s = scale_matrices(&small, &big, &lam).expect("scale matrices");
        worst = worst.max((&s.gamma - &id).amax()).max((&s.psi - &id).amax()).max(s.noisy_precision.amax());

        let s = scale_matrices(&small, &small, &lam).expect("scale matrices");
        worst = worst.max((&s.gamma - &id).amax()).max((&s.psi - &id).amax()).max((&s.noisy_precision - &lam).amax());
    }
    (worst < 1e-4, format!("four scenarios on 20 precisions, worst elementwise deviation {worst:.2e}"))
}

fn optimize(env: &str) -> (Box<TrajoptOutcome>, EvalReport, f64, Duration) {
    let start = Instant::now();
    let config = resolve(ExperimentKind::Trajopt, Some(env), None, &[]).expect("default config");
    let outcome = match trajopt(&config).expect("trajopt config") {
        TrajoptRun::Finished(o) => o,
        TrajoptRun::Failed { error, .. } => panic!("{env}: EM failed: {error}"),
    };
    let predicted = outcome.status.predicted_cost.expect("at least one iteration");
    let eval_config = resolve(ExperimentKind::Eval, Some(env), None, &[]).expect("default config");
    let report = eval(&eval_config, &outcome.result.controller, Some(predicted)).expect("evaluation");
    (outcome, report, config.em.delta_alpha_inv, start.elapsed())
}

fn criterion_7(outcome: &TrajoptOutcome, report: &EvalReport, elapsed: Duration) -> Verdict {
    let trace = &outcome.result.trace;
    let first = trace[0].predicted_cost;
    let best = trace.iter().take(150).map(|r| r.predicted_cost).fold(f64::INFINITY, f64::min);
    let predicted = report.predicted_cost.unwrap();
    let gap = (report.mean - predicted).abs() / predicted;
    let ok = first == 40400.0 && best < 1.6e4 && gap < 0.15;
    let in_time = elapsed <= Duration::from_secs(300);
    Verdict {
        id: 7,
        name: "pendulum swing-up",
        passed: ok && in_time,
        detail: format!(
            "first {first}, best {best:.1} in {} iterations, evaluated {:.1} ± {:.1} vs predicted {predicted:.1} ({:.1}%); {:.2} s (limit 300 s)",
            trace.len(),
            report.mean,
            report.std,
            100.0 * gap,
            elapsed.as_secs_f64()
        ),
    }
}

/// Whether the 20-iteration moving average falls at each of the last 20 iterations.
fn moving_average_falls(trace: &[TraceRecord]) -> bool {
    let c: Vec<f64> = trace.iter().map(|r| r.predicted_cost).collect();
    let n = c.len();
    if n < 40 {
        return false;
    }
    let ma: Vec<f64> = (n - 21..n).map(|i| c[i + 1 - 20..=i].iter().sum::<f64>() / 20.0).collect();
    ma.windows(2).all(|w| w[1] < w[0])
}

fn criterion_8(runs: &[(&str, &TrajoptOutcome, &EvalReport, Duration)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for (env, outcome, report, elapsed) in runs {
        let predicted = report.predicted_cost.unwrap();
        let ratio = report.mean / predicted;
        let falls = moving_average_falls(&outcome.result.trace);
        ok &= falls && (0.8..=1.25).contains(&ratio);
        total += *elapsed;
        parts.push(format!(
            "{env}: {} iterations, predicted {predicted:.1}, moving average {}, ratio {ratio:.3}",
            outcome.result.trace.len(),
            if falls { "falling" } else { "not falling" }
        ));
    }
    let in_time = total <= Duration::from_secs(1200);
    Verdict {
        id: 8,
        name: "cartpole and double cartpole",
        passed: ok && in_time,
        detail: format!("{}; {:.2} s (limit 1200 s)", parts.join("; "), total.as_secs_f64()),
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .expect("output directory")
        .map(|e| e.expect("entry"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("readable")))
        .collect();
    files.sort();
    files
}

fn criterion_9() -> (bool, String) {
    let root = tempfile::TempDir::new().expect("temp dir");
    let run = |args: &[&str], out: &Path| {
        let status =
            Command::new(env!("CARGO_BIN_EXE_i2c")).args(args).arg("--out").arg(out).stdout(Stdio::null()).status().expect("binary runs");
        status.success()
    };
    let plan = root.path().join("plan-a");
    let controller = plan.join("controller.json");
    let controller = controller.to_str().unwrap();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("lqr-equiv", vec!["lqr-equiv", "--seed", "3"]),
        ("plan", vec!["trajopt", "pendulum", "--seed", "3"]),
        ("cartpole", vec!["trajopt", "cartpole", "--seed", "3", "--max-iters", "25"]),
        ("eval", vec!["eval", "pendulum", controller, "--seed", "3", "--trials", "50"]),
    ];
    let mut identical = 0;
    for (name, args) in &cases {
        let (a, b) = (root.path().join(format!("{name}-a")), root.path().join(format!("{name}-b")));
        if !run(args, &a) || !run(args, &b) {
            return (false, format!("{name} run failed"));
        }
        if snapshot(&a) != snapshot(&b) {
            return (false, format!("{name} artifacts differ between runs"));
        }
        identical += snapshot(&a).len();
    }
    let echo = plan.join("config.toml");
    let replay = root.path().join("replay");
    if !run(&["trajopt", "pendulum", "--config", echo.to_str().unwrap()], &replay) || snapshot(&plan) != snapshot(&replay) {
        return (false, "rerun from the config echo differs".into());
    }
    (true, format!("{identical} artifacts byte-identical over repeated runs; config echo reproduces the plan"))
}

fn main() {
    let pendulum = thread::spawn(|| optimize("pendulum"));
    let cartpole = thread::spawn(|| optimize("cartpole"));
    let double = thread::spawn(|| optimize("double_cartpole"));

    let cases = instances(50, 2024);
    let mut verdicts = vec![
        timed(1, "LQR equivalence", Duration::from_secs(1), criterion_1),
        timed(2, "exact-inference oracle", Duration::from_secs(10), || criterion_2(&cases)),
        timed(3, "Riccati self-consistency", Duration::from_secs(10), || criterion_3(&cases)),
        timed(4, "maximum-entropy covariance", Duration::from_secs(1), criterion_4),
        timed(6, "Γ/Ψ limits", Duration::from_secs(1), criterion_6),
        timed(9, "determinism", Duration::from_secs(300), criterion_9),
    ];

    let (p_out, p_rep, p_delta, p_time) = pendulum.join().expect("pendulum run");
    let (c_out, c_rep, c_delta, c_time) = cartpole.join().expect("cartpole run");
    let (d_out, d_rep, d_delta, d_time) = double.join().expect("double cartpole run");
    verdicts.push(criterion_7(&p_out, &p_rep, p_time));
    verdicts.push(criterion_8(&[("cartpole", &c_out, &c_rep, c_time), ("double_cartpole", &d_out, &d_rep, d_time)]));
    let runs = [("pendulum", &*p_out, p_delta), ("cartpole", &*c_out, c_delta), ("double_cartpole", &*d_out, d_delta)];
    verdicts.push(timed(5, "M-step correctness", Duration::from_secs(10), || criterion_5(&runs)));
    verdicts.sort_by_key(|v| v.id);

    println!();
    for v in &verdicts {
        println!("criterion {} {}: {} ({})", v.id, if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("\n{} of {} acceptance criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
