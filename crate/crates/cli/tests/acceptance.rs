//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lure::analysis::{
    attractivity_check, attractivity_envelope, audit_trajectory, convergence_order, dependence_rate,
    lipschitz_dependence_check, AttractivityVariant, EnvelopeOptions,
};
use lure::integrate::{richardson_refine, simulate, SimulateOptions, Trajectory};
use lure::linalg::{range_projector, rank, spectral_norm, RANK_TOL};
use lure::step::{brute_force_step_oracle, solve_step, well_posed_step_limit};
use lure::{BoxSet, ConvexSet, Drift, LureSystem, Matrix, MovingSet, SolverOptions, Vector};
use lure_cli::{emit, read_scenario, Built};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> Built {
    read_scenario(&scenario(name)).unwrap().build().unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random system with a constant box set. `D = FFᵀ + S` with `rank F` in
/// `0..=m` and `S` skew. When `D+Dᵀ` is singular, `B = Cᵀ + GΠ` keeps the
/// kernel inclusion; otherwise `B` is unstructured.
fn random_box_system(rng: &mut ChaCha8Rng) -> (LureSystem, usize) {
    loop {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(m..=4);
        let c = uniform(rng, m, n, 1.0);
        if rank(&c, 1e-6) < m {
            continue;
        }
        let r = rng.random_range(0..=m);
        let f = uniform(rng, m, r, 1.0);
        let skew = uniform(rng, m, m, 0.5);
        let d = &f * f.transpose() + (&skew - skew.transpose()) * 0.5;
        let sym = &d + d.transpose();
        let b = if rank(&sym, RANK_TOL) == m {
            uniform(rng, n, m, 1.0)
        } else {
            c.transpose() + uniform(rng, n, m, 1.0) * range_projector(&sym, RANK_TOL)
        };
        let (lower, upper): (Vec<f64>, Vec<f64>) = (0..m)
            .map(|_| {
                let lo: f64 = rng.random_range(-2.0..1.0);
                let width: f64 = rng.random_range(0.0..3.0);
                match rng.random_range(0..4) {
                    0 => (f64::NEG_INFINITY, lo + width),
                    1 => (lo, f64::INFINITY),
                    _ => (lo, lo + width),
                }
            })
            .unzip();
        let set = BoxSet::from_bounds(&lower, &upper).unwrap();
        let a = uniform(rng, n, n, 1.0);
        match LureSystem::new(b, c, d, Drift::linear(a), MovingSet::constant(set.into(), n), None) {
            Ok(sys) => return (sys, m),
            Err(_) => continue,
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut rank_deficient = 0;
    for case in 0..1000 {
        let (sys, m) = random_box_system(&mut rng);
        if rank(&(sys.d() + sys.d().transpose()), RANK_TOL) < m {
            rank_deficient += 1;
        }
        let n = sys.n();
        // Well-posed range: the step matrix is monotone for h ≤ 1/|κ|.
        let h_max = 0.5f64.min(well_posed_step_limit(&sys));
        let h = rng.random_range(0.002 * h_max..h_max);
        let x_prev = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let y_in = sys.explicit_part(0.0, &x_prev, h);
        let oracle = brute_force_step_oracle(&sys, h, &x_prev, &y_in, h);
        let solved = solve_step(&sys, h, &x_prev, &y_in, h, &opts);
        match (solved, oracle) {
            (Ok(s), Ok(o)) => {
                let scale = 1.0 + o.mu.amax().max(o.x_next.amax());
                let err = (&s.x_next - &o.x_next).amax().max((&s.mu - &o.mu).amax()) / scale;
                worst = worst.max(err);
                if err > 1e-8 {
                    failures.push(format!("case {case}: mismatch {err:.2e}"));
                }
            }
            (s, o) => failures.push(format!("case {case}: solver {:?} oracle {:?}", s.err(), o.err())),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "1000 cases ({rank_deficient} with singular D+Dᵀ), worst scaled mismatch {worst:.2e}, {} failures{}, {:.2} s",
            failures.len(),
            failures.first().map_or(String::new(), |f| format!(" (first: {f})")),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    // State-dependent sweeping process in ℝ²: K(t,x) = [t−1, t+1] × [−1, 1] + Rx
    // with ‖R‖ = 0.3 < c₂/‖C‖ = 1.
    let r = Matrix::from_row_slice(2, 2, &[0.0, -0.3, 0.3, 0.0]);
    let shift = r.clone();
    let set = MovingSet::general(
        move |t, x: &Vector| Ok(ConvexSet::from(BoxSet::from_bounds(&[t - 1.0, -1.0], &[t + 1.0, 1.0])?).translate(&shift * x)),
        1.0,
        spectral_norm(&r),
    );
    let a = Matrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.5]);
    let sys = LureSystem::new(
        Matrix::identity(2, 2),
        Matrix::identity(2, 2),
        Matrix::zeros(2, 2),
        Drift::linear(a),
        set,
        None,
    )
    .unwrap();
    let x0 = Vector::from_vec(vec![0.0, 0.5]);
    let traj = simulate(&sys, &x0, 2.0, 200, &SimulateOptions::default()).unwrap();
    let h = traj.step_size();
    let mut worst: f64 = 0.0;
    for i in 0..traj.n_steps() {
        let y = sys.explicit_part(traj.times[i], &traj.states[i], h);
        let k = sys.set().evaluate(traj.times[i + 1], &traj.states[i]).unwrap();
        let p = k.project(&y).unwrap();
        worst = worst.max((&p - &traj.states[i + 1]).amax());
    }

    let half_line = load("sweeping.json");
    let sweep = simulate(&half_line.system, &half_line.x0, half_line.t_end, 200, &SimulateOptions::default()).unwrap();
    let hs = sweep.step_size();
    let closed = sweep
        .times
        .iter()
        .zip(&sweep.states)
        .map(|(t, x)| (x[0] - (t - 1.0).max(0.0)).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-10 && closed <= hs,
        format!("max |x_(i+1) − proj| = {worst:.2e} over 200 steps; half-line max error {closed:.2e} (h = {hs})"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let built = load("example_thm4.json");
    let sim = SimulateOptions::default();
    let env = EnvelopeOptions::default();
    let variant = AttractivityVariant::WithoutUniqueness;
    let coarse = attractivity_check(&built.system, &built.x0, built.t_end, 1000, variant, &sim, &env).unwrap();
    let fine_traj = simulate(&built.system, &built.x0, built.t_end, 16000, &sim).unwrap();
    let fine = attractivity_envelope(&built.system, &fine_traj, coarse.claimed_rate, &env);
    let coarse_traj = simulate(&built.system, &built.x0, built.t_end, 1000, &sim).unwrap();
    let h = coarse_traj.step_size();
    let drift = coarse_traj
        .states
        .iter()
        .zip(fine_traj.subsample(16))
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let slack = 5.0 * h * (1.0 + built.x0.norm());
    let elapsed = start.elapsed();
    outcome(
        coarse.pass
            && fine.pass
            && (coarse.claimed_rate - 0.99875).abs() < 1e-12
            && drift <= slack
            && elapsed < Duration::from_secs(5),
        format!(
            "δ = {}, n=1000 max violation {:.3e} (ratio {:.4}), n=16000 max violation {:.3e}, max distance to reference {drift:.2e} <= {slack:.2e}, {:.2} s",
            coarse.claimed_rate,
            coarse.max_violation,
            coarse.tightest_ratio,
            fine.max_violation,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let built = load("example_thm2.json");
    let sys = &built.system;
    let x0b = Vector::from_vec(vec![3.0, 1.0]);
    let distance = (&built.x0 - &x0b).norm();
    let gap = spectral_norm(&(sys.b() - sys.c().transpose()));
    let expected = 1.0 + (0.008 + gap).powi(2) / (4.0 * 2.0);
    let gamma = dependence_rate(sys).unwrap();
    let sim = SimulateOptions::default();
    let env = EnvelopeOptions::default();
    let coarse = lipschitz_dependence_check(sys, &built.x0, &x0b, built.t_end, 1000, &sim, &env).unwrap();
    let fine = lipschitz_dependence_check(sys, &built.x0, &x0b, built.t_end, 16000, &sim, &env).unwrap();
    outcome(
        coarse.pass && fine.pass && distance == 1.0 && (gamma - expected).abs() < 1e-12,
        format!(
            "γ = {gamma:.6} (expected {expected:.6}), n=1000 max violation {:.3e}, n=16000 max violation {:.3e}",
            coarse.max_violation, fine.max_violation
        ),
    )
}

fn criterion_5() -> Outcome {
    let sim = SimulateOptions::default();
    let order_of = |name: &str| {
        let b = load(name);
        convergence_order(&richardson_refine(&b.system, &b.x0, b.t_end, 50, 5, &sim).unwrap()).unwrap()
    };
    let sweeping = order_of("sweeping.json");
    let drifted = order_of("sweeping_drift.json");
    let drift_only = order_of("example_trivial.json");
    let sweeping_ok = sweeping.exact || sweeping.order >= 0.8;
    outcome(
        sweeping_ok && !drifted.exact && drifted.order >= 0.8 && (drift_only.order - 1.0).abs() <= 0.1,
        format!(
            "sweeping: {}; sweeping with drift: order {:.3}; drift-only: order {:.3}",
            if sweeping.exact { "exact on the grid".to_string() } else { format!("order {:.3}", sweeping.order) },
            drifted.order,
            drift_only.order
        ),
    )
}

fn lure(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lure")).args(args).output().unwrap()
}

fn criterion_6() -> Outcome {
    let sec4 = scenario("example_sec4.json");
    let out = lure(&["check", sec4.to_str().unwrap()]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let kernel = report["passivity"]["kernel_inclusion"].clone();
    let mut strict = read_scenario(&sec4).unwrap();
    strict.waive.clear();
    let strict_err = strict.build().err().map(|e| e.to_string()).unwrap_or_default();
    let part_a = out.status.code() == Some(2)
        && kernel == Value::Bool(false)
        && strict_err.contains("Assumption 2: kernel inclusion");

    let dir = tempfile::tempdir().unwrap();
    let rewritten = dir.path().join("perturbed.json");
    let csv = dir.path().join("perturbed.csv");
    let perturb = lure(&[
        "perturb",
        scenario("example_timevarying.json").to_str().unwrap(),
        "--cbar",
        scenario("cbar_sec4.json").to_str().unwrap(),
        "--out",
        rewritten.to_str().unwrap(),
    ]);
    let check = lure(&["check", rewritten.to_str().unwrap()]);
    let run = lure(&["simulate", rewritten.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    let rows = std::fs::read(&csv)
        .ok()
        .and_then(|b| Trajectory::read_csv(b.as_slice()).ok())
        .map_or(0, |t| t.len());
    let expected_rows = read_scenario(&rewritten).map_or(0, |s| s.n_steps + 1);
    let part_b = perturb.status.code() == Some(0)
        && check.status.code() == Some(0)
        && run.status.code() == Some(0)
        && rows == expected_rows;
    outcome(
        part_a && part_b,
        format!(
            "(a) check exit {:?}, kernel_inclusion = {kernel}, unwaived load: \"{strict_err}\"; (b) perturb exit {:?}, check exit {:?}, simulate exit {:?}, {rows} rows",
            out.status.code(),
            perturb.status.code(),
            check.status.code(),
            run.status.code()
        ),
    )
}

fn criterion_7() -> Outcome {
    let sim = SimulateOptions::default();
    let mut corpus: Vec<(String, Built)> = Vec::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("example_") || p.to_str().unwrap().contains("sweeping"))
        .collect();
    files.sort();
    for f in files {
        let s = read_scenario(&f).unwrap();
        corpus.push((s.name.clone(), s.build().unwrap()));
    }
    // The perturbed time-varying scenario, rewritten in-process.
    let dir = tempfile::tempdir().unwrap();
    let rewritten = dir.path().join("perturbed.json");
    lure(&[
        "perturb",
        scenario("example_timevarying.json").to_str().unwrap(),
        "--cbar",
        scenario("cbar_sec4.json").to_str().unwrap(),
        "--out",
        rewritten.to_str().unwrap(),
    ]);
    let s = read_scenario(&rewritten).unwrap();
    std::fs::write(&rewritten, emit(&s)).unwrap();
    corpus.push((s.name.clone(), s.build().unwrap()));

    let mut lines = Vec::new();
    let mut clean = true;
    let mut probes = 0;
    for (name, b) in &corpus {
        let traj = simulate(&b.system, &b.x0, b.t_end, b.n_steps, &sim).unwrap();
        let audit = audit_trajectory(&b.system, &traj, 2, 7, &sim).unwrap();
        probes += audit.resolvent_probes;
        if !audit.clean() {
            clean = false;
            lines.push(format!(
                "{name}: {} resolvent, {} hypomonotone violations",
                audit.resolvent_violations, audit.hypomonotone_violations
            ));
        }
    }
    outcome(
        clean,
        format!(
            "{} trajectories, {probes} resolvent probes, {}",
            corpus.len(),
            if lines.is_empty() { "zero violations".to_string() } else { lines.join("; ") }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("step solver matches exhaustive oracle", criterion_1),
        ("sweeping-process reduction", criterion_2),
        ("exponential attractivity envelope", criterion_3),
        ("Lipschitz dependence envelope", criterion_4),
        ("convergence order", criterion_5),
        ("certification and perturbed rewrite", criterion_6),
        ("resolvent and hypomonotonicity diagnostics", criterion_7),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {}",
            k + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
