//! Subcommand implementations. Each returns the process exit code on
//! completion and writes its report to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use lure::analysis::{
    attractivity_check, convergence_order, lipschitz_dependence_check, perturb_transform, AttractivityVariant,
    EnvelopeOptions, RateReport,
};
use lure::integrate::{richardson_refine, simulate, SimulateOptions, SimulationError, Trajectory};
use lure::moving::{admissibility, verify_lipschitz, Admissibility};
use lure::{Matrix, Vector};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::plot::trajectory_svg;
use crate::scenario::{emit, load_scenario, matrix_from_rows, matrix_to_rows, read_scenario, Built, SetMode};

#[derive(Debug, Parser)]
#[command(name = "lure", version, about = "Simulate and certify set-valued Lur'e systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certification report: passivity, κ, c₁, c₂, Lipschitz data, admissibility of x0.
    Check { scenario: PathBuf },
    /// Run the implicit scheme and write the trajectory as CSV.
    Simulate {
        scenario: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG chart of |x| and the multipliers.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Start even when x0 fails the admissibility test.
        #[arg(long)]
        force: bool,
    },
    /// Refinement study at n0, 2n0, …; prints the fitted order.
    Converge {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        /// Coarsest step count; the scenario's n_steps when absent.
        #[arg(long)]
        n0: Option<usize>,
    },
    /// Exponential attractivity envelope.
    Attract {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Lipschitz dependence on the initial state.
    Lipdep {
        scenario: PathBuf,
        /// Second initial state, e.g. `3,1` or `[3,1]`.
        #[arg(long, allow_hyphen_values = true)]
        x0b: String,
    },
    /// Rewrite measured output data as a state-dependent set.
    Perturb {
        scenario: PathBuf,
        /// JSON matrix file with the measured output matrix C̄.
        #[arg(long)]
        cbar: PathBuf,
        /// JSON matrix file with the measured drift matrix Ā.
        #[arg(long)]
        abar: Option<PathBuf>,
        /// Destination of the rewritten scenario; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Decomposed set with 0 ∈ K(t,0).
    Thm3,
    /// 0 ∈ K(t,x) everywhere, no uniqueness needed.
    Thm4,
}

impl From<Variant> for AttractivityVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Thm3 => AttractivityVariant::WithUniqueness,
            Variant::Thm4 => AttractivityVariant::WithoutUniqueness,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    match cli.command {
        Command::Check { scenario } => check(&scenario, out),
        Command::Simulate {
            scenario,
            out: csv,
            plot,
            force,
        } => simulate_cmd(&scenario, csv.as_deref(), plot.as_deref(), force, out),
        Command::Converge { scenario, levels, n0 } => converge(&scenario, levels, n0, out),
        Command::Attract { scenario, variant } => attract(&scenario, variant, out),
        Command::Lipdep { scenario, x0b } => lipdep(&scenario, &x0b, out),
        Command::Perturb {
            scenario,
            cbar,
            abar,
            out: dest,
        } => perturb(&scenario, &cbar, abar.as_deref(), dest.as_deref(), out, err),
    }
}

fn print_json(out: &mut dyn Write, value: &Value) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// JSON has no infinities; non-finite values become strings.
fn real(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn rate_report_json(r: &RateReport) -> Value {
    json!({
        "claimed_rate": real(r.claimed_rate),
        "max_violation": real(r.max_violation),
        "tightest_ratio": real(r.tightest_ratio),
        "pass": r.pass,
        "envelope": r.envelope.iter().map(|(t, l, rhs)| json!([real(*t), real(*l), real(*rhs)])).collect::<Vec<_>>(),
    })
}

/// Sample pairs for the Lipschitz check: consecutive times at fixed states,
/// and state pairs at fixed times. Times are table knots plus a uniform grid.
fn lipschitz_samples(built: &Built) -> Vec<(f64, f64, Vector, Vector)> {
    let n = built.system.n();
    let mut times: Vec<f64> = (0..=16).map(|k| built.t_end * k as f64 / 16.0).collect();
    times.extend(built.knots.iter().copied().filter(|t| *t >= 0.0 && *t <= built.t_end));
    times.sort_by(f64::total_cmp);
    times.dedup();
    let r = 1.0 + built.x0.norm();
    let mut states = vec![built.x0.clone(), Vector::zeros(n)];
    for i in 0..n {
        let mut e = Vector::zeros(n);
        e[i] = r;
        states.push(e.clone());
        states.push(-e);
    }
    let mut samples = Vec::new();
    for w in times.windows(2) {
        for x in &states {
            samples.push((w[0], w[1], x.clone(), x.clone()));
        }
    }
    for &t in &times {
        for (i, x) in states.iter().enumerate() {
            for y in &states[i + 1..] {
                samples.push((t, t, x.clone(), y.clone()));
            }
        }
    }
    samples
}

fn check(path: &Path, out: &mut dyn Write) -> Result<u8, CliError> {
    let (scenario, built) = load_scenario(path)?;
    let sys = &built.system;
    let cert = sys.cert();
    let lip = verify_lipschitz(sys.set(), sys.c(), cert.c2.unwrap_or(0.0), &lipschitz_samples(&built))?;
    let (lk1, lk2) = sys.set().lipschitz_constants();
    let opts = SimulateOptions::from_env();
    let (adm, adm_detail) = match admissibility(sys, &built.x0, &opts.solver) {
        Ok(Admissibility::Admissible(sol)) => ("admissible", json!({ "residual": sol.residual })),
        Ok(Admissibility::NotAdmissible) => ("not_admissible", Value::Null),
        Err(e @ lure::Error::SolverDiverged { .. }) => ("undetermined", json!({ "error": e.to_string() })),
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "name": scenario.name,
        "n": sys.n(),
        "m": sys.m(),
        "mode": scenario.set.mode.to_string(),
        "passivity": {
            "kernel_inclusion": cert.kernel_inclusion,
            "waived": scenario.waive,
            "kappa": cert.kappa,
            "c1": cert.c1,
            "c2": cert.c2,
            "alpha": cert.alpha,
            "passivity_gap": sys.passivity_gap(),
        },
        "lipschitz": {
            "LK1": lk1,
            "LK2": lk2,
            "state_bound": real(lip.state_bound),
            "bound_ok": lip.bound_ok,
            "samples": lip.samples,
            "max_observed_ratio": real(lip.max_observed_ratio),
            "violations": lip.violations.len(),
        },
        "sigma": sys.sigma(),
        "admissibility": adm,
        "admissibility_detail": adm_detail,
        "assumptions": scenario.assumptions,
    });
    print_json(out, &report)?;
    Ok(match adm {
        "undetermined" => 3,
        "admissible" if cert.kernel_inclusion && lip.ok() => 0,
        _ => 2,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_trajectory(traj: &Trajectory, csv: Option<&Path>, plot: Option<&Path>, title: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match csv {
        Some(p) => write_file(p, traj.to_csv_string().as_bytes())?,
        None => traj.write_csv(&mut *out)?,
    }
    if let Some(p) = plot {
        write_file(p, trajectory_svg(traj, title).as_bytes())?;
    }
    Ok(())
}

fn simulate_cmd(path: &Path, csv: Option<&Path>, plot: Option<&Path>, force: bool, out: &mut dyn Write) -> Result<u8, CliError> {
    let (scenario, built) = load_scenario(path)?;
    let opts = SimulateOptions {
        force,
        ..SimulateOptions::from_env()
    };
    match simulate(&built.system, &built.x0, built.t_end, built.n_steps, &opts) {
        Ok(traj) => {
            write_trajectory(&traj, csv, plot, &scenario.name, out)?;
            Ok(0)
        }
        Err(SimulationError::Step { index, source, partial }) => {
            write_trajectory(&partial, csv, plot, &scenario.name, out)?;
            Err(SimulationError::Step { index, source, partial }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn converge(path: &Path, levels: usize, n0: Option<usize>, out: &mut dyn Write) -> Result<u8, CliError> {
    let (_, built) = load_scenario(path)?;
    if levels < 2 {
        return Err(CliError::Usage("--levels must be at least 2".into()));
    }
    let n0 = n0.unwrap_or(built.n_steps);
    let trajs = richardson_refine(&built.system, &built.x0, built.t_end, n0, levels, &SimulateOptions::from_env())?;
    let est = convergence_order(&trajs)?;
    print_json(
        out,
        &json!({
            "n0": n0,
            "levels": levels,
            "order": real(est.order),
            "exact": est.exact,
            "differences": est.differences,
        }),
    )?;
    Ok(0)
}

fn attract(path: &Path, variant: Variant, out: &mut dyn Write) -> Result<u8, CliError> {
    let (_, built) = load_scenario(path)?;
    let report = attractivity_check(
        &built.system,
        &built.x0,
        built.t_end,
        built.n_steps,
        variant.into(),
        &SimulateOptions::from_env(),
        &EnvelopeOptions::default(),
    )?;
    print_json(out, &rate_report_json(&report))?;
    Ok(if report.pass { 0 } else { 2 })
}

pub fn parse_vector(text: &str, n: usize) -> Result<Vector, CliError> {
    let trimmed = text.trim().trim_start_matches('[').trim_end_matches(']');
    let values: Vec<f64> = trimmed
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("cannot parse vector \"{text}\": {e}")))?;
    if values.len() != n || values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("expected {n} finite comma-separated numbers, got \"{text}\"")));
    }
    Ok(Vector::from_vec(values))
}

fn lipdep(path: &Path, x0b: &str, out: &mut dyn Write) -> Result<u8, CliError> {
    let (_, built) = load_scenario(path)?;
    let x0b = parse_vector(x0b, built.system.n())?;
    let report = lipschitz_dependence_check(
        &built.system,
        &built.x0,
        &x0b,
        built.t_end,
        built.n_steps,
        &SimulateOptions::from_env(),
        &EnvelopeOptions::default(),
    )?;
    print_json(out, &rate_report_json(&report))?;
    Ok(if report.pass { 0 } else { 2 })
}

fn read_matrix(path: &Path, shape: (usize, usize), what: &str) -> Result<Matrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    matrix_from_rows(&rows, shape, what)
}

fn perturb(
    path: &Path,
    cbar: &Path,
    abar: Option<&Path>,
    dest: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, CliError> {
    let reference = read_scenario(path)?;
    if reference.set.h.is_some() || reference.set.g.is_some() {
        return Err(CliError::Validation(
            "perturb needs a time-only reference set (no H, no g)".into(),
        ));
    }
    let built = reference.build()?;
    let (n, m) = (reference.n, reference.m);
    let c_bar = read_matrix(cbar, (m, n), "C̄")?;
    let a_bar = match abar {
        Some(p) => read_matrix(p, (n, n), "Ā")?,
        None => matrix_from_rows(&reference.a, (n, n), "A")?,
    };
    let sys = &built.system;
    let transformed = perturb_transform(&a_bar, sys.b(), &c_bar, sys.d(), sys.set(), sys.c())?;
    if let Some(w) = &transformed.warning {
        writeln!(err, "warning: {w}")?;
    }
    let mut rewritten = reference.clone();
    rewritten.name = format!("{}_perturbed", reference.name);
    rewritten.a = matrix_to_rows(&a_bar);
    rewritten.set.h = Some(matrix_to_rows(&(-(c_bar - sys.c()))));
    rewritten.set.mode = if transformed.uniqueness {
        SetMode::Decomposed
    } else {
        SetMode::General
    };
    rewritten.constants.lh = None;
    rewritten.constants.lk2 = None;
    rewritten.build()?;
    let text = emit(&rewritten);
    match dest {
        Some(p) => write_file(p, text.as_bytes())?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(0)
}
