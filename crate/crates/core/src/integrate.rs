//! Uniform-grid integration: `h = T/n`, `tᵢ = ih`,
//! `yᵢ = xᵢ + h f(tᵢ,xᵢ) − hκxᵢ`, then one resolvent step per grid point.

use std::io::{self, Read, Write};

use rayon::prelude::*;

use crate::error::Error;
use crate::linalg::Vector;
use crate::moving::{admissibility, hypomonotonicity_margin, Admissibility};
use crate::step::{solve_step, LureSystem, SolverOptions};

/// Normalized hypomonotonicity margins below this value count as violations.
pub const HYPOMONOTONICITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// System multipliers `λ = −μ`.
    pub lambdas: Vec<Vector>,
    /// `yᵢ = Cxᵢ + Dλᵢ`.
    pub outputs: Vec<Vector>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// For each consecutive pair of steps, the hypomonotonicity margin divided
    /// by `1 + (‖μ₁‖+‖μ₂‖)(‖y₁‖+‖y₂‖)`. Not serialized.
    pub hypomonotonicity: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulateOptions {
    pub solver: SolverOptions,
    /// Run from an initial state that fails the admissibility test.
    pub force: bool,
}

impl SimulateOptions {
    pub fn from_env() -> Self {
        Self {
            solver: SolverOptions::from_env(),
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("initial state is not admissible")]
    NotAdmissible,
    #[error("step {index} failed: {source}")]
    Step {
        index: usize,
        source: Error,
        /// States up to and including step `index − 1`.
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Invalid(#[from] Error),
}

impl Trajectory {
    fn start(x0: &Vector, lambda0: Vector, residual: f64, iterations: usize, sys: &LureSystem) -> Self {
        let y0 = sys.c() * x0 + sys.d() * &lambda0;
        Self {
            times: vec![0.0],
            states: vec![x0.clone()],
            lambdas: vec![lambda0],
            outputs: vec![y0],
            residuals: vec![residual],
            iterations: vec![iterations],
            hypomonotonicity: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn step_size(&self) -> f64 {
        self.times.get(1).copied().unwrap_or(0.0) - self.times[0]
    }

    /// `maxᵢ ‖x_{i+1} − xᵢ‖ / h`.
    pub fn max_step_derivative(&self) -> f64 {
        let h = self.step_size();
        self.states
            .windows(2)
            .map(|w| (&w[1] - &w[0]).norm() / h)
            .fold(0.0, f64::max)
    }

    /// States at every `stride`-th grid point.
    pub fn subsample(&self, stride: usize) -> Vec<Vector> {
        self.states.iter().step_by(stride.max(1)).cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.lambdas.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("lambda_{i}")));
        header.extend((1..=m).map(|i| format!("y_{i}")));
        header.push("residual".into());
        header.push("iters".into());
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![format!("{:.16e}", self.times[i])];
            for vec in [&self.states[i], &self.lambdas[i], &self.outputs[i]] {
                row.extend(vec.iter().map(|v| format!("{v:.16e}")));
            }
            row.push(format!("{:.16e}", self.residuals[i]));
            row.push(self.iterations[i].to_string());
            writer.write_record(&row)?;
        }
        writer.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Parses the format written by [`Trajectory::write_csv`]. The
    /// hypomonotonicity diagnostics are not stored and come back empty.
    pub fn read_csv<R: Read>(input: R) -> io::Result<Self> {
        let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = reader.headers()?.clone();
        let n = header.iter().filter(|c| c.starts_with("x_")).count();
        let m = header.iter().filter(|c| c.starts_with("lambda_")).count();
        if header.len() != 3 + n + 2 * m {
            return Err(invalid(format!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            lambdas: Vec::new(),
            outputs: Vec::new(),
            residuals: Vec::new(),
            iterations: Vec::new(),
            hypomonotonicity: Vec::new(),
        };
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let num = |k: usize| {
                record[k]
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("line {line}: {e}")))
            };
            let vec = |range: std::ops::Range<usize>| -> io::Result<Vector> {
                Ok(Vector::from_vec(range.map(num).collect::<io::Result<_>>()?))
            };
            traj.times.push(num(0)?);
            traj.states.push(vec(1..1 + n)?);
            traj.lambdas.push(vec(1 + n..1 + n + m)?);
            traj.outputs.push(vec(1 + n + m..1 + n + 2 * m)?);
            traj.residuals.push(num(1 + n + 2 * m)?);
            traj.iterations.push(
                record[2 + n + 2 * m]
                    .parse()
                    .map_err(|e| invalid(format!("line {line}: {e}")))?,
            );
        }
        Ok(traj)
    }
}

/// Runs the scheme from `x0` on `[0, t_end]` with `n_steps` uniform steps.
pub fn simulate(
    sys: &LureSystem,
    x0: &Vector,
    t_end: f64,
    n_steps: usize,
    opts: &SimulateOptions,
) -> Result<Trajectory, SimulationError> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_end}")).into());
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()).into());
    }
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has dimension {}, expected {}",
            x0.len(),
            sys.n()
        ))
        .into());
    }
    let start = match admissibility(sys, x0, &opts.solver) {
        Ok(Admissibility::Admissible(sol)) => Some(sol),
        Ok(Admissibility::NotAdmissible) => None,
        Err(_) if opts.force => None,
        Err(e) => return Err(e.into()),
    };
    let mut traj = match start {
        Some(sol) => Trajectory::start(x0, -sol.mu, sol.residual, sol.iterations, sys),
        None if opts.force => Trajectory::start(x0, Vector::zeros(sys.m()), f64::NAN, 0, sys),
        None => return Err(SimulationError::NotAdmissible),
    };
    let h = t_end / n_steps as f64;
    let (lk1, lk2) = sys.set().lipschitz_constants();
    let mut previous: Option<(f64, Vector, Vector, Vector)> = None;
    for i in 0..n_steps {
        let t = i as f64 * h;
        let t_next = (i + 1) as f64 * h;
        let x = &traj.states[i];
        let y = sys.explicit_part(t, x, h);
        let step = solve_step(sys, t_next, x, &y, h, &opts.solver).and_then(|r| {
            if r.x_next.iter().all(|v| v.is_finite()) {
                Ok(r)
            } else {
                Err(Error::SolverDiverged {
                    residual: f64::INFINITY,
                    iterations: r.iterations,
                })
            }
        });
        let r = match step {
            Ok(r) => r,
            Err(source) => {
                return Err(SimulationError::Step {
                    index: i,
                    source,
                    partial: Box::new(traj),
                })
            }
        };
        let lambda = r.lambda;
        let output = sys.c() * &r.x_next + sys.d() * &lambda;
        if let Some((t_prev, x_set_prev, mu_prev, w_prev)) = &previous {
            let margin = hypomonotonicity_margin(
                mu_prev,
                w_prev,
                &r.mu,
                &r.w,
                lk1,
                lk2,
                t_next - t_prev,
                (x_set_prev - x).norm(),
            );
            let scale = 1.0 + (mu_prev.norm() + r.mu.norm()) * (w_prev.norm() + r.w.norm());
            traj.hypomonotonicity.push(margin / scale);
        }
        previous = Some((t_next, x.clone(), r.mu, r.w));
        traj.times.push(t_next);
        traj.states.push(r.x_next);
        traj.lambdas.push(lambda);
        traj.outputs.push(output);
        traj.residuals.push(r.residual);
        traj.iterations.push(r.iterations);
    }
    Ok(traj)
}

/// Simulations at `n0, 2n0, …, 2^{levels−1} n0` steps, run in parallel.
pub fn richardson_refine(
    sys: &LureSystem,
    x0: &Vector,
    t_end: f64,
    n0: usize,
    levels: usize,
    opts: &SimulateOptions,
) -> Result<Vec<Trajectory>, SimulationError> {
    if levels < 2 {
        return Err(Error::InvalidArgument("refinement needs at least 2 levels".into()).into());
    }
    (0..levels)
        .into_par_iter()
        .map(|k| simulate(sys, x0, t_end, n0 << k, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::moving::MovingSet;
    use crate::sets::BoxSet;
    use crate::step::Drift;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn one() -> Matrix {
        Matrix::identity(1, 1)
    }

    fn catching_up() -> LureSystem {
        LureSystem::new(
            one(),
            one(),
            Matrix::zeros(1, 1),
            Drift::zero(1),
            MovingSet::time_only(
                |t| Ok(BoxSet::from_bounds(&[t - 1.0], &[f64::INFINITY])?.into()),
                1,
                1,
                1.0,
            ),
            None,
        )
        .unwrap()
    }

    #[test]
    fn trivial_cone_is_explicit_euler() {
        let sys = LureSystem::new(
            one(),
            one(),
            one(),
            Drift::linear(-one()),
            MovingSet::constant(BoxSet::whole_space(1).into(), 1),
            None,
        )
        .unwrap();
        let traj = simulate(&sys, &v(&[1.0]), 1.0, 100, &SimulateOptions::default()).unwrap();
        let h: f64 = 0.01;
        for (i, x) in traj.states.iter().enumerate() {
            assert_relative_eq!(x[0], (1.0 - h).powi(i as i32), epsilon = 1e-12);
            assert!((x[0] - (-traj.times[i]).exp()).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn catching_up_matches_closed_form() {
        let sys = catching_up();
        let traj = simulate(&sys, &v(&[0.0]), 2.0, 200, &SimulateOptions::default()).unwrap();
        assert_eq!(traj.len(), 201);
        let h = 0.01;
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] - (t - 1.0).max(0.0)).abs() <= h);
        }
        assert!(traj.hypomonotonicity.iter().all(|&m| m >= -HYPOMONOTONICITY_TOL));
    }

    #[test]
    fn grid_and_output_identity() {
        let sys = catching_up();
        let traj = simulate(&sys, &v(&[0.5]), 3.0, 7, &SimulateOptions::default()).unwrap();
        for (i, t) in traj.times.iter().enumerate() {
            assert_eq!(*t, i as f64 * (3.0 / 7.0));
        }
        for i in 0..traj.len() {
            assert_eq!(
                traj.outputs[i],
                sys.c() * &traj.states[i] + sys.d() * &traj.lambdas[i]
            );
            assert!(traj.residuals[i] <= 1e-9);
        }
    }

    #[test]
    fn inadmissible_start_rejected_unless_forced() {
        let sys = LureSystem::new(
            one(),
            one(),
            Matrix::zeros(1, 1),
            Drift::zero(1),
            MovingSet::constant(BoxSet::from_bounds(&[0.0], &[1.0]).unwrap().into(), 1),
            None,
        )
        .unwrap();
        let err = simulate(&sys, &v(&[3.0]), 1.0, 10, &SimulateOptions::default()).unwrap_err();
        assert_eq!(err, SimulationError::NotAdmissible);
        let forced = SimulateOptions {
            force: true,
            ..Default::default()
        };
        let traj = simulate(&sys, &v(&[3.0]), 1.0, 10, &forced).unwrap();
        assert_relative_eq!(traj.states[1][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let sys = catching_up();
        let traj = simulate(&sys, &v(&[0.1]), 2.0, 13, &SimulateOptions::default()).unwrap();
        let text = traj.to_csv_string();
        assert!(text.starts_with("t,x_1,lambda_1,y_1,residual,iters\n"));
        let back = Trajectory::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.lambdas, traj.lambdas);
        assert_eq!(back.outputs, traj.outputs);
        assert_eq!(back.iterations, traj.iterations);
    }

    #[test]
    fn simulation_is_deterministic() {
        let sys = catching_up();
        let a = simulate(&sys, &v(&[0.2]), 2.0, 50, &SimulateOptions::default()).unwrap();
        let b = simulate(&sys, &v(&[0.2]), 2.0, 50, &SimulateOptions::default()).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn refinement_levels_and_equilibrium() {
        let sys = LureSystem::new(
            one(),
            one(),
            one(),
            Drift::linear(-one()),
            MovingSet::constant(BoxSet::from_bounds(&[-1.0], &[1.0]).unwrap().into(), 1),
            None,
        )
        .unwrap();
        let levels = richardson_refine(&sys, &v(&[0.0]), 1.0, 10, 3, &SimulateOptions::default()).unwrap();
        assert_eq!(
            levels.iter().map(|t| t.n_steps()).collect::<Vec<_>>(),
            vec![10, 20, 40]
        );
        for traj in &levels {
            assert!(traj.states.iter().all(|x| x[0] == 0.0));
        }
    }

    #[test]
    fn derivative_bound_stable_under_refinement() {
        let sys = catching_up();
        let levels = richardson_refine(&sys, &v(&[0.0]), 2.0, 25, 4, &SimulateOptions::default()).unwrap();
        let bounds: Vec<f64> = levels.iter().map(|t| t.max_step_derivative()).collect();
        for w in bounds.windows(2) {
            assert!(w[1] <= w[0] * 1.1 + 1e-12, "{bounds:?}");
        }
    }
}
