//! Executable forms of the quantitative estimates: Lipschitz dependence on
//! initial data, exponential attractivity with and without uniqueness, the
//! operator-distance bound, the perturbed-data rewrite, refinement order, and
//! per-trajectory audits of the resolvent and hypomonotonicity inequalities.
//!
//! All norms are taken in the coordinates where the storage matrix is the
//! identity; declared constants are read in the same coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::integrate::{simulate, SimulateOptions, SimulationError, Trajectory, HYPOMONOTONICITY_TOL};
use crate::linalg::{rank, range_contained, spectral_norm, Matrix, Vector, RANK_TOL};
use crate::moving::MovingSet;
use crate::sets::{hausdorff_box, ConvexSet};
use crate::step::{solve_step, Drift, LureSystem};

/// Tolerances applied to continuous-time envelopes evaluated on a grid:
/// `lhs <= bound·(1 + env_tol) + slack_factor·h·(1 + ‖x₀‖)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeOptions {
    pub env_tol: f64,
    pub slack_factor: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            env_tol: 1e-6,
            slack_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `γ` for Lipschitz dependence, `δ` for attractivity.
    pub claimed_rate: f64,
    /// `(t, lhs, rhs)` per grid point, with tolerances folded into `rhs`.
    pub envelope: Vec<(f64, f64, f64)>,
    /// `maxᵢ (lhsᵢ − rhsᵢ)`; nonpositive when the envelope holds.
    pub max_violation: f64,
    /// Largest `lhs / rhs`.
    pub tightest_ratio: f64,
    pub pass: bool,
}

impl RateReport {
    fn from_envelope(claimed_rate: f64, envelope: Vec<(f64, f64, f64)>) -> Self {
        let max_violation = envelope
            .iter()
            .map(|(_, l, r)| l - r)
            .fold(f64::NEG_INFINITY, f64::max);
        let tightest_ratio = envelope
            .iter()
            .map(|(_, l, r)| if *r > 0.0 { l / r } else if *l > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max);
        Self {
            claimed_rate,
            pass: max_violation <= 0.0,
            envelope,
            max_violation,
            tightest_ratio,
        }
    }
}

fn working_norm(sys: &LureSystem, x: &Vector) -> f64 {
    sys.coordinates().to_working(x).norm()
}

/// `γ = L_f + (L_h + ‖B−Cᵀ‖)²/(4c₁)`.
pub fn dependence_rate(sys: &LureSystem) -> Result<f64> {
    let MovingSet::Decomposed(dec) = sys.set() else {
        return Err(Error::HypothesisFailed(
            "Lipschitz dependence needs the decomposed set K₁(t) + Hx + g(t)".into(),
        ));
    };
    let l = dec.lh + sys.passivity_gap();
    Ok(sys.drift().lipschitz() + quadratic_penalty(sys, l)?)
}

/// `L²/(4c₁)`, zero when `L = 0`.
fn quadratic_penalty(sys: &LureSystem, l: f64) -> Result<f64> {
    if l == 0.0 {
        return Ok(0.0);
    }
    let c1 = sys.cert().c1.ok_or(Error::MissingConstant("c1"))?;
    Ok(l * l / (4.0 * c1))
}

/// Runs both simulations and checks
/// `‖x₁(tᵢ)−x₂(tᵢ)‖ <= ‖x₁₀−x₂₀‖ e^{γtᵢ}` on the grid.
pub fn lipschitz_dependence_check(
    sys: &LureSystem,
    x0a: &Vector,
    x0b: &Vector,
    t_end: f64,
    n_steps: usize,
    sim: &SimulateOptions,
    env: &EnvelopeOptions,
) -> std::result::Result<RateReport, SimulationError> {
    let gamma = dependence_rate(sys)?;
    let (a, b) = rayon::join(
        || simulate(sys, x0a, t_end, n_steps, sim),
        || simulate(sys, x0b, t_end, n_steps, sim),
    );
    let (a, b) = (a?, b?);
    let h = a.step_size();
    let gap0 = working_norm(sys, &(x0a - x0b));
    let scale = 1.0 + working_norm(sys, x0a).max(working_norm(sys, x0b));
    let envelope = a
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let lhs = working_norm(sys, &(&a.states[i] - &b.states[i]));
            let rhs = gap0 * (gamma * t).exp() * (1.0 + env.env_tol) + env.slack_factor * h * scale;
            (t, lhs, rhs)
        })
        .collect();
    Ok(RateReport::from_envelope(gamma, envelope))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractivityVariant {
    /// Decomposed set with `0 ∈ K(t,0)`; `δ = σ − (L_h+‖B−Cᵀ‖)²/(4c₁)`.
    WithUniqueness,
    /// `0 ∈ K(t,x)` for all `(t,x)`; `δ = σ − ‖B−Cᵀ‖²/(4c₁)`.
    WithoutUniqueness,
}

/// The decay rate `δ` claimed by the chosen variant. Fails when `σ` is
/// missing or does not exceed the passivity penalty.
pub fn attractivity_rate(sys: &LureSystem, variant: AttractivityVariant) -> Result<f64> {
    let sigma = sys.sigma().ok_or(Error::MissingConstant("sigma"))?;
    let l = match variant {
        AttractivityVariant::WithUniqueness => match sys.set() {
            MovingSet::Decomposed(dec) => dec.lh + sys.passivity_gap(),
            MovingSet::General(_) => {
                return Err(Error::HypothesisFailed(
                    "the uniqueness variant needs the decomposed set".into(),
                ))
            }
        },
        AttractivityVariant::WithoutUniqueness => sys.passivity_gap(),
    };
    let penalty = quadratic_penalty(sys, l)?;
    if sigma <= penalty {
        return Err(Error::HypothesisFailed(format!(
            "sigma = {sigma} does not exceed L²/(4c₁) = {penalty}"
        )));
    }
    Ok(sigma - penalty)
}

const HYPOTHESIS_TIMES: usize = 64;
const HYPOTHESIS_STATES: usize = 64;

/// Sampled check of `0 ∈ K(t,·)` and `⟨f(t,x),x⟩ <= −σ‖x‖²`: 64 times on
/// `[0,T]` and, for the variant without uniqueness, 64 states drawn from the
/// trajectory's bounding box.
fn check_hypotheses(
    sys: &LureSystem,
    traj: &Trajectory,
    variant: AttractivityVariant,
) -> Result<()> {
    let sigma = sys.sigma().ok_or(Error::MissingConstant("sigma"))?;
    let n = sys.n();
    let t_end = *traj.times.last().expect("nonempty trajectory");
    let mut lo = traj.states[0].clone();
    let mut hi = traj.states[0].clone();
    for x in &traj.states {
        lo = lo.inf(x);
        hi = hi.sup(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut states = vec![lo.clone(), hi.clone()];
    while states.len() < HYPOTHESIS_STATES {
        states.push(Vector::from_fn(n, |i, _| lo[i] + rng.random::<f64>() * (hi[i] - lo[i])));
    }
    let zero = Vector::zeros(n);
    let origin = Vector::zeros(sys.m());
    for j in 0..HYPOTHESIS_TIMES {
        let t = t_end * j as f64 / (HYPOTHESIS_TIMES - 1) as f64;
        let probe: &[Vector] = match variant {
            AttractivityVariant::WithUniqueness => std::slice::from_ref(&zero),
            AttractivityVariant::WithoutUniqueness => &states,
        };
        for x in probe {
            let set = sys.set().evaluate(t, x)?;
            if !set.contains(&origin, 1e-12) {
                return Err(Error::HypothesisFailed(format!("0 ∉ K({t}, {:?})", x.as_slice())));
            }
        }
        for x in &states {
            let inner = sys.drift().eval(t, x).dot(x);
            let bound = -sigma * x.norm_squared();
            if inner > bound + 1e-9 * (1.0 + x.norm_squared()) {
                return Err(Error::HypothesisFailed(format!(
                    "⟨f(t,x),x⟩ = {inner} exceeds −σ‖x‖² = {bound} at t = {t}"
                )));
            }
        }
    }
    Ok(())
}

/// Checks `‖x(tᵢ)‖ <= e^{−δtᵢ}‖x₀‖` on the grid.
pub fn attractivity_check(
    sys: &LureSystem,
    x0: &Vector,
    t_end: f64,
    n_steps: usize,
    variant: AttractivityVariant,
    sim: &SimulateOptions,
    env: &EnvelopeOptions,
) -> std::result::Result<RateReport, SimulationError> {
    let delta = attractivity_rate(sys, variant)?;
    let traj = simulate(sys, x0, t_end, n_steps, sim)?;
    check_hypotheses(sys, &traj, variant)?;
    Ok(attractivity_envelope(sys, &traj, delta, env))
}

/// Envelope of an existing trajectory against `e^{−δt}‖x₀‖`.
pub fn attractivity_envelope(
    sys: &LureSystem,
    traj: &Trajectory,
    delta: f64,
    env: &EnvelopeOptions,
) -> RateReport {
    let h = traj.step_size();
    let r0 = working_norm(sys, &traj.states[0]);
    let envelope = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| {
            let rhs = (-delta * t).exp() * r0 * (1.0 + env.env_tol) + env.slack_factor * h * (1.0 + r0);
            (t, working_norm(sys, x), rhs)
        })
        .collect();
    RateReport::from_envelope(delta, envelope)
}

/// `(‖C‖/c₂)·d_H(S₁,S₂)`, an upper bound on the graph distance between
/// `Cᵀ(N⁻¹_{S₁}+D)⁻¹C` and `Cᵀ(N⁻¹_{S₂}+D)⁻¹C`.
pub fn dis_bound(c: &Matrix, c2: f64, s1: &ConvexSet, s2: &ConvexSet) -> Result<f64> {
    if rank(c, RANK_TOL) != c.nrows() {
        return Err(Error::UnsupportedOutputMatrix("dis_bound needs full row rank C".into()));
    }
    if !(c2 > 0.0) {
        return Err(Error::InvalidArgument("c2 must be positive".into()));
    }
    let b1 = s1.as_box().ok_or(Error::NotABox(s1.kind()))?;
    let b2 = s2.as_box().ok_or(Error::NotABox(s2.kind()))?;
    Ok(spectral_norm(c) / c2 * hausdorff_box(&b1, &b2)?)
}

#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    pub system: LureSystem,
    /// Whether `rge(C̄−C) ⊂ rge(D+Dᵀ)`, so the set is decomposed and
    /// trajectories are unique.
    pub uniqueness: bool,
    pub warning: Option<String>,
}

/// Rewrites `(Ā, B, C̄, D, K(t))` as `(Ā, B, C, D, K(t) − (C̄−C)x)`, which
/// keeps the reference output matrix `C` and moves the measurement error into
/// a state-dependent set.
pub fn perturb_transform(
    a_bar: &Matrix,
    b: &Matrix,
    c_bar: &Matrix,
    d: &Matrix,
    k_time: &MovingSet,
    c: &Matrix,
) -> Result<PerturbedSystem> {
    if c_bar.shape() != c.shape() {
        return Err(Error::DimensionMismatch(format!(
            "C̄ {:?} vs C {:?}",
            c_bar.shape(),
            c.shape()
        )));
    }
    if !k_time.is_time_only() {
        return Err(Error::InvalidArgument("the reference set must not depend on the state".into()));
    }
    let n = c.ncols();
    let e = c_bar - c;
    let h = -&e;
    let lh = spectral_norm(&e);
    let sym = d + d.transpose();
    let uniqueness = range_contained(&e, &sym, RANK_TOL);
    let set = match (k_time, uniqueness) {
        (MovingSet::Decomposed(dec), true) => {
            let base = dec.clone();
            MovingSet::decomposed(
                move |t| base.base(t),
                h,
                dec.offset(0.0).map(|_| {
                    let d2 = dec.clone();
                    std::sync::Arc::new(move |t: f64| d2.offset(t).expect("offset present"))
                        as crate::moving::TimeVectorMap
                }),
                Some(lh),
                dec.lh1,
                dec.lh2,
            )
        }
        (MovingSet::General(_), true) => {
            let reference = k_time.clone();
            let (lk1, _) = k_time.lipschitz_constants();
            let origin = Vector::zeros(n);
            MovingSet::decomposed(move |t| reference.evaluate(t, &origin), h, None, Some(lh), lk1, 0.0)
        }
        (_, false) => {
            let reference = k_time.clone();
            let (lk1, _) = k_time.lipschitz_constants();
            MovingSet::general(
                move |t, x: &Vector| Ok(reference.evaluate(t, x)?.translate(&h * x)),
                lk1,
                lh,
            )
        }
    };
    let warning = (!uniqueness).then(|| {
        "rge(C̄−C) ⊄ rge(D+Dᵀ): the rewritten set is not decomposed and solutions may not be unique"
            .to_string()
    });
    let system = LureSystem::new(b.clone(), c.clone(), d.clone(), Drift::linear(a_bar.clone()), set, None)?;
    Ok(PerturbedSystem {
        system,
        uniqueness,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    /// Least-squares slope of `log(diff)` against `log(h)`; NaN when exact.
    pub order: f64,
    /// All successive differences vanish to rounding.
    pub exact: bool,
    /// Max-norm difference between consecutive levels on the coarsest grid.
    pub differences: Vec<f64>,
}

/// Fitted order from trajectories at `n0, 2n0, 4n0, …` steps on one horizon.
pub fn convergence_order(trajs: &[Trajectory]) -> Result<OrderEstimate> {
    if trajs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two refinement levels".into()));
    }
    let n0 = trajs[0].n_steps();
    let mut aligned = Vec::with_capacity(trajs.len());
    for (k, traj) in trajs.iter().enumerate() {
        if traj.n_steps() != n0 << k {
            return Err(Error::InvalidArgument(format!(
                "level {k} has {} steps, expected {}",
                traj.n_steps(),
                n0 << k
            )));
        }
        aligned.push(traj.subsample(1 << k));
    }
    let scale = 1.0
        + aligned
            .iter()
            .flatten()
            .map(|x| x.amax())
            .fold(0.0, f64::max);
    let differences: Vec<f64> = aligned
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
        })
        .collect();
    let points: Vec<(f64, f64)> = differences
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 1e-12 * scale)
        .map(|(k, d)| ((trajs[k].step_size()).ln(), d.ln()))
        .collect();
    if points.len() < 2 {
        return Ok(OrderEstimate {
            order: f64::NAN,
            exact: true,
            differences,
        });
    }
    let len = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / len;
    let my = points.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(OrderEstimate {
        order: sxy / sxx,
        exact: false,
        differences,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub steps: usize,
    pub resolvent_probes: usize,
    pub resolvent_violations: usize,
    /// Largest `‖x₁⁺−x₂⁺‖ / ‖y₁−y₂‖` seen.
    pub worst_resolvent_ratio: f64,
    pub hypomonotone_violations: usize,
    /// Smallest normalized hypomonotonicity margin.
    pub worst_hypomonotone_margin: f64,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.resolvent_violations == 0 && self.hypomonotone_violations == 0
    }
}

/// Re-solves every step of `traj` from randomly perturbed inputs and checks
/// that the resolvent is non-expansive, and counts hypomonotonicity margins
/// below tolerance.
pub fn audit_trajectory(
    sys: &LureSystem,
    traj: &Trajectory,
    probes_per_step: usize,
    seed: u64,
    sim: &SimulateOptions,
) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = traj.step_size();
    let coords = sys.coordinates();
    let mut report = AuditReport {
        steps: traj.n_steps(),
        resolvent_probes: 0,
        resolvent_violations: 0,
        worst_resolvent_ratio: 0.0,
        hypomonotone_violations: traj
            .hypomonotonicity
            .iter()
            .filter(|&&m| m < -HYPOMONOTONICITY_TOL)
            .count(),
        worst_hypomonotone_margin: traj.hypomonotonicity.iter().copied().fold(f64::INFINITY, f64::min),
    };
    for i in 0..traj.n_steps() {
        let (t, x) = (traj.times[i], &traj.states[i]);
        let t_next = traj.times[i + 1];
        let y = sys.explicit_part(t, x, h);
        let base = solve_step(sys, t_next, x, &y, h, &sim.solver)?;
        for _ in 0..probes_per_step {
            let spread = 0.1 * (1.0 + y.norm());
            let y2 = &y + Vector::from_fn(y.len(), |_, _| rng.sample::<f64, _>(StandardNormal) * spread);
            let probe = solve_step(sys, t_next, x, &y2, h, &sim.solver)?;
            let dy = coords.to_working(&(&y - &y2)).norm();
            let dx = coords.to_working(&(&base.x_next - &probe.x_next)).norm();
            report.resolvent_probes += 1;
            if dy > 0.0 {
                report.worst_resolvent_ratio = report.worst_resolvent_ratio.max(dx / dy);
            }
            if dx > dy + 1e-9 * (1.0 + dy) {
                report.resolvent_violations += 1;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::BoxSet;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn bd() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])
    }

    fn unit_square() -> ConvexSet {
        BoxSet::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap().into()
    }

    fn thm4_system(sigma: f64) -> LureSystem {
        LureSystem::builder(
            bd(),
            bd() + Matrix::identity(2, 2) * 0.1,
            bd(),
            Drift::linear(-Matrix::identity(2, 2) * sigma),
            MovingSet::constant(unit_square(), 2),
        )
        .sigma(sigma)
        .waive_kernel_inclusion()
        .build()
        .unwrap()
    }

    #[test]
    fn thm4_rate_by_hand() {
        let sys = thm4_system(1.0);
        let delta = attractivity_rate(&sys, AttractivityVariant::WithoutUniqueness).unwrap();
        assert_relative_eq!(delta, 0.99875, epsilon = 1e-12);
        assert!(matches!(
            attractivity_rate(&thm4_system(0.001), AttractivityVariant::WithoutUniqueness),
            Err(Error::HypothesisFailed(_))
        ));
    }

    #[test]
    fn thm4_envelope_holds() {
        let sys = thm4_system(1.0);
        let report = attractivity_check(
            &sys,
            &v(&[3.0, 2.0]),
            5.0,
            1000,
            AttractivityVariant::WithoutUniqueness,
            &SimulateOptions::default(),
            &EnvelopeOptions::default(),
        )
        .unwrap();
        assert!(report.pass, "max violation {}", report.max_violation);
        assert_eq!(report.envelope.len(), 1001);
    }

    #[test]
    fn origin_is_equilibrium() {
        let sys = thm4_system(1.0);
        let report = attractivity_check(
            &sys,
            &v(&[0.0, 0.0]),
            1.0,
            50,
            AttractivityVariant::WithoutUniqueness,
            &SimulateOptions::default(),
            &EnvelopeOptions::default(),
        )
        .unwrap();
        assert!(report.pass);
        assert!(report.envelope.iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn attractivity_is_monotone_in_sigma() {
        let traj = simulate(&thm4_system(1.0), &v(&[3.0, 2.0]), 5.0, 500, &SimulateOptions::default()).unwrap();
        let mut last_pass = false;
        for sigma in [0.5, 0.9, 1.0] {
            let sys = thm4_system(1.0).with_sigma(Some(sigma));
            let delta = attractivity_rate(&sys, AttractivityVariant::WithoutUniqueness).unwrap();
            let pass = attractivity_envelope(&sys, &traj, delta, &EnvelopeOptions::default()).pass;
            assert!(pass || !last_pass);
            last_pass = pass;
        }
        assert!(last_pass);
    }

    #[test]
    fn discrete_lyapunov_decrease() {
        let sys = thm4_system(1.0);
        let x0 = v(&[3.0, 2.0]);
        let traj = simulate(&sys, &x0, 5.0, 1000, &SimulateOptions::default()).unwrap();
        let delta = 0.99875;
        let h = traj.step_size();
        for w in traj.states.windows(2) {
            let lhs = w[1].norm_squared();
            let rhs = w[0].norm_squared() * (1.0 - 2.0 * delta * h) + 10.0 * h * h * x0.norm_squared();
            assert!(lhs <= rhs);
        }
    }

    #[test]
    fn dependence_envelope_with_state_dependent_set() {
        let h = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -0.008]);
        let set = MovingSet::decomposed(|_| Ok(unit_square()), h, None, None, 0.0, 0.0);
        let sys = LureSystem::builder(
            bd(),
            bd() + Matrix::identity(2, 2) * 0.1,
            bd(),
            Drift::linear(-Matrix::identity(2, 2)),
            set,
        )
        .waive_kernel_inclusion()
        .build()
        .unwrap();
        let gamma = dependence_rate(&sys).unwrap();
        assert_relative_eq!(gamma, 1.0 + 0.108_f64.powi(2) / 8.0, epsilon = 1e-12);
        let report = lipschitz_dependence_check(
            &sys,
            &v(&[3.0, 2.0]),
            &v(&[3.0, 1.0]),
            2.0,
            400,
            &SimulateOptions::default(),
            &EnvelopeOptions::default(),
        )
        .unwrap();
        assert!(report.pass);
        let same = lipschitz_dependence_check(
            &sys,
            &v(&[3.0, 2.0]),
            &v(&[3.0, 2.0]),
            1.0,
            50,
            &SimulateOptions::default(),
            &EnvelopeOptions::default(),
        )
        .unwrap();
        assert!(same.envelope.iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn dis_bound_examples() {
        let s1 = unit_square();
        let s2: ConvexSet = BoxSet::from_bounds(&[-1.0, -1.0], &[2.0, 1.0]).unwrap().into();
        assert_eq!(dis_bound(&Matrix::identity(2, 2), 1.0, &s1, &s1).unwrap(), 0.0);
        let rot = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(dis_bound(&rot, 1.0, &s1, &s2).unwrap(), 1.0, epsilon = 1e-12);
        let c = bd() + Matrix::identity(2, 2) * 0.1;
        let c2 = crate::linalg::smallest_positive_eigenvalue(&(&c * c.transpose()), RANK_TOL).unwrap();
        assert_relative_eq!(c2, 0.01, epsilon = 1e-12);
        let bound = dis_bound(&c, c2, &s1, &s2).unwrap();
        assert_relative_eq!(bound, 110.0, epsilon = 1e-9);
        assert_eq!(bound, dis_bound(&c, c2, &s2, &s1).unwrap());
    }

    fn reference_set() -> MovingSet {
        MovingSet::time_only(
            |t: f64| Ok(BoxSet::from_bounds(&[-1.0, t.sin() - 1.0], &[f64::INFINITY; 2])?.into()),
            2,
            2,
            1.0,
        )
    }

    #[test]
    fn perturb_identity_keeps_dynamics() {
        let a = -Matrix::identity(2, 2);
        let reference = LureSystem::new(bd(), bd(), bd(), Drift::linear(a.clone()), reference_set(), None).unwrap();
        let out = perturb_transform(&a, &bd(), &bd(), &bd(), &reference_set(), &bd()).unwrap();
        assert!(out.uniqueness);
        let x0 = v(&[0.5, 0.5]);
        let opts = SimulateOptions::default();
        let t1 = simulate(&reference, &x0, 2.0, 100, &opts).unwrap();
        let t2 = simulate(&out.system, &x0, 2.0, 100, &opts).unwrap();
        assert_eq!(t1.to_csv_string(), t2.to_csv_string());
    }

    #[test]
    fn perturb_modes() {
        let a = -Matrix::identity(2, 2);
        let cbar = bd() + Matrix::identity(2, 2) * 0.1;
        let out = perturb_transform(&a, &bd(), &cbar, &bd(), &reference_set(), &bd()).unwrap();
        assert!(!out.uniqueness);
        assert!(out.warning.is_some());
        let (lk1, lk2) = out.system.set().lipschitz_constants();
        assert_eq!(lk1, 1.0);
        assert_relative_eq!(lk2, 0.1, epsilon = 1e-12);
        let x = v(&[2.0, -3.0]);
        let bx = out.system.set().evaluate(0.0, &x).unwrap().as_box().unwrap();
        assert_relative_eq!(bx.lower()[1], -1.0 - 0.1 * -3.0, epsilon = 1e-12);
        let traj = simulate(&out.system, &v(&[0.5, 0.5]), 2.0, 200, &SimulateOptions::default()).unwrap();
        assert_eq!(traj.len(), 201);

        let sym = bd() * 2.0;
        let cbar = bd() + &sym * 0.05;
        let out = perturb_transform(&a, &bd(), &cbar, &bd(), &reference_set(), &bd()).unwrap();
        assert!(out.uniqueness);
        assert!(out.system.set().is_decomposed());
    }

    #[test]
    fn order_of_drift_only_problem() {
        let one = Matrix::identity(1, 1);
        let sys = LureSystem::new(
            one.clone(),
            one.clone(),
            one.clone(),
            Drift::linear(-one),
            MovingSet::constant(BoxSet::whole_space(1).into(), 1),
            None,
        )
        .unwrap();
        let trajs = crate::integrate::richardson_refine(&sys, &v(&[1.0]), 1.0, 50, 5, &SimulateOptions::default()).unwrap();
        let est = convergence_order(&trajs).unwrap();
        assert!(!est.exact);
        assert!((est.order - 1.0).abs() <= 0.1, "{est:?}");
    }

    #[test]
    fn audit_of_thm4_trajectory_is_clean() {
        let sys = thm4_system(1.0);
        let opts = SimulateOptions::default();
        let traj = simulate(&sys, &v(&[3.0, 2.0]), 2.0, 100, &opts).unwrap();
        let report = audit_trajectory(&sys, &traj, 3, 7, &opts).unwrap();
        assert!(report.clean(), "{report:?}");
        assert_eq!(report.resolvent_probes, 300);
    }
}
