//! The moving set `K(t, x)`.
//!
//! Two forms are supported. [`MovingSet::General`] wraps any evaluator with
//! declared Lipschitz constants `d_H(K(t,x), K(s,y)) <= LK1|t−s| + LK2‖x−y‖`.
//! [`MovingSet::Decomposed`] is `K₁(t) + Hx + g(t)`, where `H` and `g` must
//! map into `rge(D+Dᵀ)`; this is the form under which trajectories are unique.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{coordinate_range, spectral_norm, Matrix, Vector};
use crate::sets::{hausdorff_box, BoxSet, ConvexSet};
use crate::step::{LureSystem, SolverOptions};
use crate::vi;

pub type StateSetMap = Arc<dyn Fn(f64, &Vector) -> Result<ConvexSet> + Send + Sync>;
pub type TimeSetMap = Arc<dyn Fn(f64) -> Result<ConvexSet> + Send + Sync>;
pub type TimeVectorMap = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

/// Piecewise-linear function of time with constant extrapolation outside the
/// knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    times: Vec<f64>,
    values: Vec<Vector>,
}

impl PiecewiseLinear {
    pub fn new(times: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "time table needs matching, nonempty knots and values".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "time table knots must be finite and strictly increasing".into(),
            ));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument(
                "time table values must be finite and of equal length".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn scalar(knots: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            knots.iter().map(|k| k.0).collect(),
            knots.iter().map(|k| Vector::from_element(1, k.1)).collect(),
        )
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn eval(&self, t: f64) -> Vector {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[last] {
            return self.values[last].clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let theta = (t - t0) / (t1 - t0);
        &self.values[k] * (1.0 - theta) + &self.values[k + 1] * theta
    }

    pub fn eval_scalar(&self, t: f64) -> f64 {
        self.eval(t)[0]
    }

    /// Largest segment slope in the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| (&v[1] - &v[0]).norm() / (t[1] - t[0]))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone)]
pub struct GeneralSet {
    eval: StateSetMap,
    pub lk1: f64,
    pub lk2: f64,
}

#[derive(Clone)]
pub struct DecomposedSet {
    k1: TimeSetMap,
    pub h: Matrix,
    g: Option<TimeVectorMap>,
    /// State Lipschitz constant of `h(t,x) = Hx + g(t)`.
    pub lh: f64,
    /// Time Lipschitz constant of `K₁`.
    pub lh1: f64,
    /// Time Lipschitz constant of `g`.
    pub lh2: f64,
}

impl DecomposedSet {
    pub fn base(&self, t: f64) -> Result<ConvexSet> {
        (self.k1)(t)
    }

    pub fn offset(&self, t: f64) -> Option<Vector> {
        self.g.as_ref().map(|g| g(t))
    }
}

#[derive(Clone)]
pub enum MovingSet {
    General(GeneralSet),
    Decomposed(DecomposedSet),
}

impl fmt::Debug for MovingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MovingSet::General(g) => f
                .debug_struct("General")
                .field("lk1", &g.lk1)
                .field("lk2", &g.lk2)
                .finish_non_exhaustive(),
            MovingSet::Decomposed(d) => f
                .debug_struct("Decomposed")
                .field("h", &d.h)
                .field("has_g", &d.g.is_some())
                .field("lh", &d.lh)
                .field("lh1", &d.lh1)
                .field("lh2", &d.lh2)
                .finish_non_exhaustive(),
        }
    }
}

impl MovingSet {
    pub fn general(
        eval: impl Fn(f64, &Vector) -> Result<ConvexSet> + Send + Sync + 'static,
        lk1: f64,
        lk2: f64,
    ) -> Self {
        MovingSet::General(GeneralSet {
            eval: Arc::new(eval),
            lk1,
            lk2,
        })
    }

    /// `K₁(t) + Hx + g(t)`. `lh` defaults to `‖H‖` when `None`.
    pub fn decomposed(
        k1: impl Fn(f64) -> Result<ConvexSet> + Send + Sync + 'static,
        h: Matrix,
        g: Option<TimeVectorMap>,
        lh: Option<f64>,
        lh1: f64,
        lh2: f64,
    ) -> Self {
        let lh = lh.unwrap_or_else(|| spectral_norm(&h));
        MovingSet::Decomposed(DecomposedSet {
            k1: Arc::new(k1),
            h,
            g,
            lh,
            lh1,
            lh2,
        })
    }

    /// Time-only set `K₁(t)` in decomposed form with `H = 0`.
    pub fn time_only(
        k1: impl Fn(f64) -> Result<ConvexSet> + Send + Sync + 'static,
        m: usize,
        n: usize,
        lipschitz: f64,
    ) -> Self {
        Self::decomposed(k1, Matrix::zeros(m, n), None, Some(0.0), lipschitz, 0.0)
    }

    pub fn constant(set: ConvexSet, n: usize) -> Self {
        let m = set.dim();
        Self::time_only(move |_| Ok(set.clone()), m, n, 0.0)
    }

    pub fn evaluate(&self, t: f64, x: &Vector) -> Result<ConvexSet> {
        match self {
            MovingSet::General(g) => (g.eval)(t, x),
            MovingSet::Decomposed(d) => {
                let base = (d.k1)(t)?;
                if x.len() != d.h.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "state has dimension {} but H has {} columns",
                        x.len(),
                        d.h.ncols()
                    )));
                }
                let mut shift = if d.h.iter().all(|&v| v == 0.0) {
                    None
                } else {
                    Some(&d.h * x)
                };
                if let Some(g) = &d.g {
                    let gt = g(t);
                    shift = Some(match shift {
                        Some(s) => s + gt,
                        None => gt,
                    });
                }
                Ok(match shift {
                    Some(s) => base.translate(s),
                    None => base,
                })
            }
        }
    }

    /// `(LK1, LK2)` of the General contract.
    pub fn lipschitz_constants(&self) -> (f64, f64) {
        match self {
            MovingSet::General(g) => (g.lk1, g.lk2),
            MovingSet::Decomposed(d) => (d.lh1 + d.lh2, d.lh),
        }
    }

    pub fn is_decomposed(&self) -> bool {
        matches!(self, MovingSet::Decomposed(_))
    }

    /// True when the set cannot depend on the state.
    pub fn is_time_only(&self) -> bool {
        match self {
            MovingSet::General(g) => g.lk2 == 0.0,
            MovingSet::Decomposed(d) => d.h.iter().all(|&v| v == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzViolation {
    pub t: f64,
    pub s: f64,
    pub x: Vector,
    pub y: Vector,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// Largest `d_H / (LK1|t−s| + LK2‖x−y‖)` over the samples, with a
    /// relative slack of `1e−12` folded into the denominator.
    pub max_observed_ratio: f64,
    pub samples: usize,
    pub violations: Vec<LipschitzViolation>,
    /// `c₂ / ‖C‖`.
    pub state_bound: f64,
    /// `LK2 <= c₂/‖C‖`.
    pub bound_ok: bool,
}

impl LipschitzReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.bound_ok
    }
}

/// Clamps coordinates outside `rge(C)` to zero, i.e. intersects with the
/// coordinate subspace.
pub fn restrict_to_range(bx: &BoxSet, in_range: &[bool]) -> Result<BoxSet> {
    let mut lower = bx.lower().clone();
    let mut upper = bx.upper().clone();
    for (i, &keep) in in_range.iter().enumerate() {
        if !keep {
            if lower[i] > 0.0 || upper[i] < 0.0 {
                return Err(Error::EmptySet);
            }
            lower[i] = 0.0;
            upper[i] = 0.0;
        }
    }
    BoxSet::new(lower, upper)
}

pub fn verify_lipschitz(
    ms: &MovingSet,
    c: &Matrix,
    c2: f64,
    samples: &[(f64, f64, Vector, Vector)],
) -> Result<LipschitzReport> {
    let (lk1, lk2) = ms.lipschitz_constants();
    let c_norm = spectral_norm(c);
    let state_bound = if c_norm > 0.0 { c2 / c_norm } else { f64::INFINITY };
    let bound_ok = lk2 <= state_bound * (1.0 + 1e-12);
    let in_range = coordinate_range(c).ok_or_else(|| {
        Error::UnsupportedOutputMatrix("rge(C) is not a coordinate subspace".into())
    })?;
    let as_restricted_box = |set: ConvexSet| -> Result<BoxSet> {
        let bx = set.as_box().ok_or(Error::NotABox(set.kind()))?;
        restrict_to_range(&bx, &in_range)
    };
    let mut max_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for (t, s, x, y) in samples {
        let a = as_restricted_box(ms.evaluate(*t, x)?)?;
        let b = as_restricted_box(ms.evaluate(*s, y)?)?;
        let lhs = hausdorff_box(&a, &b)?;
        let rhs = lk1 * (t - s).abs() + lk2 * (x - y).norm();
        let allowed = rhs * (1.0 + 1e-12) + 1e-14;
        let ratio = lhs / allowed;
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 {
            violations.push(LipschitzViolation {
                t: *t,
                s: *s,
                x: x.clone(),
                y: y.clone(),
                lhs,
                rhs,
            });
        }
    }
    Ok(LipschitzReport {
        max_observed_ratio: max_ratio,
        samples: samples.len(),
        violations,
        state_bound,
        bound_ok,
    })
}

/// Slack in the hypomonotonicity inequality for normal-cone pairs
/// `a_i ∈ N_{K(t_i,x_i)}(b_i)`:
/// `⟨a₁−a₂, b₁−b₂⟩ + (‖a₁‖+‖a₂‖)(LK1|t₂−t₁| + LK2‖x₁−x₂‖)`, which is
/// nonnegative whenever the Lipschitz constants are valid.
#[allow(clippy::too_many_arguments)]
pub fn hypomonotonicity_margin(
    a1: &Vector,
    b1: &Vector,
    a2: &Vector,
    b2: &Vector,
    lk1: f64,
    lk2: f64,
    dt: f64,
    dx: f64,
) -> f64 {
    (a1 - a2).dot(&(b1 - b2)) + (a1.norm() + a2.norm()) * (lk1 * dt.abs() + lk2 * dx)
}

/// Outcome of the static multiplier inclusion `μ ∈ N_{K(0,x₀)}(Cx₀ − Dμ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Admissibility {
    Admissible(vi::ViSolution),
    NotAdmissible,
}

/// Solves the static inclusion at `t = 0`. An inconclusive solve is reported
/// as `SolverDiverged`, distinct from `NotAdmissible`.
pub fn admissibility(sys: &LureSystem, x0: &Vector, opts: &SolverOptions) -> Result<Admissibility> {
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch("initial state".into()));
    }
    let set = sys.set().evaluate(0.0, x0)?;
    let q = sys.c() * x0;
    let d = sys.d();
    let vi_opts = opts.vi();
    let diverged = match vi::solve(d, &q, &set, &vi_opts) {
        Ok(sol) => return Ok(Admissibility::Admissible(sol)),
        Err(e @ Error::SolverDiverged { .. }) => e,
        Err(Error::EmptySet) => return Ok(Admissibility::NotAdmissible),
        Err(e) => return Err(e),
    };
    if let Some(bx) = set.as_box() {
        if bx.dim() <= vi::ENUMERATION_MAX_DIM {
            return match vi::enumerate_box(d, &q, &bx, 1e-10) {
                Ok(mu) => {
                    let residual = vi::residual(d, &q, &set, &mu)?;
                    Ok(Admissibility::Admissible(vi::ViSolution {
                        mu,
                        residual,
                        iterations: 0,
                    }))
                }
                Err(Error::NoSolution) => Ok(Admissibility::NotAdmissible),
                Err(e) => Err(e),
            };
        }
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(if set.contains(&q, vi::threshold(&q, vi_opts.tol)) {
            Admissibility::Admissible(vi::ViSolution {
                mu: Vector::zeros(q.len()),
                residual: 0.0,
                iterations: 0,
            })
        } else {
            Admissibility::NotAdmissible
        });
    }
    Err(diverged)
}

pub fn admissible(sys: &LureSystem, x0: &Vector, opts: &SolverOptions) -> Result<bool> {
    Ok(matches!(
        admissibility(sys, x0, opts)?,
        Admissibility::Admissible(_)
    ))
}
