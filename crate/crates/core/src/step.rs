//! One step of the implicit scheme.
//!
//! Given `y = x + h f(t,x) − hκx`, the step solves
//! `(1−hκ)x⁺ + hBμ = y`, `μ ∈ N_{K(t⁺, x⁻)}(Cx⁺ − Dμ)` and reports the
//! system multiplier `λ = −μ`. Eliminating `x⁺` leaves the affine VI
//! `μ ∈ N_K(q − Mμ)` with `q = Cy/(1−hκ)` and `M = D + h/(1−hκ)·CB`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{
    coordinate_range, range_contained, range_projector, spectral_norm, svd,
    Coordinates, Matrix, PassivityCertificate, Vector, RANK_TOL,
};
use crate::moving::{restrict_to_range, MovingSet};
use crate::sets::ConvexSet;
use crate::vi::{self, ViOptions};

pub type DriftMap = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;

/// The single-valued part `f(t,x)` with its declared state Lipschitz
/// constant.
#[derive(Clone)]
pub struct Drift {
    f: DriftMap,
    lipschitz: f64,
    matrix: Option<Matrix>,
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Drift")
            .field("lipschitz", &self.lipschitz)
            .field("matrix", &self.matrix)
            .finish_non_exhaustive()
    }
}

impl Drift {
    pub fn new(f: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static, lipschitz: f64) -> Self {
        Self {
            f: Arc::new(f),
            lipschitz,
            matrix: None,
        }
    }

    /// `f(t,x) = Ax` with `L_f = ‖A‖`.
    pub fn linear(a: Matrix) -> Self {
        let lipschitz = spectral_norm(&a);
        let shared = a.clone();
        Self {
            f: Arc::new(move |_, x| &shared * x),
            lipschitz,
            matrix: Some(a),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::linear(Matrix::zeros(n, n))
    }

    pub fn eval(&self, t: f64, x: &Vector) -> Vector {
        (self.f)(t, x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn matrix(&self) -> Option<&Matrix> {
        self.matrix.as_ref()
    }
}

/// A validated set-valued Lur'e system.
#[derive(Debug, Clone)]
pub struct LureSystem {
    b: Matrix,
    c: Matrix,
    d: Matrix,
    drift: Drift,
    set: MovingSet,
    cert: PassivityCertificate,
    sigma: Option<f64>,
    coords: Coordinates,
    in_range: Vec<bool>,
}

pub struct SystemBuilder {
    b: Matrix,
    c: Matrix,
    d: Matrix,
    drift: Drift,
    set: MovingSet,
    p: Option<Matrix>,
    sigma: Option<f64>,
    waive_kernel_inclusion: bool,
}

impl SystemBuilder {
    /// Storage matrix of the passivity certificate; identity by default.
    pub fn storage(mut self, p: Matrix) -> Self {
        self.p = Some(p);
        self
    }

    /// Declared decay modulus `⟨f(t,x),x⟩ <= −σ‖x‖²`.
    pub fn sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    /// Accepts data whose certificate fails `ker(D+Dᵀ) ⊂ ker(PB−Cᵀ)`. The
    /// certificate still records the failure.
    pub fn waive_kernel_inclusion(mut self) -> Self {
        self.waive_kernel_inclusion = true;
        self
    }

    pub fn build(self) -> Result<LureSystem> {
        let (b, c, d) = (self.b, self.c, self.d);
        let (n, m) = b.shape();
        if c.shape() != (m, n) || d.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "B {:?}, C {:?}, D {:?}",
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        let p = self.p.unwrap_or_else(|| Matrix::identity(n, n));
        if p.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("P {:?}", p.shape())));
        }
        let probe = self.drift.eval(0.0, &Vector::zeros(n));
        if probe.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "drift returns dimension {}, expected {n}",
                probe.len()
            )));
        }
        let cert = PassivityCertificate::certify(&p, &b, &c, &d)?;
        if !cert.kernel_inclusion && !self.waive_kernel_inclusion {
            return Err(Error::KernelInclusionViolated);
        }
        let in_range = coordinate_range(&c).ok_or_else(|| {
            Error::UnsupportedOutputMatrix(
                "C must have full row rank or a range spanned by coordinate axes".into(),
            )
        })?;
        if !range_contained(&d, &c, RANK_TOL) {
            return Err(Error::UnsupportedOutputMatrix("rge(D) is not contained in rge(C)".into()));
        }
        if let Some(c2) = cert.c2 {
            let bound = c2 / spectral_norm(&c);
            let (_, lk2) = self.set.lipschitz_constants();
            if lk2 > bound * (1.0 + 1e-12) {
                return Err(Error::LipschitzBound { lk2, bound });
            }
        }
        if let MovingSet::Decomposed(dec) = &self.set {
            if dec.h.shape() != (m, n) {
                return Err(Error::DimensionMismatch(format!("H {:?}", dec.h.shape())));
            }
            let sym = &d + d.transpose();
            if !range_contained(&dec.h, &sym, RANK_TOL) {
                return Err(Error::RangeConditionViolated("rge(H) ⊄ rge(D+Dᵀ)".into()));
            }
            if let Some(g0) = dec.offset(0.0) {
                if g0.len() != m || !range_contained(&Matrix::from_column_slice(m, 1, g0.as_slice()), &sym, RANK_TOL) {
                    return Err(Error::RangeConditionViolated("g(0) ∉ rge(D+Dᵀ)".into()));
                }
            }
            if spectral_norm(&dec.h) > dec.lh * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::InvalidArgument(format!(
                    "‖H‖ = {} exceeds Lh = {}",
                    spectral_norm(&dec.h),
                    dec.lh
                )));
            }
        }
        if let Some(sigma) = self.sigma {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
            }
        }
        let coords = Coordinates::from_storage(&p)?;
        Ok(LureSystem {
            b,
            c,
            d,
            drift: self.drift,
            set: self.set,
            cert,
            sigma: self.sigma,
            coords,
            in_range,
        })
    }
}

impl LureSystem {
    pub fn builder(b: Matrix, c: Matrix, d: Matrix, drift: Drift, set: MovingSet) -> SystemBuilder {
        SystemBuilder {
            b,
            c,
            d,
            drift,
            set,
            p: None,
            sigma: None,
            waive_kernel_inclusion: false,
        }
    }

    pub fn new(
        b: Matrix,
        c: Matrix,
        d: Matrix,
        drift: Drift,
        set: MovingSet,
        p: Option<Matrix>,
    ) -> Result<Self> {
        let builder = Self::builder(b, c, d, drift, set);
        match p {
            Some(p) => builder.storage(p).build(),
            None => builder.build(),
        }
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn set(&self) -> &MovingSet {
        &self.set
    }

    pub fn cert(&self) -> &PassivityCertificate {
        &self.cert
    }

    pub fn kappa(&self) -> f64 {
        self.cert.kappa
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Same system with a different declared decay modulus.
    pub fn with_sigma(mut self, sigma: Option<f64>) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn coordinates(&self) -> &Coordinates {
        &self.coords
    }

    /// `‖B̃ − C̃ᵀ‖` in the coordinates where the storage matrix is the
    /// identity.
    pub fn passivity_gap(&self) -> f64 {
        let bt = self.coords.input_matrix(&self.b);
        let ct = self.coords.output_matrix(&self.c);
        spectral_norm(&(bt - ct.transpose()))
    }

    /// `K(t,x)`, intersected with `rge(C)` when `C` lacks full row rank.
    pub fn set_at(&self, t: f64, x: &Vector) -> Result<ConvexSet> {
        let set = self.set.evaluate(t, x)?;
        if set.dim() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "K has dimension {}, expected {}",
                set.dim(),
                self.m()
            )));
        }
        if self.in_range.iter().all(|&k| k) {
            return Ok(set);
        }
        let bx = set.as_box().ok_or_else(|| {
            Error::UnsupportedOutputMatrix(format!(
                "rank-deficient C needs box-valued K, got {}",
                set.kind()
            ))
        })?;
        Ok(restrict_to_range(&bx, &self.in_range)?.into())
    }

    /// `y = x + h f(t,x) − hκx`.
    pub fn explicit_part(&self, t: f64, x: &Vector, h: f64) -> Vector {
        x + self.drift.eval(t, x) * h - x * (h * self.kappa())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub newton_max: usize,
    pub fixed_point_max: usize,
    pub min_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            newton_max: 100,
            fixed_point_max: 1000,
            min_step: 1e-14,
        }
    }
}

impl SolverOptions {
    /// Defaults, with `LURE_STEP_TOL` overriding the tolerance when set to a
    /// positive number.
    pub fn from_env() -> Self {
        let mut opts = Self::default();
        if let Some(tol) = std::env::var("LURE_STEP_TOL")
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| *v > 0.0 && v.is_finite())
        {
            opts.tol = tol;
        }
        opts
    }

    pub fn vi(&self) -> ViOptions {
        ViOptions {
            tol: self.tol,
            newton_max: self.newton_max,
            fixed_point_max: self.fixed_point_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub x_next: Vector,
    /// Internal multiplier, `μ ∈ N_K(w)`.
    pub mu: Vector,
    /// System multiplier `λ = −μ`.
    pub lambda: Vector,
    /// `w = Cx⁺ − Dμ`.
    pub w: Vector,
    /// Max of the scaled state-equation residual and the scaled normal-cone
    /// residual; at most `tol` for an accepted step.
    pub residual: f64,
    pub iterations: usize,
    /// Projection of `μ` onto `rge(D+Dᵀ)`.
    pub mu_range: Vector,
}

fn check_step(sys: &LureSystem, x_prev: &Vector, y_in: &Vector, h: f64, opts: &SolverOptions) -> Result<f64> {
    if x_prev.len() != sys.n() || y_in.len() != sys.n() {
        return Err(Error::DimensionMismatch("step state vectors".into()));
    }
    if !(h >= opts.min_step) {
        return Err(Error::StepTooSmall(h));
    }
    let a = 1.0 - h * sys.kappa();
    if !(a > 0.0) {
        return Err(Error::StepTooLarge(a));
    }
    Ok(a)
}

fn step_problem(sys: &LureSystem, y_in: &Vector, h: f64, a: f64) -> (Matrix, Vector) {
    let q = sys.c() * y_in / a;
    let m = sys.d() + sys.c() * sys.b() * (h / a);
    (m, q)
}

fn finish(
    sys: &LureSystem,
    set: &ConvexSet,
    y_in: &Vector,
    h: f64,
    a: f64,
    mu: Vector,
    iterations: usize,
) -> Result<StepResult> {
    let x_next = (y_in - sys.b() * &mu * h) / a;
    let w = sys.c() * &x_next - sys.d() * &mu;
    let state_res = (&x_next * a + sys.b() * &mu * h - y_in).norm() / (1.0 + y_in.norm());
    let q_scale = (sys.c() * y_in / a).amax().max(1.0);
    let cone_res = set.normal_cone_residual(&w, &mu)? / q_scale;
    let sym = sys.d() + sys.d().transpose();
    let mu_range = range_projector(&sym, RANK_TOL) * &mu;
    Ok(StepResult {
        lambda: -&mu,
        x_next,
        mu,
        w,
        residual: state_res.max(cone_res),
        iterations,
        mu_range,
    })
}

fn accept(result: StepResult, opts: &SolverOptions) -> Result<StepResult> {
    // Rounding in the back-substitution may add a few ulps to the VI residual.
    if result.residual.is_finite() && result.residual <= opts.tol * 10.0 {
        Ok(result)
    } else {
        Err(Error::SolverDiverged {
            residual: result.residual,
            iterations: result.iterations,
        })
    }
}

/// With `P = I`, `M = D + h/(1−hκ)·CB` is monotone whenever `h|κ| <= 1`, so
/// the step has a unique solution there. A failed solve beyond that limit is
/// reported as ill-posed.
fn ill_posed(sys: &LureSystem, h: f64, e: Error) -> Error {
    let limit = well_posed_step_limit(sys);
    match e {
        Error::SolverDiverged { .. } | Error::NoSolution if h > limit => Error::IllPosedStep { h, limit },
        other => other,
    }
}

/// `1/|κ|`, infinite when `κ = 0`.
pub fn well_posed_step_limit(sys: &LureSystem) -> f64 {
    1.0 / sys.kappa().abs()
}

/// One resolvent step with the set frozen at `K(t_next, x_prev)`.
pub fn solve_step(
    sys: &LureSystem,
    t_next: f64,
    x_prev: &Vector,
    y_in: &Vector,
    h: f64,
    opts: &SolverOptions,
) -> Result<StepResult> {
    let a = check_step(sys, x_prev, y_in, h, opts)?;
    let set = sys.set_at(t_next, x_prev)?;
    let (m, q) = step_problem(sys, y_in, h, a);
    let sol = match set.as_box() {
        Some(bx) => vi::solve_box(&m, &q, &bx, &opts.vi()),
        None => vi::solve(&m, &q, &set, &opts.vi()),
    }
    .map_err(|e| ill_posed(sys, h, e))?;
    accept(finish(sys, &set, y_in, h, a, sol.mu, sol.iterations)?, opts)
}

/// [`solve_step`] restricted to box-valued sets.
pub fn inner_solve_box(
    sys: &LureSystem,
    t_next: f64,
    x_prev: &Vector,
    y_in: &Vector,
    h: f64,
    opts: &SolverOptions,
) -> Result<StepResult> {
    let a = check_step(sys, x_prev, y_in, h, opts)?;
    let set = sys.set_at(t_next, x_prev)?;
    let bx = set.as_box().ok_or(Error::NotABox(set.kind()))?;
    let (m, q) = step_problem(sys, y_in, h, a);
    let sol = vi::solve_box(&m, &q, &bx, &opts.vi()).map_err(|e| ill_posed(sys, h, e))?;
    accept(finish(sys, &set, y_in, h, a, sol.mu, sol.iterations)?, opts)
}

/// Exhaustive oracle for box sets with `m <= 3`: for every activity pattern
/// it solves the joint linear system in `(x⁺, μ)` directly, keeps patterns
/// satisfying the sign and feasibility conditions, and returns the one with
/// least `‖μ‖`.
pub fn brute_force_step_oracle(
    sys: &LureSystem,
    t_next: f64,
    x_prev: &Vector,
    y_in: &Vector,
    h: f64,
) -> Result<StepResult> {
    let opts = SolverOptions::default();
    let a = check_step(sys, x_prev, y_in, h, &opts)?;
    let set = sys.set_at(t_next, x_prev)?;
    let bx = set.as_box().ok_or(Error::NotABox(set.kind()))?;
    let (n, m) = (sys.n(), sys.m());
    if m > 3 {
        return Err(Error::InvalidArgument(format!("oracle supports m <= 3, got {m}")));
    }
    let scale = 1.0 + y_in.amax() + bx.lower().iter().chain(bx.upper().iter()).filter(|v| v.is_finite()).fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut best: Option<(f64, Vector, Vector)> = None;
    for code in 0..3_usize.pow(m as u32) {
        // 0: at lower bound, 1: free, 2: at upper bound
        let pattern: Vec<usize> = (0..m).map(|i| (code / 3_usize.pow(i as u32)) % 3).collect();
        let bound_of = |i: usize| match pattern[i] {
            0 => bx.lower()[i],
            _ => bx.upper()[i],
        };
        if (0..m).any(|i| pattern[i] != 1 && !bound_of(i).is_finite()) {
            continue;
        }
        let mut lhs = Matrix::zeros(n + m, n + m);
        let mut rhs = Vector::zeros(n + m);
        lhs.view_mut((0, 0), (n, n)).fill_diagonal(a);
        lhs.view_mut((0, n), (n, m)).copy_from(&(sys.b() * h));
        rhs.rows_mut(0, n).copy_from(y_in);
        for i in 0..m {
            if pattern[i] == 1 {
                lhs[(n + i, n + i)] = 1.0;
            } else {
                for j in 0..n {
                    lhs[(n + i, j)] = sys.c()[(i, j)];
                }
                for j in 0..m {
                    lhs[(n + i, n + j)] = -sys.d()[(i, j)];
                }
                rhs[n + i] = bound_of(i);
            }
        }
        let z = match lhs.clone().full_piv_lu().solve(&rhs) {
            Some(z) if z.iter().all(|v| v.is_finite()) => z,
            _ => svd(&lhs).solve(&rhs, 1e-12),
        };
        if (&lhs * &z - &rhs).amax() > tol * (1.0 + z.amax()) {
            continue;
        }
        let x = z.rows(0, n).into_owned();
        let mu = z.rows(n, m).into_owned();
        let w = sys.c() * &x - sys.d() * &mu;
        let valid = (0..m).all(|i| match pattern[i] {
            0 => mu[i] <= tol,
            2 => mu[i] >= -tol,
            _ => w[i] >= bx.lower()[i] - tol && w[i] <= bx.upper()[i] + tol,
        });
        if !valid {
            continue;
        }
        let norm = mu.norm();
        if best.as_ref().is_none_or(|(bn, _, _)| norm < *bn) {
            best = Some((norm, x, mu));
        }
    }
    let (_, _, mu) = best.ok_or(Error::NoSolution)?;
    finish(sys, &set, y_in, h, a, mu, 0)
}
