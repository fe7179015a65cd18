//! Affine variational inequalities `μ ∈ N_K(q − Mμ)` over a convex set `K`.
//!
//! Every implicit step and every admissibility test reduces to this problem.
//! Boxes are solved by a semismooth Newton method on the natural residual
//! `R(μ) = w − Π_K(w + μ)`, `w = q − Mμ`. Polyhedra are lifted to a box
//! problem in the constraint multipliers. Any other set, or a Newton stall,
//! falls back to Tseng's forward-backward-forward splitting, which only needs
//! `M` monotone and a projection onto `K`.

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, svd, Matrix, Vector};
use crate::sets::{BoxSet, ConvexSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub tol: f64,
    pub newton_max: usize,
    pub fixed_point_max: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            newton_max: 100,
            fixed_point_max: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViSolution {
    pub mu: Vector,
    pub residual: f64,
    pub iterations: usize,
}

/// Threshold on `‖R(μ)‖`: `tol` scaled by the magnitude of the data.
pub fn threshold(q: &Vector, tol: f64) -> f64 {
    tol * q.amax().max(1.0)
}

pub fn residual(m: &Matrix, q: &Vector, set: &ConvexSet, mu: &Vector) -> Result<f64> {
    let w = q - m * mu;
    set.normal_cone_residual(&w, mu)
}

fn box_residual(m: &Matrix, q: &Vector, bx: &BoxSet, mu: &Vector) -> Vector {
    let w = q - m * mu;
    let z = &w + mu;
    &w - bx.project(&z)
}

fn check_dims(m: &Matrix, q: &Vector, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) || q.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "affine VI: M {:?}, q {}, set dimension {dim}",
            m.shape(),
            q.len()
        )));
    }
    Ok(())
}

/// Least-norm solution of a square system; falls back to the SVD
/// pseudo-inverse when LU reports singularity.
fn solve_square(a: &Matrix, rhs: &Vector) -> Vector {
    if a.nrows() == 0 {
        return Vector::zeros(0);
    }
    if let Some(x) = a.clone().lu().solve(rhs) {
        if x.iter().all(|v| v.is_finite()) && (a * &x - rhs).amax() <= 1e-9 * (1.0 + rhs.amax()) {
            return x;
        }
    }
    let d = svd(a);
    let z = d.solve(rhs, 1e-12);
    // One step of iterative refinement.
    let correction = d.solve(&(rhs - a * &z), 1e-12);
    z + correction
}

/// Semismooth Newton on the natural residual for a box.
pub fn newton_box(
    m: &Matrix,
    q: &Vector,
    bx: &BoxSet,
    start: &Vector,
    opts: &ViOptions,
) -> Result<ViSolution> {
    let dim = bx.dim();
    check_dims(m, q, dim)?;
    let thr = threshold(q, opts.tol);
    let mut mu = start.clone();
    let mut r = box_residual(m, q, bx, &mu);
    let mut merit = r.norm_squared();
    for it in 0..opts.newton_max {
        if merit.sqrt() <= thr {
            return Ok(ViSolution {
                residual: merit.sqrt(),
                mu,
                iterations: it,
            });
        }
        let z = q - m * &mu + &mu;
        let free: Vec<bool> = (0..dim)
            .map(|i| z[i] > bx.lower()[i] && z[i] < bx.upper()[i])
            .collect();
        let mut delta = Vector::zeros(dim);
        let active: Vec<usize> = (0..dim).filter(|&i| !free[i]).collect();
        for i in 0..dim {
            if free[i] {
                delta[i] = -mu[i];
            }
        }
        if !active.is_empty() {
            let m_aa = m.select_rows(active.iter()).select_columns(active.iter());
            let coupling = m.select_rows(active.iter()) * &delta;
            let rhs = Vector::from_iterator(
                active.len(),
                active.iter().enumerate().map(|(k, &i)| r[i] - coupling[k]),
            );
            let sol = solve_square(&m_aa, &rhs);
            for (k, &i) in active.iter().enumerate() {
                delta[i] = sol[k];
            }
        }
        let mut step = 1.0;
        loop {
            let trial = &mu + &delta * step;
            let r_trial = box_residual(m, q, bx, &trial);
            let merit_trial = r_trial.norm_squared();
            if merit_trial <= (1.0 - 1e-4 * step) * merit || merit_trial.sqrt() <= thr {
                mu = trial;
                r = r_trial;
                merit = merit_trial;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                return Err(Error::SolverDiverged {
                    residual: merit.sqrt(),
                    iterations: it + 1,
                });
            }
        }
    }
    let res = merit.sqrt();
    if res <= thr {
        Ok(ViSolution {
            mu,
            residual: res,
            iterations: opts.newton_max,
        })
    } else {
        Err(Error::SolverDiverged {
            residual: res,
            iterations: opts.newton_max,
        })
    }
}

/// Tseng forward-backward-forward splitting for `0 ∈ Mμ − q + N_K⁻¹(μ)`.
/// The backward step uses the Moreau identity
/// `prox_{ρσ_K}(v) = v − ρ Π_K(v/ρ)`.
pub fn forward_backward_forward(
    m: &Matrix,
    q: &Vector,
    set: &ConvexSet,
    start: &Vector,
    opts: &ViOptions,
) -> Result<ViSolution> {
    check_dims(m, q, set.dim())?;
    let (best, converged) = splitting_run(m, q, set, start, opts)?;
    if converged {
        Ok(best)
    } else {
        Err(Error::SolverDiverged {
            residual: best.residual,
            iterations: best.iterations,
        })
    }
}

/// Runs the splitting and returns the best iterate seen, with a flag telling
/// whether it reached the threshold.
fn splitting_run(
    m: &Matrix,
    q: &Vector,
    set: &ConvexSet,
    start: &Vector,
    opts: &ViOptions,
) -> Result<(ViSolution, bool)> {
    let thr = threshold(q, opts.tol);
    let lip = spectral_norm(m);
    let rho = if lip > 0.0 { (0.9 / lip).min(1.0) } else { 1.0 };
    let op = |mu: &Vector| m * mu - q;
    let mut mu = start.clone();
    let mut best = ViSolution {
        residual: residual(m, q, set, &mu)?,
        mu: mu.clone(),
        iterations: 0,
    };
    for it in 0..opts.fixed_point_max {
        let a_mu = op(&mu);
        let v = &mu - &a_mu * rho;
        let z = &v - set.project(&(&v / rho))? * rho;
        let res = residual(m, q, set, &z)?;
        if res < best.residual {
            best = ViSolution {
                mu: z.clone(),
                residual: res,
                iterations: it + 1,
            };
        }
        if res <= thr {
            return Ok((best, true));
        }
        mu = &z - (op(&z) - a_mu) * rho;
        if mu.iter().any(|x| !x.is_finite()) {
            break;
        }
    }
    best.iterations = opts.fixed_point_max;
    Ok((best, false))
}

/// Newton for boxes, the multiplier lift for polyhedra, and splitting as the
/// fallback.
pub fn solve(m: &Matrix, q: &Vector, set: &ConvexSet, opts: &ViOptions) -> Result<ViSolution> {
    check_dims(m, q, set.dim())?;
    let zero = Vector::zeros(set.dim());
    if let Some(bx) = set.as_box() {
        return solve_box_with_fallback(m, q, &bx, set, &zero, opts);
    }
    if let Ok(sol) = solve_polyhedral(m, q, set, opts) {
        return Ok(sol);
    }
    forward_backward_forward(m, q, set, &zero, opts)
}

/// Box-only entry point: Newton with the splitting fallback.
pub fn solve_box(m: &Matrix, q: &Vector, bx: &BoxSet, opts: &ViOptions) -> Result<ViSolution> {
    check_dims(m, q, bx.dim())?;
    let set: ConvexSet = bx.clone().into();
    solve_box_with_fallback(m, q, bx, &set, &Vector::zeros(bx.dim()), opts)
}

/// Newton first; if it stalls, splitting, and finally Newton restarted from
/// the best splitting iterate.
fn solve_box_with_fallback(
    m: &Matrix,
    q: &Vector,
    bx: &BoxSet,
    set: &ConvexSet,
    start: &Vector,
    opts: &ViOptions,
) -> Result<ViSolution> {
    let newton_err = match newton_box(m, q, bx, start, opts) {
        Ok(sol) => return Ok(sol),
        Err(e) => e,
    };
    let (split, converged) = splitting_run(m, q, set, start, opts)?;
    let spent = opts.newton_max + split.iterations;
    if converged {
        return Ok(ViSolution {
            iterations: spent,
            ..split
        });
    }
    let failure = match newton_box(m, q, bx, &split.mu, opts) {
        Ok(sol) => {
            return Ok(ViSolution {
                iterations: spent + sol.iterations,
                ..sol
            })
        }
        Err(Error::SolverDiverged { residual, .. }) => Error::SolverDiverged {
            residual: residual.min(split.residual),
            iterations: spent + opts.newton_max,
        },
        Err(_) => newton_err,
    };
    // Non-monotone M (possible when h is large against the passivity gap):
    // exhaustive pivoting for small boxes.
    if bx.dim() <= ENUMERATION_MAX_DIM {
        if let Ok(mu) = enumerate_box(m, q, bx, 1e-12) {
            let res = residual(m, q, set, &mu)?;
            if res <= threshold(q, opts.tol) {
                return Ok(ViSolution {
                    mu,
                    residual: res,
                    iterations: spent + opts.newton_max,
                });
            }
        }
    }
    Err(failure)
}

/// Largest box dimension for the enumeration fallback (3^10 patterns).
pub const ENUMERATION_MAX_DIM: usize = 10;

/// Polyhedron `{Az <= b}`: with `μ = Aᵀν` the problem becomes the box problem
/// `ν ∈ N_{(−∞,0]ᵏ}(−(b − Aq) − AMAᵀν)`.
pub fn solve_polyhedral(m: &Matrix, q: &Vector, set: &ConvexSet, opts: &ViOptions) -> Result<ViSolution> {
    let (a, b) = set.as_inequalities();
    let k = a.nrows();
    let lifted_m = &a * m * a.transpose();
    let lifted_q = -(b - &a * q);
    let orthant = BoxSet::new(
        Vector::from_element(k, f64::NEG_INFINITY),
        Vector::zeros(k),
    )?;
    let lifted_set: ConvexSet = orthant.clone().into();
    let nu = solve_box_with_fallback(
        &lifted_m,
        &lifted_q,
        &orthant,
        &lifted_set,
        &Vector::zeros(k),
        opts,
    )?;
    let mu = a.transpose() * &nu.mu;
    let res = residual(m, q, set, &mu)?;
    if res > threshold(q, opts.tol) * 10.0 {
        return Err(Error::SolverDiverged {
            residual: res,
            iterations: nu.iterations,
        });
    }
    Ok(ViSolution {
        mu,
        residual: res,
        iterations: nu.iterations,
    })
}

/// Exhaustive search over the `3ᵐ` activity patterns of a box (each
/// coordinate at its lower bound, free, or at its upper bound). Returns the
/// least-norm multiplier among valid patterns, or `NoSolution`.
pub fn enumerate_box(m: &Matrix, q: &Vector, bx: &BoxSet, tol: f64) -> Result<Vector> {
    let dim = bx.dim();
    check_dims(m, q, dim)?;
    if dim > 12 {
        return Err(Error::InvalidArgument(format!(
            "pattern enumeration supports dimension <= 12, got {dim}"
        )));
    }
    let scale = 1.0 + q.amax() + m.amax();
    let mut best: Option<Vector> = None;
    let patterns = 3usize.pow(dim as u32);
    'pattern: for code in 0..patterns {
        // 0 = lower, 1 = free, 2 = upper
        let mut pattern = vec![0u8; dim];
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = (c % 3) as u8;
            c /= 3;
        }
        let mut bounds = Vec::new();
        let mut active = Vec::new();
        for (i, &p) in pattern.iter().enumerate() {
            match p {
                0 if bx.lower()[i].is_finite() => {
                    active.push(i);
                    bounds.push(bx.lower()[i]);
                }
                2 if bx.upper()[i].is_finite() => {
                    active.push(i);
                    bounds.push(bx.upper()[i]);
                }
                1 => {}
                _ => continue 'pattern,
            }
        }
        let mut mu = Vector::zeros(dim);
        if !active.is_empty() {
            let m_aa = m.select_rows(active.iter()).select_columns(active.iter());
            let rhs = Vector::from_iterator(
                active.len(),
                active.iter().zip(bounds.iter()).map(|(&i, &bd)| q[i] - bd),
            );
            let sol = solve_square(&m_aa, &rhs);
            if (&m_aa * &sol - &rhs).amax() > tol * scale {
                continue;
            }
            for (k, &i) in active.iter().enumerate() {
                mu[i] = sol[k];
            }
        }
        let w = q - m * &mu;
        for i in 0..dim {
            let ok = match pattern[i] {
                0 => mu[i] <= tol * scale,
                2 => mu[i] >= -tol * scale,
                _ => w[i] >= bx.lower()[i] - tol * scale && w[i] <= bx.upper()[i] + tol * scale,
            };
            if !ok {
                continue 'pattern;
            }
        }
        if best.as_ref().is_none_or(|b| mu.norm() < b.norm()) {
            best = Some(mu);
        }
    }
    best.ok_or(Error::NoSolution)
}
