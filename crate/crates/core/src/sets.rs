//! Closed convex sets with exact Euclidean projections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Axis-aligned box; bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vector,
    upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
            if l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::InvalidSet(format!("bad bounds [{l}, {u}] at {i}")));
            }
            if l > u {
                return Err(Error::EmptySet);
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(lower), Vector::from_column_slice(upper))
    }

    /// The whole space `ℝᵐ`.
    pub fn whole_space(dim: usize) -> Self {
        Self {
            lower: Vector::from_element(dim, f64::NEG_INFINITY),
            upper: Vector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, p: &Vector) -> Vector {
        Vector::from_iterator(
            p.len(),
            p.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(&v, (&l, &u))| v.max(l).min(u)),
        )
    }

    pub fn shifted(&self, offset: &Vector) -> Self {
        Self {
            lower: &self.lower + offset,
            upper: &self.upper + offset,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }
}

/// `{y : Ay <= b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: Matrix,
    b: Vector,
}

impl Polyhedron {
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "polyhedron has {} rows but {} right-hand sides",
                a.nrows(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSet("non-finite polyhedron data".into()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn project(&self, p: &Vector) -> Result<Vector> {
        project_polyhedron(&self.a, &self.b, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Box(BoxSet),
    Polyhedron(Polyhedron),
    /// `{z + offset : z ∈ base}`.
    Translate { base: Box<ConvexSet>, offset: Vector },
}

impl From<BoxSet> for ConvexSet {
    fn from(b: BoxSet) -> Self {
        ConvexSet::Box(b)
    }
}

impl From<Polyhedron> for ConvexSet {
    fn from(p: Polyhedron) -> Self {
        ConvexSet::Polyhedron(p)
    }
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box(b) => b.dim(),
            ConvexSet::Polyhedron(p) => p.dim(),
            ConvexSet::Translate { base, .. } => base.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConvexSet::Box(_) => "box",
            ConvexSet::Polyhedron(_) => "polyhedron",
            ConvexSet::Translate { .. } => "translate",
        }
    }

    pub fn translate(self, offset: Vector) -> Self {
        ConvexSet::Translate {
            base: Box::new(self),
            offset,
        }
    }

    /// Resolves translates of boxes into a plain box.
    pub fn as_box(&self) -> Option<BoxSet> {
        match self {
            ConvexSet::Box(b) => Some(b.clone()),
            ConvexSet::Polyhedron(_) => None,
            ConvexSet::Translate { base, offset } => base.as_box().map(|b| b.shifted(offset)),
        }
    }

    /// Inequality description `(A, b)` with translates folded into `b`.
    /// Infinite box bounds produce no rows.
    pub fn as_inequalities(&self) -> (Matrix, Vector) {
        match self {
            ConvexSet::Box(bx) => {
                let m = bx.dim();
                let mut rows = Vec::new();
                let mut rhs = Vec::new();
                for i in 0..m {
                    if bx.upper[i].is_finite() {
                        let mut r = vec![0.0; m];
                        r[i] = 1.0;
                        rows.push(r);
                        rhs.push(bx.upper[i]);
                    }
                    if bx.lower[i].is_finite() {
                        let mut r = vec![0.0; m];
                        r[i] = -1.0;
                        rows.push(r);
                        rhs.push(-bx.lower[i]);
                    }
                }
                let a = Matrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
                (a, Vector::from_vec(rhs))
            }
            ConvexSet::Polyhedron(p) => (p.a.clone(), p.b.clone()),
            ConvexSet::Translate { base, offset } => {
                let (a, b) = base.as_inequalities();
                let shift = &a * offset;
                (a, b + shift)
            }
        }
    }

    fn check_point(&self, p: &Vector) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {} but set has {}",
                p.len(),
                self.dim()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        Ok(())
    }

    pub fn project(&self, p: &Vector) -> Result<Vector> {
        self.check_point(p)?;
        self.project_unchecked(p)
    }

    fn project_unchecked(&self, p: &Vector) -> Result<Vector> {
        match self {
            ConvexSet::Box(b) => Ok(b.project(p)),
            ConvexSet::Polyhedron(poly) => poly.project(p),
            ConvexSet::Translate { base, offset } => {
                Ok(base.project_unchecked(&(p - offset))? + offset)
            }
        }
    }

    pub fn distance(&self, p: &Vector) -> Result<f64> {
        Ok((p - self.project(p)?).norm())
    }

    pub fn contains(&self, p: &Vector, tol: f64) -> bool {
        self.distance(p).map(|d| d <= tol).unwrap_or(false)
    }

    /// `‖y − Π(y + μ)‖`, zero exactly when `μ ∈ N_S(y)`.
    pub fn normal_cone_residual(&self, y: &Vector, mu: &Vector) -> Result<f64> {
        if mu.len() != y.len() {
            return Err(Error::DimensionMismatch("multiplier and point".into()));
        }
        Ok((y - self.project(&(y + mu))?).norm())
    }

    /// Bounded iff far-away points along every coordinate axis project to a
    /// fixed place.
    pub fn is_bounded(&self) -> Result<bool> {
        if let Some(b) = self.as_box() {
            return Ok(b.is_bounded());
        }
        let m = self.dim();
        let anchor = self.project(&Vector::zeros(m))?;
        let reach = 1e8 * (1.0 + anchor.amax());
        for i in 0..m {
            for sign in [-1.0, 1.0] {
                let mut far = anchor.clone();
                far[i] += sign * reach;
                let near_proj = self.project(&far)?;
                far[i] += sign * reach;
                let far_proj = self.project(&far)?;
                if (far_proj - near_proj).norm() > 1e-6 * reach {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Euclidean projection onto `{y : Ay <= b}` by a dual active-set method
/// (Goldfarb–Idnani with identity Hessian). Violated constraints and ties in
/// the drop step are chosen by smallest index.
pub fn project_polyhedron(a: &Matrix, b: &Vector, p: &Vector) -> Result<Vector> {
    let (k, m) = a.shape();
    if p.len() != m || b.len() != k {
        return Err(Error::DimensionMismatch("polyhedron projection".into()));
    }
    let row_norms: Vec<f64> = (0..k).map(|j| a.row(j).norm()).collect();
    let mut y = p.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_outer = 50 * (k + m + 1);

    for _ in 0..max_outer {
        let tol_for = |j: usize, y: &Vector| 1e-12 * (1.0 + b[j].abs() + row_norms[j] * y.amax());
        let violated = (0..k).find(|&j| {
            if active.contains(&j) {
                return false;
            }
            let s = a.row(j).dot(&y.transpose()) - b[j];
            s > tol_for(j, &y)
        });
        let Some(j) = violated else {
            return Ok(y);
        };
        if row_norms[j] == 0.0 {
            return Err(Error::EmptySet);
        }
        let aj: Vector = a.row(j).transpose();
        let mut u_new = 0.0;
        loop {
            let n_mat = if active.is_empty() {
                Matrix::zeros(m, 0)
            } else {
                Matrix::from_columns(
                    &active.iter().map(|&i| a.row(i).transpose()).collect::<Vec<_>>(),
                )
            };
            let (z, r) = if active.is_empty() {
                (aj.clone(), Vector::zeros(0))
            } else {
                let gram = n_mat.transpose() * &n_mat;
                let rhs = n_mat.transpose() * &aj;
                let r = match gram.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => gram
                        .pseudo_inverse(1e-12)
                        .map_err(|_| Error::EmptySet)?
                        * rhs,
                };
                (&aj - &n_mat * &r, r)
            };
            let z_sq = z.norm_squared();
            let full_step = if z_sq > 1e-14 * row_norms[j] * row_norms[j] {
                let s = aj.dot(&y) - b[j];
                Some((s / z_sq).max(0.0))
            } else {
                None
            };
            let mut partial: Option<(f64, usize)> = None;
            for (pos, &ri) in r.iter().enumerate() {
                if ri > 1e-14 {
                    let t = u[pos] / ri;
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, pos));
                    }
                }
            }
            match (full_step, partial) {
                (None, None) => return Err(Error::EmptySet),
                (Some(t2), p) if p.is_none_or(|(t1, _)| t2 <= t1) => {
                    y -= &z * t2;
                    for (ui, ri) in u.iter_mut().zip(r.iter()) {
                        *ui -= t2 * ri;
                    }
                    u_new += t2;
                    active.push(j);
                    u.push(u_new);
                    break;
                }
                (full, Some((t1, pos))) => {
                    if full.is_some() {
                        y -= &z * t1;
                    }
                    for (ui, ri) in u.iter_mut().zip(r.iter()) {
                        *ui -= t1 * ri;
                    }
                    u_new += t1;
                    active.remove(pos);
                    u.remove(pos);
                }
                (Some(_), None) => unreachable!(),
            }
        }
    }
    Err(Error::SolverDiverged {
        residual: f64::NAN,
        iterations: max_outer,
    })
}

/// Projection onto `{y : Ay <= b}` by enumerating every candidate active set
/// of size at most `m`. Exponential; meant as a cross-check for small `k`.
pub fn project_polyhedron_exhaustive(a: &Matrix, b: &Vector, p: &Vector) -> Result<Vector> {
    let (k, m) = a.shape();
    if k > 20 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive projection supports at most 20 constraints, got {k}"
        )));
    }
    let feasible = |y: &Vector| (0..k).all(|j| a.row(j).dot(&y.transpose()) <= b[j] + 1e-9);
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1u32 << k) {
        let subset: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        if subset.len() > m {
            continue;
        }
        let y = if subset.is_empty() {
            p.clone()
        } else {
            let a_s = a.select_rows(subset.iter());
            let b_s = Vector::from_iterator(subset.len(), subset.iter().map(|&j| b[j]));
            let gram = &a_s * a_s.transpose();
            let Ok(pinv) = gram.pseudo_inverse(1e-12) else {
                continue;
            };
            let nu = pinv * (&a_s * p - b_s);
            if nu.iter().any(|&v| v < -1e-10) {
                continue;
            }
            p - a_s.transpose() * nu
        };
        if feasible(&y) {
            let d = (&y - p).norm();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, y));
            }
        }
    }
    best.map(|(_, y)| y).ok_or(Error::EmptySet)
}

fn one_sided_interval(l1: f64, u1: f64, l2: f64, u2: f64) -> f64 {
    let dist = |x: f64| {
        if x < l2 {
            l2 - x
        } else if x > u2 {
            x - u2
        } else {
            0.0
        }
    };
    let low = if l1.is_finite() {
        dist(l1)
    } else if l2.is_finite() {
        f64::INFINITY
    } else {
        0.0
    };
    let high = if u1.is_finite() {
        dist(u1)
    } else if u2.is_finite() {
        f64::INFINITY
    } else {
        0.0
    };
    low.max(high)
}

/// Exact Euclidean Hausdorff distance between two boxes.
pub fn hausdorff_box(b1: &BoxSet, b2: &BoxSet) -> Result<f64> {
    if b1.dim() != b2.dim() {
        return Err(Error::DimensionMismatch("boxes".into()));
    }
    let mut forward = 0.0;
    let mut backward = 0.0;
    for i in 0..b1.dim() {
        let (l1, u1, l2, u2) = (b1.lower[i], b1.upper[i], b2.lower[i], b2.upper[i]);
        let f = one_sided_interval(l1, u1, l2, u2);
        let g = one_sided_interval(l2, u2, l1, u1);
        if !f.is_finite() || !g.is_finite() {
            return Err(Error::InfiniteDistance);
        }
        forward += f * f;
        backward += g * g;
    }
    Ok(forward.sqrt().max(backward.sqrt()))
}

/// Deterministic sequence of unit directions; the first `count` entries do
/// not depend on `count`.
fn sample_directions(dim: usize, count: usize) -> Vec<Vector> {
    match dim {
        0 => Vec::new(),
        1 => (0..count)
            .map(|j| Vector::from_element(1, if j % 2 == 0 { 1.0 } else { -1.0 }))
            .collect(),
        2 => {
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..count)
                .map(|j| {
                    let theta = j as f64 * golden;
                    Vector::from_vec(vec![theta.cos(), theta.sin()])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1e5);
            (0..count)
                .map(|_| {
                    let v = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let n = v.norm();
                    if n > 0.0 {
                        v / n
                    } else {
                        Vector::from_element(dim, 1.0 / (dim as f64).sqrt())
                    }
                })
                .collect()
        }
    }
}

fn boundary_samples(set: &ConvexSet, directions: &[Vector]) -> Result<Vec<Vector>> {
    let m = set.dim();
    let anchor = set.project(&Vector::zeros(m))?;
    let mut extent: f64 = 1.0;
    for i in 0..m {
        for sign in [-1.0, 1.0] {
            let mut probe = anchor.clone();
            probe[i] += sign * 1e6;
            extent = extent.max((set.project(&probe)? - &anchor).norm());
        }
    }
    let reach = 1e3 * extent;
    directions
        .iter()
        .map(|d| set.project(&(&anchor + d * reach)))
        .collect()
}

/// Lower bound on the Hausdorff distance of two bounded sets, from boundary
/// points found by projecting far-away points along `directions` sample
/// directions. Nondecreasing in `directions`.
pub fn hausdorff_sampled(s1: &ConvexSet, s2: &ConvexSet, directions: usize) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch("sets".into()));
    }
    if !s1.is_bounded()? || !s2.is_bounded()? {
        return Err(Error::Unbounded);
    }
    let dirs = sample_directions(s1.dim(), directions);
    let mut best: f64 = 0.0;
    for x in boundary_samples(s1, &dirs)? {
        best = best.max(s2.distance(&x)?);
    }
    for x in boundary_samples(s2, &dirs)? {
        best = best.max(s1.distance(&x)?);
    }
    Ok(best)
}
