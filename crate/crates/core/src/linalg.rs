//! Dense small-matrix utilities: spectral constants, passivity checks and the
//! coordinate change that turns a storage matrix `P` into the identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold (against the largest eigen/singular value) below which
/// a value counts as zero.
pub const RANK_TOL: f64 = 1e-9;

pub fn spectral_norm(m: &Matrix) -> f64 {
    svd(m).sigma_max()
}

/// Full singular value decomposition `m = U diag(σ) Vᵀ`: `U` is square of
/// order `nrows`, `V` of order `ncols`, and `σ` has `min(nrows, ncols)`
/// entries in decreasing order.
///
/// Computed with faer: nalgebra's dynamic SVD loses backward accuracy on
/// matrices with repeated singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
}

pub fn svd(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Svd {
            u: Matrix::identity(rows, rows),
            singular_values: Vector::zeros(0),
            v: Matrix::identity(cols, cols),
        };
    }
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    match f.svd() {
        Ok(d) => {
            let (u, s, v) = (d.U(), d.S(), d.V());
            Svd {
                u: Matrix::from_fn(rows, rows, |i, j| u[(i, j)]),
                singular_values: Vector::from_fn(rows.min(cols), |k, _| s[k]),
                v: Matrix::from_fn(cols, cols, |i, j| v[(i, j)]),
            }
        }
        // Only non-finite input keeps faer from converging.
        Err(_) => Svd {
            u: Matrix::identity(rows, rows),
            singular_values: Vector::from_element(rows.min(cols), f64::NAN),
            v: Matrix::identity(cols, cols),
        },
    }
}

impl Svd {
    /// NaN when the decomposition failed.
    pub fn sigma_max(&self) -> f64 {
        if self.singular_values.iter().any(|s| s.is_nan()) {
            return f64::NAN;
        }
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let sigma_max = self.sigma_max();
        if !(sigma_max > 0.0) {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_tol * sigma_max).count()
    }

    /// Minimum-norm least-squares solution of `m z = rhs`, treating singular
    /// values at or below `rel_tol · σ_max` as zero.
    pub fn solve(&self, rhs: &Vector, rel_tol: f64) -> Vector {
        let r = self.rank(rel_tol);
        let mut z = Vector::zeros(self.v.nrows());
        for k in 0..r {
            let coef = self.u.column(k).dot(rhs) / self.singular_values[k];
            z.axpy(coef, &self.v.column(k), 1.0);
        }
        z
    }
}

pub fn symmetric_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn is_symmetric(m: &Matrix, rel_tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(sym: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = sym.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of a symmetric PSD matrix that is strictly larger than
/// `rel_tol` times the largest one.
pub fn smallest_positive_eigenvalue(m: &Matrix, rel_tol: f64) -> Result<f64> {
    check_square(m, "matrix")?;
    if !is_symmetric(m, rel_tol) {
        return Err(Error::NotSymmetric);
    }
    let ev = sorted_eigenvalues(&symmetric_part(m));
    let largest = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if largest == 0.0 {
        return Err(Error::NoPositiveEigenvalue);
    }
    let threshold = rel_tol * largest;
    if ev.first().is_some_and(|&v| v < -threshold) {
        return Err(Error::NotPsd);
    }
    ev.into_iter()
        .find(|&v| v > threshold)
        .ok_or(Error::NoPositiveEigenvalue)
}

/// True iff the symmetric part of `m` has smallest eigenvalue `>= -tol`.
pub fn is_positive_semidefinite(m: &Matrix, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    sorted_eigenvalues(&symmetric_part(m))[0] >= -tol
}

/// Orthonormal basis (as columns) of the null space of `m`, using singular
/// values below `rel_tol * sigma_max` as zero.
pub fn null_space(m: &Matrix, rel_tol: f64) -> Matrix {
    let cols = m.ncols();
    if cols == 0 {
        return Matrix::zeros(0, 0);
    }
    let d = svd(m);
    let r = d.rank(rel_tol);
    d.v.columns(r, cols - r).into_owned()
}

/// Orthogonal projector onto the column space of `m`.
pub fn range_projector(m: &Matrix, rel_tol: f64) -> Matrix {
    let d = svd(m);
    let basis = d.u.columns(0, d.rank(rel_tol));
    basis * basis.transpose()
}

pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    svd(m).rank(rel_tol)
}

/// True iff the column space of `sub` lies in the column space of `sup`.
pub fn range_contained(sub: &Matrix, sup: &Matrix, rel_tol: f64) -> bool {
    if sub.nrows() != sup.nrows() {
        return false;
    }
    let proj = range_projector(sup, rel_tol);
    let residual = &proj * sub - sub;
    residual.amax() <= rel_tol * sub.amax().max(1.0)
}

/// For an output matrix without full row rank whose range is spanned by
/// standard basis vectors, the coordinates in that range. `None` when the
/// range is not a coordinate subspace; all `true` for full row rank.
pub fn coordinate_range(c: &Matrix) -> Option<Vec<bool>> {
    let m = c.nrows();
    if rank(c, RANK_TOL) == m {
        return Some(vec![true; m]);
    }
    let proj = range_projector(c, RANK_TOL);
    let mut in_range = vec![false; m];
    for i in 0..m {
        for j in 0..m {
            let expect = if i == j { proj[(i, i)].round() } else { 0.0 };
            if (proj[(i, j)] - expect).abs() > 1e-9 {
                return None;
            }
        }
        in_range[i] = proj[(i, i)] > 0.5;
    }
    Some(in_range)
}

/// Checks `ker(D+Dᵀ) ⊂ ker(PB−Cᵀ)`.
pub fn kernel_inclusion(d: &Matrix, p: &Matrix, b: &Matrix, c: &Matrix, tol: f64) -> Result<bool> {
    check_square(d, "D")?;
    check_square(p, "P")?;
    let (n, m) = (p.nrows(), d.nrows());
    if b.shape() != (n, m) || c.shape() != (m, n) {
        return Err(Error::DimensionMismatch(format!(
            "expected B {n}x{m} and C {m}x{n}, got B {:?} and C {:?}",
            b.shape(),
            c.shape()
        )));
    }
    let gap = p * b - c.transpose();
    let gap_norm = spectral_norm(&gap);
    if gap_norm == 0.0 {
        return Ok(true);
    }
    let sym = d + d.transpose();
    let kernel = null_space(&sym, RANK_TOL);
    Ok(kernel
        .column_iter()
        .all(|v| (&gap * v).norm() <= tol * gap_norm * v.norm()))
}

/// Lemma-2 choice of κ: zero when `PB = Cᵀ`, otherwise the equality case
/// `κ = −‖PB−Cᵀ‖² / (4 α c₁)`.
///
/// The kernel inclusion is not checked here; see [`PassivityCertificate::certify`].
pub fn select_kappa(p: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<f64> {
    let gap_norm = spectral_norm(&(p * b - c.transpose()));
    if gap_norm == 0.0 {
        return Ok(0.0);
    }
    let alpha = smallest_eigenvalue_spd(p)?;
    let c1 = smallest_positive_eigenvalue(&(d + d.transpose()), RANK_TOL)?;
    Ok(-gap_norm * gap_norm / (4.0 * alpha * c1))
}

fn smallest_eigenvalue_spd(p: &Matrix) -> Result<f64> {
    check_square(p, "P")?;
    if !is_symmetric(p, RANK_TOL) {
        return Err(Error::NotSymmetric);
    }
    let alpha = sorted_eigenvalues(p)[0];
    if alpha <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(alpha)
}

/// The passivity matrix `−[[PA+AᵀP, PB−Cᵀ], [BᵀP−C, −(D+Dᵀ)]]` is PSD within `tol`.
pub fn check_passive(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    p: &Matrix,
    tol: f64,
) -> Result<bool> {
    let n = a.nrows();
    let m = d.nrows();
    if a.ncols() != n
        || p.shape() != (n, n)
        || b.shape() != (n, m)
        || c.shape() != (m, n)
        || d.ncols() != m
    {
        return Err(Error::DimensionMismatch("passivity data".into()));
    }
    let mut block = Matrix::zeros(n + m, n + m);
    let pa = p * a;
    let gap = p * b - c.transpose();
    block.view_mut((0, 0), (n, n)).copy_from(&(-(&pa + pa.transpose())));
    block.view_mut((0, n), (n, m)).copy_from(&(-&gap));
    block.view_mut((n, 0), (m, n)).copy_from(&(-gap.transpose()));
    block.view_mut((n, n), (m, m)).copy_from(&(d + d.transpose()));
    Ok(is_positive_semidefinite(&block, tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassivityCertificate {
    pub p: Matrix,
    pub kappa: f64,
    /// Smallest positive eigenvalue of `D+Dᵀ`, absent when `D+Dᵀ = 0`.
    pub c1: Option<f64>,
    /// Smallest positive eigenvalue of `CCᵀ`, absent when `C = 0`.
    pub c2: Option<f64>,
    /// Smallest eigenvalue of `P`.
    pub alpha: f64,
    pub kernel_inclusion: bool,
}

impl PassivityCertificate {
    pub fn certify(p: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<Self> {
        let alpha = smallest_eigenvalue_spd(p)?;
        if !is_positive_semidefinite(d, RANK_TOL * d.amax().max(1.0)) {
            return Err(Error::NotPsd);
        }
        let kernel_inclusion = kernel_inclusion(d, p, b, c, RANK_TOL)?;
        let c1 = optional_constant(&(d + d.transpose()))?;
        let c2 = optional_constant(&(c * c.transpose()))?;
        let kappa = match select_kappa(p, b, c, d) {
            Ok(k) => k,
            Err(Error::NoPositiveEigenvalue) => return Err(Error::KernelInclusionViolated),
            Err(e) => return Err(e),
        };
        Ok(Self {
            p: p.clone(),
            kappa,
            c1,
            c2,
            alpha,
            kernel_inclusion,
        })
    }
}

fn optional_constant(m: &Matrix) -> Result<Option<f64>> {
    match smallest_positive_eigenvalue(m, RANK_TOL) {
        Ok(v) => Ok(Some(v)),
        Err(Error::NoPositiveEigenvalue) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Change of state variables `x̃ = Lᵀx` with `P = LLᵀ`, under which the
/// storage matrix becomes the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    /// `Lᵀ`, or `None` for `P = I`.
    to_working: Option<Matrix>,
    from_working: Option<Matrix>,
}

impl Coordinates {
    pub fn identity() -> Self {
        Self {
            to_working: None,
            from_working: None,
        }
    }

    pub fn from_storage(p: &Matrix) -> Result<Self> {
        if p == &Matrix::identity(p.nrows(), p.ncols()) {
            return Ok(Self::identity());
        }
        let chol = p.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let lt = chol.l().transpose();
        let lt_inv = lt
            .clone()
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            to_working: Some(lt),
            from_working: Some(lt_inv),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.to_working.is_none()
    }

    pub fn to_working(&self, x: &Vector) -> Vector {
        match &self.to_working {
            Some(lt) => lt * x,
            None => x.clone(),
        }
    }

    pub fn from_working(&self, x: &Vector) -> Vector {
        match &self.from_working {
            Some(lt_inv) => lt_inv * x,
            None => x.clone(),
        }
    }

    /// `B̃ = LᵀB`.
    pub fn input_matrix(&self, b: &Matrix) -> Matrix {
        match &self.to_working {
            Some(lt) => lt * b,
            None => b.clone(),
        }
    }

    /// `C̃ = C L⁻ᵀ`; also used for any matrix acting on the state.
    pub fn output_matrix(&self, c: &Matrix) -> Matrix {
        match &self.from_working {
            Some(lt_inv) => c * lt_inv,
            None => c.clone(),
        }
    }
}
