use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("matrix is not positive semidefinite within tolerance")]
    NotPsd,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no eigenvalue above the positivity threshold")]
    NoPositiveEigenvalue,
    #[error("ker(D+Dᵀ) is not contained in ker(PB−Cᵀ)")]
    KernelInclusionViolated,
    #[error("range condition violated: {0}")]
    RangeConditionViolated(String),
    #[error("LK2 = {lk2:e} exceeds c2/|C| = {bound:e}")]
    LipschitzBound { lk2: f64, bound: f64 },
    #[error("unsupported output matrix: {0}")]
    UnsupportedOutputMatrix(String),
    #[error("convex set is empty")]
    EmptySet,
    #[error("invalid convex set: {0}")]
    InvalidSet(String),
    #[error("Hausdorff distance is infinite")]
    InfiniteDistance,
    #[error("set is unbounded")]
    Unbounded,
    #[error("operation requires a box, got {0}")]
    NotABox(&'static str),
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },
    #[error("step size {0:e} is below the admissible minimum")]
    StepTooSmall(f64),
    #[error("step size too large: 1 - h*kappa = {0:e} is not positive")]
    StepTooLarge(f64),
    #[error("step size {h:e} exceeds the well-posedness limit 1/|kappa| = {limit:e} and the step has no solution")]
    IllPosedStep { h: f64, limit: f64 },
    #[error("no activity pattern solves the step")]
    NoSolution,
    #[error("initial state is not admissible")]
    NotAdmissible,
    #[error("missing constant: {0}")]
    MissingConstant(&'static str),
    #[error("hypothesis failed: {0}")]
    HypothesisFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
