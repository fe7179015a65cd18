use lure::integrate::SimulationError;
use lure::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("hypothesis failed: {0}")]
    Hypothesis(String),
    #[error("solver diverged: {0}")]
    Diverged(String),
}

impl CliError {
    /// 1 for IO and usage errors, 2 for parse, validation and hypothesis
    /// failures, 3 for solver divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Usage(_) => 1,
            CliError::Parse { .. } | CliError::Validation(_) | CliError::Hypothesis(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::SolverDiverged { .. }
            | CoreError::StepTooSmall(_)
            | CoreError::StepTooLarge(_)
            | CoreError::IllPosedStep { .. } => {
                CliError::Diverged(e.to_string())
            }
            CoreError::HypothesisFailed(_) | CoreError::MissingConstant(_) | CoreError::NotAdmissible => {
                CliError::Hypothesis(e.to_string())
            }
            other => CliError::Validation(crate::scenario::describe(&other)),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::NotAdmissible => {
                CliError::Hypothesis("initial state is not admissible (rerun with --force to override)".into())
            }
            SimulationError::Step { index, source, .. } => match CliError::from(source) {
                CliError::Diverged(msg) => CliError::Diverged(format!("step {index}: {msg}")),
                other => other,
            },
            SimulationError::Invalid(e) => e.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
