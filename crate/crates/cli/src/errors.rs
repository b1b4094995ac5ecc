//! Error carrier mapping every failure onto the documented exit codes:
//! 2 usage or configuration, 3 file I/O, 4 data shape or consistency,
//! 5 numerical.

use catch_core::classifier::ClassifierError;
use catch_core::estimation::EstimationError;
use catch_core::io::IoError;
use catch_core::linalg::LinalgError;
use catch_core::model::ModelError;
use catch_core::simulation::SimulationError;
use catch_core::solver::SolverError;
use catch_core::tensor::TensorError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SHAPE,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::Tensor(_) => EXIT_SHAPE,
            _ => EXIT_IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self {
            code: EXIT_SHAPE,
            message: e.to_string(),
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: e.to_string(),
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        let code = match &e {
            EstimationError::Singular { .. } | EstimationError::DegenerateResiduals { .. } => {
                EXIT_NUMERIC
            }
            EstimationError::Tensor(_) => EXIT_SHAPE,
            _ => EXIT_SHAPE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let code = match &e {
            SolverError::BadLambda { .. } | SolverError::BadConfig { .. } => EXIT_USAGE,
            _ => EXIT_SHAPE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Estimation(inner) => inner.into(),
            ModelError::Solver(inner) => inner.into(),
            ModelError::Io(inner) => inner.into(),
            ModelError::Tensor(inner) => inner.into(),
            ModelError::Invalid { .. } => Self {
                code: EXIT_SHAPE,
                message: e.to_string(),
            },
            ModelError::PathIndex { .. } => Self {
                code: EXIT_USAGE,
                message: e.to_string(),
            },
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Fit(inner) => inner.into(),
            ClassifierError::Estimation(inner) => inner.into(),
            ClassifierError::TooFewFolds { .. } => Self {
                code: EXIT_USAGE,
                message: e.to_string(),
            },
            _ => Self {
                code: EXIT_SHAPE,
                message: e.to_string(),
            },
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Tensor(inner) => inner.into(),
            SimulationError::Linalg(inner) => inner.into(),
            SimulationError::Estimation(inner) => inner.into(),
            SimulationError::Model(inner) => inner.into(),
            SimulationError::Classifier(inner) => inner.into(),
            SimulationError::BadCorrelation { .. }
            | SimulationError::PlacementIndex { .. }
            | SimulationError::Invalid { .. } => Self {
                code: EXIT_USAGE,
                message: e.to_string(),
            },
        }
    }
}
