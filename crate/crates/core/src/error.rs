use thiserror::Error;

/// Errors raised anywhere in the forward/inverse pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("compliance matrix is singular (condition estimate {condition:.3e} above cap {cap:.1e})")]
    SingularCompliance { condition: f64, cap: f64 },
    #[error("degenerate stiffness tensor: |E_x^2 - 4 G_xy (E_x - nu_xz^2 E_z)| = {0:.3e}")]
    DegenerateTensor(f64),
    #[error("admissible interval for E_x is empty: {0}")]
    EmptyInterval(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate element {element}: Jacobian determinant {det:.3e}")]
    DegenerateElement { element: usize, det: f64 },
    #[error("no material assigned to region {0}")]
    MissingMaterial(String),
    #[error("requested {requested} eigenpairs but the system has dimension {dimension}")]
    DimensionTooSmall { requested: usize, dimension: usize },
    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("inadmissible parameters: {0}")]
    InadmissibleParameters(String),
    #[error("not enough classified modes: {0}")]
    NotEnoughModes(String),
    #[error("model eigenvalue {index} is not positive ({value:.3e})")]
    ZeroEigenvalueInModel { index: usize, value: f64 },
    #[error("relative error undefined for zero true value at index {0}")]
    ZeroTruth(usize),
    #[error("optimizer reached the iteration cap ({0})")]
    MaxIterations(usize),
    #[error("optimizer stalled: {0}")]
    Stalled(String),
    #[error("starting point is inadmissible: {0}")]
    InadmissibleStart(String),
    #[error("ensemble update is singular: {0}")]
    SingularUpdate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
