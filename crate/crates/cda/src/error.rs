//! Crate-wide error type with stable diagnostic codes.
//!
//! Every error carries a `CDA-E<code>` tag so batch consumers can grep
//! stderr. Codes below 100 map to CLI exit status 1 (validation / I/O),
//! codes 100 and above map to exit status 2 (numerical failure).

pub type Result<T> = std::result::Result<T, CdaError>;

#[derive(Debug, thiserror::Error)]
pub enum CdaError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("constraint: {0}")]
    Constraint(String),

    #[error("io: {0}")]
    Io(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("thermodynamic stability violated: {0}")]
    ThermoStability(String),

    #[error("interpolant: {0}")]
    Interpolant(String),

    #[error("CFL violation: {0}")]
    Cfl(String),

    #[error("stability guard: {0}")]
    StabilityGuard(String),

    #[error("solver failed to converge: {0}")]
    NonConvergence(String),

    #[error("non-finite field values: {0}")]
    NonFinite(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),
}

impl CdaError {
    /// Stable machine-parsable code, e.g. `CDA-E003`.
    pub fn code(&self) -> &'static str {
        match self {
            CdaError::Usage(_) => "CDA-E001",
            CdaError::Config(_) => "CDA-E002",
            CdaError::Constraint(_) => "CDA-E003",
            CdaError::Io(_) => "CDA-E004",
            CdaError::InvalidInput(_) => "CDA-E005",
            CdaError::Grid(_) => "CDA-E006",
            CdaError::ThermoStability(_) => "CDA-E007",
            CdaError::Interpolant(_) => "CDA-E008",
            CdaError::Cfl(_) => "CDA-E101",
            CdaError::StabilityGuard(_) => "CDA-E102",
            CdaError::NonConvergence(_) => "CDA-E103",
            CdaError::NonFinite(_) => "CDA-E104",
            CdaError::Quadrature(_) => "CDA-E105",
        }
    }

    /// CLI exit status: 1 for validation errors, 2 for numerical failures.
    pub fn exit_status(&self) -> i32 {
        match self {
            CdaError::Cfl(_)
            | CdaError::StabilityGuard(_)
            | CdaError::NonConvergence(_)
            | CdaError::NonFinite(_)
            | CdaError::Quadrature(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CdaError {
    fn from(e: std::io::Error) -> Self {
        CdaError::Io(e.to_string())
    }
}
