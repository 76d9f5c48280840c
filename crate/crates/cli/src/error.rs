use fri_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("no calibration for d={0}; run `fri calibrate` or set c1_threshold")]
    MissingCalibration(usize),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Process exit status for each failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const INVALID: u8 = 3;
    pub const CACHE: u8 = 4;
    pub const NUMERICAL: u8 = 5;
    pub const NO_BRACKET: u8 = 6;
    pub const BUDGET: u8 = 7;
    pub const IO: u8 = 8;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::USAGE,
            CliError::MissingCalibration(_) => exit::CACHE,
            CliError::Io(_) => exit::IO,
            CliError::Core(e) => match e {
                Error::DimensionMismatch { .. }
                | Error::UnsupportedDimension(_)
                | Error::EmptySet
                | Error::InvalidParameter(_)
                | Error::NotNearestNeighbour(..)
                | Error::NotInSet(_)
                | Error::WindowTooSmall { .. }
                | Error::PaddingTooSmall { .. } => exit::INVALID,
                Error::GreenUnavailable(_) => exit::CACHE,
                Error::IllConditioned { .. } | Error::EscapeOutOfRange { .. } | Error::SolverCap { .. } | Error::NoConvergence(_) => exit::NUMERICAL,
                Error::NoBracket(_) => exit::NO_BRACKET,
                Error::BudgetExhausted(_) | Error::FrontierEmpty => exit::BUDGET,
                Error::Format(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => exit::IO,
            },
        }
    }
}
