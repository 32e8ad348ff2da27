use sde_adjoint::SdeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Sde(#[from] SdeError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration mistakes, 1 for numerical or IO failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Sde(e) => match e {
                SdeError::Contract(_)
                | SdeError::OutOfRange { .. }
                | SdeError::Interpretation { .. }
                | SdeError::Unsupported(_) => 2,
                SdeError::Divergence { .. } | SdeError::StepUnderflow { .. } | SdeError::NearSingularDiffusion { .. } => 1,
            },
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}
