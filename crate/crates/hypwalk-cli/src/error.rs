use std::process::ExitCode;

use thiserror::Error;

use hypwalk::boundary::BoundaryError;
use hypwalk::chains::ChainError;
use hypwalk::experiments::ExperimentError;
use hypwalk::groups::GroupError;
use hypwalk::hhs::HhsError;
use hypwalk::morse::MorseError;
use hypwalk::projections::ProjError;
use hypwalk::spaces::SpaceError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Certification(String),
    #[error("{0} self-check(s) failed")]
    Suite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Certification(_) => 2,
            CliError::Suite(_) => 3,
        })
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Certification(_) => "certification",
            CliError::Suite(_) => "check",
            CliError::Io(_) => "io",
        }
    }

    /// One JSON object on stderr.
    pub fn report(&self) {
        let v = serde_json::json!({ "error": self.kind(), "message": self.to_string().trim_end() });
        eprintln!("{v}");
    }
}

fn is_certification(e: &ProjError) -> bool {
    matches!(e, ProjError::Partial(_) | ProjError::WindowTooSmall(_) | ProjError::NoPivot { .. })
}

impl From<ProjError> for CliError {
    fn from(e: ProjError) -> Self {
        if is_certification(&e) {
            CliError::Certification(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::Uncertified(_) => CliError::Certification(e.to_string()),
            ExperimentError::Proj(p) if is_certification(p) => CliError::Certification(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MorseError> for CliError {
    fn from(e: MorseError) -> Self {
        match e {
            MorseError::Proj(p) => p.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::Proj(p) => p.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

macro_rules! validation {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation!(GroupError, SpaceError, HhsError, BoundaryError);
