//! Stage-labelled failures and their exit codes.
//!
//! | code | stage |
//! |-----:|-------|
//! | 0 | success |
//! | 2 | usage (bad flags, unreadable or invalid config) |
//! | 3 | output I/O |
//! | 4 | simulation parameters |
//! | 5 | near-field input stacks |
//! | 6 | far-field input stacks |
//! | 7 | correlation / fit / EPR analysis |
//! | 8 | noise-ratio analysis |
//! | 9 | confidence curve |
//! | 10 | spectral model or time-domain check |
//! | 11 | report: no analysis outputs found |
//! | 12 | spectral prediction disagrees with the time-domain oracle |

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Output,
    Simulate,
    NearField,
    FarField,
    Epr,
    Nr,
    Confidence,
    Spectral,
    Report,
    SpectralDisagreement,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Config => 2,
            Stage::Output => 3,
            Stage::Simulate => 4,
            Stage::NearField => 5,
            Stage::FarField => 6,
            Stage::Epr => 7,
            Stage::Nr => 8,
            Stage::Confidence => 9,
            Stage::Spectral => 10,
            Stage::Report => 11,
            Stage::SpectralDisagreement => 12,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Output => "output",
            Stage::Simulate => "simulate",
            Stage::NearField => "nearfield",
            Stage::FarField => "farfield",
            Stage::Epr => "epr",
            Stage::Nr => "nr",
            Stage::Confidence => "confidence",
            Stage::Spectral => "spectral",
            Stage::Report => "report",
            Stage::SpectralDisagreement => "spectral",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage.label(), self.message)
    }
}

impl std::error::Error for StageError {}

pub type CliResult<T> = Result<T, StageError>;

pub fn fail(stage: Stage, message: impl Into<String>) -> StageError {
    StageError {
        stage,
        message: message.into(),
    }
}

/// `.stage(Stage::X)?` on any displayable error.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> CliResult<T>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> CliResult<T> {
        self.map_err(|e| fail(stage, e.to_string()))
    }
}
