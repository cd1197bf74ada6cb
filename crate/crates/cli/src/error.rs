use std::fmt;

/// Process exit codes.
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_STAGE_FAILURE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Missing, malformed or inconsistent input (exit 2).
    BadInput,
    /// A stage could not complete on valid input (exit 3).
    Failure,
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub kind: Kind,
    pub source: anyhow::Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::BadInput => EXIT_BAD_INPUT,
            Kind::Failure => EXIT_STAGE_FAILURE,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = Result<T, StageError>;

/// Attaches a stage and kind to any error.
pub trait Tag<T> {
    fn bad_input(self, stage: &'static str) -> StageResult<T>;
    fn failure(self, stage: &'static str) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn bad_input(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError { stage, kind: Kind::BadInput, source: e.into() })
    }

    fn failure(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError { stage, kind: Kind::Failure, source: e.into() })
    }
}

pub fn bad_input(stage: &'static str, msg: impl fmt::Display) -> StageError {
    StageError { stage, kind: Kind::BadInput, source: anyhow::anyhow!("{msg}") }
}
