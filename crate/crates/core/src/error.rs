use thiserror::Error;

/// Errors produced by the estimators, the SDP engine and the experiment driver.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("degenerate geometry at anchor {index}: path length or perpendicular distance below guard")]
    DegenerateGeometry { index: usize },

    #[error("too few anchors: need at least {needed}, got {found}")]
    TooFewAnchors { needed: usize, found: usize },

    #[error("range {range} at anchor {index} is below the weight floor")]
    RangeUnderflow { index: usize, range: f64 },

    #[error("no sign change of the secular function was found in the positive-definite interval")]
    BracketNotFound,

    #[error("iteration limit of {0} reached")]
    MaxIters(usize),

    #[error("normal matrix is singular or too ill-conditioned")]
    SingularNormalMatrix,

    #[error("fisher information matrix is singular")]
    SingularFim,

    #[error("SDP solver failed: {0}")]
    SolverFailed(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("every seed failed: {}", format_seed_errors(.0))]
    AllSeedsFailed(Vec<(usize, String)>),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("malformed document: {0}")]
    Parse(String),
}

fn format_seed_errors(errors: &[(usize, String)]) -> String {
    errors
        .iter()
        .map(|(i, e)| format!("seed {i}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
