use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("time level {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("degenerate alpha schedule: alpha({t}) = 1 with t > 0")]
    DegenerateAlpha { t: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("nothing to predict: state has no masked positions")]
    NothingToPredict,

    #[error("predictor error: {0}")]
    Predictor(String),

    #[error("trace miss: no record for state {key} at step {step}")]
    TraceMiss { key: String, step: usize },

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("path-lab size cap exceeded: N = {steps} > cap {cap}")]
    SizeCap { steps: usize, cap: usize },

    #[error("batch element {index}: {source}")]
    BatchElement {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round starting at step {step}: {source}")]
    InRound {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Decode,
    Trace,
}

impl Error {
    pub(crate) fn at_step(step: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::AtStep {
            step,
            source: Box::new(e),
        }
    }

    pub(crate) fn in_round(step: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::InRound {
            step,
            source: Box::new(e),
        }
    }

    /// Innermost error once step/round/batch context is peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::BatchElement { source, .. }
            | Error::AtStep { source, .. }
            | Error::InRound { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::TraceMiss { .. } | Error::TraceFormat(_) => ErrorClass::Trace,
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => ErrorClass::Usage,
            Error::Vocabulary(_)
            | Error::Schedule(_)
            | Error::TimeOutOfRange(_)
            | Error::DegenerateAlpha { .. }
            | Error::SizeCap { .. } => ErrorClass::Usage,
            _ => ErrorClass::Decode,
        }
    }
}
