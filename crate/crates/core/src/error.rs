use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("divergence: non-finite state {state:?}")]
    Divergence { state: Vec<f64> },

    #[error("timestep {t}: {source}")]
    AtTimestep { t: usize, source: Box<Error> },

    #[error("iteration {iteration}: {source}")]
    AtIteration { iteration: usize, source: Box<Error> },

    #[error("trial {trial}: {source}")]
    AtTrial { trial: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub fn at_timestep(self, t: usize) -> Self {
        Error::AtTimestep { t, source: Box::new(self) }
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration { iteration, source: Box::new(self) }
    }

    pub fn at_trial(self, trial: usize) -> Self {
        Error::AtTrial { trial, source: Box::new(self) }
    }

    /// Innermost error with all context wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTimestep { source, .. } | Error::AtIteration { source, .. } | Error::AtTrial { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self.root(), Error::Divergence { .. })
    }

    /// EM iteration recorded in the context chain, if any.
    pub fn iteration(&self) -> Option<usize> {
        match self {
            Error::AtIteration { iteration, .. } => Some(*iteration),
            Error::AtTimestep { source, .. } | Error::AtTrial { source, .. } => source.iteration(),
            _ => None,
        }
    }

    pub fn trial(&self) -> Option<usize> {
        match self {
            Error::AtTrial { trial, .. } => Some(*trial),
            Error::AtTimestep { source, .. } | Error::AtIteration { source, .. } => source.trial(),
            _ => None,
        }
    }
}
