use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Evaluation point on or inside the noise spectrum.
    #[error("s = {s} is not above the noise spectrum (max sigma = {max_sigma})")]
    DomainError { s: f64, max_sigma: f64 },

    /// Sample eigenvalue `index` (0-based) does not exceed the supercritical image θ(s*).
    #[error("spike {index} is subcritical: lambda = {lambda} <= threshold {threshold}")]
    SubcriticalSpike {
        index: usize,
        lambda: f64,
        threshold: f64,
    },

    #[error("no bracket for lambda = {lambda} below s = {limit}")]
    BracketFailure { lambda: f64, limit: f64 },

    #[error("residuals are degenerate: every coordinate has vanishing variance")]
    DegenerateResiduals,

    #[error("spike {index} is near-critical: theta' = {theta_prime}")]
    NearCriticalSpike { index: usize, theta_prime: f64 },

    #[error("estimated distance {distance} is too close to zero for a delta-method interval")]
    DegenerateDistance { distance: f64 },

    #[error("kernel spectrum has {available} positive eigenvalues, {requested} requested")]
    InsufficientSpectrum { requested: usize, available: usize },

    #[error("parse error at line {line}{}: {message}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: u64,
        col: Option<usize>,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),

    /// Wraps an error raised while processing one dataset of a two-sample analysis.
    #[error("dataset {dataset}: {source}")]
    InDataset {
        dataset: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_dataset(self, dataset: usize) -> Self {
        Error::InDataset {
            dataset,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through dataset wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InDataset { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical model (as opposed to malformed input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NumericalFailure(_)
                | Error::DomainError { .. }
                | Error::SubcriticalSpike { .. }
                | Error::BracketFailure { .. }
                | Error::DegenerateResiduals
                | Error::NearCriticalSpike { .. }
                | Error::DegenerateDistance { .. }
                | Error::InsufficientSpectrum { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
