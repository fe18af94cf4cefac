use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("basis term reads velocity of channel {channel} but no derivative signal was supplied")]
    MissingDerivative { channel: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("matrix logarithm undefined: eigenvalues on the closed negative real axis {eigenvalues:?}")]
    LogUndefined { eigenvalues: Vec<Complex64> },

    #[error("simulation diverged at sample {index}")]
    Diverged { index: usize },

    #[error("implicit output equation failed to converge at sample {index}")]
    ImplicitSolve { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("all {0} realizations failed")]
    AllRealizationsFailed(usize),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// True for failures caused by user input (configuration, files, shapes)
    /// rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::MissingDerivative { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
