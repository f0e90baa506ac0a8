use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration blew up (non-finite state) at t = {time}")]
    Blowup { time: f64 },

    #[error("fast trajectory left the trapping ball (|y| = {norm:.3} > {radius}) at t = {time}")]
    TrapExit { time: f64, norm: f64, radius: f64 },

    #[error("{what} = {value} exceeds declared bound {bound}")]
    BoundViolation {
        what: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("trajectory grid of {requested} values exceeds capacity {limit}; raise record_stride")]
    Capacity { requested: usize, limit: usize },

    #[error("fixed-point correction did not converge at step {step} (drift not Lipschitz?)")]
    NonConvergent { step: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("job {job} failed (seed {seed:#018x}): {source}")]
    Job {
        job: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (blowups, trap exits, bound
    /// violations), as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Blowup { .. }
            | Error::TrapExit { .. }
            | Error::BoundViolation { .. }
            | Error::NonConvergent { .. } => true,
            Error::Job { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Dimension { .. } | Error::Capacity { .. } => {
                true
            }
            Error::Job { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn in_job(self, job: impl Into<String>, seed: u64) -> Error {
        Error::Job {
            job: job.into(),
            seed,
            source: Box::new(self),
        }
    }
}
