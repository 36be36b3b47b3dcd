use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("node {0} is not a leaf of the tape")]
    NotLeaf(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite forward state in {count} sample(s), first at sample {first_sample} step {first_step}")]
    NonFiniteState {
        count: usize,
        first_sample: usize,
        first_step: usize,
    },

    #[error("run diverged: {0}")]
    Diverged(String),

    #[error("problem `{0}` has no analytic solution")]
    NoAnalyticSolution(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
