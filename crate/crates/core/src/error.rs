use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible partition: class {class} needs {requested} samples but only {available} are available")]
    InfeasiblePartition {
        class: usize,
        requested: u64,
        available: u64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label {label} is out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("reference distribution has a zero entry at class {0}")]
    InvalidReferenceDistribution(usize),

    #[error("deadline infeasible: remaining time {0} s is not positive")]
    DeadlineInfeasible(f64),

    #[error("user {user} cannot meet the deadline: computation takes {compute_s} s of a {deadline_s} s budget")]
    StructurallyInfeasibleUser {
        user: usize,
        compute_s: f64,
        deadline_s: f64,
    },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
