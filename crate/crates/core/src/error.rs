use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised anywhere in the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in `{entry}` ({context})")]
    NonFinite { entry: String, context: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("unknown parameter entry `{0}`")]
    UnknownEntry(String),
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("sparsity budget of {k} exceeds the {available} eligible parameters")]
    Budget { k: usize, available: usize },
    #[error("data access denied: {0}")]
    AccessDenied(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("task {task}: {source}")]
    InTask { task: u32, source: Box<Error> },
}

impl Error {
    pub fn in_task(self, task: u32) -> Self {
        match self {
            e @ Error::InTask { .. } => e,
            e => Error::InTask { task, source: Box::new(e) },
        }
    }

    /// The error without task context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InTask { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
