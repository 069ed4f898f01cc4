use thiserror::Error;

/// Errors surfaced by the index library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("format error in {section}: {detail}")]
    Format { section: &'static str, detail: String },

    #[error("provider transport error after {retries} retries: {detail}")]
    Transport { retries: u32, detail: String },

    #[error("provider protocol error: {0}")]
    Protocol(String),

    #[error("build error: {0}")]
    Build(String),

    #[error("build error at node {node}: {source}")]
    BuildNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("storage budget of {budget} bytes is infeasible; minimum achievable is {minimum} bytes")]
    BudgetInfeasible { budget: u64, minimum: u64 },

    #[error("index built with a different embedding configuration (index {expected}, current {actual})")]
    ProviderMismatch { expected: String, actual: String },

    #[error("search aborted after {recomputations} recomputations: {source}")]
    Search {
        recomputations: usize,
        partial: Box<crate::search::SearchReport>,
        #[source]
        source: Box<Error>,
    },

    #[error("merge error: {0}")]
    Merge(String),

    #[error("index directory is locked: {0}")]
    Locked(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(section: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            section,
            detail: detail.into(),
        }
    }

    /// True for failures originating at the embedding provider boundary.
    pub fn is_provider(&self) -> bool {
        match self {
            Error::Transport { .. } | Error::Protocol(_) | Error::ProviderMismatch { .. } => true,
            Error::BuildNode { source, .. } | Error::Search { source, .. } => source.is_provider(),
            _ => false,
        }
    }
}
