use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure classes the public
/// operations document: shape mismatches, graph-order violations, contract
/// violations, invalid state, numeric blowups, training failures and I/O.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Dim {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("graph order violated: node {node} references parent {parent}")]
    GraphOrder { node: usize, parent: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error at {where_}: {detail}")]
    Numeric { where_: String, detail: String },

    #[error("training failed at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {context}: {detail}")]
    Parse { context: String, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Dim {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn numeric(where_: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            where_: where_.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for validation problems the user can
    /// fix (bad config, bad shapes, contract violations), 2 for runtime
    /// failures (numeric blowups, training divergence, I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dim { .. }
            | Error::GraphOrder { .. }
            | Error::Contract(_)
            | Error::Config(_)
            | Error::Parse { .. } => 1,
            Error::State(_) | Error::Numeric { .. } | Error::Training { .. } | Error::Io { .. } => {
                2
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
