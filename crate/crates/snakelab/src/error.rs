use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A sampler hit its configured budget. The partial result is flagged
    /// rather than discarded; callers decide whether to keep it.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("empty walk: the contour never rises h above its running minimum")]
    EmptyWalk,

    #[error("inconsistent h: tree was erased at h={tree_h} but eps={eps} requires h=eps/2")]
    InconsistentH { tree_h: f64, eps: f64 },

    #[error("query out of tree: edge {edge} has no height {height}")]
    QueryOutOfTree { edge: usize, height: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
