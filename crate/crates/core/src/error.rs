use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: reduction axis is empty")]
    EmptyAxis { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("joint {joint} projects with nonpositive depth {depth}")]
    Projection { joint: usize, depth: f64 },

    #[error("degenerate bone between joints {from} and {to}")]
    DegenerateBone { from: usize, to: usize },

    #[error("clip has {frames} frames but the window needs {window}")]
    ClipTooShort { frames: usize, window: usize },

    #[error("skeleton: {0}")]
    Skeleton(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity check failed for {path}: {reason}")]
    Integrity { path: String, reason: String },

    #[error("non-finite loss at step {step} (epoch {epoch}): {detail}")]
    NonFinite {
        step: usize,
        epoch: usize,
        detail: String,
    },

    #[error("joint subset is empty")]
    EmptySubset,

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::EmptyAxis { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::Projection { .. } => "projection",
            Error::DegenerateBone { .. } => "degenerate-bone",
            Error::ClipTooShort { .. } => "clip-too-short",
            Error::Skeleton(_) => "skeleton",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Integrity { .. } => "integrity",
            Error::NonFinite { .. } => "non-finite",
            Error::EmptySubset => "empty-subset",
            Error::Synthesis(_) => "synthesis",
            Error::Fingerprint(_) => "fingerprint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}
