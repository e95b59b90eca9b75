use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("crack is not aligned with the mesh: {0}")]
    CrackNotAligned(String),

    #[error("contact node {0} is Dirichlet-fixed")]
    FixedContactNode(usize),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("no material given for body {0}")]
    MissingMaterial(u32),

    #[error("degenerate element {element}: {msg}")]
    DegenerateElement { element: usize, msg: String },

    #[error("coincident segment endpoints")]
    CoincidentEndpoints,

    #[error("invalid contact data: {0}")]
    InvalidContact(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is singular or indefinite (pivot {pivot} = {value:e})")]
    Indefinite { pivot: usize, value: f64 },

    #[error("system matrix not positive definite at multiplier {lambda:?}")]
    IndefiniteAtMultiplier { lambda: Vec<f64> },

    #[error("empty Krylov seed vector")]
    EmptyKrylovSeed,

    #[error("lcp solver failed: {0}")]
    Lcp(String),

    #[error("ncp did not converge after {iterations} iterations (last residual {last_residual:e})")]
    NcpNotConverged {
        iterations: usize,
        last_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("trajectory mismatch: {0}")]
    Trajectory(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
