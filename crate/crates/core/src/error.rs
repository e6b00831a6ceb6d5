use dispatch_conic::ConicError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("node '{node}' has no phase {phase}")]
    UnknownPhase { node: String, phase: char },
    #[error("Kron reduction failed: neutral block is singular")]
    KronFailed,
    #[error("line {line}: phase impedance matrix is singular")]
    SingularImpedance { line: String },
    #[error("line {line} does not carry phase {phase}")]
    PhaseNotOnLine { line: String, phase: char },
    #[error("line {line} has no neutral conductor data")]
    NoNeutral { line: String },
    #[error("{what}: limit must be positive, got {value}")]
    NonPositiveLimit { what: String, value: f64 },
    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("real block violates complex structure (residual {0:.3e})")]
    Structure(f64),
    #[error("recovered PCC voltage deviates from its reference by {0:.3e} p.u.")]
    Anchoring(f64),
    #[error("leading eigenvalue is not positive ({0:.3e})")]
    Degenerate(f64),
    #[error("load flow did not converge after {iterations} iterations (last change {change:.3e})")]
    LoadFlowDiverged { iterations: usize, change: f64 },
    #[error("{0}")]
    Solver(#[from] ConicError),
}

pub type Result<T> = std::result::Result<T, Error>;
