use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("constraint {constraint} references PSD block {block}, but the program has {count} blocks")]
    UnknownBlock {
        constraint: usize,
        block: usize,
        count: usize,
    },
    #[error("constraint {constraint} references scalar variable {var}, but the program has {count}")]
    UnknownScalar {
        constraint: usize,
        var: usize,
        count: usize,
    },
    #[error("matrix entry ({row}, {col}) lies outside PSD block {block} of dimension {dim}")]
    EntryOutOfRange {
        block: usize,
        row: usize,
        col: usize,
        dim: usize,
    },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("structured block {block} has odd dimension {dim}")]
    OddStructuredBlock { block: usize, dim: usize },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("malformed program text at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
