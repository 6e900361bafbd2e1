use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-positive step size {0}")]
    NonPositiveStep(f64),
    #[error("non-positive scale")]
    NonPositiveScale,
    #[error("degenerate gamma")]
    DegenerateGamma,
    #[error("statistics overflow: |{value}| does not fit in {bits} bits")]
    StatisticsOverflow { value: i128, bits: u32 },
    #[error("accumulator overflow in {unit}: |{value}| does not fit in {bits} bits")]
    AccumulatorOverflow {
        unit: String,
        value: i128,
        bits: u32,
    },
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("code {code} out of range [{min}, {max}]")]
    CodeOutOfRange { code: i32, min: i32, max: i32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing head {0}")]
    MissingHead(usize),
    #[error("premature latch: chain {chain} holds {filled} of {len} values")]
    PrematureLatch {
        chain: usize,
        filled: usize,
        len: usize,
    },
    #[error("alignment violation at post-aggregation unit {column}, cycle {cycle}: {detail}")]
    Alignment {
        column: usize,
        cycle: u64,
        detail: String,
    },
    #[error("FIFO {name} overflow: depth {depth}")]
    FifoOverflow { name: String, depth: usize },
    #[error("communication ({comm} cycles) does not overlap with computation ({compute} cycles)")]
    CommOverlap { comm: u64, compute: u64 },
    #[error("resource model violation: {pes} PEs exceed the limit of {limit}")]
    ResourceLimit { pes: u64, limit: u64 },
    #[error("parse error in {field}: {detail}")]
    Parse { field: String, detail: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
