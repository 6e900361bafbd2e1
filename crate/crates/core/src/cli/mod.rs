//! Configuration, tensor files, reports and the command drivers behind the
//! `systolic-vit` binary.

pub mod commands;
pub mod config;
pub mod tensorfile;

pub use commands::{
    cmd_analyze, cmd_func, cmd_sim, cmd_sweep, cmd_verify, error_metrics, load_model, parse_axes, Axis, Check,
    ErrorMetrics, Summary, VerifyReport, SWEEP_HEADER,
};
pub use config::{parse_pairs, Mode, RunConfig};

use crate::error::Error;

/// Process exit status for a failed command: 3 for I/O, 1 for datapath
/// check failures, 2 for everything else (configuration and input errors).
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::Alignment { .. } | Error::PrematureLatch { .. } | Error::FifoOverflow { .. } => 1,
        _ => 2,
    }
}
