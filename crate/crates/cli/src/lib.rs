//! Experiment runner for federated REINFORCE with periodic policy distillation.

pub mod config;
pub mod run;
pub mod stats;

use fedhpd_core::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for an error category. Malformed input files count as
/// configuration errors.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}
