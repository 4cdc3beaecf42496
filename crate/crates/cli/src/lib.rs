//! Simulation driver for clustered inference experiments: experiment
//! specifications, the Monte-Carlo harness and its output files.

pub mod config;
pub mod experiment;
pub mod output;

use encludl::error::Error;

/// Process exit status for a failed command: 2 for configuration problems,
/// 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}
