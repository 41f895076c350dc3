//! Pipeline commands behind the `facegan` binary.

pub mod commands;
pub mod workdir;

use facegan::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status for a failed command: numerical divergence is 3, anything
/// about the inputs (missing files, bad formats, mismatched settings) is 2.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

/// Caps the worker pool from the `THREADS` environment variable.
pub fn configure_threads() -> Result<(), String> {
    match std::env::var("THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("THREADS must be a positive integer, got {v:?}"))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| e.to_string())
        }
        Err(_) => Ok(()),
    }
}
