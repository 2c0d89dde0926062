//! Command-line driver for the verify-then-revise pipeline: `run` a method
//! over a question set, `annotate` step trees into verifier training data,
//! `simulate` against the synthetic environment, `evaluate` saved traces,
//! and `compare` two trace sets.
//!
//! The command functions are exported so integration tests can drive them in
//! process; `main.rs` only parses arguments and maps errors to exit codes.

pub mod backends;
pub mod commands;
pub mod config;
pub mod trace;

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}
