//! Experiment harness and command-line interface for `subdiff-core`.
//!
//! This crate adds what the `no_std` core leaves out: JSON experiment
//! configs, report and path files, a rayon-backed path executor and the
//! `subdiff` binary.

pub mod cli;
pub mod config;
pub mod dump;
pub mod error;
pub mod parallel;
pub mod report;

pub use error::CliError;
