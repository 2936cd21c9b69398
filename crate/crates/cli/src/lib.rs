//! Library side of the `verasel` binary, shared with its integration tests.

pub mod commands;
pub mod config;
pub mod output;
