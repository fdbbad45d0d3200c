//! File formats, configuration and the command pipeline of the `romkit` binary.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
