//! Command-line front end for the vqsense workbench: configuration files,
//! run artifacts and weight checkpoints.

pub mod artifacts;
pub mod checkpoint;
pub mod commands;
pub mod config;
