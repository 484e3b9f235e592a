//! Batch front end for the `gslab` experiments: configuration, commands and
//! SVG output.

pub mod commands;
pub mod config;
pub mod plot;
