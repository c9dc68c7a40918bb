//! Experiment driver for the compressive EBSD toolkit: study runners, file
//! formats, and the configuration schema shared by the CLI subcommands.

pub mod config;
pub mod experiments;
pub mod io;
