//! File formats, configuration, parallel study runners and the `hfsv`
//! command line on top of `hfsv-core`.

pub mod cli;
pub mod config;
pub mod io;
pub mod runner;
