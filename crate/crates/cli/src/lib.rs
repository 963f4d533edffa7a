//! Stage runner, reports and annotation server behind the `memegraph`
//! binary.

pub mod cli;
pub mod config;
pub mod report;
pub mod serve;
pub mod stages;
