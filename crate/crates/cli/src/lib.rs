//! Command-line front end: scenario config, runs, paired comparisons and
//! trace generation.

pub mod commands;
pub mod config;
pub mod plots;
