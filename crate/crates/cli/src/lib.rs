//! Experiment driver for the softarm toolkit: config files, seeded runs and
//! their artifacts.

pub mod artifact;
pub mod commands;
pub mod config;
