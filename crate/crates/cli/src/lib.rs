//! Experiment runner for `instant-core`: config parsing, dataset generation,
//! multi-seed training, oracle verification and comparison reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod svg;
