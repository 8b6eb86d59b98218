//! Experiment orchestration: configuration, caching, persistence, plots.

pub mod cache;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod manifest;
pub mod svg;
