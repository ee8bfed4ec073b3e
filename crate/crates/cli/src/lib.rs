//! Experiment runner around `fokker-core`: TOML configs and named presets,
//! density and reference caching, repeated training runs, summaries and
//! heat-map export.

pub mod args;
pub mod config;
pub mod heatmap;
pub mod pipeline;
pub mod presets;
pub mod summary;
