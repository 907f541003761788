//! Geometry metrics for transformer unembedding matrices and final-layer
//! representations, plus the statistics used to relate them to model loss.
//!
//! - [`ingest`]: tensor files and experiment manifests
//! - [`spectral`]: singular spectra and Gram eigendecompositions
//! - [`geometry`]: effective rank, isotropy, angular variability
//! - [`stats`]: rank correlations, scaling-law fits, cross-validated R²
//! - [`saturation`]: loss-degradation and rank-collapse onsets in checkpoint series
//! - [`report`] and [`commands`]: CSV/JSON/SVG output and the CLI commands

pub mod commands;
pub mod geometry;
pub mod ingest;
pub mod matrix;
pub mod report;
pub mod saturation;
pub mod spectral;
pub mod stats;

pub use geometry::{GeometrySummary, MetricConfig};
pub use matrix::Matrix;

/// Version string embedded in every emitted artifact.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
