//! Correlation battery relating geometry metrics to losses.

mod battery;
mod chinchilla;
mod kfold;
mod partial;
mod rank;
mod regression;
pub mod synthetic;

use thiserror::Error;

pub use battery::{
    run_battery, Battery, Cell, CorrelationReport, GeometryMetric, ModelGeometry,
    PARTIAL_COVARIATES,
};
pub use chinchilla::{
    chinchilla_residuals, fit_chinchilla, residual_spearman_chinchilla, ScalingLawFit,
    ScalingPoint, GRID as CHINCHILLA_GRID, HUBER_DELTA,
};
pub use kfold::{kfold_delta_r2, DeltaR2, DEFAULT_FOLDS};
pub use partial::partial_spearman;
pub use rank::{average_ranks, pearson, spearman};
pub use regression::{independent_columns, r_squared, residualize_linear, with_intercept, LinearFit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("vector {which} is constant")]
    ConstantVector { which: &'static str },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("design column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },
    #[error("scaling-law grid needs 2+ distinct N and D (got {distinct_n} and {distinct_d})")]
    DegenerateGrid { distinct_n: usize, distinct_d: usize },
    #[error("non-finite or non-positive input")]
    NonFinite,
    #[error("no geometry summary for model {model_id:?}")]
    MissingGeometry { model_id: String },
    #[error("{0}")]
    Manifest(String),
}
