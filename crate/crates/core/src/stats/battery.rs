use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chinchilla::{chinchilla_residuals, ScalingLawFit, ScalingPoint};
use super::kfold::{kfold_delta_r2, DEFAULT_FOLDS};
use super::partial::partial_spearman;
use super::rank::is_constant;
use super::regression::residualize_linear;
use super::{spearman, StatsError};
use crate::geometry::GeometrySummary;
use crate::ingest::{ExperimentRecord, Manifest};
use crate::Matrix;

pub const PARTIAL_METHOD: &str = "covariates rank-transformed, not standardized; OLS residuals \
     with intercept are invariant to column scaling";

pub const MIN_RECORDS: usize = 8;

/// Covariates removed by the partial correlation, in column order.
pub const PARTIAL_COVARIATES: [&str; 6] = [
    "log_batch_size",
    "weight_decay",
    "lr_scale",
    "lr_anneal_frac",
    "log_n",
    "log_d",
];

const LINEAR_COVARIATES: [&str; 2] = ["log_n", "log_d"];

/// The five metrics in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GeometryMetric {
    #[serde(rename = "R(W)")]
    EffectiveRankW,
    #[serde(rename = "A(W)")]
    AngularVariabilityW,
    #[serde(rename = "I(W)")]
    IsotropyW,
    #[serde(rename = "R(H)")]
    EffectiveRankH,
    #[serde(rename = "A(H)")]
    AngularVariabilityH,
}

impl GeometryMetric {
    pub const ALL: [GeometryMetric; 5] = [
        Self::EffectiveRankW,
        Self::AngularVariabilityW,
        Self::IsotropyW,
        Self::EffectiveRankH,
        Self::AngularVariabilityH,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::EffectiveRankW => "R(W)",
            Self::AngularVariabilityW => "A(W)",
            Self::IsotropyW => "I(W)",
            Self::EffectiveRankH => "R(H)",
            Self::AngularVariabilityH => "A(H)",
        }
    }

    /// Column header used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            Self::EffectiveRankW => "Effective Rank R(W)",
            Self::AngularVariabilityW => "Cosine Similarity A(W)",
            Self::IsotropyW => "Isotropy I(W)",
            Self::EffectiveRankH => "Effective Rank R(H)",
            Self::AngularVariabilityH => "Cosine Similarity A(H)",
        }
    }

    pub fn value(self, g: &ModelGeometry) -> Option<f64> {
        let w = g.unembedding.as_ref();
        let h = g.representation.as_ref();
        match self {
            Self::EffectiveRankW => w.map(|s| s.effective_rank_norm),
            Self::AngularVariabilityW => w.map(|s| s.angular_variability),
            Self::IsotropyW => w.and_then(|s| s.isotropy),
            Self::EffectiveRankH => h.map(|s| s.effective_rank_norm),
            Self::AngularVariabilityH => h.map(|s| s.angular_variability),
        }
    }
}

impl fmt::Display for GeometryMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Geometry of one model's final checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGeometry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unembedding: Option<GeometrySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation: Option<GeometrySummary>,
}

/// A statistic, or a marker saying why it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Value(f64),
    Na(String),
}

impl Cell {
    fn from_result(r: Result<f64, StatsError>) -> Self {
        match r {
            Ok(v) => Cell::Value(v),
            Err(e) => Cell::Na(na_token(&e).to_string()),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            Cell::Na(_) => None,
        }
    }
}

pub fn na_token(e: &StatsError) -> &'static str {
    match e {
        StatsError::ConstantVector { .. } => "NA(const)",
        StatsError::RankDeficient { .. } => "NA(rank)",
        StatsError::TooFewPoints { .. } => "NA(n)",
        StatsError::DegenerateGrid { .. } => "NA(grid)",
        _ => "NA",
    }
}

/// The five statistics for one (metric, loss target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationReport {
    pub metric_name: GeometryMetric,
    pub loss_target: String,
    pub raw_spearman: Cell,
    pub residual_spearman_linear: Cell,
    pub residual_spearman_chinchilla: Cell,
    pub partial_spearman: Cell,
    pub delta_r2: Cell,
    pub n_records: usize,
    pub seed: u64,
}

impl CorrelationReport {
    /// Rows in table order with their labels.
    pub fn rows(&self) -> [(&'static str, &Cell); 5] {
        [
            ("Raw Spearman", &self.raw_spearman),
            ("Residual Spearman (linear)", &self.residual_spearman_linear),
            ("Residual Spearman (Chinchilla)", &self.residual_spearman_chinchilla),
            ("Partial Spearman", &self.partial_spearman),
            ("Predictive ΔR²", &self.delta_r2),
        ]
    }
}

/// Everything one battery run produced for a loss target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub loss_target: String,
    pub seed: u64,
    pub n_records: usize,
    pub folds: usize,
    /// Scaling-law fit used for the Chinchilla residuals, if it succeeded.
    pub chinchilla: Option<ScalingLawFit>,
    pub partial_covariates: Vec<String>,
    /// Covariates left out because they do not vary across records.
    pub constant_covariates: Vec<String>,
    /// How the partial correlation treats covariates.
    pub partial_method: String,
    pub reports: Vec<CorrelationReport>,
}

fn covariate_columns(records: &[ExperimentRecord], names: &[&str]) -> (Matrix, Vec<String>, Vec<String>) {
    let value = |r: &ExperimentRecord, name: &str| match name {
        "log_batch_size" => (r.batch_size as f64).ln(),
        "weight_decay" => r.weight_decay,
        "lr_scale" => r.lr_scale,
        "lr_anneal_frac" => r.lr_anneal_frac,
        "log_n" => (r.param_count_nonembed as f64).ln(),
        "log_d" => (r.token_budget as f64).ln(),
        other => unreachable!("unknown covariate {other}"),
    };
    let mut used = Vec::new();
    let mut constant = Vec::new();
    let mut columns = Vec::new();
    for &name in names {
        let col: Vec<f64> = records.iter().map(|r| value(r, name)).collect();
        if is_constant(&col) {
            constant.push(name.to_string());
        } else {
            used.push(name.to_string());
            columns.push(col);
        }
    }
    let m = Matrix::from_fn(records.len(), columns.len(), |i, j| columns[j][i]);
    (m, used, constant)
}

/// Runs all five statistics for every metric available on every record.
pub fn run_battery(
    manifest: &Manifest,
    geometry: &BTreeMap<String, ModelGeometry>,
    loss_target: &str,
    seed: u64,
) -> Result<Battery, StatsError> {
    let records = &manifest.records;
    let mut geoms = Vec::with_capacity(records.len());
    for r in records {
        let g = geometry.get(&r.model_id).ok_or_else(|| StatsError::MissingGeometry {
            model_id: r.model_id.clone(),
        })?;
        geoms.push(g);
    }
    if records.len() < MIN_RECORDS {
        return Err(StatsError::TooFewPoints {
            needed: MIN_RECORDS,
            got: records.len(),
        });
    }
    let loss = records
        .iter()
        .map(|r| r.loss(loss_target))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| StatsError::Manifest(e.to_string()))?;
    let points: Vec<ScalingPoint> = records
        .iter()
        .zip(&loss)
        .map(|(r, &l)| ScalingPoint {
            n: r.param_count_nonembed as f64,
            d: r.token_budget as f64,
            loss: l,
        })
        .collect();

    let (linear_cov, _, _) = covariate_columns(records, &LINEAR_COVARIATES);
    let linear_res = residualize_linear(&loss, &linear_cov);
    let chin = chinchilla_residuals(&points);
    let (partial_cov, used, constant) = covariate_columns(records, &PARTIAL_COVARIATES);

    let available: Vec<(GeometryMetric, Vec<f64>)> = GeometryMetric::ALL
        .iter()
        .filter_map(|&m| {
            let values: Option<Vec<f64>> = geoms.iter().map(|g| m.value(g)).collect();
            values.map(|v| (m, v))
        })
        .collect();

    let reports = available
        .par_iter()
        .map(|(metric, values)| CorrelationReport {
            metric_name: *metric,
            loss_target: loss_target.to_string(),
            raw_spearman: Cell::from_result(spearman(values, &loss)),
            residual_spearman_linear: Cell::from_result(
                linear_res.clone().and_then(|res| spearman(values, &res)),
            ),
            residual_spearman_chinchilla: Cell::from_result(
                chin.clone().and_then(|(_, res)| spearman(values, &res)),
            ),
            partial_spearman: Cell::from_result(partial_spearman(values, &loss, &partial_cov)),
            delta_r2: Cell::from_result(
                kfold_delta_r2(&points, values, DEFAULT_FOLDS, seed).map(|d| d.delta),
            ),
            n_records: records.len(),
            seed,
        })
        .collect();

    Ok(Battery {
        loss_target: loss_target.to_string(),
        seed,
        n_records: records.len(),
        folds: DEFAULT_FOLDS,
        chinchilla: chin.ok().map(|(fit, _)| fit),
        partial_covariates: used,
        constant_covariates: constant,
        partial_method: PARTIAL_METHOD.to_string(),
        reports,
    })
}
