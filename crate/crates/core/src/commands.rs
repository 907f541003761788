//! The four CLI commands as library functions.
//!
//! Each command reads its inputs, writes artifacts under the output directory
//! and returns the paths written. Errors carry the exit code the binary
//! should use: 1 for invalid input, 2 for numerical convergence failures.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    effective_rank, summarize_representation, summarize_weight, GeometryError, GeometrySummary,
    MetricConfig, Target,
};
use crate::ingest::{
    load_manifest, load_representation, load_weight, scaled_loss, ExperimentRecord, IngestError,
    Manifest, ManifestError,
};
use crate::report::{
    csv_string, emit_svg_lines, json_string, round3, write_file, ArtifactHeader, LineSeries,
    ReportError, YAxis,
};
use crate::saturation::{assess, load_series_csv, CheckpointSeries, SaturationError, SeriesPoint, Thresholds};
use crate::spectral::SpectralError;
use crate::stats::{run_battery, Battery, Cell, GeometryMetric, ModelGeometry, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Convergence,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CommandError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CommandError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Convergence => 2,
        }
    }

    fn with_context(context: impl fmt::Display, kind: ErrorKind, err: impl fmt::Display) -> Self {
        Self {
            kind,
            message: format!("{context}: {err}"),
        }
    }
}

fn from_ingest(context: impl fmt::Display, e: IngestError) -> CommandError {
    CommandError::with_context(context, ErrorKind::Validation, e)
}

fn from_geometry(context: impl fmt::Display, e: GeometryError) -> CommandError {
    let kind = match e {
        GeometryError::Spectral(SpectralError::ConvergenceFailure { .. }) => ErrorKind::Convergence,
        _ => ErrorKind::Validation,
    };
    CommandError::with_context(context, kind, e)
}

fn from_manifest(e: ManifestError) -> CommandError {
    CommandError::with_context("manifest", ErrorKind::Validation, e)
}

impl From<ReportError> for CommandError {
    fn from(e: ReportError) -> Self {
        CommandError::with_context("output", ErrorKind::Validation, e)
    }
}

impl From<SaturationError> for CommandError {
    fn from(e: SaturationError) -> Self {
        CommandError::with_context("saturation", ErrorKind::Validation, e)
    }
}

impl From<StatsError> for CommandError {
    fn from(e: StatsError) -> Self {
        CommandError::with_context("analysis", ErrorKind::Validation, e)
    }
}

/// Hyperparameter a sweep report groups by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    BatchSize,
    WeightDecay,
    LrScale,
    LrAnnealFrac,
    TokenBudget,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::BatchSize,
        Axis::WeightDecay,
        Axis::LrScale,
        Axis::LrAnnealFrac,
        Axis::TokenBudget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::BatchSize => "batch_size",
            Axis::WeightDecay => "weight_decay",
            Axis::LrScale => "lr_scale",
            Axis::LrAnnealFrac => "lr_anneal_frac",
            Axis::TokenBudget => "token_budget",
        }
    }

    pub fn value(self, r: &ExperimentRecord) -> f64 {
        match self {
            Axis::BatchSize => r.batch_size as f64,
            Axis::WeightDecay => r.weight_decay,
            Axis::LrScale => r.lr_scale,
            Axis::LrAnnealFrac => r.lr_anneal_frac,
            Axis::TokenBudget => r.token_budget as f64,
        }
    }

    /// Axes spanning orders of magnitude are plotted on a log2 scale.
    fn log_scale(self) -> bool {
        matches!(self, Axis::BatchSize | Axis::TokenBudget)
    }
}

impl FromStr for Axis {
    type Err = CommandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Axis::ALL.iter().map(|a| a.as_str()).collect();
                CommandError::validation(format!(
                    "unknown axis {s:?} (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Metrics {
        manifest: PathBuf,
        metric_config: MetricConfig,
    },
    Analyze {
        manifest: PathBuf,
        geometry: PathBuf,
        target: String,
    },
    SweepReport {
        manifest: PathBuf,
        axis: Axis,
        target: String,
        /// Directory of geometry summaries to average per group, if any.
        geometry: Option<PathBuf>,
    },
    Saturation {
        /// A `tokens,loss,eff_rank_norm` CSV or a manifest with checkpoints.
        series: PathBuf,
        thresholds: Thresholds,
        metric_config: MetricConfig,
    },
}

/// A full invocation. The output directory and thread count do not enter the
/// config hash: they do not change any emitted value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
}

impl RunConfig {
    pub fn header(&self) -> ArtifactHeader {
        #[derive(Serialize)]
        struct Hashed<'a> {
            command: &'a Command,
            seed: u64,
        }
        ArtifactHeader::new(
            self.seed,
            &Hashed {
                command: &self.command,
                seed: self.seed,
            },
        )
    }
}

/// Runs a command on a pool of `cfg.threads` workers.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CommandError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CommandError::validation(format!("thread pool: {e}")))?;
    pool.install(|| match &cfg.command {
        Command::Metrics {
            manifest,
            metric_config,
        } => cmd_metrics(cfg, manifest, metric_config),
        Command::Analyze {
            manifest,
            geometry,
            target,
        } => cmd_analyze(cfg, manifest, geometry, target),
        Command::SweepReport {
            manifest,
            axis,
            target,
            geometry,
        } => cmd_sweep_report(cfg, manifest, *axis, target, geometry.as_deref()),
        Command::Saturation {
            series,
            thresholds,
            metric_config,
        } => cmd_saturation(cfg, series, thresholds, metric_config),
    })
}

fn file_stem_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn emit(out: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), CommandError> {
    let path = out.join(name);
    write_file(&path, contents.as_bytes())?;
    written.push(path);
    Ok(())
}

fn sorted_records(m: &Manifest) -> Vec<&ExperimentRecord> {
    let mut v: Vec<&ExperimentRecord> = m.records.iter().collect();
    v.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    v
}

/// One geometry summary as stored on disk by `metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryRecord {
    pub model_id: String,
    pub summary: GeometrySummary,
}

fn geometry_for(
    manifest: &Manifest,
    r: &ExperimentRecord,
    cfg: &MetricConfig,
) -> Result<Vec<GeometrySummary>, CommandError> {
    let ck = r.final_checkpoint().ok_or_else(|| {
        CommandError::validation(format!("record {:?} has no checkpoint_paths", r.model_id))
    })?;
    let path = manifest.resolve(&ck.path);
    let context = format!("{} ({})", r.model_id, path.display());
    let w = load_weight(&path, &ck.tensor).map_err(|e| from_ingest(&context, e))?;
    let mut out = vec![summarize_weight(&w, cfg).map_err(|e| from_geometry(&context, e))?];
    if let (Some(hp), Some(ht)) = (&ck.representation_path, &ck.representation_tensor) {
        let path = manifest.resolve(hp);
        let context = format!("{} ({})", r.model_id, path.display());
        let h = load_representation(&path, ht).map_err(|e| from_ingest(&context, e))?;
        out.push(summarize_representation(&h, cfg).map_err(|e| from_geometry(&context, e))?);
    }
    Ok(out)
}

fn full(v: f64) -> String {
    format!("{v}")
}

/// Geometry summaries for the final checkpoint of every record: one JSON file
/// per (model, target) and a combined `metrics.csv`, ordered by model id.
pub fn cmd_metrics(
    cfg: &RunConfig,
    manifest_path: &Path,
    metric_config: &MetricConfig,
) -> Result<Vec<PathBuf>, CommandError> {
    metric_config
        .validate()
        .map_err(|e| from_geometry("metric config", e))?;
    let manifest = load_manifest(manifest_path).map_err(from_manifest)?;
    let records = sorted_records(&manifest);
    let results: Vec<Result<Vec<GeometrySummary>, CommandError>> = records
        .par_iter()
        .map(|r| geometry_for(&manifest, r, metric_config))
        .collect();
    let header = cfg.header();
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for (r, res) in records.iter().zip(results) {
        for summary in res? {
            let target = summary.target.as_str();
            rows.push(vec![
                r.model_id.clone(),
                target.to_string(),
                full(summary.effective_rank_raw),
                full(summary.effective_rank_norm),
                summary.isotropy.map_or("NA".to_string(), full),
                full(summary.angular_variability),
            ]);
            let record = GeometryRecord {
                model_id: r.model_id.clone(),
                summary,
            };
            let name = format!("{}.{target}.json", file_stem_safe(&r.model_id));
            emit(&cfg.out, &name, &json_string(&header, "geometry", &record), &mut written)?;
        }
    }
    let columns = [
        "model_id",
        "target",
        "eff_rank_raw",
        "eff_rank_norm",
        "isotropy",
        "cosine_sim",
    ];
    emit(&cfg.out, "metrics.csv", &csv_string(&header, &columns, &rows)?, &mut written)?;
    Ok(written)
}

/// Reads every geometry JSON written by `metrics` in `dir`. Other JSON files
/// (analysis output, for instance) are skipped.
pub fn load_geometry_dir(dir: &Path) -> Result<BTreeMap<String, ModelGeometry>, CommandError> {
    let read_dir = std::fs::read_dir(dir)
        .map_err(|e| CommandError::validation(format!("geometry dir {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = read_dir
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut map: BTreeMap<String, ModelGeometry> = BTreeMap::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)
            .map_err(|e| CommandError::validation(format!("{}: {e}", p.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CommandError::validation(format!("{}: {e}", p.display())))?;
        let Some(g) = value.get("geometry") else {
            continue;
        };
        let rec: GeometryRecord = serde_json::from_value(g.clone())
            .map_err(|e| CommandError::validation(format!("{}: {e}", p.display())))?;
        let entry = map.entry(rec.model_id.clone()).or_default();
        match rec.summary.target {
            Target::Unembedding => entry.unembedding = Some(rec.summary),
            Target::Representation => entry.representation = Some(rec.summary),
        }
    }
    Ok(map)
}

/// Table rows (statistics) by columns (the five metrics) as strings.
pub fn battery_table(b: &Battery, cell: impl Fn(&Cell) -> String) -> Vec<Vec<String>> {
    let labels = [
        "Raw Spearman",
        "Residual Spearman (linear)",
        "Residual Spearman (Chinchilla)",
        "Partial Spearman",
        "Predictive ΔR²",
    ];
    labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let mut row = vec![label.to_string()];
            for m in GeometryMetric::ALL {
                row.push(match b.reports.iter().find(|r| r.metric_name == m) {
                    Some(r) => cell(r.rows()[i].1),
                    None => "NA(missing)".to_string(),
                });
            }
            row
        })
        .collect()
}

pub fn cell_3dp(c: &Cell) -> String {
    match c {
        Cell::Value(v) => round3(*v),
        Cell::Na(t) => t.clone(),
    }
}

/// The correlation battery for one loss target: `analysis_<target>.csv`
/// (3 decimals, table layout) and `analysis_<target>.json` (full precision).
pub fn cmd_analyze(
    cfg: &RunConfig,
    manifest_path: &Path,
    geometry_dir: &Path,
    target: &str,
) -> Result<Vec<PathBuf>, CommandError> {
    let manifest = load_manifest(manifest_path).map_err(from_manifest)?;
    let geometry = load_geometry_dir(geometry_dir)?;
    let battery = run_battery(&manifest, &geometry, target, cfg.seed)?;
    let header = cfg.header();
    let mut columns = vec!["statistic"];
    columns.extend(GeometryMetric::ALL.iter().map(|m| m.title()));
    let rows = battery_table(&battery, cell_3dp);
    let stem = format!("analysis_{}", file_stem_safe(target));
    let mut written = Vec::new();
    emit(&cfg.out, &format!("{stem}.csv"), &csv_string(&header, &columns, &rows)?, &mut written)?;
    emit(&cfg.out, &format!("{stem}.json"), &json_string(&header, "battery", &battery), &mut written)?;
    Ok(written)
}

/// Group means for one (axis value, model size) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub param_count_nonembed: u64,
    pub n_records: usize,
    pub mean_scaled_loss: f64,
    /// Group means keyed by metric label; absent without geometry.
    pub metric_means: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGroupReport {
    pub hyperparameter_axis: Axis,
    pub loss_target: String,
    pub n_records: usize,
    pub rows: Vec<SweepRow>,
}

/// Groups records by (model size, axis value) and averages scaled loss and,
/// when geometry is supplied, each metric. Rows are ordered by model size,
/// then axis value.
pub fn sweep_groups(
    manifest: &Manifest,
    axis: Axis,
    target: &str,
    geometry: Option<&BTreeMap<String, ModelGeometry>>,
) -> Result<SweepGroupReport, CommandError> {
    let scaled = scaled_loss(&manifest.records, target).map_err(from_manifest)?;
    let mut records = sorted_records(manifest);
    records.sort_by(|a, b| {
        a.param_count_nonembed
            .cmp(&b.param_count_nonembed)
            .then(axis.value(a).total_cmp(&axis.value(b)))
            .then(a.model_id.cmp(&b.model_id))
    });
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut members: Vec<Vec<&ExperimentRecord>> = Vec::new();
    for r in records {
        let key = (r.param_count_nonembed, axis.value(r));
        match rows.last() {
            Some(last) if (last.param_count_nonembed, last.axis_value) == key => {
                members.last_mut().expect("group exists").push(r)
            }
            _ => {
                rows.push(SweepRow {
                    axis_value: key.1,
                    param_count_nonembed: key.0,
                    n_records: 0,
                    mean_scaled_loss: 0.0,
                    metric_means: BTreeMap::new(),
                });
                members.push(vec![r]);
            }
        }
    }
    for (row, group) in rows.iter_mut().zip(&members) {
        let k = group.len() as f64;
        row.n_records = group.len();
        row.mean_scaled_loss = group.iter().map(|r| scaled[&r.model_id]).sum::<f64>() / k;
        if let Some(g) = geometry {
            for m in GeometryMetric::ALL {
                let values: Option<Vec<f64>> = group
                    .iter()
                    .map(|r| g.get(&r.model_id).and_then(|mg| m.value(mg)))
                    .collect();
                row.metric_means.insert(
                    m.label().to_string(),
                    values.map(|v| v.iter().sum::<f64>() / k),
                );
            }
        }
    }
    Ok(SweepGroupReport {
        hyperparameter_axis: axis,
        loss_target: target.to_string(),
        n_records: manifest.records.len(),
        rows,
    })
}

/// Scaled loss and metric means per hyperparameter group, as CSV, JSON and a
/// dual-axis SVG (scaled loss left, mean R(W) right, one line per model size).
pub fn cmd_sweep_report(
    cfg: &RunConfig,
    manifest_path: &Path,
    axis: Axis,
    target: &str,
    geometry_dir: Option<&Path>,
) -> Result<Vec<PathBuf>, CommandError> {
    let manifest = load_manifest(manifest_path).map_err(from_manifest)?;
    let geometry = geometry_dir.map(load_geometry_dir).transpose()?;
    let report = sweep_groups(&manifest, axis, target, geometry.as_ref())?;
    let header = cfg.header();
    let stem = format!("sweep_{}_{}", axis.as_str(), file_stem_safe(target));
    let mut columns = vec![axis.as_str(), "param_count_nonembed", "n_records", "mean_scaled_loss"];
    columns.extend(GeometryMetric::ALL.iter().map(|m| m.label()));
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                full(r.axis_value),
                r.param_count_nonembed.to_string(),
                r.n_records.to_string(),
                round3(r.mean_scaled_loss),
            ];
            for m in GeometryMetric::ALL {
                row.push(match r.metric_means.get(m.label()) {
                    Some(Some(v)) => round3(*v),
                    _ => "NA".to_string(),
                });
            }
            row
        })
        .collect();
    let mut written = Vec::new();
    emit(&cfg.out, &format!("{stem}.csv"), &csv_string(&header, &columns, &rows)?, &mut written)?;
    emit(&cfg.out, &format!("{stem}.json"), &json_string(&header, "sweep", &report), &mut written)?;

    let x = |v: f64| if axis.log_scale() { v.log2() } else { v };
    let mut series = Vec::new();
    let mut sizes: Vec<u64> = report.rows.iter().map(|r| r.param_count_nonembed).collect();
    sizes.dedup();
    for n in &sizes {
        let group: Vec<&SweepRow> = report.rows.iter().filter(|r| r.param_count_nonembed == *n).collect();
        series.push(LineSeries {
            label: format!("N={n} scaled loss"),
            points: group.iter().map(|r| (x(r.axis_value), r.mean_scaled_loss)).collect(),
            axis: YAxis::Left,
            dashed: false,
        });
        let rank: Vec<(f64, f64)> = group
            .iter()
            .filter_map(|r| Some((x(r.axis_value), (*r.metric_means.get("R(W)")?)?)))
            .collect();
        if !rank.is_empty() {
            series.push(LineSeries {
                label: format!("N={n} R(W)"),
                points: rank,
                axis: YAxis::Right,
                dashed: true,
            });
        }
    }
    let x_label = if axis.log_scale() {
        format!("log2 {}", axis.as_str())
    } else {
        axis.as_str().to_string()
    };
    let svg = emit_svg_lines(
        &series,
        &[],
        &format!("{target}: scaled loss vs {}", axis.as_str()),
        &x_label,
        ("scaled loss", Some("R(W)")),
        &header,
    )?;
    emit(&cfg.out, &format!("{stem}.svg"), &svg, &mut written)?;
    Ok(written)
}

/// Builds one checkpoint series per manifest record from the effective rank
/// of each checkpoint's unembedding matrix and its recorded loss.
pub fn series_from_manifest(
    manifest: &Manifest,
    metric_config: &MetricConfig,
) -> Result<Vec<CheckpointSeries>, CommandError> {
    sorted_records(manifest)
        .into_iter()
        .map(|r| {
            let points = r
                .checkpoint_paths
                .par_iter()
                .map(|ck| {
                    let path = manifest.resolve(&ck.path);
                    let context = format!("{} ({})", r.model_id, path.display());
                    let loss = ck.loss.ok_or_else(|| {
                        CommandError::validation(format!("{context}: checkpoint has no loss"))
                    })?;
                    let w = load_weight(&path, &ck.tensor).map_err(|e| from_ingest(&context, e))?;
                    let er = effective_rank(w.matrix(), metric_config)
                        .map_err(|e| from_geometry(&context, e))?;
                    Ok(SeriesPoint {
                        tokens: ck.token_count,
                        loss,
                        eff_rank_norm: er.normalized,
                    })
                })
                .collect::<Result<Vec<_>, CommandError>>()?;
            Ok(CheckpointSeries::new(r.model_id.clone(), points)?)
        })
        .collect()
}

#[derive(Serialize)]
struct SaturationArtifact<'a> {
    verdict: &'a crate::saturation::SaturationVerdict,
    points: &'a [SeriesPoint],
}

/// Saturation verdict JSON and a loss / effective-rank SVG per series.
pub fn cmd_saturation(
    cfg: &RunConfig,
    series_path: &Path,
    thresholds: &Thresholds,
    metric_config: &MetricConfig,
) -> Result<Vec<PathBuf>, CommandError> {
    thresholds.validate()?;
    let is_csv = series_path
        .extension()
        .is_some_and(|x| x.eq_ignore_ascii_case("csv"));
    let all = if is_csv {
        vec![load_series_csv(series_path)?]
    } else {
        let manifest = load_manifest(series_path).map_err(from_manifest)?;
        series_from_manifest(&manifest, metric_config)?
    };
    let header = cfg.header();
    let mut written = Vec::new();
    for s in &all {
        let verdict = assess(s, thresholds)?;
        let stem = format!("saturation_{}", file_stem_safe(s.model_id()));
        let artifact = SaturationArtifact {
            verdict: &verdict,
            points: s.points(),
        };
        emit(&cfg.out, &format!("{stem}.json"), &json_string(&header, "saturation", &artifact), &mut written)?;
        let billions = |t: u64| t as f64 / 1e9;
        let series = [
            LineSeries {
                label: "loss".into(),
                points: s.points().iter().map(|p| (billions(p.tokens), p.loss)).collect(),
                axis: YAxis::Left,
                dashed: false,
            },
            LineSeries {
                label: "effective rank".into(),
                points: s.points().iter().map(|p| (billions(p.tokens), p.eff_rank_norm)).collect(),
                axis: YAxis::Right,
                dashed: false,
            },
        ];
        let mut markers = Vec::new();
        if let Some(t) = verdict.loss_degradation_onset {
            markers.push((billions(t), "loss onset".to_string()));
        }
        if let Some(t) = verdict.rank_collapse_onset {
            markers.push((billions(t), "rank onset".to_string()));
        }
        let svg = emit_svg_lines(
            &series,
            &markers,
            s.model_id(),
            "tokens (billions)",
            ("loss (nats)", Some("normalized effective rank")),
            &header,
        )?;
        emit(&cfg.out, &format!("{stem}.svg"), &svg, &mut written)?;
    }
    Ok(written)
}
