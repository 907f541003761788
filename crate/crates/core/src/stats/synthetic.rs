//! Seeded synthetic suites with known structure, used by tests, the
//! acceptance checks and the CLI demo fixtures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::battery::ModelGeometry;
use super::chinchilla::ScalingPoint;
use crate::geometry::{GeometrySummary, MetricConfig, Target};
use crate::ingest::write::write_safetensors;
use crate::ingest::{CheckpointEntry, DType, ExperimentRecord, IngestError, Manifest};
use crate::spectral::SvdMethod;
use crate::Matrix;

pub const BATCH_SIZES: [u64; 5] = [32, 64, 128, 256, 512];
pub const LOSS_TASK: &str = "pile_10k";

/// Generating constants of a scaling law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawConstants {
    pub e: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LawConstants {
    pub const HOFFMANN_LIKE: LawConstants = LawConstants {
        e: 1.8,
        a: 400.0,
        b: 410.0,
        alpha: 0.34,
        beta: 0.28,
    };

    pub fn loss(&self, n: f64, d: f64) -> f64 {
        self.e + self.a * n.powf(-self.alpha) + self.b * d.powf(-self.beta)
    }
}

pub const GRID_N: [f64; 6] = [4e6, 1.2e7, 3.7e7, 1.1e8, 3.3e8, 1e9];
pub const GRID_D: [f64; 4] = [1e9, 4e9, 1.6e10, 6.4e10];

/// 6x4 grid of (N, D) with losses from `c`, each scaled by `1 + noise * z`
/// for standard normal `z`.
pub fn scaling_grid(c: &LawConstants, noise: f64, seed: u64) -> Vec<ScalingPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(24);
    for &n in &GRID_N {
        for &d in &GRID_D {
            let z: f64 = StandardNormal.sample(&mut rng);
            out.push(ScalingPoint {
                n,
                d,
                loss: c.loss(n, d) * (1.0 + noise * z),
            });
        }
    }
    out
}

/// 60 runs on a 10x6 grid (N doubling from 4M, D doubling from 1B) with
/// Hoffmann-like losses and 1% multiplicative noise. The size/token baseline
/// explains most of the variance here, as in a real sweep.
pub fn calibration_suite(seed: u64) -> Vec<ScalingPoint> {
    let c = LawConstants::HOFFMANN_LIKE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(60);
    for i in 0..10 {
        for j in 0..6 {
            let n = 4e6 * 2f64.powi(i);
            let d = 1e9 * 2f64.powi(j);
            out.push(ScalingPoint {
                n,
                d,
                loss: c.loss(n, d) * (1.0 + 0.01 * normal(&mut rng)),
            });
        }
    }
    out
}

/// A sweep where both a planted metric and the loss move with batch size.
#[derive(Debug, Clone)]
pub struct ConfoundSuite {
    pub records: Vec<ExperimentRecord>,
    /// The planted metric, aligned with `records`; decreases with batch size.
    pub metric: Vec<f64>,
    /// Losses on [`LOSS_TASK`], aligned with `records`; increase with batch size.
    pub loss: Vec<f64>,
}

const SUITE_LAW: LawConstants = LawConstants {
    e: 2.0,
    a: 40.0,
    b: 41.0,
    alpha: 0.34,
    beta: 0.28,
};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` records cycling through batch sizes, model sizes, token budgets and
/// optimizer settings. Metric and loss depend on batch size plus independent
/// Gaussian noise; the loss also follows a mild scaling law in N and D.
pub fn confound_suite(n: usize, seed: u64) -> ConfoundSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [4_000_000u64, 8_000_000, 16_000_000];
    let budgets = [2_000_000_000u64, 4_000_000_000];
    let mut records = Vec::with_capacity(n);
    let mut metric = Vec::with_capacity(n);
    let mut loss = Vec::with_capacity(n);
    for i in 0..n {
        let batch = BATCH_SIZES[i % 5];
        let params = sizes[(i / 5) % 3];
        let tokens = budgets[(i / 15) % 2];
        let steps = (batch as f64 / 32.0).log2();
        let l = SUITE_LAW.loss(params as f64, tokens as f64) * (1.0 + 0.04 * steps)
            + 0.02 * normal(&mut rng);
        let m = 0.8 - 0.05 * steps + 0.02 * normal(&mut rng);
        records.push(ExperimentRecord {
            model_id: format!("syn-{i:03}"),
            param_count_nonembed: params,
            token_budget: tokens,
            batch_size: batch,
            weight_decay: [0.0, 0.1][(i / 2) % 2],
            lr_scale: [0.5, 1.0, 2.0][i % 3],
            lr_anneal_frac: [0.0, 0.1, 0.25, 0.5][i % 4],
            losses: BTreeMap::from([(LOSS_TASK.to_string(), l)]),
            checkpoint_paths: Vec::new(),
        });
        metric.push(m);
        loss.push(l);
    }
    ConfoundSuite {
        records,
        metric,
        loss,
    }
}

impl ConfoundSuite {
    pub fn manifest(&self) -> Manifest {
        Manifest::new(self.records.clone()).expect("synthetic records are valid")
    }

    /// Geometry with the planted metric as normalized effective rank of W and
    /// seeded noise for every other metric.
    pub fn geometry(&self, seed: u64) -> BTreeMap<String, ModelGeometry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        self.records
            .iter()
            .zip(&self.metric)
            .map(|(r, &m)| {
                let w = planted_summary(Target::Unembedding, m, rng.random_range(-0.05..0.05), Some(rng.random_range(0.2..0.9)));
                let h = planted_summary(Target::Representation, rng.random_range(0.2..0.9), rng.random_range(0.0..0.4), None);
                (
                    r.model_id.clone(),
                    ModelGeometry {
                        unembedding: Some(w),
                        representation: Some(h),
                    },
                )
            })
            .collect()
    }
}

/// A summary carrying the given metric values, for battery tests.
pub fn planted_summary(
    target: Target,
    eff_rank_norm: f64,
    angular: f64,
    isotropy: Option<f64>,
) -> GeometrySummary {
    let cols = 64;
    GeometrySummary {
        target,
        rows: 1024,
        cols,
        effective_rank_raw: eff_rank_norm * cols as f64,
        effective_rank_norm: eff_rank_norm,
        effective_rank_clamped: false,
        isotropy,
        angular_variability: angular,
        excluded_zero_rows: 0,
        spectral_norm: 1.0,
        spectrum_method: SvdMethod::GramEigen,
        config_used: MetricConfig::default(),
    }
}

/// Gaussian matrix with column scales `exp(-decay * j / cols)`; larger
/// `decay` concentrates the spectrum and lowers the effective rank.
pub fn decaying_matrix(rows: usize, cols: usize, decay: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..cols)
        .map(|j| (-decay * j as f64 / cols as f64).exp())
        .collect();
    Matrix::from_fn(rows, cols, |_, j| normal(&mut rng) * scales[j])
}

/// Spectral decay planted for a record: grows with batch size.
pub fn planted_decay(record: &ExperimentRecord) -> f64 {
    1.0 + 1.5 * (record.batch_size as f64 / 32.0).log2()
}

/// Writes `confound_suite(n, seed)` to `dir` as a manifest plus one f32
/// safetensors checkpoint per record holding `W_U` (`rows x cols`, spectral
/// decay from [`planted_decay`]) and representations `H` (`rows / 2 x cols`,
/// half that decay). Returns the manifest path.
pub fn write_suite_fixture(
    dir: &Path,
    n: usize,
    seed: u64,
    rows: usize,
    cols: usize,
) -> Result<PathBuf, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir.join("ckpt")).map_err(io)?;
    let mut suite = confound_suite(n, seed);
    for (i, r) in suite.records.iter_mut().enumerate() {
        let rel = PathBuf::from(format!("ckpt/{}.safetensors", r.model_id));
        let decay = planted_decay(r);
        let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
        let w = decaying_matrix(rows, cols, decay, s);
        let h = decaying_matrix((rows / 2).max(2), cols, 0.5 * decay, s ^ 0x5bd1_e995);
        write_safetensors(dir.join(&rel), &[("W_U", &w, DType::F32), ("H", &h, DType::F32)])?;
        r.checkpoint_paths.push(CheckpointEntry {
            token_count: r.token_budget,
            path: rel.clone(),
            tensor: "W_U".into(),
            representation_path: Some(rel),
            representation_tensor: Some("H".into()),
            loss: None,
        });
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, suite.manifest().to_json()).map_err(io)?;
    Ok(path)
}
