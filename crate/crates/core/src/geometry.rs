//! Effective rank, isotropy and angular variability of a matrix.
//!
//! For an unembedding matrix `W` all three are reported; for a representation
//! matrix `H` isotropy is not computed.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LoadedTensor, RepresentationMatrix, WeightMatrix};
use crate::matrix::{canonical_row_order, gemm, Matrix};
use crate::spectral::{
    self, GramEigens, SingularSpectrum, SpectralError, SvdMethod, ROW_BLOCK,
};

pub const DEFAULT_EPSILON: f64 = 1e-12;
pub const MAX_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("all singular values are zero")]
    ZeroMatrix,
    #[error("angular variability needs at least 2 nonzero rows, found {nonzero}")]
    TooFewRows { nonzero: usize },
    #[error("invalid metric configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IsotropySigns {
    /// Candidates are `+u_j` and `-u_j` for every eigenvector.
    #[default]
    Both,
    PositiveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Added to every normalized singular value before the entropy.
    pub epsilon: f64,
    pub isotropy_signs: IsotropySigns,
    /// Renormalize `p_k` to sum to one after adding `epsilon`.
    #[serde(default)]
    pub renormalize: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            isotropy_signs: IsotropySigns::Both,
            renormalize: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.epsilon > 0.0 && self.epsilon <= MAX_EPSILON) {
            return Err(GeometryError::InvalidConfig(format!(
                "epsilon must lie in (0, {MAX_EPSILON}], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRank {
    pub raw: f64,
    pub normalized: f64,
    /// Set when the epsilon perturbation pushed the value above `min(rows, cols)`
    /// and it was capped there.
    pub clamped: bool,
}

/// Entropy-based effective rank of `m`, raw and divided by `min(rows, cols)`.
pub fn effective_rank(m: &Matrix, cfg: &MetricConfig) -> Result<EffectiveRank, GeometryError> {
    cfg.validate()?;
    let spectrum = spectral::singular_values(m)?;
    effective_rank_of_spectrum(&spectrum, cfg)
}

pub fn effective_rank_of_spectrum(
    spectrum: &SingularSpectrum,
    cfg: &MetricConfig,
) -> Result<EffectiveRank, GeometryError> {
    let r = spectrum.values.len();
    let l1: f64 = spectrum.values.iter().sum();
    if r == 0 || l1 <= 0.0 {
        return Err(GeometryError::ZeroMatrix);
    }
    let mut p: Vec<f64> = spectrum.values.iter().map(|s| s / l1 + cfg.epsilon).collect();
    if cfg.renormalize {
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
    }
    let entropy: f64 = -p.iter().map(|&x| x * x.ln()).sum::<f64>();
    let mut raw = entropy.exp();
    let cap = r as f64;
    let clamped = raw > cap;
    if clamped {
        raw = cap;
    }
    Ok(EffectiveRank {
        raw,
        normalized: raw / cap,
        clamped,
    })
}

/// Partition-function isotropy `min_c Z(c) / max_c Z(c)` over the eigenvectors
/// of `WᵀW`, with `Z(c) = Σ_i exp(⟨c, W_i⟩)`.
pub fn isotropy(w: &WeightMatrix, cfg: &MetricConfig) -> Result<f64, GeometryError> {
    cfg.validate()?;
    let eig = spectral::gram_eigens(w.matrix())?;
    Ok(isotropy_with_eigens(w.matrix(), &eig, cfg.isotropy_signs))
}

/// `log Z(c)` for every eigenvector, `+u_j` and `-u_j`, each evaluated with
/// a blocked log-sum-exp.
pub fn log_partition(m: &Matrix, eig: &GramEigens) -> (Vec<f64>, Vec<f64>) {
    let d = m.cols();
    let order = canonical_row_order(m);
    let blocks: Vec<&[usize]> = order.chunks(ROW_BLOCK).collect();
    // per column: (max, sum exp(x - max)) for +x and for -x
    let mut acc_pos = vec![(f64::NEG_INFINITY, 0.0); d];
    let mut acc_neg = vec![(f64::NEG_INFINITY, 0.0); d];
    let wave = rayon::current_num_threads().max(1);
    for group in blocks.chunks(wave) {
        let partials: Vec<_> = group
            .par_iter()
            .map(|rows| block_log_partition(m, rows, &eig.eigenvectors))
            .collect();
        for (pos, neg) in partials {
            for j in 0..d {
                acc_pos[j] = lse_merge(acc_pos[j], pos[j]);
                acc_neg[j] = lse_merge(acc_neg[j], neg[j]);
            }
        }
    }
    let finish = |(m, s): (f64, f64)| m + s.ln();
    (
        acc_pos.into_iter().map(finish).collect(),
        acc_neg.into_iter().map(finish).collect(),
    )
}

type LseState = (f64, f64);

fn lse_merge(a: LseState, b: LseState) -> LseState {
    if a.0 == f64::NEG_INFINITY {
        return b;
    }
    if b.0 == f64::NEG_INFINITY {
        return a;
    }
    let m = a.0.max(b.0);
    (m, a.1 * (a.0 - m).exp() + b.1 * (b.0 - m).exp())
}

fn block_log_partition(m: &Matrix, rows: &[usize], u: &Matrix) -> (Vec<LseState>, Vec<LseState>) {
    let d = m.cols();
    let block = m.select_rows(rows);
    let mut proj = vec![0.0; rows.len() * d];
    gemm(rows.len(), d, d, block.as_slice(), d, u.as_slice(), d, &mut proj, d);
    let mut pos = Vec::with_capacity(d);
    let mut neg = Vec::with_capacity(d);
    for j in 0..d {
        let col = || proj.iter().skip(j).step_by(d);
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for &x in col() {
            hi = hi.max(x);
            lo = lo.min(x);
        }
        let (mut sp, mut sn) = (0.0, 0.0);
        for &x in col() {
            sp += (x - hi).exp();
            sn += (lo - x).exp();
        }
        pos.push((hi, sp));
        neg.push((-lo, sn));
    }
    (pos, neg)
}

pub(crate) fn isotropy_with_eigens(m: &Matrix, eig: &GramEigens, signs: IsotropySigns) -> f64 {
    let (pos, neg) = log_partition(m, eig);
    let candidates: Vec<f64> = match signs {
        IsotropySigns::Both => pos.into_iter().chain(neg).collect(),
        IsotropySigns::PositiveOnly => pos,
    };
    let lo = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - hi).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularVariability {
    pub value: f64,
    /// Rows with zero norm, left out of both the sum and the count.
    pub excluded_zero_rows: usize,
}

/// Mean pairwise cosine similarity between distinct nonzero rows.
///
/// Uses `Σ_{i≠j} cos(w_i, w_j) = ‖Σ_i ŵ_i‖² − v'` over the `v'` unit-normalized
/// nonzero rows, which costs `O(v·d)`.
pub fn angular_variability(m: &Matrix) -> Result<AngularVariability, GeometryError> {
    let d = m.cols();
    let order = canonical_row_order(m);
    let blocks: Vec<&[usize]> = order.chunks(ROW_BLOCK).collect();
    let mut total = vec![0.0; d];
    let mut used = 0usize;
    let wave = rayon::current_num_threads().max(1);
    for group in blocks.chunks(wave) {
        let partials: Vec<(Vec<f64>, usize)> = group
            .par_iter()
            .map(|rows| {
                let mut s = vec![0.0; d];
                let mut n = 0;
                for &i in rows.iter() {
                    let row = m.row(i);
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    n += 1;
                    for (acc, x) in s.iter_mut().zip(row) {
                        *acc += x / norm;
                    }
                }
                (s, n)
            })
            .collect();
        for (s, n) in partials {
            for (t, x) in total.iter_mut().zip(&s) {
                *t += x;
            }
            used += n;
        }
    }
    let excluded = m.rows() - used;
    if used < 2 {
        return Err(GeometryError::TooFewRows { nonzero: used });
    }
    if excluded > 0 {
        warn!("angular variability: excluded {excluded} zero-norm row(s)");
    }
    let v = used as f64;
    let sum_sq: f64 = total.iter().map(|x| x * x).sum();
    let value = ((sum_sq - v) / (v * v - v)).clamp(-1.0, 1.0);
    Ok(AngularVariability {
        value,
        excluded_zero_rows: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Unembedding,
    Representation,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Unembedding => "unembedding",
            Target::Representation => "representation",
        }
    }
}

/// All applicable metrics for one matrix of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySummary {
    pub target: Target,
    pub rows: usize,
    pub cols: usize,
    pub effective_rank_raw: f64,
    pub effective_rank_norm: f64,
    pub effective_rank_clamped: bool,
    pub isotropy: Option<f64>,
    pub angular_variability: f64,
    pub excluded_zero_rows: usize,
    pub spectral_norm: f64,
    pub spectrum_method: SvdMethod,
    pub config_used: MetricConfig,
}

pub fn summarize(t: &LoadedTensor, cfg: &MetricConfig) -> Result<GeometrySummary, GeometryError> {
    match t {
        LoadedTensor::Weight(w) => summarize_weight(w, cfg),
        LoadedTensor::Representation(h) => summarize_representation(h, cfg),
    }
}

pub fn summarize_weight(
    w: &WeightMatrix,
    cfg: &MetricConfig,
) -> Result<GeometrySummary, GeometryError> {
    cfg.validate()?;
    let m = w.matrix();
    let eig = spectral::gram_eigens(m)?;
    let spectrum = match SvdMethod::for_shape(m.rows(), m.cols()) {
        SvdMethod::GramEigen => spectral::spectrum_from_gram(m, &eig)?,
        SvdMethod::FullSvd => spectral::singular_values_with(m, SvdMethod::FullSvd)?,
    };
    let er = effective_rank_of_spectrum(&spectrum, cfg)?;
    let iso = isotropy_with_eigens(m, &eig, cfg.isotropy_signs);
    let av = angular_variability(m)?;
    Ok(build_summary(Target::Unembedding, m, &spectrum, er, Some(iso), av, cfg))
}

pub fn summarize_representation(
    h: &RepresentationMatrix,
    cfg: &MetricConfig,
) -> Result<GeometrySummary, GeometryError> {
    cfg.validate()?;
    let m = h.matrix();
    let spectrum = spectral::singular_values(m)?;
    let er = effective_rank_of_spectrum(&spectrum, cfg)?;
    let av = angular_variability(m)?;
    Ok(build_summary(Target::Representation, m, &spectrum, er, None, av, cfg))
}

fn build_summary(
    target: Target,
    m: &Matrix,
    spectrum: &SingularSpectrum,
    er: EffectiveRank,
    isotropy: Option<f64>,
    av: AngularVariability,
    cfg: &MetricConfig,
) -> GeometrySummary {
    GeometrySummary {
        target,
        rows: m.rows(),
        cols: m.cols(),
        effective_rank_raw: er.raw,
        effective_rank_norm: er.normalized,
        effective_rank_clamped: er.clamped,
        isotropy,
        angular_variability: av.value,
        excluded_zero_rows: av.excluded_zero_rows,
        spectral_norm: spectrum.largest(),
        spectrum_method: spectrum.method,
        config_used: *cfg,
    }
}
