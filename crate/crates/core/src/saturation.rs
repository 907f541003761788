//! Loss-degradation and rank-collapse onsets over a training run.
//!
//! Both detectors compare each checkpoint against a running extreme of the
//! checkpoints up to it (the running minimum loss, the running maximum
//! effective rank) and report the first checkpoint of a run of `window`
//! consecutive exceedances.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_POINTS: usize = 5;
/// Onsets at most this many checkpoint intervals apart count as co-occurring.
pub const CO_OCCURRENCE_INTERVALS: usize = 2;

#[derive(Debug, Error)]
pub enum SaturationError {
    #[error("series {model_id:?} has {got} points, need at least {MIN_POINTS}")]
    TooFewPoints { model_id: String, got: usize },
    #[error("series {model_id:?}: tokens not strictly increasing at point {index}")]
    NonMonotoneTokens { model_id: String, index: usize },
    #[error("series {model_id:?}: invalid {field} {value} at point {index}")]
    InvalidValue {
        model_id: String,
        index: usize,
        field: &'static str,
        value: f64,
    },
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("cannot read {path}: {reason}")]
    Csv { path: String, reason: String },
}

/// One checkpoint: training tokens seen, loss in nats, normalized effective rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub tokens: u64,
    pub loss: f64,
    pub eff_rank_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointSeries {
    model_id: String,
    points: Vec<SeriesPoint>,
}

impl CheckpointSeries {
    pub fn new(model_id: impl Into<String>, points: Vec<SeriesPoint>) -> Result<Self, SaturationError> {
        let model_id = model_id.into();
        if points.len() < MIN_POINTS {
            return Err(SaturationError::TooFewPoints {
                model_id,
                got: points.len(),
            });
        }
        for (index, p) in points.iter().enumerate() {
            if index > 0 && p.tokens <= points[index - 1].tokens {
                return Err(SaturationError::NonMonotoneTokens { model_id, index });
            }
            let bad = |field, value| SaturationError::InvalidValue {
                model_id: model_id.clone(),
                index,
                field,
                value,
            };
            if !(p.loss.is_finite() && p.loss > 0.0) {
                return Err(bad("loss", p.loss));
            }
            if !(p.eff_rank_norm > 0.0 && p.eff_rank_norm <= 1.0) {
                return Err(bad("eff_rank_norm", p.eff_rank_norm));
            }
        }
        Ok(Self { model_id, points })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn index_of(&self, tokens: u64) -> Option<usize> {
        self.points.iter().position(|p| p.tokens == tokens)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    tokens: u64,
    loss: f64,
    eff_rank_norm: f64,
}

/// Reads a `tokens,loss,eff_rank_norm` CSV; the model id is the file stem.
pub fn load_series_csv(path: impl AsRef<Path>) -> Result<CheckpointSeries, SaturationError> {
    let path = path.as_ref();
    let err = |reason: String| SaturationError::Csv {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut points = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| err(e.to_string()))?;
        points.push(SeriesPoint {
            tokens: row.tokens,
            loss: row.loss,
            eff_rank_norm: row.eff_rank_norm,
        });
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    CheckpointSeries::new(id, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub loss_rise_frac: f64,
    pub rank_drop_frac: f64,
    pub window: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            loss_rise_frac: 0.01,
            rank_drop_frac: 0.2,
            window: 3,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), SaturationError> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(SaturationError::InvalidThreshold(format!(
                    "{name} must be in (0, 1), got {v}"
                )))
            }
        };
        frac("loss_rise_frac", self.loss_rise_frac)?;
        frac("rank_drop_frac", self.rank_drop_frac)?;
        if self.window == 0 {
            return Err(SaturationError::InvalidThreshold("window must be >= 1".into()));
        }
        Ok(())
    }
}

/// First index starting `window` consecutive `true` flags.
fn first_run(flags: &[bool], window: usize) -> Option<usize> {
    let mut run = 0;
    for (i, &f) in flags.iter().enumerate() {
        run = if f { run + 1 } else { 0 };
        if run == window {
            return Some(i + 1 - window);
        }
    }
    None
}

fn loss_flags(s: &CheckpointSeries, rise_frac: f64) -> Vec<bool> {
    let mut min = f64::INFINITY;
    s.points
        .iter()
        .map(|p| {
            min = min.min(p.loss);
            p.loss / min - 1.0 >= rise_frac
        })
        .collect()
}

fn rank_flags(s: &CheckpointSeries, drop_frac: f64) -> Vec<bool> {
    let mut max = 0.0f64;
    s.points
        .iter()
        .map(|p| {
            max = max.max(p.eff_rank_norm);
            p.eff_rank_norm / max < 1.0 - drop_frac
        })
        .collect()
}

/// Token count where the loss first stays `rise_frac` (relative) above its
/// running minimum for `window` consecutive checkpoints.
pub fn detect_loss_degradation(s: &CheckpointSeries, rise_frac: f64, window: usize) -> Option<u64> {
    first_run(&loss_flags(s, rise_frac), window.max(1)).map(|i| s.points[i].tokens)
}

/// Token count where the effective rank first stays below `1 - drop_frac`
/// of its running maximum for `window` consecutive checkpoints.
pub fn detect_rank_collapse(s: &CheckpointSeries, drop_frac: f64, window: usize) -> Option<u64> {
    first_run(&rank_flags(s, drop_frac), window.max(1)).map(|i| s.points[i].tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationVerdict {
    pub model_id: String,
    pub loss_degradation_onset: Option<u64>,
    pub rank_collapse_onset: Option<u64>,
    pub co_occurring: bool,
    /// Rank onset minus loss onset, in tokens.
    pub lag_tokens: Option<i64>,
    /// Change in normalized effective rank per billion tokens over the
    /// interval ending at the rank-collapse onset.
    pub collapse_slope_per_billion: Option<f64>,
    pub thresholds_used: Thresholds,
}

/// Runs both detectors and relates their onsets.
pub fn assess(s: &CheckpointSeries, t: &Thresholds) -> Result<SaturationVerdict, SaturationError> {
    t.validate()?;
    let loss = detect_loss_degradation(s, t.loss_rise_frac, t.window);
    let rank = detect_rank_collapse(s, t.rank_drop_frac, t.window);
    let (mut co_occurring, mut lag_tokens) = (false, None);
    if let (Some(l), Some(r)) = (loss, rank) {
        lag_tokens = Some(r as i64 - l as i64);
        let li = s.index_of(l).expect("onset is a checkpoint");
        let ri = s.index_of(r).expect("onset is a checkpoint");
        co_occurring = li.abs_diff(ri) <= CO_OCCURRENCE_INTERVALS;
    }
    let collapse_slope_per_billion = rank.and_then(|r| {
        let i = s.index_of(r)?;
        let prev = s.points.get(i.checked_sub(1)?)?;
        let cur = &s.points[i];
        Some((cur.eff_rank_norm - prev.eff_rank_norm) / ((cur.tokens - prev.tokens) as f64 / 1e9))
    });
    Ok(SaturationVerdict {
        model_id: s.model_id.clone(),
        loss_degradation_onset: loss,
        rank_collapse_onset: rank,
        co_occurring,
        lag_tokens,
        collapse_slope_per_billion,
        thresholds_used: *t,
    })
}

/// Synthetic training runs with known onsets.
pub mod synthetic {
    use super::*;

    /// Tokens between checkpoints in every generated series.
    pub const STEP_TOKENS: u64 = 1_000_000_000;

    fn decaying_loss(frac: f64) -> f64 {
        2.0 + 2.0 * (-5.0 * frac).exp()
    }

    fn series(id: &str, n: usize, mut f: impl FnMut(usize) -> (f64, f64)) -> CheckpointSeries {
        let points = (0..n)
            .map(|i| {
                let (loss, eff_rank_norm) = f(i);
                SeriesPoint {
                    tokens: (i as u64 + 1) * STEP_TOKENS,
                    loss,
                    eff_rank_norm,
                }
            })
            .collect();
        CheckpointSeries::new(id, points).expect("generated series is valid")
    }

    /// Index where the late-training events of [`pythia_like`] begin.
    pub fn ramp_start(n: usize) -> usize {
        (0.7 * n as f64).ceil() as usize
    }

    /// Loss decays, then climbs 3% above its value at 70% of training within
    /// two checkpoints and stays there; the effective rank drops sharply from
    /// 0.8 to 0.5 at the same checkpoint. With `noise > 0` the loss carries
    /// multiplicative Gaussian noise of that relative size.
    pub fn pythia_like(n: usize, noise: f64, seed: u64) -> CheckpointSeries {
        let start = ramp_start(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_at_start = decaying_loss(start as f64 / n as f64);
        series("pythia-like", n, |i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let clean = if i < start {
                decaying_loss(i as f64 / n as f64)
            } else {
                let k = (i - start).min(2) as f64;
                base_at_start * (1.0 + 0.015 * k)
            };
            let rank = if i < start { 0.8 } else { 0.5 };
            (clean * (1.0 + noise * z), rank)
        })
    }

    /// Loss decays monotonically; the rank declines linearly by
    /// `total_drop` (relative) over the second half of training.
    pub fn gradual_collapse(n: usize, total_drop: f64) -> CheckpointSeries {
        let half = n / 2;
        let span = (n - 1 - half) as f64;
        series("gradual-collapse", n, |i| {
            let loss = decaying_loss(i as f64 / n as f64);
            let decline = if i <= half {
                0.0
            } else {
                total_drop * (i - half) as f64 / span
            };
            (loss, 0.8 * (1.0 - decline))
        })
    }

    /// Index of the first checkpoint of [`gradual_collapse`] below
    /// `1 - drop_frac` of the plateau, from the closed form.
    pub fn gradual_collapse_onset(n: usize, total_drop: f64, drop_frac: f64) -> usize {
        let half = n / 2;
        let span = (n - 1 - half) as f64;
        half + (drop_frac / total_drop * span).floor() as usize + 1
    }

    /// Monotone loss with a mild 10% rank decline: no events.
    pub fn olmo_like(n: usize) -> CheckpointSeries {
        let mut s = gradual_collapse(n, 0.1);
        s.model_id = "olmo-like".into();
        s
    }

    /// Monotone loss with a strong 40% gradual rank collapse.
    pub fn olmo_8b_like(n: usize) -> CheckpointSeries {
        let mut s = gradual_collapse(n, 0.4);
        s.model_id = "olmo-8b-like".into();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::synthetic::*;
    use super::*;

    fn from_losses(losses: &[f64]) -> CheckpointSeries {
        let points = losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| SeriesPoint {
                tokens: 100 * (i as u64 + 1),
                loss,
                eff_rank_norm: 0.5,
            })
            .collect();
        CheckpointSeries::new("t", points).unwrap()
    }

    fn from_ranks(ranks: &[f64]) -> CheckpointSeries {
        let points = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| SeriesPoint {
                tokens: 100 * (i as u64 + 1),
                loss: 3.0,
                eff_rank_norm: r,
            })
            .collect();
        CheckpointSeries::new("t", points).unwrap()
    }

    #[test]
    fn validation() {
        let p = |tokens, loss, r| SeriesPoint {
            tokens,
            loss,
            eff_rank_norm: r,
        };
        assert!(matches!(
            CheckpointSeries::new("a", vec![p(1, 1.0, 0.5); 4]),
            Err(SaturationError::TooFewPoints { got: 4, .. })
        ));
        let pts = vec![p(1, 1.0, 0.5), p(2, 1.0, 0.5), p(2, 1.0, 0.5), p(4, 1.0, 0.5), p(5, 1.0, 0.5)];
        assert!(matches!(
            CheckpointSeries::new("a", pts),
            Err(SaturationError::NonMonotoneTokens { index: 2, .. })
        ));
        let pts = vec![p(1, 1.0, 0.5), p(2, f64::NAN, 0.5), p(3, 1.0, 0.5), p(4, 1.0, 0.5), p(5, 1.0, 0.5)];
        assert!(matches!(
            CheckpointSeries::new("a", pts),
            Err(SaturationError::InvalidValue { index: 1, field: "loss", .. })
        ));
    }

    #[test]
    fn monotone_loss_has_no_onset() {
        assert_eq!(detect_loss_degradation(&from_losses(&[5.0, 4.8, 4.5, 4.3, 4.2, 4.1]), 0.01, 3), None);
    }

    #[test]
    fn dip_then_rise() {
        let s = from_losses(&[4.5, 4.2, 4.0, 4.2, 4.2, 4.2]);
        assert_eq!(detect_loss_degradation(&s, 0.01, 3), Some(400));
        // two elevated checkpoints are not enough
        let s = from_losses(&[4.5, 4.2, 4.0, 4.2, 4.2, 4.0]);
        assert_eq!(detect_loss_degradation(&s, 0.01, 3), None);
    }

    #[test]
    fn rank_step() {
        assert_eq!(detect_rank_collapse(&from_ranks(&[0.8; 6]), 0.2, 3), None);
        let s = from_ranks(&[0.8, 0.8, 0.8, 0.5, 0.5, 0.5, 0.5]);
        assert_eq!(detect_rank_collapse(&s, 0.2, 3), Some(400));
    }

    #[test]
    fn gradual_collapse_closed_form() {
        for n in [20, 40, 41, 64] {
            let s = gradual_collapse(n, 0.4);
            let i = gradual_collapse_onset(n, 0.4, 0.2);
            assert_eq!(detect_rank_collapse(&s, 0.2, 3), Some(s.points()[i].tokens), "n={n}");
        }
    }

    #[test]
    fn pythia_like_events_coincide() {
        let s = pythia_like(40, 0.0, 0);
        let start = ramp_start(40) as i64;
        let v = assess(&s, &Thresholds::default()).unwrap();
        let onset = v.loss_degradation_onset.unwrap() as i64 / STEP_TOKENS as i64 - 1;
        assert!((onset - start).abs() <= 2);
        assert!(v.co_occurring);
        assert!(v.lag_tokens.unwrap().unsigned_abs() <= 2 * STEP_TOKENS);
        assert!(v.collapse_slope_per_billion.unwrap() < 0.0);
    }

    #[test]
    fn olmo_cases() {
        let v = assess(&olmo_like(40), &Thresholds::default()).unwrap();
        assert_eq!((v.loss_degradation_onset, v.rank_collapse_onset), (None, None));
        let v = assess(&olmo_8b_like(40), &Thresholds::default()).unwrap();
        assert!(v.rank_collapse_onset.is_some());
        assert_eq!(v.loss_degradation_onset, None);
        assert!(!v.co_occurring);
        assert_eq!(v.lag_tokens, None);
    }

    #[test]
    fn thresholds_checked() {
        let t = Thresholds {
            window: 0,
            ..Thresholds::default()
        };
        assert!(assess(&olmo_like(10), &t).is_err());
        let t = Thresholds {
            loss_rise_frac: 1.0,
            ..Thresholds::default()
        };
        assert!(assess(&olmo_like(10), &t).is_err());
    }
}
