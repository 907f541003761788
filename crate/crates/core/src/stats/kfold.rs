use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chinchilla::ScalingPoint;
use super::regression::{r_squared, LinearFit};
use super::StatsError;
use crate::Matrix;

pub const DEFAULT_FOLDS: usize = 5;

/// Out-of-fold R² of the baseline and metric-augmented regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaR2 {
    pub baseline_r2: f64,
    pub augmented_r2: f64,
    /// `augmented_r2 - baseline_r2`; negative when the metric hurts.
    pub delta: f64,
    pub k: usize,
    pub seed: u64,
}

/// Fold index of every point: a seeded shuffle dealt round-robin.
pub(crate) fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Design rows `[1, log N, log D, log 6ND]`, optionally followed by the metric.
fn design(points: &[ScalingPoint], metric: Option<&[f64]>) -> Matrix {
    let cols = if metric.is_some() { 5 } else { 4 };
    Matrix::from_fn(points.len(), cols, |i, j| {
        let p = &points[i];
        match j {
            0 => 1.0,
            1 => p.n.ln(),
            2 => p.d.ln(),
            3 => (6.0 * p.n * p.d).ln(),
            _ => metric.expect("metric column")[i],
        }
    })
}

fn out_of_fold(x: &Matrix, y: &[f64], fold: &[usize], k: usize) -> Result<Vec<f64>, StatsError> {
    let mut pred = vec![0.0; y.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fit = LinearFit::fit(&xt, &yt)?;
        for i in (0..y.len()).filter(|&i| fold[i] == f) {
            pred[i] = fit.predict_row(x.row(i));
        }
    }
    Ok(pred)
}

/// Extra out-of-fold variance in loss explained by `metric` beyond
/// log N, log D and log compute (6ND). Columns collinear with earlier ones on
/// a training fold are dropped, so a constant metric leaves the fit unchanged.
pub fn kfold_delta_r2(
    points: &[ScalingPoint],
    metric: &[f64],
    k: usize,
    seed: u64,
) -> Result<DeltaR2, StatsError> {
    if metric.len() != points.len() {
        return Err(StatsError::LengthMismatch {
            left: points.len(),
            right: metric.len(),
        });
    }
    if k < 2 || points.len() < 2 * k {
        return Err(StatsError::TooFewPoints {
            needed: 2 * k.max(2),
            got: points.len(),
        });
    }
    let finite = points
        .iter()
        .all(|p| p.n > 0.0 && p.d > 0.0 && p.loss.is_finite() && p.n.is_finite() && p.d.is_finite());
    if !finite || metric.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let y: Vec<f64> = points.iter().map(|p| p.loss).collect();
    let fold = fold_assignment(points.len(), k, seed);
    let base = out_of_fold(&design(points, None), &y, &fold, k)?;
    let aug = out_of_fold(&design(points, Some(metric)), &y, &fold, k)?;
    let baseline_r2 = r_squared(&y, &base)?;
    let augmented_r2 = r_squared(&y, &aug)?;
    Ok(DeltaR2 {
        baseline_r2,
        augmented_r2,
        delta: augmented_r2 - baseline_r2,
        k,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn suite() -> Vec<ScalingPoint> {
        (0..20)
            .map(|i| {
                let n = 1e6 * (1 + i % 5) as f64;
                let d = 1e9 * (1 + i / 5) as f64;
                let loss = 2.0 + 50.0 / n.powf(0.3) + ((i * 7) % 11) as f64 * 0.01;
                ScalingPoint { n, d, loss }
            })
            .collect()
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = fold_assignment(23, 5, 9);
        for k in 0..5 {
            let c = f.iter().filter(|&&v| v == k).count();
            assert!(c == 4 || c == 5);
        }
        assert_eq!(f, fold_assignment(23, 5, 9));
        assert_ne!(f, fold_assignment(23, 5, 10));
    }

    #[test]
    fn constant_metric_adds_nothing() {
        let pts = suite();
        let r = kfold_delta_r2(&pts, &[0.7; 20], 10, 3).unwrap();
        assert!(r.delta <= 0.0, "{r:?}");
    }

    #[test]
    fn perfect_predictor() {
        let pts = suite();
        let metric: Vec<f64> = pts.iter().map(|p| p.loss).collect();
        let r = kfold_delta_r2(&pts, &metric, 5, 1).unwrap();
        assert!(r.augmented_r2 >= 0.99 && r.delta > 0.0, "{r:?}");
    }

    #[test]
    fn too_few() {
        let pts = suite();
        assert!(matches!(
            kfold_delta_r2(&pts[..9], &[0.0; 9], 5, 0),
            Err(StatsError::TooFewPoints { .. })
        ));
    }
}
