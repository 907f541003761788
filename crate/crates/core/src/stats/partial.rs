use super::rank::{average_ranks, check_pair, is_constant, pearson};
use super::regression::{with_intercept, LinearFit};
use super::{spearman, StatsError};
use crate::Matrix;

/// Residual norms below this fraction of the centered rank norm count as an
/// exact fit: the covariates explain the variable completely.
const EXPLAINED_TOL: f64 = 1e-9;

/// Spearman correlation of `x` and `y` after removing `covariates` (n x p)
/// from both in rank space. With no covariates this is [`spearman`].
pub fn partial_spearman(x: &[f64], y: &[f64], covariates: &Matrix) -> Result<f64, StatsError> {
    if covariates.cols() == 0 {
        if covariates.rows() != x.len() && covariates.rows() != 0 {
            return Err(StatsError::LengthMismatch {
                left: x.len(),
                right: covariates.rows(),
            });
        }
        return spearman(x, y);
    }
    check_pair(x, y, covariates.cols() + 3)?;
    if covariates.rows() != x.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: covariates.rows(),
        });
    }
    if covariates.first_non_finite().is_some() {
        return Err(StatsError::NonFinite);
    }
    if is_constant(x) {
        return Err(StatsError::ConstantVector { which: "x" });
    }
    if is_constant(y) {
        return Err(StatsError::ConstantVector { which: "y" });
    }
    let n = x.len();
    let p = covariates.cols();
    let mut ranked = Matrix::zeros(n, p);
    for j in 0..p {
        let col: Vec<f64> = (0..n).map(|i| covariates.get(i, j)).collect();
        for (i, r) in average_ranks(&col).into_iter().enumerate() {
            ranked.set(i, j, r);
        }
    }
    let design = with_intercept(&ranked);
    let rx = residual(&design, &average_ranks(x))?;
    let ry = residual(&design, &average_ranks(y))?;
    match (rx, ry) {
        (Some(a), Some(b)) => pearson(&a, &b),
        _ => Ok(0.0),
    }
}

/// Rank residuals, or `None` when the covariates reproduce the ranks exactly.
fn residual(design: &Matrix, ranks: &[f64]) -> Result<Option<Vec<f64>>, StatsError> {
    let fit = LinearFit::fit_full_rank(design, ranks)?;
    let res = fit.residuals(design, ranks);
    let mean = ranks.iter().sum::<f64>() / ranks.len() as f64;
    let scale = ranks.iter().map(|r| (r - mean).powi(2)).sum::<f64>().sqrt();
    let size = res.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok((size > EXPLAINED_TOL * scale).then_some(res))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_covariates_is_spearman() {
        let x = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0];
        let y = [2.0, 7.0, 1.0, 8.0, 2.5, 8.5];
        assert_eq!(
            partial_spearman(&x, &y, &Matrix::zeros(6, 0)).unwrap(),
            spearman(&x, &y).unwrap()
        );
    }

    #[test]
    fn monotone_confound_removed() {
        let c: Vec<f64> = (0..10).map(|i| i as f64 * 1.3 + 0.2).collect();
        let x: Vec<f64> = c.iter().map(|v| v.exp()).collect();
        let y: Vec<f64> = c.iter().map(|v| -v.powi(3)).collect();
        let cov = Matrix::from_fn(10, 1, |i, _| c[i]);
        let r = partial_spearman(&x, &y, &cov).unwrap();
        assert!(r.abs() < 1e-8, "{r}");
    }

    #[test]
    fn symmetric() {
        let x = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0];
        let y = [2.0, 7.0, 1.0, 8.0, 2.5, 8.5, 3.0];
        let cov = Matrix::from_fn(7, 1, |i, _| ((i * 5) % 7) as f64);
        assert_eq!(
            partial_spearman(&x, &y, &cov).unwrap(),
            partial_spearman(&y, &x, &cov).unwrap()
        );
    }

    #[test]
    fn dependent_covariates() {
        let cov = Matrix::from_fn(6, 2, |i, j| (i as f64) * (j + 1) as f64);
        let x = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        assert!(matches!(
            partial_spearman(&x, &x, &cov),
            Err(StatsError::RankDeficient { .. })
        ));
    }
}
