//! Brute-force reference implementations used as test oracles. None of these
//! call into the library's numerical code.

#![allow(dead_code, clippy::needless_range_loop)]

use geomprobe::Matrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Orthonormal basis (columns) of a random `n x k` Gaussian, by modified
/// Gram-Schmidt.
pub fn random_orthonormal(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / nrm).collect());
        }
    }
    cols
}

/// `U diag(s) V^T` with random orthonormal `U`, `V`.
pub fn with_singular_values(rows: usize, cols: usize, s: &[f64], rng: &mut ChaCha8Rng) -> Matrix {
    let k = s.len();
    let u = random_orthonormal(rows, k, rng);
    let v = random_orthonormal(cols, k, rng);
    Matrix::from_fn(rows, cols, |i, j| (0..k).map(|t| u[t][i] * s[t] * v[t][j]).sum())
}

/// One-sided Jacobi SVD: rotates column pairs until all are orthogonal; the
/// singular values are then the column norms. Sorted descending.
pub fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let a = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (rows, cols) = (a.rows(), a.cols());
    // column-major working copy
    let mut c: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a.get(i, j)).collect()).collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = c[p].iter().map(|x| x * x).sum();
                let beta: f64 = c[q].iter().map(|x| x * x).sum();
                let gamma: f64 = c[p].iter().zip(&c[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let (left, right) = c.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = cs * xp - sn * yq;
                    *y = sn * xp + cs * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = c.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as rows.
pub fn jacobi_eigen(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = sym.len();
    let mut a = sym.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

/// Effective rank by the explicit definition: `p_k = s_k / sum(s) + eps`,
/// `exp(-sum p_k ln p_k)`, capped at `min(rows, cols)`. Returns (raw, normalized).
pub fn effective_rank_oracle(m: &Matrix, eps: f64) -> (f64, f64) {
    let s = jacobi_singular_values(m);
    let total: f64 = s.iter().sum();
    let mut h = 0.0;
    for &sk in &s {
        let p = sk / total + eps;
        h -= p * p.ln();
    }
    let r = m.rows().min(m.cols()) as f64;
    let raw = h.exp().min(r);
    (raw, raw / r)
}

/// Isotropy as min/max of `Z(c) = sum_i exp(c . w_i)` over `c = +-u_j`, the
/// eigenvectors of `W^T W`, with `Z` summed directly.
pub fn isotropy_oracle(m: &Matrix) -> f64 {
    let rows = to_rows(m);
    let d = m.cols();
    let gram: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..d).map(|b| rows.iter().map(|r| r[a] * r[b]).sum()).collect())
        .collect();
    let (_, vecs) = jacobi_eigen(&gram);
    let mut zs = Vec::new();
    for u in &vecs {
        for sign in [1.0, -1.0] {
            let z: f64 = rows
                .iter()
                .map(|r| (sign * r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()).exp())
                .sum();
            zs.push(z);
        }
    }
    let min = zs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = zs.iter().cloned().fold(0.0, f64::max);
    min / max
}

/// Mean cosine similarity over ordered pairs of distinct nonzero rows.
pub fn angular_oracle(m: &Matrix) -> f64 {
    let rows: Vec<Vec<f64>> = to_rows(m)
        .into_iter()
        .filter(|r| r.iter().any(|&x| x != 0.0))
        .collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let v = rows.len();
    let mut total = 0.0;
    for i in 0..v {
        for j in 0..v {
            if i != j {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                total += dot / (norms[i] * norms[j]);
            }
        }
    }
    total / (v * (v - 1)) as f64
}

pub fn rational(x: f64) -> BigRational {
    BigRational::from_f64(x).expect("finite")
}

/// Solves `A x = b` exactly by Gauss-Jordan elimination.
pub fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Vec<BigRational> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero()).expect("nonsingular");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = BigRational::one() / a[col][col].clone();
        for k in 0..n {
            a[col][k] = &a[col][k] * &inv;
        }
        b[col] = &b[col] * &inv;
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for k in 0..n {
                    let t = &f * &a[col][k];
                    a[r][k] = &a[r][k] - t;
                }
                let t = &f * &b[col];
                b[r] = &b[r] - t;
            }
        }
    }
    b
}

/// Residuals of `y` on `[1, covariates]` from the normal equations solved in
/// exact rational arithmetic; the inputs are taken as exact binary values.
pub fn residualize_oracle(y: &[f64], covariates: &Matrix) -> Vec<f64> {
    let n = y.len();
    let p = covariates.cols() + 1;
    let x: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row = vec![BigRational::one()];
            row.extend((0..p - 1).map(|j| rational(covariates.get(i, j))));
            row
        })
        .collect();
    let yr: Vec<BigRational> = y.iter().map(|&v| rational(v)).collect();
    let xtx: Vec<Vec<BigRational>> = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| x.iter().fold(BigRational::zero(), |acc, r| acc + &r[a] * &r[b]))
                .collect()
        })
        .collect();
    let xty: Vec<BigRational> = (0..p)
        .map(|a| x.iter().zip(&yr).fold(BigRational::zero(), |acc, (r, yi)| acc + &r[a] * yi))
        .collect();
    let beta = solve_exact(xtx, xty);
    x.iter()
        .zip(&yr)
        .map(|(r, yi)| {
            let fit = r.iter().zip(&beta).fold(BigRational::zero(), |acc, (a, b)| acc + a * b);
            (yi - fit).to_f64().expect("finite")
        })
        .collect()
}

/// Average ranks computed by counting: rank = 1 + #less + (#equal - 1) / 2.
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let less = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Partial correlation of ranked x and y given ranked covariates, from the
/// inverse of the exact rank covariance matrix:
/// `-P_xy / sqrt(P_xx P_yy)`.
pub fn partial_spearman_oracle(x: &[f64], y: &[f64], covariates: &Matrix) -> f64 {
    let n = x.len();
    let mut vars: Vec<Vec<f64>> = vec![ranks_by_counting(x), ranks_by_counting(y)];
    for j in 0..covariates.cols() {
        let col: Vec<f64> = (0..n).map(|i| covariates.get(i, j)).collect();
        vars.push(ranks_by_counting(&col));
    }
    let k = vars.len();
    let exact: Vec<Vec<BigRational>> = vars.iter().map(|v| v.iter().map(|&r| rational(r)).collect()).collect();
    let nr = BigRational::from_integer(BigInt::from(n));
    let means: Vec<BigRational> = exact
        .iter()
        .map(|v| v.iter().fold(BigRational::zero(), |a, b| a + b) / &nr)
        .collect();
    let cov: Vec<Vec<BigRational>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    exact[a].iter().zip(&exact[b]).fold(BigRational::zero(), |acc, (u, v)| {
                        acc + (u - &means[a]) * (v - &means[b])
                    })
                })
                .collect()
        })
        .collect();
    // columns 0 and 1 of the inverse
    let col = |c: usize| {
        let e: Vec<BigRational> = (0..k)
            .map(|i| if i == c { BigRational::one() } else { BigRational::zero() })
            .collect();
        solve_exact(cov.clone(), e)
    };
    let p0 = col(0);
    let p1 = col(1);
    let pxy = p0[1].to_f64().unwrap();
    let pxx = p0[0].to_f64().unwrap();
    let pyy = p1[1].to_f64().unwrap();
    assert!(p0[0].is_positive() && p1[1].is_positive());
    -pxy / (pxx * pyy).sqrt()
}

/// A mix of shapes and spectra for oracle comparisons: Gaussian, exactly low
/// rank, and ill-conditioned (singular values spanning six decades).
pub fn oracle_matrix(seed: u64) -> Matrix {
    let mut r = rng(seed);
    let cols = r.random_range(2..=64usize);
    let rows = match seed % 4 {
        0 => r.random_range(2..=cols + 8),
        1 => r.random_range(4 * cols..=2048),
        _ => r.random_range(2..=512usize),
    };
    let k = rows.min(cols);
    match seed % 3 {
        0 => gaussian(rows, cols, &mut r).scaled(0.3),
        1 => {
            let rank = r.random_range(1..=k);
            let s: Vec<f64> = (0..rank).map(|i| 2.0 / (1.0 + i as f64)).collect();
            with_singular_values(rows, cols, &s, &mut r)
        }
        _ => {
            let s: Vec<f64> = (0..k)
                .map(|i| 3.0 * 10f64.powf(-6.0 * i as f64 / (k.max(2) - 1) as f64))
                .collect();
            with_singular_values(rows, cols, &s, &mut r)
        }
    }
}

/// Relative difference with a floor so values at zero compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
