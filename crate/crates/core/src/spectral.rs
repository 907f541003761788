//! Singular spectra of tall dense matrices.
//!
//! Two routes compute the spectrum: a direct SVD, and an eigendecomposition of
//! the `d × d` Gram matrix `WᵀW`. The Gram route is used whenever
//! `rows >= 4 * cols`; for an unembedding matrix with `v ≈ 50k` and `d ≤ 768`
//! it is much cheaper than the SVD of the full matrix.
//!
//! Squaring the matrix loses the small end of the spectrum: a singular value
//! `σ_k` computed from `λ_k` carries an absolute error of order
//! `sqrt(ε_mach) · σ_1`. Singular values below [`REFINE_RATIO`]` · σ_1` are
//! therefore recomputed as the singular values of `W · U_s`, where `U_s` spans
//! the corresponding eigenvectors.
//!
//! All reductions over rows visit rows in [`canonical_row_order`] with a fixed
//! block size, so results do not depend on the input row order or on the
//! number of worker threads.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{canonical_row_order, gemm, gemm_strided, Matrix};

/// Shape ratio at and above which the Gram route is taken.
pub const GRAM_PATH_RATIO: usize = 4;
/// Largest column count accepted by the dense `d × d` eigendecomposition.
pub const MAX_GRAM_DIM: usize = 4096;
/// Singular values below this fraction of `σ_1` are refined on the Gram route.
pub const REFINE_RATIO: f64 = 1e-3;
/// Iteration budget per dimension for the iterative solvers.
pub const ITERATIONS_PER_DIM: usize = 100;

pub(crate) const ROW_BLOCK: usize = 2048;
const COL_TILE: usize = 96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigensolver did not converge within {budget} iterations")]
    ConvergenceFailure { budget: usize },
    #[error("matrix has {cols} columns; the Gram eigendecomposition accepts at most {MAX_GRAM_DIM}")]
    TooManyColumns { cols: usize },
    #[error("matrix has an empty dimension ({rows}x{cols})")]
    Empty { rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvdMethod {
    FullSvd,
    GramEigen,
}

impl SvdMethod {
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        if rows >= GRAM_PATH_RATIO * cols {
            SvdMethod::GramEigen
        } else {
            SvdMethod::FullSvd
        }
    }
}

/// Singular values in non-increasing order, `min(rows, cols)` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub method: SvdMethod,
}

impl SingularSpectrum {
    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Eigenpairs of `WᵀW`, eigenvalues non-increasing and clamped at zero.
///
/// Column `j` of `eigenvectors` belongs to `eigenvalues[j]` and is signed so
/// that its largest-magnitude entry is positive (first such entry on ties).
#[derive(Debug, Clone)]
pub struct GramEigens {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl GramEigens {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        (0..self.dim()).map(|i| self.eigenvectors.get(i, j)).collect()
    }
}

fn check_nonempty(m: &Matrix) -> Result<(), SpectralError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(SpectralError::Empty {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(())
}

/// Singular values through the route chosen by [`SvdMethod::for_shape`].
pub fn singular_values(m: &Matrix) -> Result<SingularSpectrum, SpectralError> {
    singular_values_with(m, SvdMethod::for_shape(m.rows(), m.cols()))
}

/// Singular values through an explicitly chosen route.
pub fn singular_values_with(
    m: &Matrix,
    method: SvdMethod,
) -> Result<SingularSpectrum, SpectralError> {
    check_nonempty(m)?;
    match method {
        SvdMethod::FullSvd => full_svd_values(m),
        SvdMethod::GramEigen => {
            if m.cols() > MAX_GRAM_DIM {
                return Err(SpectralError::TooManyColumns { cols: m.cols() });
            }
            let gram = gram_matrix(m);
            // eigenvectors are only needed to refine small singular values
            let mut values: Vec<f64> = gram
                .to_nalgebra()
                .symmetric_eigenvalues()
                .iter()
                .map(|l| l.max(0.0).sqrt())
                .collect();
            values.sort_by(|a, b| b.total_cmp(a));
            let top = values.first().copied().unwrap_or(0.0);
            if values.iter().any(|&v| v < REFINE_RATIO * top) {
                return spectrum_from_gram(m, &eigens_of_gram(&gram)?);
            }
            values.truncate(m.min_dim());
            Ok(SingularSpectrum {
                values,
                method: SvdMethod::GramEigen,
            })
        }
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64, SpectralError> {
    Ok(singular_values(m)?.largest())
}

fn full_svd_values(m: &Matrix) -> Result<SingularSpectrum, SpectralError> {
    let canonical = m.select_rows(&canonical_row_order(m));
    let mut values = svd_values(canonical.to_nalgebra())?;
    values.truncate(m.min_dim());
    Ok(SingularSpectrum {
        values,
        method: SvdMethod::FullSvd,
    })
}

fn svd_values(dm: DMatrix<f64>) -> Result<Vec<f64>, SpectralError> {
    let budget = ITERATIONS_PER_DIM * dm.nrows().min(dm.ncols()).max(1);
    let svd = SVD::try_new(dm, false, false, f64::EPSILON, budget)
        .ok_or(SpectralError::ConvergenceFailure { budget })?;
    let mut values: Vec<f64> = svd.singular_values.iter().map(|s| s.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// `WᵀW`, accumulated over fixed-size row blocks in canonical row order.
pub fn gram_matrix(m: &Matrix) -> Matrix {
    let d = m.cols();
    let order = canonical_row_order(m);
    let blocks: Vec<&[usize]> = order.chunks(ROW_BLOCK).collect();
    let mut gram = vec![0.0; d * d];
    // Partials are summed strictly in block order, so any thread count gives
    // the same bits.
    let wave = rayon::current_num_threads().max(1);
    for group in blocks.chunks(wave) {
        let partials: Vec<Vec<f64>> = group
            .par_iter()
            .map(|rows| block_gram_upper(m, rows))
            .collect();
        for p in partials {
            for (g, x) in gram.iter_mut().zip(&p) {
                *g += x;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i * d + j] = gram[j * d + i];
        }
    }
    Matrix::from_row_major(d, d, gram)
}

/// Upper triangle (by column tiles) of `BᵀB` for the gathered rows `B`.
fn block_gram_upper(m: &Matrix, rows: &[usize]) -> Vec<f64> {
    let d = m.cols();
    let block = m.select_rows(rows);
    let buf = block.as_slice();
    let n = rows.len();
    let mut out = vec![0.0; d * d];
    for p0 in (0..d).step_by(COL_TILE) {
        let pw = COL_TILE.min(d - p0);
        for q0 in (p0..d).step_by(COL_TILE) {
            let qw = COL_TILE.min(d - q0);
            // lhs (i, k) = B[k, p0 + i]; rhs (k, j) = B[k, q0 + j]
            gemm_strided(
                pw,
                n,
                qw,
                &buf[p0..],
                1,
                d as isize,
                &buf[q0..],
                d as isize,
                1,
                &mut out[p0 * d + q0..],
                d,
            );
        }
    }
    out
}

/// Eigendecomposition of `WᵀW` with the sign convention described on
/// [`GramEigens`].
pub fn gram_eigens(m: &Matrix) -> Result<GramEigens, SpectralError> {
    check_nonempty(m)?;
    if m.cols() > MAX_GRAM_DIM {
        return Err(SpectralError::TooManyColumns { cols: m.cols() });
    }
    eigens_of_gram(&gram_matrix(m))
}

pub(crate) fn eigens_of_gram(gram: &Matrix) -> Result<GramEigens, SpectralError> {
    let d = gram.rows();
    let budget = ITERATIONS_PER_DIM * d;
    let eig = SymmetricEigen::try_new(gram.to_nalgebra(), f64::EPSILON, budget)
        .ok_or(SpectralError::ConvergenceFailure { budget })?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let mut vectors = Matrix::zeros(d, d);
    for (j, &k) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors.set(i, j, sign * col[i]);
        }
    }
    Ok(GramEigens {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Singular values from Gram eigenvalues, refining the small ones.
pub(crate) fn spectrum_from_gram(
    m: &Matrix,
    eig: &GramEigens,
) -> Result<SingularSpectrum, SpectralError> {
    let mut values: Vec<f64> = eig.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let top = values.first().copied().unwrap_or(0.0);
    if top > 0.0 {
        let small: Vec<usize> = (0..values.len())
            .filter(|&k| values[k] < REFINE_RATIO * top)
            .collect();
        if !small.is_empty() {
            let refined = project_singular_values(m, eig, &small)?;
            for (&k, s) in small.iter().zip(refined) {
                values[k] = s;
            }
            values.sort_by(|a, b| b.total_cmp(a));
        }
    }
    values.truncate(m.min_dim());
    Ok(SingularSpectrum {
        values,
        method: SvdMethod::GramEigen,
    })
}

/// Singular values of `W · U_s` for the eigenvector columns `cols`.
fn project_singular_values(
    m: &Matrix,
    eig: &GramEigens,
    cols: &[usize],
) -> Result<Vec<f64>, SpectralError> {
    let d = m.cols();
    let s = cols.len();
    let basis = Matrix::from_fn(d, s, |i, j| eig.eigenvectors.get(i, cols[j]));
    let order = canonical_row_order(m);
    let mut projected = vec![0.0; m.rows() * s];
    for (b, rows) in order.chunks(ROW_BLOCK).enumerate() {
        let block = m.select_rows(rows);
        let out = &mut projected[b * ROW_BLOCK * s..(b * ROW_BLOCK + rows.len()) * s];
        gemm(rows.len(), d, s, block.as_slice(), d, basis.as_slice(), s, out, s);
    }
    let dm = DMatrix::from_row_slice(m.rows(), s, &projected);
    let mut values = svd_values(dm)?;
    values.resize(s, 0.0);
    Ok(values)
}
