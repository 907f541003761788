mod common;

use common::*;
use geomprobe::geometry::{angular_variability, effective_rank, isotropy, IsotropySigns, MetricConfig};
use geomprobe::ingest::WeightMatrix;
use geomprobe::spectral::{singular_values, singular_values_with, SvdMethod};
use geomprobe::Matrix;
use proptest::prelude::*;

fn cfg() -> MetricConfig {
    MetricConfig::default()
}

#[test]
fn singular_values_match_jacobi() {
    for seed in 0..40 {
        let m = oracle_matrix(seed);
        let want = jacobi_singular_values(&m);
        let got = singular_values(&m).unwrap().values;
        assert_eq!(got.len(), want.len());
        let top = want[0];
        for (g, w) in got.iter().zip(&want) {
            // small singular values are only defined to about eps * sigma_1
            assert!((g - w).abs() <= 1e-10 * top + 1e-9 * w, "seed {seed}: {g} vs {w}");
        }
    }
}

#[test]
fn gram_and_full_svd_paths_agree() {
    let mut r = rng(3);
    let m = gaussian(600, 40, &mut r);
    let a = singular_values_with(&m, SvdMethod::GramEigen).unwrap().values;
    let b = singular_values_with(&m, SvdMethod::FullSvd).unwrap().values;
    for (x, y) in a.iter().zip(&b) {
        assert!(rel_err(*x, *y) < 1e-12);
    }
}

#[test]
fn effective_rank_matches_oracle() {
    for seed in 0..40 {
        let m = oracle_matrix(seed);
        let (raw, norm) = effective_rank_oracle(&m, 1e-12);
        let er = effective_rank(&m, &cfg()).unwrap();
        assert!(rel_err(er.raw, raw) < 1e-9, "seed {seed}: {} vs {raw}", er.raw);
        assert!(rel_err(er.normalized, norm) < 1e-9);
    }
}

#[test]
fn isotropy_matches_oracle() {
    for seed in 0..40 {
        let m = oracle_matrix(seed);
        let want = isotropy_oracle(&m);
        let got = isotropy(&WeightMatrix::from_matrix(m).unwrap(), &cfg()).unwrap();
        assert!(rel_err(got, want) < 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn angular_variability_matches_oracle() {
    for seed in 0..40 {
        let m = oracle_matrix(seed);
        let want = angular_oracle(&m);
        let got = angular_variability(&m).unwrap().value;
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-3), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn positive_only_isotropy_is_never_smaller() {
    let mut r = rng(11);
    let m = gaussian(200, 12, &mut r).scaled(0.5);
    let w = WeightMatrix::from_matrix(m).unwrap();
    let both = isotropy(&w, &cfg()).unwrap();
    let pos = isotropy(
        &w,
        &MetricConfig {
            isotropy_signs: IsotropySigns::PositiveOnly,
            ..cfg()
        },
    )
    .unwrap();
    assert!(pos >= both - 1e-15);
}

#[test]
fn zero_rows_are_excluded_from_angular_variability() {
    let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]);
    let av = angular_variability(&m).unwrap();
    assert_eq!(av.excluded_zero_rows, 2);
    assert!((av.value - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn analytic_fixtures() {
    let id = Matrix::identity(16);
    let er = effective_rank(&id, &cfg()).unwrap();
    assert!((er.normalized - 1.0).abs() < 1e-6);

    let u: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
    let v: Vec<f64> = (0..10).map(|j| (j as f64 - 4.5) / 3.0).collect();
    let rank1 = Matrix::from_fn(100, 10, |i, j| u[i] * v[j]);
    let er = effective_rank(&rank1, &cfg()).unwrap();
    assert!((er.normalized - 0.1).abs() < 1e-6, "{}", er.normalized);

    let basis = Matrix::from_fn(8, 4, |i, j| {
        if i % 4 == j {
            if i < 4 { 1.0 } else { -1.0 }
        } else {
            0.0
        }
    });
    let iso = isotropy(&WeightMatrix::from_matrix(basis).unwrap(), &cfg()).unwrap();
    assert!((iso - 1.0).abs() < 1e-12);

    let pair = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]);
    let iso = isotropy(&WeightMatrix::from_matrix(pair.clone()).unwrap(), &cfg()).unwrap();
    assert!((iso - 1.0 / 1f64.cosh()).abs() < 1e-9, "{iso}");
    assert_eq!(angular_variability(&pair).unwrap().value, -1.0);

    let same = Matrix::from_fn(30, 5, |_, j| j as f64 + 0.5);
    // unit-normalizing the rows leaves a few ulps of rounding
    assert!((angular_variability(&same).unwrap().value - 1.0).abs() < 1e-12);

    let mut r = rng(1);
    let q = random_orthonormal(12, 12, &mut r);
    let orth = Matrix::from_rows(&q);
    assert!(angular_variability(&orth).unwrap().value.abs() < 1e-12);
}

fn small_matrix() -> impl Strategy<Value = Matrix> {
    (2usize..40, 2usize..12, any::<u64>()).prop_map(|(rows, cols, seed)| {
        let mut r = rng(seed);
        gaussian(rows, cols, &mut r)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_row_order(m in small_matrix(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..m.rows()).collect();
        order.shuffle(&mut rng(seed));
        let p = m.select_rows(&order);
        prop_assert_eq!(angular_variability(&m).unwrap().value, angular_variability(&p).unwrap().value);
        prop_assert_eq!(effective_rank(&m, &cfg()).unwrap().raw, effective_rank(&p, &cfg()).unwrap().raw);
        let wm = WeightMatrix::from_matrix(m).unwrap();
        let wp = WeightMatrix::from_matrix(p).unwrap();
        prop_assert_eq!(isotropy(&wm, &cfg()).unwrap(), isotropy(&wp, &cfg()).unwrap());
    }

    #[test]
    fn scale_invariance(m in small_matrix(), c in 0.01f64..100.0) {
        let s = m.scaled(c);
        let a = effective_rank(&m, &cfg()).unwrap();
        let b = effective_rank(&s, &cfg()).unwrap();
        prop_assert!((a.raw - b.raw).abs() < 1e-9 * a.raw);
        let a = angular_variability(&m).unwrap().value;
        let b = angular_variability(&s).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metric_ranges(m in small_matrix()) {
        let er = effective_rank(&m, &cfg()).unwrap();
        prop_assert!(er.raw >= 1.0 - 1e-9 && er.normalized <= 1.0);
        let av = angular_variability(&m).unwrap().value;
        prop_assert!((-1.0..=1.0).contains(&av));
        let iso = isotropy(&WeightMatrix::from_matrix(m).unwrap(), &cfg()).unwrap();
        prop_assert!(iso > 0.0 && iso <= 1.0);
    }

    #[test]
    fn transpose_keeps_effective_rank(m in small_matrix()) {
        let a = effective_rank(&m, &cfg()).unwrap().raw;
        let b = effective_rank(&m.transpose(), &cfg()).unwrap().raw;
        prop_assert!((a - b).abs() < 1e-9 * a);
    }
}
