//! Positive definiteness of matrices rebuilt from floored Cholesky factors,
//! checked on the stored doubles with exact rational arithmetic.

use num_rational::BigRational;
use proptest::prelude::*;
use voroto_core::dataset::CholeskyFactor;
use voroto_core::homogenize::ElasticityMatrix;
use voroto_core::surrogate::DIAG_FLOOR;

fn exactly_positive_definite(c: &ElasticityMatrix) -> bool {
    let q = |i: usize, j: usize| BigRational::from_float(c.0[i][j]).unwrap();
    let zero = BigRational::from_integer(0.into());
    let m2 = q(0, 0) * q(1, 1) - q(0, 1) * q(1, 0);
    let m3 = q(0, 0) * (q(1, 1) * q(2, 2) - q(1, 2) * q(2, 1))
        - q(0, 1) * (q(1, 0) * q(2, 2) - q(1, 2) * q(2, 0))
        + q(0, 2) * (q(1, 0) * q(2, 1) - q(1, 1) * q(2, 0));
    q(0, 0) > zero && m2 > zero && m3 > zero
}

fn plain_product(f: &CholeskyFactor) -> [[f64; 3]; 3] {
    let l = f.lower();
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| l[i][k] * l[j][k]).sum()))
}

#[test]
fn margin_fixes_products_that_round_to_indefinite() {
    // all diagonals floored: det = 1e-36, far below the rounding of O(1) entries
    let grid: Vec<f64> = (0..12).map(|i| -3.1 + 0.53 * i as f64).collect();
    let mut plain_failures = 0;
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                let f = CholeskyFactor([DIAG_FLOOR, a, DIAG_FLOOR, b, c, DIAG_FLOOR]);
                if !exactly_positive_definite(&ElasticityMatrix(plain_product(&f))) {
                    plain_failures += 1;
                }
                assert!(exactly_positive_definite(&f.reconstruct()), "{a} {b} {c}");
            }
        }
    }
    assert!(plain_failures > 0);
}

proptest! {
    #[test]
    fn floored_factors_rebuild_positive_definite(
        off in prop::array::uniform3(-50.0f64..50.0),
        diag in prop::array::uniform3(prop_oneof![Just(DIAG_FLOOR), DIAG_FLOOR..5.0]),
    ) {
        let f = CholeskyFactor([diag[0], off[0], diag[1], off[1], off[2], diag[2]]);
        let c = f.reconstruct();
        prop_assert!(exactly_positive_definite(&c));
        let plain = plain_product(&f);
        let l = f.lower();
        for i in 0..3 {
            let scale: f64 = (0..3)
                .flat_map(|j| (0..3).map(move |k| (j, k)))
                .map(|(j, k)| (l[i][k] * l[j][k]).abs())
                .sum();
            for j in 0..3 {
                if i == j {
                    prop_assert!((c.0[i][i] - plain[i][i]).abs() <= 8.0 * f64::EPSILON * scale);
                } else {
                    prop_assert_eq!(c.0[i][j], plain[i][j]);
                }
            }
        }
    }
}
