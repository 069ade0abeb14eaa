use fusepath::threshold::{dual_relation_check, slc_equivalence_partition, threshold_solve};
use fusepath::{DataMatrix, DifferenceOperator, FusionNorm};
use proptest::prelude::*;

/// Small integer grids make equal distances, and distances equal to the cut, common.
fn tied_data() -> impl Strategy<Value = (usize, usize, Vec<f64>, f64)> {
    (2usize..10, 1usize..4).prop_flat_map(|(n, p)| {
        (
            Just(n),
            Just(p),
            proptest::collection::vec((-3i32..4).prop_map(f64::from), n * p),
            (0i32..8).prop_map(|v| f64::from(v) * 0.5),
        )
    })
}

fn continuous_data() -> impl Strategy<Value = (usize, usize, Vec<f64>, f64)> {
    (2usize..12, 1usize..4).prop_flat_map(|(n, p)| {
        (Just(n), Just(p), proptest::collection::vec(-4.0f64..4.0, n * p), 0.0f64..5.0)
    })
}

fn check(n: usize, p: usize, x: Vec<f64>, lambda: f64, q: u32) -> Result<(), TestCaseError> {
    let norm = FusionNorm::from_q(q).unwrap();
    let d = DifferenceOperator::from_dims(n, p).unwrap();
    let r = threshold_solve(&x, &d, lambda, norm).unwrap();
    prop_assert!(dual_relation_check(&x, &d, lambda, norm, &r).unwrap() <= 1e-12);
    let m = DataMatrix::new(n, p, x).unwrap();
    prop_assert_eq!(slc_equivalence_partition(&m, lambda, norm).unwrap(), r.partition);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn threshold_components_are_single_linkage_with_ties((n, p, x, lambda) in tied_data(), q in 1u32..3) {
        check(n, p, x, lambda, q)?;
    }

    #[test]
    fn threshold_components_are_single_linkage((n, p, x, lambda) in continuous_data(), q in 1u32..3) {
        check(n, p, x, lambda, q)?;
    }
}
