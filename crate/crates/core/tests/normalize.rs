use proptest::prelude::*;
use riskval_core::ingest::normalize::{
    ace_score, compose_any_source, delinquency_score, divide_by_constant, item_mean_then_divide, normalize_likert,
    normalize_min_max, MinMaxMode, SourceObservation,
};

#[test]
fn reference_values() {
    assert_eq!(normalize_likert(3, 5).unwrap(), 0.6);
    assert_eq!(divide_by_constant(7.0, 14.0).unwrap(), 0.5);
    assert_eq!(delinquency_score(&[Some(3), Some(3), None]).unwrap(), 1.0);
    assert_eq!(ace_score(&[Some(1), Some(0), None, Some(1), Some(0)]).unwrap(), 0.5);
    assert!(ace_score(&[None, None]).is_err());
    assert!(normalize_likert(6, 5).is_err());
    assert!(divide_by_constant(1.0, 0.0).is_err());
}

#[test]
fn min_max_modes() {
    let literal = normalize_min_max(15.0, 10.0, 20.0, MinMaxMode::Literal).unwrap();
    let range = normalize_min_max(15.0, 10.0, 20.0, MinMaxMode::Range).unwrap();
    assert_eq!(literal, 0.25);
    assert_eq!(range, 0.5);
    assert!(normalize_min_max(1.0, 2.0, 2.0, MinMaxMode::Range).is_err());
}

#[test]
fn any_source_or() {
    let obs = |occurred, age| SourceObservation { source: "s".into(), occurred, age };
    assert_eq!(compose_any_source(&[], 18.0), None);
    assert_eq!(compose_any_source(&[obs(0, 16.0), obs(1, 17.0)], 18.0), Some(1));
    assert_eq!(compose_any_source(&[obs(1, 18.0)], 18.0), Some(0));
}

proptest! {
    #[test]
    fn likert_in_unit(max in 1i64..20, v in 1i64..20) {
        prop_assume!(v <= max);
        let out = normalize_likert(v, max).unwrap();
        prop_assert!((0.0..=1.0).contains(&out));
    }

    #[test]
    fn item_mean_ignores_order_and_missing(
        items in proptest::collection::vec(proptest::option::of(0u8..=4), 1..15),
        extra_missing in 0usize..4,
    ) {
        let items: Vec<Option<f64>> = items.into_iter().map(|v| v.map(f64::from)).collect();
        prop_assume!(items.iter().any(Option::is_some));
        let base = item_mean_then_divide(&items, 4.0).unwrap();
        let mut other: Vec<Option<f64>> = items.iter().rev().copied().collect();
        other.extend(std::iter::repeat_n(None, extra_missing));
        prop_assert!((item_mean_then_divide(&other, 4.0).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn min_max_range_scales_literal(min in 0.0f64..10.0, width in 0.5f64..20.0, t in 0.0f64..=1.0) {
        let max = min + width;
        let score = min + t * width;
        let literal = normalize_min_max(score, min, max, MinMaxMode::Literal).unwrap();
        let range = normalize_min_max(score, min, max, MinMaxMode::Range).unwrap();
        prop_assert!((range - literal * max / (max - min)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&range));
    }
}
