use formula_distill_core::reward::{quantize, r_squared, RewardLevel, N_LEVELS};
use formula_distill_core::vocab::Vocab;
use formula_distill_core::expr::Token;
use proptest::prelude::*;

#[test]
fn every_level_is_a_fixed_point() {
    assert_eq!(RewardLevel::all().count(), N_LEVELS);
    for l in RewardLevel::all() {
        assert_eq!(quantize(l.value()), l);
        assert_eq!(quantize(l.level() as f64 / 100.0), l);
    }
}

#[test]
fn monotone_on_a_dense_grid() {
    let mut prev = quantize(-0.5);
    for i in 0..=10_000 {
        let r = -0.5 + 2.0 * i as f64 / 10_000.0;
        let q = quantize(r);
        assert!(q >= prev, "quantize({r}) dropped");
        prev = q;
    }
}

#[test]
fn negatives_and_failures_map_to_zero() {
    for r in [-1e300, -3.0, -0.004, -f64::MIN_POSITIVE, f64::NAN, f64::NEG_INFINITY] {
        assert_eq!(quantize(r), RewardLevel::ZERO);
    }
    assert_eq!(Vocab::new().token(Vocab::new().id(Token::Reward(quantize(-2.0)))).unwrap().to_string(), "0.00");
}

#[test]
fn half_steps_round_up() {
    assert_eq!(quantize(0.995).level(), 100);
    assert_eq!(quantize(0.125).level(), 13);
    assert_eq!(quantize(0.1249).level(), 12);
}

proptest! {
    #[test]
    fn within_half_a_step(r in 0.0f64..1.0) {
        let q = quantize(r).value();
        prop_assert!((q - r).abs() <= 0.005 + 1e-9);
    }

    #[test]
    fn perfect_fit_has_unit_r2(y in prop::collection::vec(-100.0f64..100.0, 2..50)) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
        prop_assert!((r_squared(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let flat = vec![mean; y.len()];
        prop_assert!(r_squared(&y, &flat).unwrap().abs() < 1e-9);
    }
}
