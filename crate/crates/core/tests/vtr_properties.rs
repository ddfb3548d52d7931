use proptest::prelude::*;
use teleop_core::kinematics::Vec3;
use teleop_core::vtr::{axis_weight, split_cartesian, VtrWeights};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn split_conserves_reference(x in prop::array::uniform3(-10.0f64..10.0), w in prop::array::uniform3(0.0f64..=1.0)) {
        let x = Vec3::from(x);
        let s = split_cartesian(&x, &VtrWeights::from_weights(Vec3::from(w)));
        prop_assert!(((s.x_star + s.nu) - x).amax() <= 1e-12);
    }

    #[test]
    fn weight_is_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0, d in 0.05f64..0.5, delta in 0.01f64..0.05) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (wl, wh) = (axis_weight(lo, d, delta), axis_weight(hi, d, delta));
        prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
        prop_assert!(wl <= wh);
    }
}

#[test]
fn weight_endpoints_are_exact() {
    assert_eq!(axis_weight(0.15, 0.25, 0.1), 0.0);
    assert_eq!(axis_weight(0.35, 0.25, 0.1), 1.0);
    assert_eq!(axis_weight(0.25, 0.25, 0.1), 0.5);
}
