//! Haptic feedback mapping: forearm squeeze from the virtual force on each
//! control point, finger squeeze from grasp and contact forces, vibration
//! patterns acknowledging engagement changes.

use serde::{Deserialize, Serialize};
use teleop_core::kinematics::Vec3;

use crate::trace::Side;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    /// Virtual force giving full forearm squeeze, N.
    pub max_force: f64,
    /// Gripper effort giving full right finger squeeze, N.
    pub max_grip_effort: f64,
    /// Left end-effector external force giving full left finger squeeze, N.
    pub max_contact_force: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { max_force: 0.3, max_grip_effort: 20.0, max_contact_force: 60.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pair {
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vibration {
    pub target: Side,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeedbackFrame {
    pub forearm_squeeze: Pair,
    pub finger_squeeze: Pair,
    pub vibration: Option<Vibration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeedbackInputs {
    pub left_force: Vec3,
    pub right_force: Vec3,
    pub gripper_effort: f64,
    pub left_external: Vec3,
    /// Engagement change this step.
    pub toggle: Option<(Side, bool)>,
}

fn ratio(value: f64, max: f64) -> f64 {
    if max > 0.0 {
        (value / max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn map_feedback(inputs: &FeedbackInputs, config: &FeedbackConfig) -> FeedbackFrame {
    FeedbackFrame {
        forearm_squeeze: Pair {
            left: ratio(inputs.left_force.norm(), config.max_force),
            right: ratio(inputs.right_force.norm(), config.max_force),
        },
        finger_squeeze: Pair {
            left: ratio(inputs.left_external.norm(), config.max_contact_force),
            right: ratio(inputs.gripper_effort, config.max_grip_effort),
        },
        vibration: inputs.toggle.map(|(target, on)| Vibration {
            target,
            pattern: if on { Pattern::Single } else { Pattern::Double },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let cfg = FeedbackConfig::default();
        assert_eq!(map_feedback(&FeedbackInputs::default(), &cfg).forearm_squeeze.left, 0.0);
        let full = FeedbackInputs { right_force: Vec3::new(0.0, cfg.max_force, 0.0), ..Default::default() };
        assert_eq!(map_feedback(&full, &cfg).forearm_squeeze.right, 1.0);
        let over = FeedbackInputs { gripper_effort: 1e3, ..Default::default() };
        assert_eq!(map_feedback(&over, &cfg).finger_squeeze.right, 1.0);
    }

    #[test]
    fn toggle_patterns() {
        let cfg = FeedbackConfig::default();
        let off = FeedbackInputs { toggle: Some((Side::Left, false)), ..Default::default() };
        assert_eq!(map_feedback(&off, &cfg).vibration, Some(Vibration { target: Side::Left, pattern: Pattern::Double }));
        let on = FeedbackInputs { toggle: Some((Side::Right, true)), ..Default::default() };
        assert_eq!(map_feedback(&on, &cfg).vibration.unwrap().pattern, Pattern::Single);
    }

    proptest! {
        #[test]
        fn squeeze_is_monotone_and_ignores_toggles(a in 0.0f64..1.0, b in 0.0f64..1.0, on in any::<bool>()) {
            let cfg = FeedbackConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let f = |m: f64, toggle| map_feedback(
                &FeedbackInputs { left_force: Vec3::new(m, 0.0, 0.0), toggle, ..Default::default() },
                &cfg,
            );
            prop_assert!(f(lo, None).forearm_squeeze.left <= f(hi, None).forearm_squeeze.left);
            prop_assert_eq!(f(lo, None).forearm_squeeze, f(lo, Some((Side::Left, on))).forearm_squeeze);
        }
    }
}
