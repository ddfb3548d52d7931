//! Bimanual grasping: mass estimation from sensed end-effector forces,
//! the friction-based required grasp force, desired contact forces and the
//! cooperative admittance law with leader-follower coupling.
//!
//! Forces named `sensed`/`desired` are expressed in the object frame `b`,
//! whose ŷ axis runs along the line between the two contacts (from the
//! right contact to the left one).

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::Vec3;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BimanualError {
    #[error("mass estimation needs at least one force sample")]
    NoSamples,
    #[error("static friction coefficient must be positive, got {0}")]
    InvalidFriction(f64),
    #[error("damping diagonal must be strictly positive")]
    SingularDamping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZForceSample {
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub mass: f64,
    pub samples_used: usize,
    pub g: f64,
}

/// Mean over samples of `(f_zl + f_zr) / g`.
pub fn estimate_mass(samples: &[ZForceSample], g: f64) -> Result<MassEstimate, BimanualError> {
    if samples.is_empty() {
        return Err(BimanualError::NoSamples);
    }
    let sum: f64 = samples.iter().map(|s| (s.left + s.right) / g).sum();
    let mass = (sum / samples.len() as f64).max(0.0);
    Ok(MassEstimate { mass, samples_used: samples.len(), g })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspSpec {
    pub mu_s: f64,
    /// Safety margin on the friction hold, `> 1`.
    pub k_margin: f64,
    /// Required per-contact normal force, N.
    pub f_bar: f64,
    /// Normal force used while lifting before the mass is known, N.
    pub f_initial: f64,
}

impl Default for GraspSpec {
    fn default() -> Self {
        Self { mu_s: 0.6, k_margin: 1.4, f_bar: 0.0, f_initial: 45.0 }
    }
}

/// Per-contact normal force `k m g / (2 μ_s)`.
pub fn grasp_force(mass: f64, mu_s: f64, k_margin: f64, g: f64) -> Result<f64, BimanualError> {
    if !(mu_s > 0.0) {
        return Err(BimanualError::InvalidFriction(mu_s));
    }
    Ok(k_margin * mass * g / (2.0 * mu_s))
}

/// Sensed or desired force at each end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EEForce {
    pub left: Vec3,
    pub right: Vec3,
}

/// Keeps the sensed tangential components and prescribes `±f̄` along ŷ.
pub fn desired_forces(sensed: &EEForce, f_bar: f64) -> EEForce {
    EEForce {
        left: Vec3::new(sensed.left.x, f_bar, sensed.left.z),
        right: Vec3::new(sensed.right.x, -f_bar, sensed.right.z),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoopParams {
    /// Damping diagonal, N·s/m.
    pub damping: [f64; 3],
    /// Stiffness diagonal, N/m.
    pub stiffness: [f64; 3],
    /// Rotation from the object frame to the command frame.
    pub r_b: Matrix3<f64>,
    /// Right end-effector position relative to the left one, latched at grasp time.
    pub p_offset_t0: Vec3,
}

impl CoopParams {
    pub fn new(damping: f64, stiffness: f64) -> Self {
        Self {
            damping: [damping; 3],
            stiffness: [stiffness; 3],
            r_b: Matrix3::identity(),
            p_offset_t0: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopCommand {
    pub left: Vec3,
    pub right: Vec3,
}

/// `ẋ_j = ẋ + D⁻¹(R_b(f_s,j − f_d,j) + K(p_d,j − p_j))`, with the left arm
/// leading (`p_d,l = p_l`) and the right following at the latched offset.
pub fn coop_step(
    x_dot_cmd: &Vec3,
    sensed: &EEForce,
    desired: &EEForce,
    p_left: &Vec3,
    p_right: &Vec3,
    params: &CoopParams,
) -> Result<CoopCommand, BimanualError> {
    if params.damping.iter().any(|d| !(*d > 0.0)) {
        return Err(BimanualError::SingularDamping);
    }
    let d_inv = Matrix3::from_diagonal(&Vec3::from(params.damping).map(|d| 1.0 / d));
    let k = Matrix3::from_diagonal(&Vec3::from(params.stiffness));
    let target_left = *p_left;
    let target_right = p_left + params.p_offset_t0;
    let arm = |fs: &Vec3, fd: &Vec3, target: Vec3, p: &Vec3| {
        x_dot_cmd + d_inv * (params.r_b * (fs - fd) + k * (target - p))
    };
    Ok(CoopCommand {
        left: arm(&sensed.left, &desired.left, target_left, p_left),
        right: arm(&sensed.right, &desired.right, target_right, p_right),
    })
}

/// Object frame from the two contact positions: ŷ from right to left, ẑ
/// along gravity, x̂ completing a right-handed frame. Sensed forces are the
/// loads acting on the end-effectors, so in this frame the weight shows up
/// as positive z and the squeeze as `+f_N` on the left, `-f_N` on the right.
pub fn object_frame(p_left: &Vec3, p_right: &Vec3) -> Matrix3<f64> {
    let y = (p_left - p_right).try_normalize(1e-12).unwrap_or_else(Vec3::y);
    let mut z = -Vec3::z() + y * y.z;
    if z.norm() < 1e-9 {
        z = -Vec3::x() + y * y.x;
    }
    let z = z.normalize();
    let x = y.cross(&z);
    Matrix3::from_columns(&[x, y, z])
}

/// Coulomb hold condition `μ_s (f_Nl + f_Nr) ≥ m g`.
pub fn grasp_holds(mass: f64, f_n_left: f64, f_n_right: f64, mu_s: f64, g: f64) -> bool {
    mu_s * (f_n_left.max(0.0) + f_n_right.max(0.0)) >= mass * g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample_mass() {
        let m = estimate_mass(&[ZForceSample { left: 9.81, right: 9.81 }], 9.81).unwrap();
        assert!((m.mass - 2.0).abs() < 1e-12);
        assert_eq!(m.samples_used, 1);
    }

    #[test]
    fn zero_samples_give_zero_mass() {
        let m = estimate_mass(&[ZForceSample { left: 0.0, right: 0.0 }; 5], 9.81).unwrap();
        assert_eq!(m.mass, 0.0);
    }

    #[test]
    fn empty_samples_rejected() {
        assert_eq!(estimate_mass(&[], 9.81).unwrap_err(), BimanualError::NoSamples);
    }

    #[test]
    fn required_force_reported_values() {
        let a = grasp_force(2.111, 0.6, 1.4, 9.81).unwrap();
        let b = grasp_force(2.671, 0.6, 1.4, 9.81).unwrap();
        assert!((a - 24.16).abs() <= 0.005, "{a}");
        assert!((b - 30.57).abs() <= 0.005, "{b}");
    }

    #[test]
    fn unit_margin_force() {
        let f = grasp_force(1.2, 0.6, 1.0, 9.81).unwrap();
        assert!((f - 9.81).abs() < 1e-12);
    }

    #[test]
    fn friction_must_be_positive() {
        assert_eq!(grasp_force(1.0, 0.0, 1.4, 9.81).unwrap_err(), BimanualError::InvalidFriction(0.0));
    }

    #[test]
    fn desired_force_structure() {
        let sensed = EEForce { left: Vec3::new(1.0, 30.0, 9.0), right: Vec3::new(0.0, -30.0, 10.0) };
        let d = desired_forces(&sensed, 24.16);
        assert_eq!(d.left, Vec3::new(1.0, 24.16, 9.0));
        assert_eq!(d.right, Vec3::new(0.0, -24.16, 10.0));
        let zero = desired_forces(&sensed, 0.0);
        assert_eq!((zero.left.y, zero.right.y), (0.0, 0.0));
    }

    #[test]
    fn coop_equilibrium_passes_command_through() {
        let p = CoopParams { p_offset_t0: Vec3::new(0.0, -0.4, 0.0), ..CoopParams::new(2500.0, 200.0) };
        let sensed = EEForce { left: Vec3::new(0.0, 20.0, 9.0), right: Vec3::new(0.0, -20.0, 9.0) };
        let desired = desired_forces(&sensed, 20.0);
        let pl = Vec3::new(0.5, 0.2, 1.0);
        let pr = pl + p.p_offset_t0;
        let cmd = Vec3::new(0.05, 0.0, 0.01);
        let out = coop_step(&cmd, &sensed, &desired, &pl, &pr, &p).unwrap();
        assert_eq!(out.left, cmd);
        assert_eq!(out.right, cmd);
    }

    #[test]
    fn coop_force_error_term() {
        let p = CoopParams::new(2500.0, 200.0);
        let sensed = EEForce { left: Vec3::new(0.0, 1.0, 0.0), right: Vec3::zeros() };
        let desired = EEForce::default();
        let out = coop_step(&Vec3::zeros(), &sensed, &desired, &Vec3::zeros(), &Vec3::zeros(), &p).unwrap();
        assert!((out.left - Vec3::new(0.0, 4e-4, 0.0)).norm() < 1e-18);
        assert_eq!(out.right, Vec3::zeros());
    }

    #[test]
    fn coop_position_error_term() {
        let p = CoopParams::new(2500.0, 200.0);
        let pl = Vec3::zeros();
        let pr = Vec3::new(-0.01, 0.0, 0.0);
        let f = EEForce::default();
        let out = coop_step(&Vec3::zeros(), &f, &f, &pl, &pr, &p).unwrap();
        assert!((out.right - Vec3::new(8e-4, 0.0, 0.0)).norm() < 1e-18);
        assert_eq!(out.left, Vec3::zeros());
    }

    #[test]
    fn coop_rejects_zero_damping() {
        let mut p = CoopParams::new(2500.0, 200.0);
        p.damping[2] = 0.0;
        let f = EEForce::default();
        assert_eq!(
            coop_step(&Vec3::zeros(), &f, &f, &Vec3::zeros(), &Vec3::zeros(), &p).unwrap_err(),
            BimanualError::SingularDamping
        );
    }

    #[test]
    fn object_frame_is_right_handed() {
        let r = object_frame(&Vec3::new(0.6, 0.2, 1.0), &Vec3::new(0.6, -0.2, 1.0));
        let expected = Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, -1.0));
        assert!((r - expected).amax() < 1e-12);
        let tilted = object_frame(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.0, 0.0, 0.0));
        assert!((tilted.determinant() - 1.0).abs() < 1e-12);
        assert!((tilted.column(1) - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn hold_condition_examples() {
        assert!(grasp_holds(1.958, 24.16, 24.16, 0.6, 9.81));
        assert!(!grasp_holds(2.0, 10.0, 10.0, 0.6, 9.81));
        assert!(!grasp_holds(0.5, 0.0, 0.0, 0.6, 9.81));
    }

    proptest! {
        #[test]
        fn hold_margin_equals_safety_gain(m in 0.1f64..20.0, mu in 0.05f64..1.5, k in 1.01f64..3.0) {
            let f = grasp_force(m, mu, k, STANDARD_GRAVITY).unwrap();
            let margin = mu * 2.0 * f / (m * STANDARD_GRAVITY);
            prop_assert!((margin - k).abs() < 1e-12 * k);
            prop_assert!(grasp_holds(m, f, f, mu, STANDARD_GRAVITY));
        }

        #[test]
        fn grasp_force_scaling(m in 0.1f64..20.0, mu in 0.05f64..1.5, k in 1.01f64..3.0, s in 0.1f64..10.0) {
            let f = grasp_force(m, mu, k, STANDARD_GRAVITY).unwrap();
            prop_assert!((grasp_force(s * m, mu, k, STANDARD_GRAVITY).unwrap() - s * f).abs() < 1e-9 * f * s);
            prop_assert!((grasp_force(m, mu, s * k, STANDARD_GRAVITY).unwrap() - s * f).abs() < 1e-9 * f * s);
            prop_assert!((grasp_force(m, s * mu, k, STANDARD_GRAVITY).unwrap() - f / s).abs() < 1e-9 * f / s);
        }

        #[test]
        fn coop_superposition(fe in proptest::array::uniform3(-5.0f64..5.0), pe in proptest::array::uniform3(-0.1f64..0.1)) {
            let p = CoopParams::new(2500.0, 200.0);
            let zero = EEForce::default();
            let sensed = EEForce { left: Vec3::from(fe), right: Vec3::zeros() };
            let pl = Vec3::zeros();
            let pr = Vec3::from(pe);
            let both = coop_step(&Vec3::zeros(), &sensed, &zero, &pl, &pr, &p).unwrap();
            let force_only = coop_step(&Vec3::zeros(), &sensed, &zero, &pl, &Vec3::zeros(), &p).unwrap();
            let pos_only = coop_step(&Vec3::zeros(), &zero, &zero, &pl, &pr, &p).unwrap();
            prop_assert!((both.left - force_only.left - pos_only.left).norm() < 1e-15);
            prop_assert!((both.right - force_only.right - pos_only.right).norm() < 1e-15);
        }
    }
}
