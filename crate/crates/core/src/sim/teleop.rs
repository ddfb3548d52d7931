//! Virtual-force teleoperation of one control point at a time, with optional
//! arm/base sharing through the velocity transmission ratio.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use super::{Commands, SimError, Simulator, LEFT_ARM, RIGHT_ARM};
use crate::kinematics::{RigidTransform, Vec3};
use crate::tpo::{cartesian_ref, reset_reference, virtual_force, CartesianGain, TrackerInput};
use crate::vtr::{split_cartesian, vtr_of_matrix, vtr_weight, VtrThresholds, VtrWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPointId {
    RightEe,
    LeftEe,
    Base,
}

impl ControlPointId {
    pub fn arm(self) -> Option<&'static str> {
        match self {
            ControlPointId::RightEe => Some(RIGHT_ARM),
            ControlPointId::LeftEe => Some(LEFT_ARM),
            ControlPointId::Base => None,
        }
    }

    /// World position of the control point.
    pub fn position(self, sim: &Simulator) -> Result<Vec3, SimError> {
        match self.arm() {
            Some(arm) => sim.ee_position(arm),
            None => Ok(sim.pelvis_pose().translation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    pub k_cam: f64,
    pub deadzone: f64,
    pub cutoff_hz: Option<f64>,
    /// Force to velocity gain, m/s per N.
    pub gain: [f64; 3],
    /// Arm/base sharing on or off.
    pub vtr_sharing: bool,
    pub thresholds: VtrThresholds,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            k_cam: TrackerInput::DEFAULT_K_CAM,
            deadzone: 0.01,
            cutoff_hz: Some(TrackerInput::DEFAULT_CUTOFF_HZ),
            gain: [1.0; 3],
            vtr_sharing: true,
            thresholds: VtrThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopOutput {
    pub commands: Commands,
    /// Virtual force on the control point, world frame.
    pub force: Vec3,
    pub x_dot: Vec3,
    pub weights: VtrWeights,
    /// Share of the reference sent to the base, world frame.
    pub nu: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopDrive {
    pub config: TeleopConfig,
    pub active: ControlPointId,
    pub tracker: TrackerInput,
}

/// Rotation about z by the base yaw.
fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    RigidTransform::planar(0.0, 0.0, 0.0, yaw).rotation
}

impl TeleopDrive {
    pub fn new(config: TeleopConfig, active: ControlPointId) -> Self {
        let tracker = TrackerInput::new(config.k_cam, config.deadzone, config.cutoff_hz);
        Self { config, active, tracker }
    }

    /// Changes the driven control point; the tracker reference is reset so
    /// the new point starts from zero force.
    pub fn switch_to(&mut self, cp: ControlPointId) {
        self.active = cp;
        self.tracker = reset_reference(&self.tracker);
    }

    /// Sets the operator displacement from the tracker reference, world frame.
    pub fn set_displacement(&mut self, r: &Vec3) {
        self.tracker.pose_in_origin = self.tracker.reference_pose * RigidTransform::from_translation(*r);
    }

    /// Arm weights from the β of the tool-point Jacobian in base axes.
    pub fn arm_weights(&self, sim: &Simulator, arm: &str) -> Result<VtrWeights, SimError> {
        let j = sim.arm_jacobian(arm)?;
        let rt = yaw_rotation(sim.state.base.yaw).transpose();
        let rt = DMatrix::from_fn(3, 3, |i, k| rt[(i, k)]);
        let beta = vtr_of_matrix(&(rt * j)).map_err(|e| SimError::InvalidModel(e.to_string()))?;
        Ok(vtr_weight(&beta, &self.config.thresholds))
    }

    /// One control step: tracker force, velocity reference, split and IK.
    pub fn step(&mut self, sim: &Simulator) -> Result<TeleopOutput, SimError> {
        let dt = sim.dt();
        let force = virtual_force(&mut self.tracker, dt);
        let x_dot = cartesian_ref(&force, &CartesianGain(self.config.gain));
        let mut commands = Commands::default();
        let r = yaw_rotation(sim.state.base.yaw);
        let (weights, nu) = match self.active.arm() {
            None => {
                commands.base.linear = x_dot;
                (VtrWeights::from_weights(Vec3::zeros()), x_dot)
            }
            Some(arm) => {
                let weights = if self.config.vtr_sharing { self.arm_weights(sim, arm)? } else { VtrWeights::full_arm() };
                let split = split_cartesian(&(r.transpose() * x_dot), &weights);
                let x_star = r * split.x_star;
                let nu = r * split.nu;
                commands.arm_qdot.insert(arm.to_string(), sim.arm_ik(arm, &x_star)?);
                commands.base.linear = nu;
                (weights, nu)
            }
        };
        Ok(TeleopOutput { commands, force, x_dot, weights, nu })
    }
}

/// Scripted operator: pulls the tracker toward the target with a saturated
/// proportional displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedOperator {
    pub gain: f64,
    pub max_reach: f64,
}

impl Default for SimulatedOperator {
    fn default() -> Self {
        Self { gain: 0.5, max_reach: 0.15 }
    }
}

impl SimulatedOperator {
    pub fn displacement(&self, target: &Vec3, control_point: &Vec3) -> Vec3 {
        super::control::clamp_norm((target - control_point) * self.gain, self.max_reach)
    }
}
