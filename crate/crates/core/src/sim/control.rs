use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wrap_angle;
use crate::bt::{ActionParams, CommandMode, LinearMode};
use crate::kinematics::{RigidTransform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("goal frame `{0}` cannot be resolved")]
    UnresolvableGoal(String),
    #[error("invalid controller goal: {0}")]
    InvalidGoal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
}

impl PidGains {
    pub fn p(kp: f64) -> Self {
        Self { kp: [kp; 3], ki: [0.0; 3], kd: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGoal {
    pub params: ActionParams,
    pub gains: PidGains,
    /// kp, ki, kd of the yaw loop.
    pub yaw_gains: [f64; 3],
    pub max_linear: f64,
    pub max_angular: f64,
    /// Axes of the linear error that are controlled.
    pub axis_mask: [bool; 3],
}

impl ControllerGoal {
    pub fn new(params: ActionParams, gains: PidGains, max_linear: f64, max_angular: f64) -> Self {
        Self { params, gains, yaw_gains: [gains.kp[0], 0.0, 0.0], max_linear, max_angular, axis_mask: [true; 3] }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.max_linear > 0.0 && self.max_angular > 0.0) {
            return Err(ControlError::InvalidGoal("velocity limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlOutput {
    /// World-frame linear velocity reference; `None` when the linear task is off.
    pub linear: Option<Vec3>,
    pub yaw_rate: Option<f64>,
    pub linear_error: f64,
    pub angular_error: f64,
    pub reached: bool,
}

/// PID Cartesian reference generator behind every motion action module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartesianController {
    pub goal: ControllerGoal,
    latched_goal: Option<RigidTransform>,
    keep_position: Option<Vec3>,
    keep_yaw: Option<f64>,
    integral: Vec3,
    prev_error: Option<Vec3>,
    yaw_integral: f64,
    prev_yaw_error: Option<f64>,
}

impl CartesianController {
    pub fn new(goal: ControllerGoal) -> Result<Self, ControlError> {
        goal.validate()?;
        Ok(Self {
            goal,
            latched_goal: None,
            keep_position: None,
            keep_yaw: None,
            integral: Vec3::zeros(),
            prev_error: None,
            yaw_integral: 0.0,
            prev_yaw_error: None,
        })
    }

    /// Latches whatever the modes require: the goal for Reach, the current
    /// control pose for Keep.
    pub fn start(&mut self, goal_pose: Option<&RigidTransform>, position: &Vec3, yaw: f64) -> Result<(), ControlError> {
        let p = &self.goal.params;
        if p.command_mode == CommandMode::Reach {
            let g = goal_pose.ok_or_else(|| ControlError::UnresolvableGoal(p.goal_frame.clone()))?;
            self.latched_goal = Some(*g);
        }
        self.keep_position = (p.linear_mode == LinearMode::Keep).then_some(*position);
        self.keep_yaw = (p.angular_mode == LinearMode::Keep).then_some(yaw);
        self.integral = Vec3::zeros();
        self.prev_error = None;
        self.yaw_integral = 0.0;
        self.prev_yaw_error = None;
        Ok(())
    }

    fn target(&self, goal_pose: Option<&RigidTransform>) -> Result<RigidTransform, ControlError> {
        match self.goal.params.command_mode {
            CommandMode::Reach => self.latched_goal,
            CommandMode::Track => goal_pose.copied(),
        }
        .ok_or_else(|| ControlError::UnresolvableGoal(self.goal.params.goal_frame.clone()))
    }

    /// Target position (goal composed with the final offset) if linear Set.
    pub fn target_position(&self, goal_pose: Option<&RigidTransform>) -> Result<Vec3, ControlError> {
        Ok(self.target(goal_pose)?.transform_point(&self.goal.params.final_goal_distance))
    }

    pub fn update(
        &mut self,
        goal_pose: Option<&RigidTransform>,
        position: &Vec3,
        yaw: f64,
        dt: f64,
    ) -> Result<ControlOutput, ControlError> {
        let p = self.goal.params.clone();
        let mut out = ControlOutput { reached: true, ..Default::default() };
        let linear_target = match p.linear_mode {
            LinearMode::Set => Some(self.target_position(goal_pose)?),
            LinearMode::Keep => self.keep_position,
            LinearMode::None => None,
        };
        if let Some(target) = linear_target {
            let mut e = target - position;
            for (i, on) in self.goal.axis_mask.iter().enumerate() {
                if !on {
                    e[i] = 0.0;
                }
            }
            out.linear_error = e.norm();
            out.reached &= out.linear_error <= p.linear_error_norm;
            self.integral += e * dt;
            let de = self.prev_error.map_or(Vec3::zeros(), |prev| (e - prev) / dt);
            self.prev_error = Some(e);
            let g = &self.goal.gains;
            let u = Vec3::from_fn(|i, _| g.kp[i] * e[i] + g.ki[i] * self.integral[i] + g.kd[i] * de[i]);
            out.linear = Some(clamp_norm(u, self.goal.max_linear));
        }
        let yaw_target = match p.angular_mode {
            LinearMode::Set => Some(self.target(goal_pose)?.yaw() + p.final_ref_orientation.yaw()),
            LinearMode::Keep => self.keep_yaw,
            LinearMode::None => None,
        };
        if let Some(target) = yaw_target {
            let e = wrap_angle(target - yaw);
            out.angular_error = e.abs();
            out.reached &= out.angular_error <= p.angular_error_norm;
            self.yaw_integral += e * dt;
            let de = self.prev_yaw_error.map_or(0.0, |prev| (e - prev) / dt);
            self.prev_yaw_error = Some(e);
            let [kp, ki, kd] = self.goal.yaw_gains;
            let u = kp * e + ki * self.yaw_integral + kd * de;
            out.yaw_rate = Some(u.clamp(-self.goal.max_angular, self.goal.max_angular));
        }
        Ok(out)
    }
}

/// Uniform scaling down to `max` norm, preserving direction.
pub fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Camera pitch that centers `goal` vertically; negative looks down.
pub fn gaze_ref(camera: &Vec3, heading: f64, goal: &Vec3, limits: [f64; 2]) -> f64 {
    let d = goal - camera;
    let forward = d.x * heading.cos() + d.y * heading.sin();
    d.z.atan2(forward).clamp(limits[0], limits[1])
}
