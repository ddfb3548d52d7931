use serde::{Deserialize, Serialize};

use super::{BtError, Params, Value};
use crate::kinematics::{RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandMode {
    /// Goal re-read on every control step.
    Track,
    /// Goal latched when the action starts.
    Reach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearMode {
    Set,
    Keep,
    None,
}

pub type AngularMode = LinearMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Orientation {
    Euler([f64; 3]),
    /// x, y, z, w
    Quaternion([f64; 4]),
}

impl Orientation {
    pub fn yaw(&self) -> f64 {
        match self {
            Orientation::Euler(rpy) => rpy[2],
            Orientation::Quaternion(q) => RigidTransform::from_quaternion(Vec3::zeros(), *q).yaw(),
        }
    }
}

/// Parameters of an action module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionParams {
    pub command_mode: CommandMode,
    pub goal_frame: String,
    pub linear_mode: LinearMode,
    pub angular_mode: AngularMode,
    pub final_goal_distance: Vec3,
    pub final_ref_orientation: Orientation,
    pub linear_error_norm: f64,
    pub angular_error_norm: f64,
}

impl Default for ActionParams {
    fn default() -> Self {
        Self {
            command_mode: CommandMode::Track,
            goal_frame: "laser_spot".to_string(),
            linear_mode: LinearMode::Set,
            angular_mode: LinearMode::None,
            final_goal_distance: Vec3::zeros(),
            final_ref_orientation: Orientation::Euler([0.0; 3]),
            linear_error_norm: 0.02,
            angular_error_norm: 0.05,
        }
    }
}

impl ActionParams {
    /// Typed view of raw leaf parameters; keys not listed here are left
    /// for the module to interpret.
    pub fn from_params(raw: &Params) -> Result<ActionParams, BtError> {
        action_params_from(raw)
    }
}

fn action_params_from(raw: &Params) -> Result<ActionParams, BtError> {
    let bad = |key: &str, reason: &str| BtError::InvalidParam { key: key.into(), reason: reason.into() };
    let mut p = ActionParams::default();
    for (key, value) in raw {
        match key.as_str() {
            "command_mode" => {
                p.command_mode = match value.as_str() {
                    Some("Track") => CommandMode::Track,
                    Some("Reach") => CommandMode::Reach,
                    _ => return Err(bad(key, "expected Track or Reach")),
                }
            }
            "linear_mode" | "angular_mode" => {
                let mode = match value.as_str() {
                    Some("Set") => LinearMode::Set,
                    Some("Keep") => LinearMode::Keep,
                    Some("None") => LinearMode::None,
                    _ => return Err(bad(key, "expected Set, Keep or None")),
                };
                if key == "linear_mode" {
                    p.linear_mode = mode;
                } else {
                    p.angular_mode = mode;
                }
            }
            "goal_frame" => {
                p.goal_frame = value.to_string();
            }
            "final_goal_distance" => match value {
                Value::Vector(v) if v.len() == 3 => p.final_goal_distance = Vec3::new(v[0], v[1], v[2]),
                _ => return Err(bad(key, "expected a 3-vector")),
            },
            "final_ref_orientation" => match value {
                Value::Vector(v) if v.len() == 3 => {
                    p.final_ref_orientation = Orientation::Euler([v[0], v[1], v[2]])
                }
                Value::Vector(v) if v.len() == 4 => {
                    p.final_ref_orientation = Orientation::Quaternion([v[0], v[1], v[2], v[3]])
                }
                _ => return Err(bad(key, "expected Euler angles or an x;y;z;w quaternion")),
            },
            "linear_error_norm" | "angular_error_norm" => {
                let n = value.as_f64().ok_or_else(|| bad(key, "expected a number"))?;
                if key == "linear_error_norm" {
                    p.linear_error_norm = n;
                } else {
                    p.angular_error_norm = n;
                }
            }
            _ => {}
        }
    }
    if p.linear_mode == LinearMode::None && p.angular_mode == LinearMode::None {
        return Err(bad("linear_mode", "linear and angular modes cannot both be None"));
    }
    if p.linear_mode == LinearMode::Set && !(p.linear_error_norm > 0.0) {
        return Err(bad("linear_error_norm", "must be positive when linear_mode is Set"));
    }
    if p.angular_mode == LinearMode::Set && !(p.angular_error_norm > 0.0) {
        return Err(bad("angular_error_norm", "must be positive when angular_mode is Set"));
    }
    Ok(p)
}
