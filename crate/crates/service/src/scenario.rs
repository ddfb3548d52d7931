//! Scenario files: world, robot start, controller settings and completion rule.

use std::path::Path;

use serde::{Deserialize, Serialize};
use teleop_core::kinematics::Vec3;
use teleop_core::perception::{KeyboardLayout, Scene};
use teleop_core::sim::{
    BasePose, ControlPointId, ModuleConfig, PipelineConfig, RobotModel, SimConfig, SimObject, SimulatedOperator,
    TeleopConfig,
};

use crate::feedback::FeedbackConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Completion {
    /// Run for the whole duration.
    Duration,
    /// Trace exhausted and no action module active for `hold` seconds.
    Idle { hold: f64 },
    /// Every teleoperation goal reached.
    GoalsReached,
}

impl Default for Completion {
    fn default() -> Self {
        Completion::Duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopSetup {
    pub enabled: bool,
    pub config: TeleopConfig,
    pub initial: ControlPointId,
    pub operator: SimulatedOperator,
    /// Goals visited in order by the scripted operator.
    pub goals: Vec<Vec3>,
    /// Distance at which a goal counts as reached, m.
    pub goal_tolerance: f64,
    /// Offset of the goal from the base frame that the scripted operator
    /// aims for when driving the base control point.
    pub base_standoff: Vec3,
}

impl Default for TeleopSetup {
    fn default() -> Self {
        Self {
            enabled: false,
            config: TeleopConfig::default(),
            initial: ControlPointId::RightEe,
            operator: SimulatedOperator::default(),
            goals: Vec::new(),
            goal_tolerance: 0.03,
            base_standoff: Vec3::new(0.6, -0.25, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Maximum simulated time, s.
    pub duration: f64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "RobotModel::standard")]
    pub robot: RobotModel,
    #[serde(default)]
    pub scene: Scene,
    #[serde(default)]
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub start: BasePose,
    #[serde(default)]
    pub keyboard: Option<KeyboardLayout>,
    #[serde(default)]
    pub modules: ModuleConfig,
    #[serde(default)]
    pub teleop: TeleopSetup,
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub completion: Completion,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse { path: origin.into(), message: e.to_string() })?;
        if !(s.duration > 0.0) {
            return Err(ScenarioError::Parse { path: origin.into(), message: "duration must be positive".into() });
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_takes_defaults() {
        let s = Scenario::parse(r#"{"name": "empty", "duration": 1.0}"#, "inline").unwrap();
        assert_eq!(s.sim.dt, 0.01);
        assert_eq!(s.completion, Completion::Duration);
        assert!(!s.teleop.enabled);
        assert_eq!(s.robot, RobotModel::standard());
    }

    #[test]
    fn partial_overrides() {
        let s = Scenario::parse(
            r#"{"name": "x", "duration": 2, "sim": {"force_noise": 0.0}, "teleop": {"enabled": true, "config": {"vtr_sharing": false}}}"#,
            "inline",
        )
        .unwrap();
        assert_eq!(s.sim.force_noise, 0.0);
        assert_eq!(s.sim.mu_s, 0.6);
        assert!(!s.teleop.config.vtr_sharing);
        assert_eq!(s.teleop.config.k_cam, 1.8);
    }

    #[test]
    fn missing_file_names_path() {
        let err = Scenario::load(Path::new("/nonexistent/scenario.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/scenario.json"));
    }
}
