//! Behavior-tree action modules and conditions bound to the simulator.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::control::{gaze_ref, CartesianController, ControlError, ControllerGoal, PidGains};
use super::{Commands, GripperAction, SimError, Simulator, RIGHT_ARM};
use crate::bt::{ActionCall, ActionParams, Blackboard, BtEnv, BtError, NodeId, Params, TickStatus, Value};
use crate::kinematics::{RigidTransform, Vec3};

/// Reachable region of the arm, expressed in the ground-level base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl ReachBox {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    /// Per-axis containment restricted to the axes in `axes` (e.g. "xy").
    pub fn contains(&self, p: &Vec3, axes: &str) -> bool {
        ["x", "y", "z"]
            .iter()
            .enumerate()
            .filter(|(_, a)| axes.contains(*a))
            .all(|(i, _)| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModuleConfig {
    pub arm: String,
    pub reach_box: ReachBox,
    pub arm_gains: PidGains,
    pub base_gains: PidGains,
    pub yaw_gains: [f64; 3],
    pub squat_gains: PidGains,
    pub max_arm_linear: f64,
    pub max_base_linear: f64,
    pub max_base_angular: f64,
    pub max_squat_rate: f64,
    /// Proportional gain of the head pitch loop, 1/s.
    pub gaze_gain: f64,
}

impl Default for ModuleConfig {
    fn default() -> Self {
        Self {
            arm: RIGHT_ARM.to_string(),
            reach_box: ReachBox { min: Vec3::new(0.35, -0.6, 0.45), max: Vec3::new(0.9, 0.1, 1.2) },
            arm_gains: PidGains::p(2.0),
            base_gains: PidGains::p(1.5),
            yaw_gains: [2.0, 0.0, 0.0],
            squat_gains: PidGains::p(2.0),
            max_arm_linear: 0.25,
            max_base_linear: 0.4,
            max_base_angular: 0.5,
            max_squat_rate: 0.15,
            gaze_gain: 4.0,
        }
    }
}

/// Named goal poses (laser spot, dwell goals, scripted targets).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoalFrames {
    frames: BTreeMap<String, RigidTransform>,
}

impl GoalFrames {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, pose: RigidTransform) {
        self.frames.insert(name.into(), pose);
    }

    pub fn remove(&mut self, name: &str) {
        self.frames.remove(name);
    }

    pub fn get(&self, name: &str) -> Option<&RigidTransform> {
        self.frames.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RigidTransform)> {
        self.frames.iter()
    }

    /// Goal frames first, then robot frames (`<arm>_ee`, `pelvis`, `base`).
    pub fn resolve(&self, name: &str, sim: &Simulator) -> Option<RigidTransform> {
        if let Some(p) = self.frames.get(name) {
            return Some(*p);
        }
        match name {
            "pelvis" => Some(sim.pelvis_pose()),
            "base" => Some(sim.base_frame()),
            _ => name.strip_suffix("_ee").and_then(|arm| sim.ee_pose(&format!("{arm}_arm")).ok()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModuleKind {
    Gaze,
    BaseYaw,
    BasePlanar,
    Squat,
    Arm(String),
    GripperOpen,
    GripperClose,
}

impl ModuleKind {
    fn parse(module: &str, default_arm: &str) -> Option<ModuleKind> {
        Some(match module {
            "gaze_tracking" => ModuleKind::Gaze,
            "base_yaw_tracking" => ModuleKind::BaseYaw,
            "base_planar_tracking" => ModuleKind::BasePlanar,
            "squat_tracking" => ModuleKind::Squat,
            "arm_tracking" => ModuleKind::Arm(default_arm.to_string()),
            "left_arm_tracking" => ModuleKind::Arm("left_arm".into()),
            "right_arm_tracking" => ModuleKind::Arm("right_arm".into()),
            "gripper_open" => ModuleKind::GripperOpen,
            "gripper_close" => ModuleKind::GripperClose,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleEventKind {
    Start,
    Abort,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleEvent {
    pub step: u64,
    pub node: NodeId,
    pub module: String,
    pub kind: ModuleEventKind,
}

#[derive(Debug, Clone, PartialEq)]
struct Active {
    module: String,
    kind: ModuleKind,
    controller: Option<CartesianController>,
    status: TickStatus,
}

/// Controllers activated by action leaves. Each tick may start or abort
/// modules; [`ActionModules::commands`] then produces the step's commands
/// and the completion signal read at the next tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModules {
    pub config: ModuleConfig,
    active: BTreeMap<NodeId, Active>,
    gaze_goal: Option<String>,
    pub events: Vec<ModuleEvent>,
    requests: VecDeque<String>,
}

impl ActionModules {
    pub fn new(config: ModuleConfig) -> Self {
        Self { config, active: BTreeMap::new(), gaze_goal: None, events: Vec::new(), requests: VecDeque::new() }
    }

    /// Queues a discrete user request (e.g. "grasp", "tracking").
    pub fn push_request(&mut self, name: impl Into<String>) {
        self.requests.push_back(name.into());
    }

    /// Names of modules whose controllers are currently active.
    pub fn active_modules(&self) -> Vec<String> {
        self.active.values().map(|a| a.module.clone()).collect()
    }

    /// Module name and goal frame of every active motion module.
    pub fn active_goals(&self) -> Vec<(String, String)> {
        self.active
            .values()
            .filter_map(|a| a.controller.as_ref().map(|c| (a.module.clone(), c.goal.params.goal_frame.clone())))
            .collect()
    }

    pub fn gaze_active(&self) -> bool {
        self.gaze_goal.is_some()
    }

    fn controller_for(&self, kind: &ModuleKind, params: &ActionParams) -> Option<ControllerGoal> {
        let c = &self.config;
        let mut goal = match kind {
            ModuleKind::Arm(_) => ControllerGoal::new(params.clone(), c.arm_gains, c.max_arm_linear, c.max_base_angular),
            ModuleKind::BasePlanar => {
                let mut g = ControllerGoal::new(params.clone(), c.base_gains, c.max_base_linear, c.max_base_angular);
                g.axis_mask = [true, true, false];
                g
            }
            ModuleKind::BaseYaw => {
                let mut p = params.clone();
                p.linear_mode = crate::bt::LinearMode::None;
                if p.angular_mode == crate::bt::LinearMode::None {
                    p.angular_mode = crate::bt::LinearMode::Set;
                }
                ControllerGoal::new(p, c.base_gains, c.max_base_linear, c.max_base_angular)
            }
            ModuleKind::Squat => {
                let mut g = ControllerGoal::new(params.clone(), c.squat_gains, c.max_squat_rate, c.max_base_angular);
                g.axis_mask = [false, false, true];
                g
            }
            _ => return None,
        };
        if matches!(kind, ModuleKind::BaseYaw) {
            goal.yaw_gains = c.yaw_gains;
        }
        Some(goal)
    }

    /// Position and yaw of the frame a module moves.
    fn control_pose(kind: &ModuleKind, sim: &Simulator) -> Result<(Vec3, f64), SimError> {
        Ok(match kind {
            ModuleKind::Arm(arm) => {
                let p = sim.ee_pose(arm)?;
                (p.translation, p.yaw())
            }
            ModuleKind::Squat => (sim.pelvis_pose().translation, sim.state.base.yaw),
            _ => {
                let b = &sim.state.base;
                (Vec3::new(b.x, b.y, 0.0), b.yaw)
            }
        })
    }

    /// Goal pose as seen by a module. Base yaw tracking turns the goal into
    /// a heading along the bearing from the base; the controller then adds
    /// the reference orientation.
    fn module_goal(
        kind: &ModuleKind,
        goal: Option<RigidTransform>,
        sim: &Simulator,
    ) -> Option<RigidTransform> {
        let goal = goal?;
        match kind {
            ModuleKind::BaseYaw => {
                let b = &sim.state.base;
                let bearing = (goal.translation.y - b.y).atan2(goal.translation.x - b.x);
                Some(RigidTransform::planar(goal.translation.x, goal.translation.y, goal.translation.z, bearing))
            }
            _ => Some(goal),
        }
    }

    /// Computes this step's commands and updates completion statuses.
    pub fn commands(&mut self, sim: &Simulator, goals: &GoalFrames) -> Result<Commands, SimError> {
        let dt = sim.dt();
        let mut cmd = Commands::default();
        for active in self.active.values_mut() {
            if active.status != TickStatus::Running {
                continue;
            }
            match &active.kind {
                ModuleKind::GripperClose => {
                    cmd.gripper = Some(GripperAction::Close);
                    let g = &sim.state.gripper;
                    if g.position <= 0.0 || g.effort > 0.0 {
                        active.status = TickStatus::Success;
                    }
                }
                ModuleKind::GripperOpen => {
                    cmd.gripper = Some(GripperAction::Open);
                    if sim.state.gripper.position >= 1.0 {
                        active.status = TickStatus::Success;
                    }
                }
                ModuleKind::Gaze => {}
                kind => {
                    let controller = active.controller.as_mut().expect("motion modules carry a controller");
                    let params = controller.goal.params.clone();
                    let goal = Self::module_goal(kind, goals.resolve(&params.goal_frame, sim), sim);
                    let (pos, yaw) = Self::control_pose(kind, sim)?;
                    let out = match controller.update(goal.as_ref(), &pos, yaw, dt) {
                        Ok(out) => out,
                        Err(ControlError::UnresolvableGoal(_)) => {
                            active.status = TickStatus::Failure;
                            continue;
                        }
                        Err(e) => return Err(SimError::InvalidModel(e.to_string())),
                    };
                    if out.reached {
                        active.status = TickStatus::Success;
                        continue;
                    }
                    let lin = out.linear.unwrap_or_else(Vec3::zeros);
                    match kind {
                        ModuleKind::Arm(arm) => {
                            let qd = sim.arm_ik(arm, &lin)?;
                            let mut c = Commands::default();
                            c.arm_qdot.insert(arm.clone(), qd);
                            cmd.merge(c);
                        }
                        ModuleKind::BasePlanar => {
                            cmd.base.linear.x += lin.x;
                            cmd.base.linear.y += lin.y;
                        }
                        ModuleKind::Squat => cmd.base.linear.z += lin.z,
                        ModuleKind::BaseYaw => cmd.base.yaw_rate += out.yaw_rate.unwrap_or(0.0),
                        _ => {}
                    }
                }
            }
        }
        if let Some(frame) = &self.gaze_goal {
            if let Some(goal) = goals.resolve(frame, sim) {
                let target = gaze_ref(
                    &sim.camera_position(),
                    sim.state.base.yaw,
                    &goal.translation,
                    sim.model.head.pitch_limits,
                );
                cmd.head_pitch_rate = self.config.gaze_gain * (target - sim.state.head_pitch);
            }
        }
        Ok(cmd)
    }
}

/// Environment handed to [`crate::bt::BehaviorTree::tick`].
pub struct ModuleEnv<'a> {
    pub modules: &'a mut ActionModules,
    pub sim: &'a Simulator,
    pub goals: &'a GoalFrames,
}

fn text_param<'p>(params: &'p Params, key: &str, default: &'p str) -> &'p str {
    params.get(key).and_then(Value::as_str).unwrap_or(default)
}

fn number_param(params: &Params, key: &str, default: f64) -> Result<f64, BtError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| BtError::InvalidParam { key: key.into(), reason: "expected a number".into() }),
    }
}

fn vector_param(params: &Params, key: &str) -> Result<Option<Vec3>, BtError> {
    match params.get(key) {
        None => Ok(None),
        Some(Value::Vector(v)) if v.len() == 3 => Ok(Some(Vec3::new(v[0], v[1], v[2]))),
        Some(_) => Err(BtError::InvalidParam { key: key.into(), reason: "expected a 3-vector".into() }),
    }
}

impl ModuleEnv<'_> {
    fn record(&mut self, node: NodeId, module: &str, kind: ModuleEventKind) {
        self.modules.events.push(ModuleEvent { step: self.sim.state.step, node, module: module.to_string(), kind });
    }

    fn goal_in_base(&self, params: &Params) -> Option<Vec3> {
        let frame = text_param(params, "goal_frame", "laser_spot");
        let goal = self.goals.resolve(frame, self.sim)?;
        Some(self.sim.base_frame().inverse().transform_point(&goal.translation))
    }
}

impl BtEnv for ModuleEnv<'_> {
    fn condition(&mut self, id: &str, params: &Params, bb: &mut Blackboard) -> Result<bool, BtError> {
        match id {
            "is_goal_in_arm_range" => {
                let mut reach = self.modules.config.reach_box;
                if let Some(min) = vector_param(params, "box_min")? {
                    reach.min = min;
                }
                if let Some(max) = vector_param(params, "box_max")? {
                    reach.max = max;
                }
                let axes = text_param(params, "axes", "xyz");
                Ok(self.goal_in_base(params).is_some_and(|g| reach.contains(&g, axes)))
            }
            "is_goal_in_front" => {
                let offset = number_param(params, "offset", 0.0)?;
                let tolerance = number_param(params, "yaw_error", 0.1)?;
                Ok(self.goal_in_base(params).is_some_and(|g| goal_in_front(g.y.atan2(g.x), offset, tolerance)))
            }
            "user_requesting" => {
                if let Some(req) = self.modules.requests.pop_front() {
                    let keys: Vec<String> =
                        bb.iter().map(|(k, _)| k.clone()).filter(|k| k.ends_with("_requested")).collect();
                    for k in keys {
                        bb.set_flag(k, false);
                    }
                    if req != "none" {
                        bb.set_flag(format!("{req}_requested"), true);
                    }
                }
                Ok(bb.iter().any(|(k, v)| k.ends_with("_requested") && v.truthy()))
            }
            other => match bb.get(other) {
                Some(v) => Ok(v.truthy()),
                None => Err(BtError::UnknownCondition(other.to_string())),
            },
        }
    }

    fn start_action(&mut self, call: ActionCall<'_>, _bb: &mut Blackboard) -> Result<TickStatus, BtError> {
        let kind = ModuleKind::parse(call.module, &self.modules.config.arm)
            .ok_or_else(|| BtError::UnknownAction(call.module.to_string()))?;
        self.record(call.node, call.module, ModuleEventKind::Start);
        let status = match &kind {
            ModuleKind::Gaze => {
                self.modules.gaze_goal = Some(call.params.goal_frame.clone());
                self.record(call.node, call.module, ModuleEventKind::Done);
                return Ok(TickStatus::Success);
            }
            ModuleKind::GripperOpen | ModuleKind::GripperClose => {
                self.modules.active.insert(
                    call.node,
                    Active { module: call.module.to_string(), kind, controller: None, status: TickStatus::Running },
                );
                return Ok(TickStatus::Running);
            }
            _ => {
                let goal = self
                    .modules
                    .controller_for(&kind, call.params)
                    .expect("motion module");
                let mut controller =
                    CartesianController::new(goal).map_err(|e| BtError::InvalidParam { key: "limits".into(), reason: e.to_string() })?;
                let params = call.params;
                let goal = ActionModules::module_goal(&kind, self.goals.resolve(&params.goal_frame, self.sim), self.sim);
                let (pos, yaw) = ActionModules::control_pose(&kind, self.sim)
                    .map_err(|e| BtError::InvalidParam { key: "module".into(), reason: e.to_string() })?;
                if controller.start(goal.as_ref(), &pos, yaw).is_err() {
                    TickStatus::Failure
                } else {
                    // probe once: an already satisfied goal completes synchronously
                    let mut probe = controller.clone();
                    match probe.update(goal.as_ref(), &pos, yaw, self.sim.dt()) {
                        Ok(out) if out.reached => TickStatus::Success,
                        Ok(_) => {
                            self.modules.active.insert(
                                call.node,
                                Active {
                                    module: call.module.to_string(),
                                    kind,
                                    controller: Some(controller),
                                    status: TickStatus::Running,
                                },
                            );
                            TickStatus::Running
                        }
                        Err(_) => TickStatus::Failure,
                    }
                }
            }
        };
        match status {
            TickStatus::Success => self.record(call.node, call.module, ModuleEventKind::Done),
            TickStatus::Failure => self.record(call.node, call.module, ModuleEventKind::Failed),
            TickStatus::Running => {}
        }
        Ok(status)
    }

    fn poll_action(&mut self, call: ActionCall<'_>, _bb: &mut Blackboard) -> Result<TickStatus, BtError> {
        let status = match self.modules.active.get(&call.node) {
            Some(a) => a.status,
            None => return Err(BtError::UnknownAction(call.module.to_string())),
        };
        match status {
            TickStatus::Running => {}
            TickStatus::Success => {
                self.modules.active.remove(&call.node);
                self.record(call.node, call.module, ModuleEventKind::Done);
            }
            TickStatus::Failure => {
                self.modules.active.remove(&call.node);
                self.record(call.node, call.module, ModuleEventKind::Failed);
            }
        }
        Ok(status)
    }

    fn abort_action(&mut self, call: ActionCall<'_>, _bb: &mut Blackboard) {
        self.modules.active.remove(&call.node);
        self.record(call.node, call.module, ModuleEventKind::Abort);
    }
}

/// `|bearing − offset| ≤ tolerance` with the bearing of the goal in the base frame.
pub fn goal_in_front(bearing: f64, offset: f64, tolerance: f64) -> bool {
    super::wrap_angle(bearing - offset).abs() <= tolerance
}
