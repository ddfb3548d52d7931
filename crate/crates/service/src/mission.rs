//! Fixed-step mission loop: replays the operator trace, runs the laser
//! interface, the behavior tree, teleoperation and the bimanual pipeline,
//! advances the world and records one log row per step.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use teleop_core::bimanual::EEForce;
use teleop_core::bt::{parse_tree, BehaviorTree, Blackboard, BtError, BtNode, NodeKind, TickStatus};
use teleop_core::kinematics::{RigidTransform, Vec3};
use teleop_core::perception::{aim_emitter, laser_raycast, perturb_spot, KeyCommand, LaserEvent, LaserInterface};
use teleop_core::sim::{
    ActionModules, BimanualPipeline, Commands, ControlPointId, GoalFrames, GripperAction, ModuleEnv, SimError,
    Simulator, TeleopDrive, TransportCommand, TransportPhase, LEFT_ARM, RIGHT_ARM,
};
use teleop_core::vtr::VtrWeights;
use thiserror::Error;

use crate::feedback::{map_feedback, FeedbackFrame, FeedbackInputs};
use crate::log::{LogRow, LogWriter};
use crate::scenario::{Completion, Scenario, ScenarioError};
use crate::trace::{OperatorEvent, OperatorTrace, Side, TraceCursor, TraceError};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {message}")]
    Tree { path: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("behavior tree: {0}")]
    Bt(#[from] BtError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissionEvent {
    Goal { position: Vec3, surface: String },
    Key { command: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub completion_time: Option<f64>,
    pub goal_errors: BTreeMap<String, f64>,
    pub slip_count: u32,
    pub switch_count: u32,
    pub goals_reached: usize,
    pub goals_total: usize,
    pub extras: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub completed: bool,
    pub steps: u64,
    pub sim_time: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
struct TeleopState {
    drive: TeleopDrive,
    target: Option<Vec3>,
    released: bool,
    manual: Option<Vec3>,
    next_goal: usize,
    closest: Vec<f64>,
    engaged: [bool; 2],
    last_force: Vec3,
}

#[derive(Debug, Clone, Default)]
struct TransportStats {
    start: Option<(f64, f64, Vec3, f64)>,
    max_drift: f64,
    max_force_dev: f64,
}

/// Everything a running mission owns. Single-threaded; the server drives it
/// from its simulation thread.
pub struct Mission {
    pub scenario: Scenario,
    pub sim: Simulator,
    tree: Option<BehaviorTree>,
    bb: Blackboard,
    modules: ActionModules,
    goals: GoalFrames,
    laser: LaserInterface,
    cursor: TraceCursor,
    teleop: Option<TeleopState>,
    pipeline: Option<BimanualPipeline>,
    transport_cmd: TransportCommand,
    gripper_override: Option<GripperAction>,
    pending_toggle: Option<(Side, bool)>,
    events: Vec<MissionEvent>,
    metrics: Metrics,
    idle_since: Option<f64>,
    last_base_module: Option<String>,
    transport: TransportStats,
    weights: VtrWeights,
    feedback: FeedbackFrame,
    spot: Option<Vec3>,
    done: Option<bool>,
}

const BASE_MODULES: [&str; 2] = ["base_yaw_tracking", "base_planar_tracking"];

impl Mission {
    pub fn new(scenario: Scenario, tree: Option<BtNode>, trace: OperatorTrace) -> Result<Self, MissionError> {
        let mut config = scenario.sim.clone();
        config.seed = scenario.seed;
        let mut sim = Simulator::new(scenario.robot.clone(), scenario.scene.clone(), scenario.objects.clone(), config)?;
        sim.state.base = scenario.start;
        let tree = tree
            .map(BehaviorTree::new)
            .transpose()
            .map_err(|message| MissionError::Tree { path: "tree".into(), message })?;
        let teleop = scenario.teleop.enabled.then(|| TeleopState {
            drive: TeleopDrive::new(scenario.teleop.config.clone(), scenario.teleop.initial),
            target: None,
            released: false,
            manual: None,
            next_goal: 0,
            closest: vec![f64::INFINITY; scenario.teleop.goals.len()],
            engaged: [true, true],
            last_force: Vec3::zeros(),
        });
        let mut metrics = Metrics { goals_total: scenario.teleop.goals.len(), ..Default::default() };
        if !scenario.teleop.enabled {
            metrics.goals_total = 0;
        }
        Ok(Self {
            modules: ActionModules::new(scenario.modules.clone()),
            laser: LaserInterface::new(scenario.keyboard.clone()),
            pipeline: scenario.pipeline.clone().map(BimanualPipeline::new),
            sim,
            tree,
            bb: Blackboard::new(),
            goals: GoalFrames::new(),
            cursor: TraceCursor::new(trace),
            teleop,
            transport_cmd: TransportCommand::default(),
            gripper_override: None,
            pending_toggle: None,
            events: Vec::new(),
            metrics,
            idle_since: None,
            last_base_module: None,
            transport: TransportStats::default(),
            weights: VtrWeights::full_arm(),
            feedback: FeedbackFrame::default(),
            spot: None,
            done: None,
            scenario,
        })
    }

    /// Loads the three inputs; a missing tree or trace path means none.
    pub fn load(scenario: &Path, tree: Option<&Path>, trace: Option<&Path>, seed: Option<u64>) -> Result<Self, MissionError> {
        let mut scenario = Scenario::load(scenario)?;
        if let Some(seed) = seed {
            scenario.seed = seed;
        }
        let tree = match tree {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| MissionError::Io { path: p.display().to_string(), source })?;
                Some(parse_tree(&text).map_err(|e| MissionError::Tree { path: p.display().to_string(), message: e.to_string() })?)
            }
            None => None,
        };
        let trace = match trace {
            Some(p) => OperatorTrace::load(p)?,
            None => OperatorTrace::default(),
        };
        Self::new(scenario, tree, trace)
    }

    pub fn goals(&self) -> &GoalFrames {
        &self.goals
    }

    pub fn tree(&self) -> Option<&BehaviorTree> {
        self.tree.as_ref()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn weights(&self) -> VtrWeights {
        self.weights
    }

    pub fn feedback(&self) -> FeedbackFrame {
        self.feedback
    }

    pub fn spot(&self) -> Option<Vec3> {
        self.spot
    }

    pub fn pipeline(&self) -> Option<&BimanualPipeline> {
        self.pipeline.as_ref()
    }

    pub fn control_point(&self) -> Option<ControlPointId> {
        self.teleop.as_ref().map(|t| t.drive.active)
    }

    pub fn active_modules(&self) -> Vec<String> {
        self.modules.active_modules()
    }

    /// Goal and key events produced since the last call.
    pub fn drain_events(&mut self) -> Vec<MissionEvent> {
        std::mem::take(&mut self.events)
    }

    /// `Some(completed)` once the mission has ended.
    pub fn finished(&self) -> Option<bool> {
        self.done
    }

    /// Applies one operator input immediately.
    pub fn apply(&mut self, event: OperatorEvent) -> Result<(), MissionError> {
        match event {
            OperatorEvent::Tracker { displacement } => {
                if let Some(t) = &mut self.teleop {
                    t.manual = Some(displacement);
                    t.target = None;
                    t.released = true;
                }
            }
            OperatorEvent::Force { force } => {
                if let Some(t) = &mut self.teleop {
                    // displacement whose spring force, past the buffer, equals `force`
                    let r = force / t.drive.tracker.k_cam;
                    let n = r.norm();
                    let r = if n > 0.0 { r * ((n + t.drive.tracker.deadzone_radius) / n) } else { r };
                    t.manual = Some(r);
                    t.target = None;
                    t.released = true;
                }
            }
            OperatorEvent::Target { position } => {
                if let Some(t) = &mut self.teleop {
                    t.target = Some(position);
                    t.released = false;
                    t.manual = None;
                }
            }
            OperatorEvent::Release => {
                if let Some(t) = &mut self.teleop {
                    t.target = None;
                    t.released = true;
                    t.manual = None;
                    t.drive.set_displacement(&Vec3::zeros());
                }
            }
            OperatorEvent::SwitchControlPoint { control_point } => {
                if let Some(t) = &mut self.teleop {
                    if t.drive.active != control_point {
                        t.drive.switch_to(control_point);
                        self.metrics.switch_count += 1;
                    }
                }
            }
            OperatorEvent::Toggle { side, active } => {
                if let Some(t) = &mut self.teleop {
                    let i = side_index(side);
                    if t.engaged[i] != active {
                        t.engaged[i] = active;
                        self.pending_toggle = Some((side, active));
                    }
                }
            }
            OperatorEvent::Gripper { action } => self.gripper_override = Some(action),
            OperatorEvent::Request { name } => self.modules.push_request(name),
            OperatorEvent::EmitterPose { pose } => self.sim.state.emitter = Some(pose),
            OperatorEvent::EmitterAim { origin, target } => self.sim.state.emitter = aim_emitter(origin, target),
            OperatorEvent::EmitterOff => self.sim.state.emitter = None,
            OperatorEvent::Transport { x_dot, yaw_rate } => self.transport_cmd = TransportCommand { x_dot, yaw_rate },
        }
        Ok(())
    }

    fn update_laser(&mut self) -> Option<KeyCommand> {
        let now = self.sim.state.clock;
        let mut spot = self.sim.state.emitter.and_then(|e| laser_raycast(&self.sim.scene, &e, now));
        let sigma = self.sim.config.spot_noise;
        if let Some(s) = spot.as_mut() {
            if sigma > 0.0 {
                perturb_spot(s, sigma, self.sim.spot_rng());
            }
        }
        let event = self.laser.update(spot.as_ref());
        let yaw = self.sim.state.base.yaw;
        self.spot = self.laser.smoothed();
        match self.spot {
            Some(p) => self.goals.set("laser_spot", RigidTransform::planar(p.x, p.y, p.z, yaw)),
            None => self.goals.remove("laser_spot"),
        }
        match event {
            Some(LaserEvent::Goal { position, surface }) => {
                self.goals.set("dwell_goal", RigidTransform::planar(position.x, position.y, position.z, yaw));
                self.events.push(MissionEvent::Goal { position, surface });
            }
            Some(LaserEvent::Key { command }) => {
                self.events.push(MissionEvent::Key { command: command.id() });
                match command {
                    KeyCommand::GripperOpen => self.gripper_override = Some(GripperAction::Open),
                    KeyCommand::GripperClose => self.gripper_override = Some(GripperAction::Close),
                    _ => {}
                }
            }
            None => {}
        }
        self.laser.active_key
    }

    fn keyboard_commands(&self, key: Option<KeyCommand>) -> Result<Commands, MissionError> {
        let mut cmd = Commands::default();
        if let Some((lin, ang)) = key.and_then(|k| k.twist()) {
            let arm = &self.modules.config.arm;
            let r = self.sim.base_frame().rotation;
            if lin.norm() > 0.0 {
                cmd.arm_qdot.insert(arm.clone(), self.sim.arm_ik(arm, &(r * lin))?);
            }
            cmd.base.yaw_rate = ang.z;
        }
        Ok(cmd)
    }

    fn teleop_commands(&mut self) -> Result<Commands, MissionError> {
        let Some(t) = self.teleop.as_mut() else {
            return Ok(Commands::default());
        };
        let setup = &self.scenario.teleop;
        let cp = t.drive.active;
        let cp_pos = cp.position(&self.sim)?;
        let goal = if t.released { None } else { t.target.or_else(|| setup.goals.get(t.next_goal).copied()) };
        if let Some(goal) = goal {
            let target = match cp {
                ControlPointId::Base => {
                    let standoff = self.sim.base_frame().rotation * setup.base_standoff;
                    Vec3::new(goal.x - standoff.x, goal.y - standoff.y, cp_pos.z)
                }
                _ => goal,
            };
            let r = setup.operator.displacement(&target, &cp_pos);
            t.drive.set_displacement(&r);
        } else if let Some(r) = t.manual {
            t.drive.set_displacement(&r);
        }
        let side = if cp == ControlPointId::LeftEe { 0 } else { 1 };
        if !t.engaged[side] {
            t.drive.set_displacement(&Vec3::zeros());
        }
        let out = t.drive.step(&self.sim)?;
        t.last_force = out.force;
        self.weights = out.weights;

        // progress through the goal list with the arm tool point
        let arm = cp.arm().unwrap_or(match setup.initial {
            ControlPointId::LeftEe => LEFT_ARM,
            _ => RIGHT_ARM,
        });
        let ee = self.sim.ee_position(arm)?;
        if let Some(g) = setup.goals.get(t.next_goal) {
            let d = (ee - g).norm();
            t.closest[t.next_goal] = t.closest[t.next_goal].min(d);
            if d <= setup.goal_tolerance {
                t.next_goal += 1;
                self.metrics.goals_reached = t.next_goal;
            }
        }
        Ok(out.commands)
    }

    /// Advances the mission by one step and returns its log row.
    pub fn step(&mut self) -> Result<LogRow, MissionError> {
        let now = self.sim.state.clock;
        for e in self.cursor.due(now) {
            self.apply(e)?;
        }
        let key = self.update_laser();
        let mut commands = self.keyboard_commands(key)?;

        if let Some(tree) = self.tree.as_mut() {
            let mut env = ModuleEnv { modules: &mut self.modules, sim: &self.sim, goals: &self.goals };
            tree.tick(&mut self.bb, &mut env)?;
            commands.merge(self.modules.commands(&self.sim, &self.goals)?);
        }
        commands.merge(self.teleop_commands()?);
        if let Some(p) = self.pipeline.as_mut() {
            commands.merge(p.step(&mut self.sim, &self.transport_cmd)?);
            if p.phase == TransportPhase::Transport {
                self.weights = p.weights;
            }
        }
        if let Some(g) = self.gripper_override {
            commands.gripper = Some(g);
        }
        let slips_before = self.sim.state.hold.as_ref().map_or(0, |h| h.slip_events);
        self.sim.step(&commands)?;
        let slips_after = self.sim.state.hold.as_ref().map_or(0, |h| h.slip_events);
        self.metrics.slip_count += slips_after.saturating_sub(slips_before);

        self.update_feedback();
        self.track_modules()?;
        self.track_transport()?;
        self.check_completion()?;
        Ok(self.row())
    }

    fn update_feedback(&mut self) {
        let force = self.teleop.as_ref().map(|t| (t.drive.active, t.last_force));
        let mut inputs = FeedbackInputs {
            gripper_effort: self.sim.state.gripper.effort,
            left_external: self.sim.state.sensed.left,
            toggle: self.pending_toggle.take(),
            ..Default::default()
        };
        match force {
            Some((ControlPointId::LeftEe, f)) => inputs.left_force = f,
            Some((_, f)) => inputs.right_force = f,
            None => {}
        }
        self.feedback = map_feedback(&inputs, &self.scenario.feedback);
    }

    fn track_modules(&mut self) -> Result<(), MissionError> {
        let active = self.modules.active_modules();
        let base: Vec<&String> = active.iter().filter(|m| BASE_MODULES.contains(&m.as_str())).collect();
        let extras = &mut self.metrics.extras;
        if base.len() > 1 {
            *extras.entry("base_overlap_steps".into()).or_default() += 1.0;
        }
        if let Some(&m) = base.first() {
            if self.last_base_module.as_ref() != Some(m) {
                if self.last_base_module.is_some() {
                    *extras.entry("base_alternations".into()).or_default() += 1.0;
                }
                self.last_base_module = Some(m.clone());
            }
        }
        let reach = self.modules.config.reach_box;
        let base_inv = self.sim.base_frame().inverse();
        for (module, frame) in self.modules.active_goals() {
            if module.ends_with("arm_tracking") {
                *extras.entry("arm_active_steps".into()).or_default() += 1.0;
                let inside = self
                    .goals
                    .resolve(&frame, &self.sim)
                    .is_some_and(|g| reach.contains(&base_inv.transform_point(&g.translation), "xyz"));
                if !inside {
                    *extras.entry("arm_outside_box_steps".into()).or_default() += 1.0;
                }
            }
        }
        extras.entry("base_overlap_steps".into()).or_default();
        extras.entry("arm_outside_box_steps".into()).or_default();
        Ok(())
    }

    fn track_transport(&mut self) -> Result<(), MissionError> {
        let Some(p) = &self.pipeline else {
            return Ok(());
        };
        if let Some(est) = p.estimate {
            self.metrics.extras.insert("mass_estimate".into(), est.mass);
        }
        if let Some(f) = p.f_bar {
            self.metrics.extras.insert("f_bar".into(), f);
        }
        if p.phase != TransportPhase::Transport {
            return Ok(());
        }
        let d = BimanualPipeline::contact_distance(&self.sim)?;
        let obj = &self.sim.state.objects[self.sim.object_index(&p.config.object)?];
        let now = self.sim.state.clock;
        let start = *self.transport.start.get_or_insert((now, d, obj.pose.translation, obj.pose.yaw()));
        self.transport.max_drift = self.transport.max_drift.max((d - start.1).abs());
        let (sensed, _) = self.sim.sensed_in_object_frame()?;
        let f_bar = p.target_force();
        let dev = (sensed.left.y - f_bar).abs().max((sensed.right.y + f_bar).abs());
        self.transport.max_force_dev = self.transport.max_force_dev.max(dev);
        let x = &mut self.metrics.extras;
        x.insert("transport_time".into(), now - start.0);
        x.insert("max_contact_drift".into(), self.transport.max_drift);
        x.insert("max_force_deviation".into(), self.transport.max_force_dev);
        x.insert("object_displacement".into(), (obj.pose.translation - start.2).norm());
        x.insert("object_yaw_change".into(), teleop_core::sim::wrap_angle(obj.pose.yaw() - start.3));
        Ok(())
    }

    fn check_completion(&mut self) -> Result<(), MissionError> {
        let now = self.sim.state.clock;
        let timeout = now >= self.scenario.duration - 1e-9;
        let completed = match self.scenario.completion {
            Completion::Duration => {
                if timeout {
                    let failed = self.pipeline.as_ref().is_some_and(|p| p.phase != TransportPhase::Transport);
                    Some(!failed && self.metrics.slip_count == 0)
                } else {
                    None
                }
            }
            Completion::Idle { hold } => {
                let idle = self.cursor.exhausted() && self.modules.active_modules().is_empty();
                if idle {
                    let since = *self.idle_since.get_or_insert(now);
                    (now - since >= hold - 1e-9).then_some(true)
                } else {
                    self.idle_since = None;
                    None
                }
            }
            Completion::GoalsReached => {
                (self.metrics.goals_total > 0 && self.metrics.goals_reached >= self.metrics.goals_total).then_some(true)
            }
        };
        let outcome = completed.or(timeout.then_some(false));
        if let Some(ok) = outcome {
            if ok {
                self.metrics.completion_time = Some(now);
            }
            self.finalize_errors();
            self.done = Some(ok);
        }
        Ok(())
    }

    /// Residual errors of the tree's tracking actions and of the teleop goals.
    fn finalize_errors(&mut self) {
        let mut errors = BTreeMap::new();
        if let Some(tree) = &self.tree {
            for id in 0..tree.len() {
                let NodeKind::Action { module, params, .. } = tree.kind(id) else { continue };
                let Some(goal) = self.goals.resolve(&params.goal_frame, &self.sim) else { continue };
                let target = goal.transform_point(&params.final_goal_distance);
                let err = match module.as_str() {
                    "base_planar_tracking" => {
                        let b = &self.sim.state.base;
                        ((target.x - b.x).powi(2) + (target.y - b.y).powi(2)).sqrt()
                    }
                    m if m.ends_with("arm_tracking") => match self.sim.ee_position(&self.modules.config.arm) {
                        Ok(ee) => (ee - target).norm(),
                        Err(_) => continue,
                    },
                    _ => continue,
                };
                errors.insert(module.clone(), err);
            }
        }
        if let Some(t) = &self.teleop {
            for (i, d) in t.closest.iter().enumerate() {
                errors.insert(format!("goal_{i}"), *d);
            }
        }
        self.metrics.goal_errors = errors;
    }

    fn row(&self) -> LogRow {
        let s = &self.sim.state;
        let q = s.arms.iter().map(|(k, js)| (k.clone(), js.q.iter().copied().collect())).collect();
        let bt = self.tree.as_ref().map_or(String::new(), |t| {
            t.last_tick().iter().map(|st| st.map_or('-', TickStatus::letter)).collect()
        });
        let EEForce { left, right } = s.sensed;
        LogRow {
            step: s.step,
            t: s.clock,
            q,
            base: [s.base.x, s.base.y, s.base.yaw, self.sim.pelvis_pose().translation.z],
            beta: self.weights.beta,
            w: self.weights.w,
            f_s: [left, right],
            f_bar: self.pipeline.as_ref().and_then(|p| p.f_bar),
            bt,
            active: self.modules.active_modules(),
            control_point: self.control_point().map(|c| serde_json::to_value(c).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
            spot: self.spot,
            phase: self.pipeline.as_ref().map(|p| {
                serde_json::to_value(p.phase).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            }),
        }
    }

    /// Steps until the mission ends, streaming rows into `log`.
    pub fn run<C: std::io::Write, J: std::io::Write>(
        &mut self,
        mut log: Option<&mut LogWriter<C, J>>,
    ) -> Result<Report, MissionError> {
        while self.done.is_none() {
            let row = self.step()?;
            if let Some(w) = log.as_deref_mut() {
                w.write(&row).map_err(|source| MissionError::Io { path: "log".into(), source })?;
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> Report {
        Report {
            scenario: self.scenario.name.clone(),
            completed: self.done == Some(true),
            steps: self.sim.state.step,
            sim_time: self.sim.state.clock,
            metrics: self.metrics.clone(),
        }
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

/// Headless run writing `log.csv`, `log.jsonl` and `report.json` into `out`.
pub fn run_mission(
    scenario: &Path,
    tree: Option<&Path>,
    trace: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<Report, MissionError> {
    let mut mission = Mission::load(scenario, tree, trace, seed)?;
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> MissionError + '_ {
        move |source| MissionError::Io { path: path.display().to_string(), source }
    }
    std::fs::create_dir_all(out).map_err(io(out))?;
    let csv_path = out.join("log.csv");
    let json_path = out.join("log.jsonl");
    let csv = File::create(&csv_path).map_err(io(&csv_path))?;
    let json = File::create(&json_path).map_err(io(&json_path))?;
    let mut writer = LogWriter::new(BufWriter::new(csv), BufWriter::new(json));
    let report = mission.run(Some(&mut writer))?;
    writer.finish().map_err(io(out))?;
    let report_path = out.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, text + "\n").map_err(io(&report_path))?;
    Ok(report)
}
