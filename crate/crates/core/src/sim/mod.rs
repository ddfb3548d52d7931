//! Deterministic fixed-step world: a mobile base with a squat joint, two
//! arms, a pitching head camera, a gripper on the right arm, and boxes that
//! can be picked with the gripper or squeezed between both hands.

mod control;
mod modules;
mod teleop;
mod transport;

pub use control::{gaze_ref, CartesianController, ControlError, ControllerGoal, ControlOutput, PidGains};
pub use modules::{goal_in_front, ActionModules, GoalFrames, ModuleConfig, ModuleEnv, ModuleEvent, ModuleEventKind, ReachBox};
pub use teleop::{ControlPointId, SimulatedOperator, TeleopConfig, TeleopDrive, TeleopOutput};
pub use transport::{BimanualPipeline, PipelineConfig, TransportCommand, TransportPhase};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bimanual::{grasp_holds, object_frame, EEForce, STANDARD_GRAVITY};
use crate::kinematics::{
    dls_solve, limit_velocity, point_jacobian, ChainModel, Joint, JointKind, JointState, KinematicsError,
    RigidTransform, Vec3, DEFAULT_DLS_DAMPING,
};
use crate::perception::Scene;

pub const DEFAULT_DT: f64 = 0.01;
pub const LEFT_ARM: &str = "left_arm";
pub const RIGHT_ARM: &str = "right_arm";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown arm `{0}`")]
    UnknownArm(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub chain: ChainModel,
    /// Tool point on the last link.
    pub tool_point: Vec3,
    pub q_home: Vec<f64>,
}

impl ArmModel {
    pub fn tip_link(&self) -> &str {
        self.chain.tip_link()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    /// Camera position in the pelvis frame.
    pub camera: Vec3,
    pub pitch_limits: [f64; 2],
    pub pitch_rate_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub arms: BTreeMap<String, ArmModel>,
    /// Pelvis height above the ground with the squat joint at zero.
    pub pelvis_height: f64,
    pub squat_limits: [f64; 2],
    pub head: HeadModel,
    pub max_base_linear: f64,
    pub max_base_angular: f64,
    pub max_squat_rate: f64,
    pub gripper_arm: String,
}

fn revolute(name: &str, axis: Vec3, origin: Vec3, limits: [f64; 2], vel: f64) -> Joint {
    Joint {
        name: name.to_string(),
        link: format!("{name}_link"),
        kind: JointKind::Revolute,
        axis,
        origin: RigidTransform::from_translation(origin),
        limits,
        vel_limit: vel,
    }
}

impl RobotModel {
    /// Four-joint arms (shoulder yaw, shoulder pitch, elbow, wrist pitch)
    /// with 0.35 m upper arm and forearm and a 0.10 m hand.
    pub fn standard() -> Self {
        let arm = |side: &str, y: f64| {
            let p = |n: &str| format!("{side}_{n}");
            let joints = vec![
                revolute(&p("shoulder_yaw"), Vec3::z(), Vec3::zeros(), [-1.6, 1.6], 1.5),
                revolute(&p("shoulder_pitch"), Vec3::y(), Vec3::zeros(), [-1.8, 1.8], 1.5),
                revolute(&p("elbow"), Vec3::y(), Vec3::new(0.35, 0.0, 0.0), [-0.3, 2.6], 1.5),
                revolute(&p("wrist_pitch"), Vec3::y(), Vec3::new(0.35, 0.0, 0.0), [-1.8, 1.8], 2.0),
            ];
            let chain = ChainModel::new(
                format!("{side}_arm"),
                RigidTransform::from_translation(Vec3::new(0.15, y, 0.2)),
                joints,
            )
            .expect("standard arm is valid");
            ArmModel { chain, tool_point: Vec3::new(0.1, 0.0, 0.0), q_home: vec![0.0, -0.6, 1.5, -0.9] }
        };
        let mut arms = BTreeMap::new();
        arms.insert(LEFT_ARM.to_string(), arm("left", 0.25));
        arms.insert(RIGHT_ARM.to_string(), arm("right", -0.25));
        Self {
            arms,
            pelvis_height: 1.0,
            squat_limits: [-0.35, 0.1],
            head: HeadModel { camera: Vec3::new(0.1, 0.0, 0.5), pitch_limits: [-1.2, 0.6], pitch_rate_limit: 1.5 },
            max_base_linear: 0.5,
            max_base_angular: 0.6,
            max_squat_rate: 0.2,
            gripper_arm: RIGHT_ARM.to_string(),
        }
    }

    pub fn arm(&self, name: &str) -> Result<&ArmModel, SimError> {
        self.arms.get(name).ok_or_else(|| SimError::UnknownArm(name.to_string()))
    }
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::standard()
    }
}

/// Planar base pose plus the squat offset of the pelvis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub squat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    /// 1 open, 0 closed.
    pub position: f64,
    /// Grasping force applied on a held object, N.
    pub effort: f64,
    pub target: f64,
}

impl Default for GripperState {
    fn default() -> Self {
        Self { position: 1.0, effort: 0.0, target: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attachment {
    Free,
    /// Rigidly bound to the gripper tool frame.
    Gripper { offset: RigidTransform },
    /// Squeezed between both hands; pose follows the contact midpoint frame.
    Bimanual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub label: String,
    pub pose: RigidTransform,
    pub mass: f64,
    pub half_extents: Vec3,
    /// Height of the supporting surface under the object.
    pub support_z: f64,
    pub attachment: Attachment,
}

impl SimObject {
    pub fn resting(label: &str, x: f64, y: f64, yaw: f64, support_z: f64, mass: f64, half_extents: Vec3) -> Self {
        Self {
            label: label.to_string(),
            pose: RigidTransform::planar(x, y, support_z + half_extents.z, yaw),
            mass,
            half_extents,
            support_z,
            attachment: Attachment::Free,
        }
    }

    fn rest_z(&self) -> f64 {
        self.support_z + self.half_extents.z
    }

    fn drop_to_support(&mut self) {
        self.pose.translation.z = self.rest_z();
        self.attachment = Attachment::Free;
    }
}

/// State of a two-handed squeeze. Slip latches until the next grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimanualHold {
    pub object: usize,
    /// Contact stiffness, N/m of penetration.
    pub stiffness: f64,
    pub mu_s: f64,
    pub normal_force: f64,
    pub lifted: bool,
    pub slipped: bool,
    pub slip_events: u32,
    /// Object pose in the contact midpoint frame.
    offset: Option<RigidTransform>,
}

/// Outcome of the Coulomb hold check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspCheck {
    Holds,
    Slips,
}

/// `holds` iff `μ_s (f_Nl + f_Nr) ≥ m g`.
pub fn grasp_check(mass: f64, f_n_left: f64, f_n_right: f64, mu_s: f64) -> GraspCheck {
    if grasp_holds(mass, f_n_left, f_n_right, mu_s, STANDARD_GRAVITY) {
        GraspCheck::Holds
    } else {
        GraspCheck::Slips
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: u64,
    pub dt: f64,
    pub clock: f64,
    pub base: BasePose,
    pub arms: BTreeMap<String, JointState>,
    pub head_pitch: f64,
    pub gripper: GripperState,
    pub objects: Vec<SimObject>,
    pub emitter: Option<RigidTransform>,
    /// Loads acting on the end-effectors, world frame.
    pub sensed: EEForce,
    pub hold: Option<BimanualHold>,
}

/// World-frame base velocity: x and y drive the base, z the squat joint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaseTwist {
    pub linear: Vec3,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperAction {
    Open,
    Close,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Commands {
    pub arm_qdot: BTreeMap<String, DVector<f64>>,
    pub base: BaseTwist,
    pub head_pitch_rate: f64,
    pub gripper: Option<GripperAction>,
}

impl Commands {
    /// Sums velocities; a later gripper action overrides an earlier one.
    pub fn merge(&mut self, other: Commands) {
        for (arm, qd) in other.arm_qdot {
            match self.arm_qdot.get_mut(&arm) {
                Some(existing) => *existing += qd,
                None => {
                    self.arm_qdot.insert(arm, qd);
                }
            }
        }
        self.base.linear += other.base.linear;
        self.base.yaw_rate += other.base.yaw_rate;
        self.head_pitch_rate += other.head_pitch_rate;
        if other.gripper.is_some() {
            self.gripper = other.gripper;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub seed: u64,
    /// Standard deviation of end-effector force sensing, N.
    pub force_noise: f64,
    /// Standard deviation of the laser spot position, m.
    pub spot_noise: f64,
    pub contact_stiffness: f64,
    pub mu_s: f64,
    pub gripper_rate: f64,
    pub gripper_effort: f64,
    /// Distance from the tool point within which a closing gripper catches an object.
    pub gripper_catch_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            seed: 0,
            force_noise: 0.1,
            spot_noise: 0.0,
            contact_stiffness: 5000.0,
            mu_s: 0.6,
            gripper_rate: 1.5,
            gripper_effort: 20.0,
            gripper_catch_radius: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: RobotModel,
    pub scene: Scene,
    pub config: SimConfig,
    pub state: WorldState,
    force_rng: ChaCha8Rng,
    spot_rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(model: RobotModel, scene: Scene, objects: Vec<SimObject>, config: SimConfig) -> Result<Self, SimError> {
        if !(config.dt > 0.0) {
            return Err(SimError::InvalidModel("dt must be positive".into()));
        }
        let mut arms = BTreeMap::new();
        for (name, arm) in &model.arms {
            if arm.q_home.len() != arm.chain.dof() {
                return Err(SimError::InvalidModel(format!("{name}: home posture has wrong length")));
            }
            let mut q = DVector::from_column_slice(&arm.q_home);
            arm.chain.clamp_positions(&mut q);
            arms.insert(name.clone(), JointState::new(q));
        }
        let state = WorldState {
            step: 0,
            dt: config.dt,
            clock: 0.0,
            base: BasePose::default(),
            arms,
            head_pitch: 0.0,
            gripper: GripperState::default(),
            objects,
            emitter: None,
            sensed: EEForce::default(),
            hold: None,
        };
        Ok(Self {
            force_rng: ChaCha8Rng::seed_from_u64(config.seed),
            spot_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5907),
            model,
            scene,
            config,
            state,
        })
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn spot_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.spot_rng
    }

    pub fn pelvis_pose(&self) -> RigidTransform {
        pelvis_pose(&self.model, &self.state.base)
    }

    /// Ground-level base frame (x, y, yaw).
    pub fn base_frame(&self) -> RigidTransform {
        let b = &self.state.base;
        RigidTransform::planar(b.x, b.y, 0.0, b.yaw)
    }

    pub fn camera_position(&self) -> Vec3 {
        self.pelvis_pose().transform_point(&self.model.head.camera)
    }

    /// World position of an arm's tool point.
    pub fn ee_position(&self, arm: &str) -> Result<Vec3, SimError> {
        Ok(self.ee_pose(arm)?.translation)
    }

    /// World pose of the tool frame (tip link frame moved to the tool point).
    pub fn ee_pose(&self, arm: &str) -> Result<RigidTransform, SimError> {
        let model = self.model.arm(arm)?;
        let q = &self.joint_state(arm)?.q;
        let frames = model.chain.link_frames(q)?;
        let tip = frames[frames.len() - 1];
        let tool = tip * RigidTransform::from_translation(model.tool_point);
        Ok(self.pelvis_pose() * tool)
    }

    pub fn joint_state(&self, arm: &str) -> Result<&JointState, SimError> {
        self.state.arms.get(arm).ok_or_else(|| SimError::UnknownArm(arm.to_string()))
    }

    /// Linear Jacobian of the tool point with world-aligned rows.
    pub fn arm_jacobian(&self, arm: &str) -> Result<DMatrix<f64>, SimError> {
        let model = self.model.arm(arm)?;
        let js = self.joint_state(arm)?;
        let j = point_jacobian(&model.chain, js, model.tip_link(), &model.tool_point)?;
        let r = self.pelvis_pose().rotation;
        let r = DMatrix::from_fn(3, 3, |i, k| r[(i, k)]);
        Ok(r * j.matrix)
    }

    /// Joint velocities moving the tool point at `v` (world axes) relative
    /// to the pelvis.
    pub fn arm_ik(&self, arm: &str, v: &Vec3) -> Result<DVector<f64>, SimError> {
        let model = self.model.arm(arm)?;
        let j = self.arm_jacobian(arm)?;
        let qd = dls_solve(&j, &DVector::from_column_slice(v.as_slice()), DEFAULT_DLS_DAMPING)?;
        Ok(limit_velocity(&model.chain, qd))
    }

    pub fn object_index(&self, label: &str) -> Result<usize, SimError> {
        self.state
            .objects
            .iter()
            .position(|o| o.label == label)
            .ok_or_else(|| SimError::UnknownObject(label.to_string()))
    }

    /// Starts a new two-handed hold episode on an object.
    pub fn begin_bimanual_grasp(&mut self, label: &str) -> Result<(), SimError> {
        let object = self.object_index(label)?;
        self.state.hold = Some(BimanualHold {
            object,
            stiffness: self.config.contact_stiffness,
            mu_s: self.config.mu_s,
            normal_force: 0.0,
            lifted: false,
            slipped: false,
            slip_events: 0,
            offset: None,
        });
        self.update_hold()?;
        Ok(())
    }

    pub fn release_bimanual(&mut self) {
        if let Some(h) = self.state.hold.take() {
            self.state.objects[h.object].drop_to_support();
        }
    }

    /// Advances the world by one step.
    pub fn step(&mut self, cmd: &Commands) -> Result<(), SimError> {
        let dt = self.config.dt;
        let m = &self.model;
        let s = &mut self.state;

        let mut lin = cmd.base.linear;
        let planar = nalgebra::Vector2::new(lin.x, lin.y);
        if planar.norm() > m.max_base_linear {
            let k = m.max_base_linear / planar.norm();
            lin.x *= k;
            lin.y *= k;
        }
        let yaw_rate = cmd.base.yaw_rate.clamp(-m.max_base_angular, m.max_base_angular);
        let squat_rate = lin.z.clamp(-m.max_squat_rate, m.max_squat_rate);
        s.base.x += lin.x * dt;
        s.base.y += lin.y * dt;
        s.base.yaw += yaw_rate * dt;
        s.base.squat = (s.base.squat + squat_rate * dt).clamp(m.squat_limits[0], m.squat_limits[1]);

        for (name, js) in s.arms.iter_mut() {
            let chain = &m.arms[name].chain;
            let qd = match cmd.arm_qdot.get(name) {
                Some(qd) if qd.len() == js.dof() => limit_velocity(chain, qd.clone()),
                Some(qd) => {
                    return Err(KinematicsError::DimensionMismatch { expected: js.dof(), got: qd.len() }.into())
                }
                None => DVector::zeros(js.dof()),
            };
            let before = js.q.clone();
            js.q += &qd * dt;
            chain.clamp_positions(&mut js.q);
            js.q_dot = (&js.q - before) / dt;
        }

        let pitch_rate = cmd.head_pitch_rate.clamp(-m.head.pitch_rate_limit, m.head.pitch_rate_limit);
        s.head_pitch = (s.head_pitch + pitch_rate * dt).clamp(m.head.pitch_limits[0], m.head.pitch_limits[1]);

        match cmd.gripper {
            Some(GripperAction::Open) => s.gripper.target = 1.0,
            Some(GripperAction::Close) => s.gripper.target = 0.0,
            None => {}
        }

        s.step += 1;
        s.clock = s.step as f64 * dt;
        self.update_gripper()?;
        self.update_hold()?;
        self.sense_forces();
        Ok(())
    }

    fn update_gripper(&mut self) -> Result<(), SimError> {
        let dt = self.config.dt;
        let arm = self.model.gripper_arm.clone();
        let tool = self.ee_pose(&arm)?;
        let held = self.state.objects.iter().position(|o| matches!(o.attachment, Attachment::Gripper { .. }));
        let g = &mut self.state.gripper;
        if g.target > g.position {
            g.position = (g.position + self.config.gripper_rate * dt).min(g.target);
            if let Some(i) = held {
                self.state.objects[i].drop_to_support();
            }
            self.state.gripper.effort = 0.0;
        } else if let Some(i) = held {
            g.effort = self.config.gripper_effort;
            let Attachment::Gripper { offset } = self.state.objects[i].attachment else { unreachable!() };
            self.state.objects[i].pose = tool * offset;
        } else if g.target < g.position {
            g.position = (g.position - self.config.gripper_rate * dt).max(g.target);
            g.effort = 0.0;
            // a closing gripper catches the nearest object within reach
            let catch = self.config.gripper_catch_radius;
            let candidate = self
                .state
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| matches!(o.attachment, Attachment::Free))
                .map(|(i, o)| (i, box_distance(o, &tool.translation)))
                .filter(|(_, d)| *d <= catch)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = candidate {
                if self.state.gripper.position <= 0.5 {
                    let offset = tool.inverse() * self.state.objects[i].pose;
                    self.state.objects[i].attachment = Attachment::Gripper { offset };
                    self.state.gripper.effort = self.config.gripper_effort;
                }
            }
        }
        Ok(())
    }

    /// Contact forces, hold check and object motion of a two-handed grasp.
    fn update_hold(&mut self) -> Result<(), SimError> {
        let Some(mut hold) = self.state.hold.clone() else {
            return Ok(());
        };
        let p_l = self.ee_position(LEFT_ARM)?;
        let p_r = self.ee_position(RIGHT_ARM)?;
        let obj = &mut self.state.objects[hold.object];
        let width = 2.0 * obj.half_extents.y;
        let near = |p: &Vec3| {
            let local = obj.pose.inverse().transform_point(p);
            local.x.abs() <= obj.half_extents.x + 0.02 && local.z.abs() <= obj.half_extents.z + 0.02
        };
        let d = (p_l - p_r).norm();
        let penetration = if near(&p_l) && near(&p_r) { width - d } else { 0.0 };
        hold.normal_force = hold.stiffness * penetration.max(0.0);
        let midpoint = RigidTransform::new(object_frame(&p_l, &p_r), (p_l + p_r) / 2.0);
        if hold.normal_force > 0.0 && !hold.slipped {
            hold.offset.get_or_insert_with(|| midpoint.inverse() * obj.pose);
        }
        let carried = hold.offset.map(|offset| midpoint * offset);
        let holds = !hold.slipped
            && hold.normal_force > 0.0
            && grasp_check(obj.mass, hold.normal_force, hold.normal_force, hold.mu_s) == GraspCheck::Holds;
        if let (true, Some(mut pose)) = (holds, carried) {
            if pose.translation.z <= obj.rest_z() + 1e-4 {
                pose.translation.z = obj.rest_z();
                hold.lifted = false;
            } else {
                hold.lifted = true;
            }
            obj.pose = pose;
            obj.attachment = Attachment::Bimanual;
        } else {
            // hands rising past an unheld object is a slip as well
            let lifting = carried.is_some_and(|p| p.translation.z > obj.rest_z() + 1e-4);
            if (hold.lifted || lifting) && !hold.slipped {
                hold.slipped = true;
                hold.slip_events += 1;
                hold.lifted = false;
            }
            if !matches!(obj.attachment, Attachment::Gripper { .. }) {
                obj.drop_to_support();
            }
            if hold.slipped || hold.normal_force == 0.0 {
                hold.offset = None;
            }
        }
        self.state.hold = Some(hold);
        Ok(())
    }

    /// Simulated end-effector force sensing: contact loads plus Gaussian noise.
    pub fn sense_forces(&mut self) {
        let mut truth = EEForce::default();
        if let (Some(hold), Ok(p_l), Ok(p_r)) =
            (&self.state.hold, self.ee_position(LEFT_ARM), self.ee_position(RIGHT_ARM))
        {
            let r_b = object_frame(&p_l, &p_r);
            let weight = if hold.lifted { self.state.objects[hold.object].mass * STANDARD_GRAVITY / 2.0 } else { 0.0 };
            truth.left = r_b * Vec3::new(0.0, hold.normal_force, weight);
            truth.right = r_b * Vec3::new(0.0, -hold.normal_force, weight);
        }
        let sigma = self.config.force_noise;
        let mut noise = || {
            if sigma > 0.0 {
                let rng = &mut self.force_rng;
                Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * sigma
            } else {
                Vec3::zeros()
            }
        };
        self.state.sensed = EEForce { left: truth.left + noise(), right: truth.right + noise() };
    }

    /// Sensed forces rotated into the object frame of the current contacts.
    pub fn sensed_in_object_frame(&self) -> Result<(EEForce, Matrix3<f64>), SimError> {
        let r_b = object_frame(&self.ee_position(LEFT_ARM)?, &self.ee_position(RIGHT_ARM)?);
        let s = &self.state.sensed;
        Ok((EEForce { left: r_b.transpose() * s.left, right: r_b.transpose() * s.right }, r_b))
    }
}

pub fn pelvis_pose(model: &RobotModel, base: &BasePose) -> RigidTransform {
    RigidTransform::planar(base.x, base.y, model.pelvis_height + base.squat, base.yaw)
}

fn box_distance(obj: &SimObject, p: &Vec3) -> f64 {
    let local = obj.pose.inverse().transform_point(p);
    let outside = Vec3::from_fn(|i, _| (local[i].abs() - obj.half_extents[i]).max(0.0));
    outside.norm()
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
