//! Two-handed pick and carry: approach, squeeze, lift, mass estimation,
//! force regulation and cooperative transport.

use serde::{Deserialize, Serialize};

use super::control::clamp_norm;
use super::teleop::{ControlPointId, TeleopConfig, TeleopDrive};
use super::{Commands, SimError, Simulator, LEFT_ARM, RIGHT_ARM};
use crate::bimanual::{
    coop_step, desired_forces, estimate_mass, grasp_force, object_frame, CoopParams, EEForce, GraspSpec,
    MassEstimate, ZForceSample, STANDARD_GRAVITY,
};
use crate::kinematics::Vec3;
use crate::vtr::{split_cartesian, VtrThresholds, VtrWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportPhase {
    Approach,
    Squeeze,
    Lift,
    Estimate,
    Regulate,
    Transport,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub object: String,
    pub grasp: GraspSpec,
    pub damping: f64,
    pub stiffness: f64,
    /// Gap left between each hand and the object side before squeezing, m.
    pub approach_gap: f64,
    pub approach_gain: f64,
    pub approach_tolerance: f64,
    pub max_arm_speed: f64,
    /// Normal force error accepted as settled, N.
    pub force_tolerance: f64,
    /// Consecutive settled steps needed to leave a force phase.
    pub settle_steps: u32,
    pub lift_height: f64,
    pub lift_speed: f64,
    pub samples: usize,
    pub vtr_sharing: bool,
    pub thresholds: VtrThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            object: "box".into(),
            grasp: GraspSpec::default(),
            damping: 2500.0,
            stiffness: 200.0,
            approach_gap: 0.01,
            approach_gain: 2.0,
            approach_tolerance: 0.002,
            max_arm_speed: 0.2,
            force_tolerance: 1.0,
            settle_steps: 50,
            lift_height: 0.05,
            lift_speed: 0.05,
            samples: 100,
            vtr_sharing: true,
            thresholds: VtrThresholds::default(),
        }
    }
}

/// Object velocity requested by the operator during transport.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransportCommand {
    pub x_dot: Vec3,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BimanualPipeline {
    pub config: PipelineConfig,
    pub phase: TransportPhase,
    pub estimate: Option<MassEstimate>,
    pub f_bar: Option<f64>,
    pub coop: CoopParams,
    pub weights: VtrWeights,
    pub nu: Vec3,
    /// Right-minus-left contact offset latched at transport start, base axes.
    offset_base: Vec3,
    samples: Vec<ZForceSample>,
    settled: u32,
    lift_start_z: f64,
    phase_steps: u64,
}

impl BimanualPipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let coop = CoopParams::new(config.damping, 0.0);
        Self {
            config,
            phase: TransportPhase::Approach,
            estimate: None,
            f_bar: None,
            coop,
            weights: VtrWeights::full_arm(),
            nu: Vec3::zeros(),
            offset_base: Vec3::zeros(),
            samples: Vec::new(),
            settled: 0,
            lift_start_z: 0.0,
            phase_steps: 0,
        }
    }

    /// Normal force currently targeted.
    pub fn target_force(&self) -> f64 {
        self.f_bar.unwrap_or(self.config.grasp.f_initial)
    }

    fn enter(&mut self, phase: TransportPhase) {
        self.phase = phase;
        self.settled = 0;
        self.phase_steps = 0;
    }

    /// Contact targets on either side of the object, left first.
    pub fn contact_targets(&self, sim: &Simulator) -> Result<(Vec3, Vec3), SimError> {
        let obj = &sim.state.objects[sim.object_index(&self.config.object)?];
        let side = obj.half_extents.y + self.config.approach_gap;
        Ok((obj.pose.transform_point(&Vec3::new(0.0, side, 0.0)), obj.pose.transform_point(&Vec3::new(0.0, -side, 0.0))))
    }

    fn settle(&mut self, sensed_b: &EEForce, target: f64) -> bool {
        let f_n = (sensed_b.left.y - sensed_b.right.y) / 2.0;
        if (f_n - target).abs() <= self.config.force_tolerance {
            self.settled += 1;
        } else {
            self.settled = 0;
        }
        self.settled >= self.config.settle_steps
    }

    /// Worst-arm weights with β taken in base axes.
    fn worst_weights(&self, sim: &Simulator) -> Result<VtrWeights, SimError> {
        let drive = TeleopDrive::new(
            TeleopConfig { thresholds: self.config.thresholds, ..TeleopConfig::default() },
            ControlPointId::LeftEe,
        );
        Ok(drive.arm_weights(sim, LEFT_ARM)?.worst(&drive.arm_weights(sim, RIGHT_ARM)?))
    }

    /// Computes the step's commands and advances the phase machine.
    pub fn step(&mut self, sim: &mut Simulator, cmd: &TransportCommand) -> Result<Commands, SimError> {
        self.phase_steps += 1;
        let p_l = sim.ee_position(LEFT_ARM)?;
        let p_r = sim.ee_position(RIGHT_ARM)?;
        let mut out = Commands::default();

        if self.phase == TransportPhase::Approach {
            let (t_l, t_r) = self.contact_targets(sim)?;
            let (e_l, e_r) = (t_l - p_l, t_r - p_r);
            if e_l.norm() <= self.config.approach_tolerance && e_r.norm() <= self.config.approach_tolerance {
                sim.begin_bimanual_grasp(&self.config.object)?;
                self.enter(TransportPhase::Squeeze);
            } else {
                let g = self.config.approach_gain;
                let max = self.config.max_arm_speed;
                arm_velocities(sim, &mut out, clamp_norm(e_l * g, max), clamp_norm(e_r * g, max))?;
                return Ok(out);
            }
        }

        let (sensed_b, r_b) = sim.sensed_in_object_frame()?;
        self.coop.r_b = r_b;
        if sim.state.hold.as_ref().is_some_and(|h| h.slipped) {
            self.enter(TransportPhase::Failed);
        }
        let mut x_dot = Vec3::zeros();
        let mut turn = 0.0;
        match self.phase {
            TransportPhase::Squeeze => {
                if self.settle(&sensed_b, self.config.grasp.f_initial) {
                    let obj = &sim.state.objects[sim.object_index(&self.config.object)?];
                    self.lift_start_z = obj.pose.translation.z;
                    self.enter(TransportPhase::Lift);
                }
            }
            TransportPhase::Lift => {
                let obj = &sim.state.objects[sim.object_index(&self.config.object)?];
                if obj.pose.translation.z - self.lift_start_z >= self.config.lift_height {
                    self.enter(TransportPhase::Estimate);
                } else {
                    x_dot = Vec3::new(0.0, 0.0, self.config.lift_speed);
                }
            }
            TransportPhase::Estimate => {
                self.samples.push(ZForceSample { left: sensed_b.left.z, right: sensed_b.right.z });
                if self.samples.len() >= self.config.samples {
                    let est = estimate_mass(&self.samples, STANDARD_GRAVITY).map_err(|e| SimError::InvalidModel(e.to_string()))?;
                    let g = &self.config.grasp;
                    self.f_bar = Some(
                        grasp_force(est.mass, g.mu_s, g.k_margin, STANDARD_GRAVITY)
                            .map_err(|e| SimError::InvalidModel(e.to_string()))?,
                    );
                    self.estimate = Some(est);
                    self.enter(TransportPhase::Regulate);
                }
            }
            TransportPhase::Regulate => {
                if self.settle(&sensed_b, self.target_force()) {
                    self.coop.p_offset_t0 = p_r - p_l;
                    self.offset_base = RigidTransformYaw(sim.state.base.yaw).to_base(&self.coop.p_offset_t0);
                    self.coop.stiffness = [self.config.stiffness; 3];
                    self.enter(TransportPhase::Transport);
                }
            }
            TransportPhase::Transport => {
                self.weights = if self.config.vtr_sharing { self.worst_weights(sim)? } else { VtrWeights::full_arm() };
                let yaw = RigidTransformYaw(sim.state.base.yaw);
                // the grasp turns with the base
                self.coop.p_offset_t0 = yaw.to_world(&self.offset_base);
                let split = split_cartesian(&yaw.to_base(&cmd.x_dot), &self.weights);
                x_dot = yaw.to_world(&split.x_star);
                self.nu = yaw.to_world(&split.nu);
                out.base.linear = self.nu;
                out.base.yaw_rate = cmd.yaw_rate;
                turn = cmd.yaw_rate.clamp(-sim.model.max_base_angular, sim.model.max_base_angular);
            }
            TransportPhase::Approach | TransportPhase::Failed => return Ok(out),
        }
        let desired = desired_forces(&sensed_b, self.target_force());
        let c = coop_step(&x_dot, &sensed_b, &desired, &p_l, &p_r, &self.coop)
            .map_err(|e| SimError::InvalidModel(e.to_string()))?;
        // contacts turn about their midpoint instead of being swept about the base
        let b = &sim.state.base;
        let mid = (p_l + p_r) / 2.0;
        let spin = |p: &Vec3, cx: f64, cy: f64| Vec3::new(-turn * (p.y - cy), turn * (p.x - cx), 0.0);
        let fix = |p: &Vec3| spin(p, mid.x, mid.y) - spin(p, b.x, b.y);
        arm_velocities(sim, &mut out, c.left + fix(&p_l), c.right + fix(&p_r))?;
        Ok(out)
    }

    /// Distance between the two contact points.
    pub fn contact_distance(sim: &Simulator) -> Result<f64, SimError> {
        Ok((sim.ee_position(LEFT_ARM)? - sim.ee_position(RIGHT_ARM)?).norm())
    }

    /// Current object frame of the contacts.
    pub fn frame(sim: &Simulator) -> Result<nalgebra::Matrix3<f64>, SimError> {
        Ok(object_frame(&sim.ee_position(LEFT_ARM)?, &sim.ee_position(RIGHT_ARM)?))
    }
}

fn arm_velocities(sim: &Simulator, out: &mut Commands, left: Vec3, right: Vec3) -> Result<(), SimError> {
    out.arm_qdot.insert(LEFT_ARM.into(), sim.arm_ik(LEFT_ARM, &left)?);
    out.arm_qdot.insert(RIGHT_ARM.into(), sim.arm_ik(RIGHT_ARM, &right)?);
    Ok(())
}

struct RigidTransformYaw(f64);

impl RigidTransformYaw {
    fn to_base(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.0.sin_cos();
        Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    fn to_world(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.0.sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::Scene;
    use crate::sim::{RobotModel, SimConfig, SimObject};

    fn world(mass: f64, seed: u64) -> Simulator {
        let obj = SimObject::resting("box", 0.7, 0.0, 0.0, 0.9, mass, Vec3::new(0.1, 0.2, 0.1));
        Simulator::new(RobotModel::standard(), Scene::default(), vec![obj], SimConfig { seed, ..Default::default() })
            .unwrap()
    }

    fn run_until(sim: &mut Simulator, p: &mut BimanualPipeline, phase: TransportPhase, max: usize) -> bool {
        for _ in 0..max {
            if p.phase == phase {
                return true;
            }
            let c = p.step(sim, &TransportCommand::default()).unwrap();
            sim.step(&c).unwrap();
        }
        p.phase == phase
    }

    #[test]
    fn pipeline_reaches_transport_with_mass_estimate() {
        let mut sim = world(1.958, 3);
        let mut p = BimanualPipeline::new(PipelineConfig::default());
        assert!(run_until(&mut sim, &mut p, TransportPhase::Transport, 3000), "stuck in {:?}", p.phase);
        let est = p.estimate.unwrap();
        assert!((est.mass - 1.958).abs() < 0.05, "{}", est.mass);
        let hold = sim.state.hold.as_ref().unwrap();
        assert!(hold.lifted && !hold.slipped);
        assert!((hold.normal_force - p.f_bar.unwrap()).abs() < 1.5);
    }
}
