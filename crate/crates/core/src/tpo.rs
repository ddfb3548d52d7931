//! Virtual-force teleoperation: forces from tracked operator displacement,
//! joint-space admittance (postural) motion, Cartesian velocity references,
//! Blocking Link and mirroring.

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::LowPass;
use crate::kinematics::{point_jacobian, ChainModel, JointState, KinematicsError, RigidTransform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpoError {
    #[error("force on chain `{force}` applied to chain `{model}`")]
    ChainMismatch { model: String, force: String },
    #[error("invalid admittance parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub chain: String,
    pub link: String,
    #[serde(default)]
    pub local_point: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualForce {
    pub vector: Vec3,
    pub control_point: ControlPoint,
    pub source: String,
}

/// One tracked operator input (a wrist camera or tracker) and its filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerInput {
    pub pose_in_origin: RigidTransform,
    pub reference_pose: RigidTransform,
    /// Virtual spring stiffness, N/m.
    pub k_cam: f64,
    /// Radius of the spherical buffer around the reference, m.
    pub deadzone_radius: f64,
    pub filter: LowPass,
}

impl TrackerInput {
    pub const DEFAULT_K_CAM: f64 = 1.8;
    pub const DEFAULT_CUTOFF_HZ: f64 = 5.0;

    pub fn new(k_cam: f64, deadzone_radius: f64, cutoff_hz: Option<f64>) -> Self {
        assert!(k_cam > 0.0, "k_cam must be positive");
        assert!(deadzone_radius >= 0.0, "deadzone radius must be non-negative");
        Self {
            pose_in_origin: RigidTransform::identity(),
            reference_pose: RigidTransform::identity(),
            k_cam,
            deadzone_radius,
            filter: LowPass::new(cutoff_hz),
        }
    }

    /// Displacement of the tracker from its reference, in the reference frame.
    pub fn displacement(&self) -> Vec3 {
        (self.reference_pose.inverse() * self.pose_in_origin).translation
    }
}

/// Removes the buffer radius from the displacement magnitude, so the
/// output is zero inside the buffer and continuous at its boundary.
pub fn apply_deadzone(r: Vec3, radius: f64) -> Vec3 {
    let norm = r.norm();
    if norm <= radius {
        Vec3::zeros()
    } else {
        r * ((norm - radius) / norm)
    }
}

/// Spring force `k_cam * s(r)` for the current tracker pose. Advances the
/// input's filter by `dt`.
pub fn virtual_force(input: &mut TrackerInput, dt: f64) -> Vec3 {
    let shrunk = apply_deadzone(input.displacement(), input.deadzone_radius);
    input.filter.update(shrunk, dt) * input.k_cam
}

/// Moves the reference onto the current pose and clears the filter.
pub fn reset_reference(input: &TrackerInput) -> TrackerInput {
    let mut out = input.clone();
    out.reference_pose = input.pose_in_origin;
    out.filter.reset();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceParams {
    /// Diagonal of the joint mass matrix.
    pub mass: DVector<f64>,
    pub stiffness: DVector<f64>,
    pub damping: DVector<f64>,
    pub q_eq: DVector<f64>,
    pub dt: f64,
}

impl AdmittanceParams {
    pub fn new(
        mass: DVector<f64>,
        stiffness: DVector<f64>,
        damping: DVector<f64>,
        q_eq: DVector<f64>,
        dt: f64,
    ) -> Result<Self, TpoError> {
        let p = Self { mass, stiffness, damping, q_eq, dt };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(n: usize, mass: f64, stiffness: f64, damping: f64, q_eq: DVector<f64>, dt: f64) -> Result<Self, TpoError> {
        Self::new(
            DVector::from_element(n, mass),
            DVector::from_element(n, stiffness),
            DVector::from_element(n, damping),
            q_eq,
            dt,
        )
    }

    pub fn validate(&self) -> Result<(), TpoError> {
        let n = self.mass.len();
        let bad = |m: &str| Err(TpoError::InvalidParams(m.to_string()));
        if self.stiffness.len() != n || self.damping.len() != n || self.q_eq.len() != n {
            return bad("M, K, D and q_eq must have equal length");
        }
        if self.mass.iter().any(|m| !(*m > 0.0)) {
            return bad("mass diagonal must be strictly positive");
        }
        if self.stiffness.iter().chain(self.damping.iter()).any(|v| !(*v >= 0.0)) {
            return bad("stiffness and damping must be non-negative");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        Ok(())
    }
}

/// Reference trajectory state carried between admittance steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceState {
    pub q_ref: DVector<f64>,
    pub q_dot_ref: DVector<f64>,
}

impl AdmittanceState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q_ref: q, q_dot_ref: DVector::zeros(n) }
    }
}

/// Joint torques `Σ Jᵀ f` of every force on the chain. With `blocking`,
/// a force only drives the joints after the nearest proximal link that
/// also carries a force.
pub fn joint_torques(
    model: &ChainModel,
    state: &JointState,
    forces: &[VirtualForce],
    blocking: bool,
) -> Result<DVector<f64>, TpoError> {
    let mut indices = Vec::with_capacity(forces.len());
    for f in forces {
        if f.control_point.chain != model.name {
            return Err(TpoError::ChainMismatch {
                model: model.name.clone(),
                force: f.control_point.chain.clone(),
            });
        }
        indices.push(model.link_index(&f.control_point.link)?);
    }
    let mut tau = DVector::zeros(model.dof());
    for (f, idx) in forces.iter().zip(&indices) {
        let cp = &f.control_point;
        let jac = point_jacobian(model, state, &cp.link, &cp.local_point)?;
        let mut contribution = jac.matrix.transpose() * DVector::from_column_slice(f.vector.as_slice());
        if blocking {
            // nearest ancestor carrying a force; joints up to its link are blocked
            let ancestor = indices
                .iter()
                .filter_map(|other| match (other, idx) {
                    (Some(a), Some(b)) if a < b => Some(*a),
                    _ => None,
                })
                .max();
            if let Some(a) = ancestor {
                contribution.rows_mut(0, a + 1).fill(0.0);
            }
        }
        tau += contribution;
    }
    Ok(tau)
}

/// One step of the joint mass-spring-damper admittance:
/// `q̈ = M⁻¹(K(q_eq − q) − D q̇_ref + τ)`, integrated velocity first.
pub fn admittance_step(
    model: &ChainModel,
    state: &JointState,
    tau: &DVector<f64>,
    params: &AdmittanceParams,
    prev: &AdmittanceState,
) -> Result<AdmittanceState, TpoError> {
    params.validate()?;
    let n = model.dof();
    for len in [state.dof(), tau.len(), params.mass.len(), prev.q_ref.len()] {
        if len != n {
            return Err(KinematicsError::DimensionMismatch { expected: n, got: len }.into());
        }
    }
    let mut next = prev.clone();
    for i in 0..n {
        let acc = (params.stiffness[i] * (params.q_eq[i] - state.q[i])
            - params.damping[i] * prev.q_dot_ref[i]
            + tau[i])
            / params.mass[i];
        next.q_dot_ref[i] = prev.q_dot_ref[i] + acc * params.dt;
        let q = prev.q_ref[i] + next.q_dot_ref[i] * params.dt;
        let clamped = model.joints[i].clamp(q);
        if clamped != q {
            // no velocity accumulates against a limit
            next.q_dot_ref[i] = 0.0;
        }
        next.q_ref[i] = clamped;
    }
    Ok(next)
}

pub fn postural_step(
    model: &ChainModel,
    state: &JointState,
    forces: &[VirtualForce],
    params: &AdmittanceParams,
    blocking: bool,
    prev: &AdmittanceState,
) -> Result<AdmittanceState, TpoError> {
    let tau = joint_torques(model, state, forces, blocking)?;
    admittance_step(model, state, &tau, params, prev)
}

/// Diagonal gain from force to Cartesian velocity, m/s per N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGain(pub [f64; 3]);

impl CartesianGain {
    pub fn uniform(k: f64) -> Self {
        Self([k; 3])
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vec3::from(self.0))
    }
}

pub fn cartesian_ref(force: &Vec3, gain: &CartesianGain) -> Vec3 {
    gain.matrix() * force
}

/// Reflection of `force` across the plane with unit normal `plane_normal`.
pub fn mirror_force(force: &Vec3, plane_normal: &Vec3) -> Vec3 {
    force - plane_normal * (2.0 * force.dot(plane_normal))
}
