//! Serial-chain kinematics for arms mounted on a planar mobile base.
//!
//! A [`ChainModel`] is an ordered list of joints. Joint `i` moves link `i`
//! and everything after it; the frame before the first joint is the
//! [`ChainModel::ROOT_LINK`], placed by `base_mount` in the robot base frame.
//! All transforms returned here are expressed in that base frame.

use std::collections::BTreeMap;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Default damping of [`dls_ik_step`].
pub const DEFAULT_DLS_DAMPING: f64 = 0.05;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("state has {got} joints, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("JJ^T is singular and damping is zero")]
    Singular,
    #[error("damping must be non-negative, got {0}")]
    NegativeDamping(f64),
    #[error("invalid chain model: {0}")]
    InvalidModel(String),
}

/// Rotation plus translation, stored as an explicit 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Fixed-axis roll/pitch/yaw, i.e. `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_rpy(translation: Vec3, roll: f64, pitch: f64, yaw: f64) -> Self {
        let rotation = Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
        Self { rotation, translation }
    }

    pub fn from_axis_angle(translation: Vec3, axis: Vec3, angle: f64) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
        Self { rotation, translation }
    }

    pub fn from_quaternion(translation: Vec3, xyzw: [f64; 4]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            xyzw[3], xyzw[0], xyzw[1], xyzw[2],
        ));
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::from_rpy(Vec3::new(x, y, z), 0.0, 0.0, yaw)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Heading of the x axis projected on the horizontal plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        [r, p, y]
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let orthonormal = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax() <= tol;
        orthonormal && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        *self * *rhs
    }
}

/// Serialized form. Writers always emit `translation` + `rotation` rows;
/// readers also accept `xyz`/`rpy` or a `quaternion` in x,y,z,w order.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    #[serde(default, alias = "xyz")]
    translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing)]
    rpy: Option<[f64; 3]>,
    #[serde(default, skip_serializing)]
    quaternion: Option<[f64; 4]>,
}

impl From<TransformRepr> for RigidTransform {
    fn from(r: TransformRepr) -> Self {
        let t = Vec3::from(r.translation);
        if let Some(m) = r.rotation {
            let rotation = Matrix3::from_fn(|i, j| m[i][j]);
            RigidTransform { rotation, translation: t }
        } else if let Some(q) = r.quaternion {
            RigidTransform::from_quaternion(t, q)
        } else if let Some([roll, pitch, yaw]) = r.rpy {
            RigidTransform::from_rpy(t, roll, pitch, yaw)
        } else {
            RigidTransform::from_translation(t)
        }
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation;
        TransformRepr {
            translation: [t.translation.x, t.translation.y, t.translation.z],
            rotation: Some([
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ]),
            rpy: None,
            quaternion: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Link moved by this joint.
    pub link: String,
    pub kind: JointKind,
    /// Unit axis in the joint frame.
    pub axis: Vec3,
    /// Transform from the parent link frame to the joint frame at q = 0.
    #[serde(default)]
    pub origin: RigidTransform,
    pub limits: [f64; 2],
    pub vel_limit: f64,
}

impl Joint {
    fn motion(&self, q: f64) -> RigidTransform {
        match self.kind {
            JointKind::Revolute => RigidTransform::from_axis_angle(Vec3::zeros(), self.axis, q),
            JointKind::Prismatic => RigidTransform::from_translation(self.axis * q),
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limits[0], self.limits[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainRepr")]
pub struct ChainModel {
    pub name: String,
    #[serde(default)]
    pub base_mount: RigidTransform,
    pub joints: Vec<Joint>,
}

#[derive(Deserialize)]
struct ChainRepr {
    name: String,
    #[serde(default)]
    base_mount: RigidTransform,
    joints: Vec<Joint>,
}

impl TryFrom<ChainRepr> for ChainModel {
    type Error = KinematicsError;

    fn try_from(r: ChainRepr) -> Result<Self, Self::Error> {
        ChainModel::new(r.name, r.base_mount, r.joints)
    }
}

impl ChainModel {
    /// Name of the frame before the first joint.
    pub const ROOT_LINK: &'static str = "mount";

    pub fn new(
        name: impl Into<String>,
        base_mount: RigidTransform,
        joints: Vec<Joint>,
    ) -> Result<Self, KinematicsError> {
        let model = ChainModel { name: name.into(), base_mount, joints };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), KinematicsError> {
        let invalid = |msg: String| Err(KinematicsError::InvalidModel(msg));
        if self.joints.is_empty() {
            return invalid(format!("chain `{}` has no joints", self.name));
        }
        if !self.base_mount.is_rigid(UNIT_TOLERANCE) {
            return invalid("base_mount is not a rigid transform".into());
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return invalid(format!("joint `{}` axis is not unit-norm", j.name));
            }
            if !(j.limits[0] < j.limits[1]) {
                return invalid(format!("joint `{}` limits are not increasing", j.name));
            }
            if !(j.vel_limit > 0.0) {
                return invalid(format!("joint `{}` velocity limit must be positive", j.name));
            }
            if !j.origin.is_rigid(UNIT_TOLERANCE) {
                return invalid(format!("joint `{}` origin is not rigid", j.name));
            }
            if j.link == Self::ROOT_LINK || self.joints[..i].iter().any(|o| o.link == j.link) {
                return invalid(format!("duplicate link `{}`", j.link));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Index of the joint that moves `link`; `None` for the root link.
    pub fn link_index(&self, link: &str) -> Result<Option<usize>, KinematicsError> {
        if link == Self::ROOT_LINK {
            return Ok(None);
        }
        self.joints
            .iter()
            .position(|j| j.link == link)
            .map(Some)
            .ok_or_else(|| KinematicsError::UnknownLink(link.to_string()))
    }

    pub fn tip_link(&self) -> &str {
        &self.joints[self.dof() - 1].link
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits[0]))
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits[1]))
    }

    pub fn clamp_positions(&self, q: &mut DVector<f64>) {
        for (qi, j) in q.iter_mut().zip(&self.joints) {
            *qi = j.clamp(*qi);
        }
    }

    fn check_dim(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    /// Link frames in chain order: element 0 is the root, element `i + 1`
    /// is the link moved by joint `i`.
    pub fn link_frames(&self, q: &DVector<f64>) -> Result<Vec<RigidTransform>, KinematicsError> {
        self.check_dim(q)?;
        let mut frames = Vec::with_capacity(self.dof() + 1);
        frames.push(self.base_mount);
        for (j, qi) in self.joints.iter().zip(q.iter()) {
            let parent = frames[frames.len() - 1];
            frames.push(parent * j.origin * j.motion(*qi));
        }
        Ok(frames)
    }

    /// Position of a point attached to `link`, in the base frame.
    pub fn point_position(
        &self,
        q: &DVector<f64>,
        link: &str,
        local_point: &Vec3,
    ) -> Result<Vec3, KinematicsError> {
        let idx = self.link_index(link)?;
        let frames = self.link_frames(q)?;
        let frame = &frames[idx.map_or(0, |i| i + 1)];
        Ok(frame.transform_point(local_point))
    }

    /// Prepends the planar base (x, y, yaw) and the pelvis squat joint to
    /// this arm, producing a whole-body chain rooted at the world frame.
    pub fn with_mobile_base(&self, squat_limits: [f64; 2]) -> Result<ChainModel, KinematicsError> {
        let big = 1e6;
        let virtual_joint = |name: &str, kind, axis: Vec3, limits, vel| Joint {
            name: name.to_string(),
            link: format!("{name}_link"),
            kind,
            axis,
            origin: RigidTransform::identity(),
            limits,
            vel_limit: vel,
        };
        let mut joints = vec![
            virtual_joint("base_x", JointKind::Prismatic, Vec3::x(), [-big, big], big),
            virtual_joint("base_y", JointKind::Prismatic, Vec3::y(), [-big, big], big),
            virtual_joint("base_yaw", JointKind::Revolute, Vec3::z(), [-big, big], big),
            virtual_joint("squat", JointKind::Prismatic, Vec3::z(), squat_limits, big),
        ];
        let mut arm = self.joints.clone();
        arm[0].origin = self.base_mount * arm[0].origin;
        joints.extend(arm);
        ChainModel::new(
            format!("{}_whole_body", self.name),
            RigidTransform::identity(),
            joints,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, q_dot: DVector::zeros(n) }
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q))
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

/// Link frames keyed by link name, in the base frame.
pub fn forward_kinematics(
    model: &ChainModel,
    state: &JointState,
) -> Result<BTreeMap<String, RigidTransform>, KinematicsError> {
    let frames = model.link_frames(&state.q)?;
    let mut out = BTreeMap::new();
    out.insert(ChainModel::ROOT_LINK.to_string(), frames[0]);
    for (j, frame) in model.joints.iter().zip(&frames[1..]) {
        out.insert(j.link.clone(), *frame);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointJacobian {
    pub matrix: DMatrix<f64>,
    pub link: String,
    pub local_point: Vec3,
}

/// Linear Jacobian of a point rigidly attached to `link`.
pub fn point_jacobian(
    model: &ChainModel,
    state: &JointState,
    link: &str,
    local_point: &Vec3,
) -> Result<PointJacobian, KinematicsError> {
    let idx = model.link_index(link)?;
    let frames = model.link_frames(&state.q)?;
    let n = model.dof();
    let mut matrix = DMatrix::zeros(3, n);
    if let Some(last) = idx {
        let p = frames[last + 1].transform_point(local_point);
        for (i, joint) in model.joints.iter().enumerate().take(last + 1) {
            // joint frame = parent link frame composed with the fixed origin
            let jf = frames[i] * joint.origin;
            let axis = jf.transform_vector(&joint.axis);
            let col = match joint.kind {
                JointKind::Revolute => axis.cross(&(p - jf.translation)),
                JointKind::Prismatic => axis,
            };
            matrix.fixed_view_mut::<3, 1>(0, i).copy_from(&col);
        }
    }
    Ok(PointJacobian { matrix, link: link.to_string(), local_point: *local_point })
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ ẋ` for any m×n Jacobian.
pub fn dls_solve(
    jacobian: &DMatrix<f64>,
    desired: &DVector<f64>,
    damping: f64,
) -> Result<DVector<f64>, KinematicsError> {
    if !(damping >= 0.0) {
        return Err(KinematicsError::NegativeDamping(damping));
    }
    let m = jacobian.nrows();
    let mut jjt = jacobian * jacobian.transpose();
    if damping == 0.0 {
        let eig = jjt.clone().symmetric_eigen();
        let max = eig.eigenvalues.amax();
        let min = eig.eigenvalues.min();
        if max == 0.0 || min <= 1e-12 * max {
            return Err(KinematicsError::Singular);
        }
    } else {
        jjt += DMatrix::identity(m, m) * (damping * damping);
    }
    let chol = jjt.cholesky().ok_or(KinematicsError::Singular)?;
    Ok(jacobian.transpose() * chol.solve(desired))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkTask {
    pub link: String,
    pub local_point: Vec3,
    pub desired_velocity: Vec3,
}

/// One damped-least-squares velocity step. The result is scaled uniformly
/// so that no joint exceeds its velocity limit.
pub fn dls_ik_step(
    model: &ChainModel,
    state: &JointState,
    task: &IkTask,
    damping: f64,
) -> Result<DVector<f64>, KinematicsError> {
    let jac = point_jacobian(model, state, &task.link, &task.local_point)?;
    let xdot = DVector::from_column_slice(task.desired_velocity.as_slice());
    let qdot = dls_solve(&jac.matrix, &xdot, damping)?;
    Ok(limit_velocity(model, qdot))
}

pub fn limit_velocity(model: &ChainModel, mut qdot: DVector<f64>) -> DVector<f64> {
    let scale = model
        .joints
        .iter()
        .zip(qdot.iter())
        .map(|(j, v)| if v.abs() > j.vel_limit { j.vel_limit / v.abs() } else { 1.0 })
        .fold(1.0, f64::min);
    if scale < 1.0 {
        qdot *= scale;
    }
    qdot
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn revolute(name: &str, axis: Vec3, origin: Vec3) -> Joint {
        Joint {
            name: name.into(),
            link: format!("{name}_link"),
            kind: JointKind::Revolute,
            axis,
            origin: RigidTransform::from_translation(origin),
            limits: [-std::f64::consts::PI, std::f64::consts::PI],
            vel_limit: 10.0,
        }
    }

    pub fn prismatic(name: &str, axis: Vec3) -> Joint {
        Joint {
            name: name.into(),
            link: format!("{name}_link"),
            kind: JointKind::Prismatic,
            axis,
            origin: RigidTransform::identity(),
            limits: [-1.0, 1.0],
            vel_limit: 10.0,
        }
    }

    /// Two 1 m links rotating about z; the tip is (1, 0, 0) on `j2_link`.
    pub fn planar_two_link() -> ChainModel {
        ChainModel::new(
            "planar",
            RigidTransform::identity(),
            vec![
                revolute("j1", Vec3::z(), Vec3::zeros()),
                revolute("j2", Vec3::z(), Vec3::x()),
            ],
        )
        .unwrap()
    }

    pub fn planar_three_link() -> ChainModel {
        ChainModel::new(
            "planar3",
            RigidTransform::identity(),
            vec![
                revolute("j1", Vec3::z(), Vec3::zeros()),
                revolute("j2", Vec3::z(), Vec3::x()),
                revolute("j3", Vec3::z(), Vec3::x()),
            ],
        )
        .unwrap()
    }

    pub fn cartesian_xyz() -> ChainModel {
        ChainModel::new(
            "xyz",
            RigidTransform::identity(),
            vec![prismatic("px", Vec3::x()), prismatic("py", Vec3::y()), prismatic("pz", Vec3::z())],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn tip(model: &ChainModel, q: &[f64]) -> Vec3 {
        model.point_position(&DVector::from_column_slice(q), "j2_link", &Vec3::x()).unwrap()
    }

    #[test]
    fn straight_chain_tip() {
        let m = planar_two_link();
        assert!((tip(&m, &[0.0, 0.0]) - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotated_chain_tip() {
        let m = planar_two_link();
        assert!((tip(&m, &[FRAC_PI_2, 0.0]) - Vec3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn elbow_bent_tip() {
        let m = planar_two_link();
        assert!((tip(&m, &[0.0, FRAC_PI_2]) - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fk_map_has_root_and_links() {
        let m = planar_two_link();
        let fk = forward_kinematics(&m, &JointState::from_slice(&[0.3, -0.2])).unwrap();
        assert_eq!(fk.len(), 3);
        assert!(fk.contains_key(ChainModel::ROOT_LINK));
        assert!(fk.values().all(|t| t.is_rigid(1e-9)));
    }

    #[test]
    fn fk_rejects_wrong_dimension() {
        let m = planar_two_link();
        let err = forward_kinematics(&m, &JointState::from_slice(&[0.0])).unwrap_err();
        assert_eq!(err, KinematicsError::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn jacobian_bent_elbow() {
        let m = planar_two_link();
        let j = point_jacobian(&m, &JointState::from_slice(&[0.0, FRAC_PI_2]), "j2_link", &Vec3::x())
            .unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!((j.matrix - expected).amax() < 1e-12);
    }

    #[test]
    fn jacobian_straight() {
        let m = planar_two_link();
        let j = point_jacobian(&m, &JointState::from_slice(&[0.0, 0.0]), "j2_link", &Vec3::x())
            .unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 1.0, 0.0, 0.0]);
        assert!((j.matrix - expected).amax() < 1e-12);
    }

    #[test]
    fn jacobian_on_first_link_has_zero_distal_column() {
        let m = planar_two_link();
        let j = point_jacobian(&m, &JointState::from_slice(&[0.4, 1.1]), "j1_link", &Vec3::x())
            .unwrap();
        assert_eq!(j.matrix.column(1).amax(), 0.0);
        assert!(j.matrix.column(0).amax() > 0.0);
    }

    #[test]
    fn jacobian_unknown_link() {
        let m = planar_two_link();
        let err = point_jacobian(&m, &JointState::from_slice(&[0.0, 0.0]), "nope", &Vec3::zeros())
            .unwrap_err();
        assert_eq!(err, KinematicsError::UnknownLink("nope".into()));
    }

    #[test]
    fn dls_zero_task_is_zero() {
        let m = planar_two_link();
        let task = IkTask { link: "j2_link".into(), local_point: Vec3::x(), desired_velocity: Vec3::zeros() };
        let qd = dls_ik_step(&m, &JointState::from_slice(&[0.2, 0.5]), &task, 0.05).unwrap();
        assert_eq!(qd.amax(), 0.0);
    }

    #[test]
    fn dls_identity_jacobian_undamped() {
        let m = cartesian_xyz();
        let task = IkTask {
            link: "pz_link".into(),
            local_point: Vec3::zeros(),
            desired_velocity: Vec3::new(0.1, 0.0, 0.0),
        };
        let qd = dls_ik_step(&m, &JointState::from_slice(&[0.0; 3]), &task, 0.0).unwrap();
        assert!((qd - DVector::from_column_slice(&[0.1, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn dls_scalar_closed_form() {
        let j = DMatrix::from_element(1, 1, 1e-6);
        let qd = dls_solve(&j, &DVector::from_element(1, 1.0), 0.1).unwrap();
        // 1e-6 / (1e-12 + 1e-2)
        let expected = 1e-6 / (1e-12 + 0.01);
        assert!((qd[0] - expected).abs() < 1e-18);
        assert!((qd[0] - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn dls_singular_without_damping_fails() {
        let m = planar_two_link();
        let task = IkTask { link: "j2_link".into(), local_point: Vec3::x(), desired_velocity: Vec3::x() };
        let err = dls_ik_step(&m, &JointState::from_slice(&[0.0, 0.0]), &task, 0.0).unwrap_err();
        assert_eq!(err, KinematicsError::Singular);
        assert!(dls_ik_step(&m, &JointState::from_slice(&[0.0, 0.0]), &task, 0.05).is_ok());
    }

    #[test]
    fn dls_negative_damping_rejected() {
        let j = DMatrix::identity(3, 3);
        assert_eq!(
            dls_solve(&j, &DVector::zeros(3), -0.1).unwrap_err(),
            KinematicsError::NegativeDamping(-0.1)
        );
    }

    #[test]
    fn velocity_limit_preserves_direction() {
        let mut m = cartesian_xyz();
        for j in &mut m.joints {
            j.vel_limit = 0.05;
        }
        let task = IkTask {
            link: "pz_link".into(),
            local_point: Vec3::zeros(),
            desired_velocity: Vec3::new(0.2, 0.1, 0.0),
        };
        let qd = dls_ik_step(&m, &JointState::from_slice(&[0.0; 3]), &task, 0.0).unwrap();
        assert!((qd[0] - 0.05).abs() < 1e-15);
        assert!((qd[1] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn invalid_models_rejected() {
        let mut j = revolute("a", Vec3::new(1.0, 1.0, 0.0), Vec3::zeros());
        assert!(ChainModel::new("bad", RigidTransform::identity(), vec![j.clone()]).is_err());
        j.axis = Vec3::z();
        j.limits = [1.0, -1.0];
        assert!(ChainModel::new("bad", RigidTransform::identity(), vec![j]).is_err());
        assert!(ChainModel::new("empty", RigidTransform::identity(), vec![]).is_err());
    }

    #[test]
    fn whole_body_chain_matches_composed_base() {
        let arm = ChainModel::new(
            "arm",
            RigidTransform::from_translation(Vec3::new(0.2, -0.25, 0.2)),
            vec![
                revolute("a1", Vec3::z(), Vec3::zeros()),
                revolute("a2", Vec3::y(), Vec3::new(0.0, 0.0, 0.1)),
                revolute("a3", Vec3::y(), Vec3::new(0.4, 0.0, 0.0)),
            ],
        )
        .unwrap();
        let wb = arm.with_mobile_base([0.5, 1.0]).unwrap();
        let arm_q = [0.3, -0.4, 0.9];
        let (x, y, yaw, z) = (1.5, -0.7, 0.6, 0.8);
        let mut q = vec![x, y, yaw, z];
        q.extend_from_slice(&arm_q);
        let local = Vec3::new(0.3, 0.0, 0.0);
        let whole = wb.point_position(&DVector::from_vec(q), "a3_link", &local).unwrap();
        let pelvis = RigidTransform::planar(x, y, z, yaw);
        let composed = pelvis.transform_point(
            &arm.point_position(&DVector::from_column_slice(&arm_q), "a3_link", &local).unwrap(),
        );
        assert!((whole - composed).norm() < 1e-12);
    }

    #[test]
    fn transform_serde_accepts_rpy() {
        let t: RigidTransform =
            serde_json::from_str(r#"{"xyz":[1,2,3],"rpy":[0,0,1.5707963267948966]}"#).unwrap();
        assert!((t.transform_vector(&Vec3::x()) - Vec3::y()).norm() < 1e-12);
        let back: RigidTransform = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
