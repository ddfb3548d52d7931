//! Manipulability-aware sharing of an end-effector command between the arm
//! and the mobile base.
//!
//! The per-axis virtual transmission ratio `β_i = ([(JJᵀ)⁻¹]_ii)^-1/2` is the
//! extent of the manipulability ellipsoid along world axis `i`. It is mapped
//! to a weight `w_i ∈ [0, 1]` through a smoothstep between `d - Δ` and
//! `d + Δ`; the arm receives `W` of the command and the base `I - W`.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{PointJacobian, Vec3};

/// Ellipsoid directions shorter than this are treated as singular.
pub const SINGULAR_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VtrError {
    #[error("invalid thresholds on axis {axis}: {reason}")]
    InvalidThresholds { axis: usize, reason: &'static str },
    #[error("jacobian has {rows} rows, expected 3")]
    NotLinear { rows: usize },
    #[error("force Jacobian has {cols} columns but the torque space has {expected}")]
    DimensionMismatch { cols: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtrThresholds {
    pub d: [f64; 3],
    pub delta: [f64; 3],
    /// A disabled axis always gives the arm full authority.
    #[serde(default)]
    pub disabled: [bool; 3],
}

impl Default for VtrThresholds {
    fn default() -> Self {
        Self { d: [0.25; 3], delta: [0.1; 3], disabled: [false; 3] }
    }
}

impl VtrThresholds {
    pub fn new(d: [f64; 3], delta: [f64; 3]) -> Result<Self, VtrError> {
        let th = Self { d, delta, disabled: [false; 3] };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<(), VtrError> {
        for axis in 0..3 {
            if self.disabled[axis] {
                continue;
            }
            if !(self.delta[axis] > 0.0) {
                return Err(VtrError::InvalidThresholds { axis, reason: "delta must be positive" });
            }
            if !(self.d[axis] - self.delta[axis] >= 0.0) {
                return Err(VtrError::InvalidThresholds { axis, reason: "d - delta must be non-negative" });
            }
        }
        Ok(())
    }

    pub fn with_disabled(mut self, axis: usize) -> Self {
        self.disabled[axis] = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtrWeights {
    pub beta: Vec3,
    pub w: Vec3,
}

impl VtrWeights {
    pub fn full_arm() -> Self {
        Self { beta: Vec3::zeros(), w: Vec3::repeat(1.0) }
    }

    pub fn from_weights(w: Vec3) -> Self {
        Self { beta: Vec3::zeros(), w }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.w)
    }

    pub fn complement(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.w.map(|w| 1.0 - w))
    }

    /// Per-axis minimum, i.e. the weights of whichever arm is worse off.
    pub fn worst(&self, other: &VtrWeights) -> VtrWeights {
        VtrWeights { beta: self.beta.inf(&other.beta), w: self.w.inf(&other.w) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseGain(pub [f64; 3]);

impl BaseGain {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vec3::from(self.0))
    }
}

/// Transmission ratio along x, y and z; zero along singular directions.
pub fn vtr(jacobian: &PointJacobian) -> Result<Vec3, VtrError> {
    vtr_of_matrix(&jacobian.matrix)
}

pub fn vtr_of_matrix(j: &DMatrix<f64>) -> Result<Vec3, VtrError> {
    if j.nrows() != 3 {
        return Err(VtrError::NotLinear { rows: j.nrows() });
    }
    let jjt = j * j.transpose();
    let jjt = Matrix3::from_fn(|r, c| jjt[(r, c)]);
    let eig = SymmetricEigen::new(jjt);
    let max = eig.eigenvalues.amax();
    let mut beta = Vec3::zeros();
    for i in 0..3 {
        let mut diag = 0.0;
        for k in 0..3 {
            let v2 = eig.eigenvectors[(i, k)].powi(2);
            if v2 < 1e-24 {
                continue;
            }
            let lambda = eig.eigenvalues[k];
            if max == 0.0 || lambda <= 1e-14 * max {
                diag = f64::INFINITY;
                break;
            }
            diag += v2 / lambda;
        }
        beta[i] = if diag > 1.0 / (SINGULAR_EPSILON * SINGULAR_EPSILON) || diag == 0.0 {
            0.0
        } else {
            diag.powf(-0.5)
        };
    }
    Ok(beta)
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn axis_weight(beta: f64, d: f64, delta: f64) -> f64 {
    let lower = d - delta;
    let upper = d + delta;
    if beta >= upper {
        1.0
    } else if beta <= lower {
        0.0
    } else {
        smoothstep((beta - lower) / (2.0 * delta))
    }
}

pub fn vtr_weight(beta: &Vec3, th: &VtrThresholds) -> VtrWeights {
    let w = Vec3::from_fn(|i, _| {
        if th.disabled[i] {
            1.0
        } else {
            axis_weight(beta[i], th.d[i], th.delta[i])
        }
    });
    VtrWeights { beta: *beta, w }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianSplit {
    /// Share executed by the arm.
    pub x_star: Vec3,
    /// Share executed by the base.
    pub nu: Vec3,
}

pub fn split_cartesian(x_dot: &Vec3, weights: &VtrWeights) -> CartesianSplit {
    let x_star = x_dot.component_mul(&weights.w);
    // computed as the remainder so that x_star + nu reproduces x_dot
    let nu = x_dot - x_star;
    CartesianSplit { x_star, nu }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosturalSplit {
    pub tau: DVector<f64>,
    pub nu: Vec3,
}

pub fn split_postural(
    force: &Vec3,
    jacobian: &PointJacobian,
    weights: &VtrWeights,
    base_gain: &BaseGain,
) -> Result<PosturalSplit, VtrError> {
    if jacobian.matrix.nrows() != 3 {
        return Err(VtrError::NotLinear { rows: jacobian.matrix.nrows() });
    }
    let arm_force = weights.matrix() * force;
    let tau = jacobian.matrix.transpose() * DVector::from_column_slice(arm_force.as_slice());
    let nu = base_gain.matrix() * (weights.complement() * force);
    Ok(PosturalSplit { tau, nu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pj(m: DMatrix<f64>) -> PointJacobian {
        PointJacobian { matrix: m, link: "tip".into(), local_point: Vec3::zeros() }
    }

    #[test]
    fn isotropic_ellipsoid() {
        let b = vtr(&pj(DMatrix::identity(3, 3))).unwrap();
        assert!((b - Vec3::repeat(1.0)).norm() < 1e-12);
    }

    #[test]
    fn planar_two_link_ratio() {
        let j = DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
        let b = vtr(&pj(j)).unwrap();
        assert!((b.x - 1.0).abs() < 1e-12);
        assert!((b.y - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(b.z, 0.0);
    }

    #[test]
    fn ratio_is_homogeneous() {
        let j = DMatrix::from_row_slice(3, 4, &[0.3, -0.2, 0.5, 0.1, 0.7, 0.4, -0.3, 0.2, 0.1, 0.6, 0.2, -0.5]);
        let b1 = vtr(&pj(j.clone())).unwrap();
        let b2 = vtr(&pj(j * 2.0)).unwrap();
        assert!((b2 - b1 * 2.0).norm() < 1e-12);
    }

    #[test]
    fn zero_jacobian_is_fully_singular() {
        assert_eq!(vtr(&pj(DMatrix::zeros(3, 4))).unwrap(), Vec3::zeros());
    }

    #[test]
    fn non_linear_jacobian_rejected() {
        assert_eq!(vtr(&pj(DMatrix::zeros(6, 4))).unwrap_err(), VtrError::NotLinear { rows: 6 });
    }

    #[test]
    fn weight_endpoints_and_midpoint() {
        let th = VtrThresholds::new([0.25; 3], [0.1; 3]).unwrap();
        let w = vtr_weight(&Vec3::new(0.35, 0.15, 0.25), &th).w;
        assert_eq!(w.x, 1.0);
        assert_eq!(w.y, 0.0);
        assert!((w.z - 0.5).abs() < 1e-15);
    }

    #[test]
    fn disabled_axis_has_full_arm_weight() {
        let th = VtrThresholds::default().with_disabled(1);
        let w = vtr_weight(&Vec3::zeros(), &th).w;
        assert_eq!(w, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn thresholds_validated() {
        assert!(VtrThresholds::new([0.25; 3], [0.0, 0.1, 0.1]).is_err());
        assert!(VtrThresholds::new([0.05, 0.25, 0.25], [0.1; 3]).is_err());
    }

    #[test]
    fn cartesian_split_examples() {
        let x = Vec3::new(0.2, -0.1, 0.3);
        let full = split_cartesian(&x, &VtrWeights::from_weights(Vec3::repeat(1.0)));
        assert_eq!((full.x_star, full.nu), (x, Vec3::zeros()));
        let none = split_cartesian(&x, &VtrWeights::from_weights(Vec3::zeros()));
        assert_eq!((none.x_star, none.nu), (Vec3::zeros(), x));
        let mixed = split_cartesian(&Vec3::repeat(0.2), &VtrWeights::from_weights(Vec3::new(0.5, 1.0, 0.0)));
        assert!((mixed.x_star - Vec3::new(0.1, 0.2, 0.0)).norm() < 1e-15);
        assert!((mixed.nu - Vec3::new(0.1, 0.0, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn postural_split_examples() {
        let j = pj(DMatrix::identity(3, 3));
        let f = Vec3::new(2.0, 0.0, 0.0);
        let k = BaseGain([1.0; 3]);
        let full = split_postural(&f, &j, &VtrWeights::from_weights(Vec3::repeat(1.0)), &k).unwrap();
        assert_eq!(full.tau, DVector::from_column_slice(&[2.0, 0.0, 0.0]));
        assert_eq!(full.nu, Vec3::zeros());
        let base = split_postural(&f, &j, &VtrWeights::from_weights(Vec3::zeros()), &k).unwrap();
        assert_eq!(base.tau, DVector::zeros(3));
        assert_eq!(base.nu, f);
        let half = split_postural(&f, &j, &VtrWeights::from_weights(Vec3::repeat(0.5)), &k).unwrap();
        assert_eq!(half.tau, DVector::from_column_slice(&[1.0, 0.0, 0.0]));
        assert_eq!(half.nu, Vec3::new(1.0, 0.0, 0.0));
    }

    fn orthonormal(n: usize, seed: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()] + (i as f64) * 0.37 - (j as f64) * 0.11);
        m.qr().q()
    }

    proptest! {
        #[test]
        fn weight_is_monotone(b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, d in 0.1f64..0.5, delta in 0.01f64..0.1) {
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(axis_weight(lo, d, delta) <= axis_weight(hi, d, delta));
            let w = axis_weight(b1, d, delta);
            prop_assert!((0.0..=1.0).contains(&w));
        }

        #[test]
        fn split_conserves_command(x in proptest::array::uniform3(-1.0f64..1.0), w in proptest::array::uniform3(0.0f64..1.0)) {
            let x = Vec3::from(x);
            let s = split_cartesian(&x, &VtrWeights::from_weights(Vec3::from(w)));
            prop_assert!((s.x_star + s.nu - x).amax() <= 1e-12);
        }

        #[test]
        fn ratio_invariant_under_joint_space_rotation(vals in proptest::collection::vec(-1.0f64..1.0, 12),
                                                      seed in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let j = DMatrix::from_row_slice(3, 4, &vals);
            let q = orthonormal(4, &seed);
            let b1 = vtr_of_matrix(&j).unwrap();
            let b2 = vtr_of_matrix(&(&j * q)).unwrap();
            prop_assert!((b1 - b2).amax() < 1e-8 * (1.0 + b1.amax()));
        }

        #[test]
        fn axis_thresholds_are_independent(beta in proptest::array::uniform3(0.0f64..1.0), dy in 0.1f64..0.6, ddy in 0.01f64..0.1) {
            let base = VtrThresholds::default();
            let mut changed = base;
            changed.d[1] = dy;
            changed.delta[1] = ddy;
            let b = Vec3::from(beta);
            let w1 = vtr_weight(&b, &base).w;
            let w2 = vtr_weight(&b, &changed).w;
            prop_assert_eq!(w1.x, w2.x);
            prop_assert_eq!(w1.z, w2.z);
        }

        #[test]
        fn null_axis_has_zero_ratio(vals in proptest::collection::vec(0.1f64..1.0, 8), axis in 0usize..3) {
            let mut j = DMatrix::from_row_slice(3, 4, &[
                vals[0], -vals[1], vals[2], 0.2,
                vals[3], vals[4], -vals[5], 0.3,
                vals[6], 0.4, vals[7], -0.5,
            ]);
            j.row_mut(axis).fill(0.0);
            let b = vtr_of_matrix(&j).unwrap();
            prop_assert_eq!(b[axis], 0.0);
            for other in (0..3).filter(|a| *a != axis) {
                prop_assert!(b[other] > 0.0);
            }
        }
    }
}
