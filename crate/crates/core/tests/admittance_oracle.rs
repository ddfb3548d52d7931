use nalgebra::DVector;
use teleop_core::kinematics::{ChainModel, Joint, JointKind, JointState, RigidTransform, Vec3};
use teleop_core::tpo::{admittance_step, AdmittanceParams, AdmittanceState};

fn single_joint() -> ChainModel {
    let joint = Joint {
        name: "j".into(),
        link: "l".into(),
        kind: JointKind::Revolute,
        axis: Vec3::z(),
        origin: RigidTransform::identity(),
        limits: [-100.0, 100.0],
        vel_limit: 10.0,
    };
    ChainModel::new("one", RigidTransform::identity(), vec![joint]).unwrap()
}

/// Constant torque into a pure mass-damper: q̇ = τ/D (1 − e^{−t/T}), T = M/D.
#[test]
fn constant_torque_step_matches_first_order_solution() {
    let (m, d, tau, dt) = (1.0, 2.0, 0.6, 0.01);
    let model = single_joint();
    let params = AdmittanceParams::uniform(1, m, 0.0, d, DVector::zeros(1), dt).unwrap();
    let mut st = AdmittanceState::at_rest(DVector::zeros(1));
    let t_c = m / d;
    let steps = (5.0 * t_c / dt).round() as usize;
    for _ in 0..steps {
        let js = JointState::new(st.q_ref.clone());
        st = admittance_step(&model, &js, &DVector::from_element(1, tau), &params, &st).unwrap();
    }
    let t = steps as f64 * dt;
    let v = tau / d * (1.0 - (-t / t_c).exp());
    let q = tau / d * (t - t_c * (1.0 - (-t / t_c).exp()));
    assert!((st.q_dot_ref[0] - v).abs() <= 0.01 * v.abs());
    assert!((st.q_ref[0] - q).abs() <= 0.01 * q.abs());
}

#[test]
fn spring_settles_at_equilibrium_plus_torque_over_stiffness() {
    let model = single_joint();
    let params = AdmittanceParams::uniform(1, 1.0, 4.0, 6.0, DVector::from_element(1, 0.2), 0.01).unwrap();
    let mut st = AdmittanceState::at_rest(DVector::zeros(1));
    for _ in 0..3000 {
        let js = JointState::new(st.q_ref.clone());
        st = admittance_step(&model, &js, &DVector::from_element(1, 0.8), &params, &st).unwrap();
    }
    assert!((st.q_ref[0] - (0.2 + 0.8 / 4.0)).abs() < 1e-6);
}
