use nalgebra::DVector;
use proptest::prelude::*;
use teleop_core::kinematics::{point_jacobian, ChainModel, Joint, JointKind, JointState, RigidTransform, Vec3};

fn unit(v: [f64; 3]) -> Vec3 {
    Vec3::from(v).try_normalize(1e-6).unwrap_or_else(Vec3::z)
}

prop_compose! {
    fn arb_joint(i: usize)(
        revolute in prop::bool::weighted(0.8),
        axis in prop::array::uniform3(-1.0f64..1.0),
        offset in prop::array::uniform3(-0.5f64..0.5),
        rpy in prop::array::uniform3(-3.0f64..3.0),
    ) -> Joint {
        Joint {
            name: format!("j{i}"),
            link: format!("l{i}"),
            kind: if revolute { JointKind::Revolute } else { JointKind::Prismatic },
            axis: unit(axis),
            origin: RigidTransform::from_rpy(Vec3::from(offset), rpy[0], rpy[1], rpy[2]),
            limits: [-10.0, 10.0],
            vel_limit: 1.0,
        }
    }
}

fn arb_chain() -> impl Strategy<Value = (ChainModel, DVector<f64>, Vec3)> {
    (1usize..=7)
        .prop_flat_map(|n| {
            let joints: Vec<_> = (0..n).map(arb_joint).collect();
            (joints, prop::collection::vec(-2.0f64..2.0, n), prop::array::uniform3(-0.3f64..0.3))
        })
        .prop_map(|(joints, q, p)| {
            let chain = ChainModel::new("random", RigidTransform::identity(), joints).unwrap();
            (chain, DVector::from_vec(q), Vec3::from(p))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn jacobian_matches_central_differences((chain, q, local) in arb_chain()) {
        let tip = chain.tip_link().to_string();
        let j = point_jacobian(&chain, &JointState::new(q.clone()), &tip, &local).unwrap().matrix;
        let h = 1e-6;
        let scale = j.amax().max(1.0);
        for k in 0..chain.dof() {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[k] += h;
            qm[k] -= h;
            let fd = (chain.point_position(&qp, &tip, &local).unwrap()
                - chain.point_position(&qm, &tip, &local).unwrap())
                / (2.0 * h);
            for r in 0..3 {
                prop_assert!((j[(r, k)] - fd[r]).abs() / scale <= 1e-6);
            }
        }
    }

    #[test]
    fn joints_after_the_link_do_not_move_it((chain, q, local) in arb_chain()) {
        let first = chain.joints[0].link.clone();
        let j = point_jacobian(&chain, &JointState::new(q), &first, &local).unwrap().matrix;
        for k in 1..chain.dof() {
            prop_assert!(j.column(k).norm() == 0.0);
        }
    }
}
