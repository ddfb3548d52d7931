//! Acceptance suite: one check per release criterion, each returning a
//! pass/fail line with the measured numbers.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::bimanual::grasp_force;
use teleop_core::bt::{ActionCall, BehaviorTree, Blackboard, BtEnv, BtError, BtNode, Params, TickStatus};
use teleop_core::kinematics::{point_jacobian, ChainModel, Joint, JointKind, JointState, RigidTransform, Vec3};
use teleop_core::tpo::{admittance_step, AdmittanceParams, AdmittanceState};
use teleop_core::vtr::{axis_weight, split_cartesian, VtrWeights};

use crate::log::LogWriter;
use crate::mission::{Mission, Report};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn result(name: &'static str, passed: bool, detail: String) -> CriterionResult {
    CriterionResult { name, passed, detail }
}

fn error(name: &'static str, e: impl fmt::Display) -> CriterionResult {
    result(name, false, format!("error: {e}"))
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn run_all(dir: &Path) -> Vec<CriterionResult> {
    vec![
        grasp_force_values(),
        mass_estimation(dir),
        jacobian_random_chains(),
        vtr_split_conservation(),
        bt_semantics(),
        tracking_mission(dir),
        shared_locomanipulation(dir),
        cooperative_transport(dir),
        admittance_step_response(),
        determinism(dir),
    ]
}

/// Output of one headless fixture run.
pub struct FixtureRun {
    pub report: Report,
    pub csv: Vec<u8>,
    pub jsonl: Vec<u8>,
    pub wall: Duration,
}

/// Runs `<scenario>.json` with an optional `<tree>.bt` and `<trace>.jsonl`
/// from `dir`, keeping the logs in memory.
pub fn run_fixture(
    dir: &Path,
    scenario: &str,
    tree: Option<&str>,
    trace: Option<&str>,
    seed: Option<u64>,
) -> anyhow::Result<FixtureRun> {
    let tree = tree.map(|t| dir.join(format!("{t}.bt")));
    let trace = trace.map(|t| dir.join(format!("{t}.jsonl")));
    let mut mission = Mission::load(&dir.join(format!("{scenario}.json")), tree.as_deref(), trace.as_deref(), seed)?;
    let mut log = LogWriter::new(Vec::new(), Vec::new());
    let start = Instant::now();
    let report = mission.run(Some(&mut log))?;
    let wall = start.elapsed();
    let (csv, jsonl) = log.finish()?;
    Ok(FixtureRun { report, csv, jsonl, wall })
}

fn extra(r: &Report, key: &str) -> f64 {
    r.metrics.extras.get(key).copied().unwrap_or(f64::NAN)
}

pub fn grasp_force_values() -> CriterionResult {
    const NAME: &str = "grasp force";
    let cases = [(2.111, 24.16), (2.671, 30.57)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (m, expected) in cases {
        match grasp_force(m, 0.6, 1.4, 9.81) {
            Ok(f) => {
                ok &= (f - expected).abs() <= 0.005;
                detail.push(format!("m={m} -> {f:.4} N (want {expected} +/- 0.005)"));
            }
            Err(e) => return error(NAME, e),
        }
    }
    result(NAME, ok, detail.join(", "))
}

/// Fifteen grasps of the transport block with different sensing-noise seeds.
pub fn mass_estimation(dir: &Path) -> CriterionResult {
    const NAME: &str = "mass estimation";
    const TRUE_MASS: f64 = 1.958;
    let mut estimates = Vec::new();
    for trial in 0..15u64 {
        let mut mission = match Mission::load(&dir.join("transport.json"), None, None, Some(1000 + trial)) {
            Ok(m) => m,
            Err(e) => return error(NAME, e),
        };
        let mut estimate = None;
        while mission.finished().is_none() {
            if let Err(e) = mission.step() {
                return error(NAME, e);
            }
            if let Some(est) = mission.pipeline().and_then(|p| p.estimate) {
                estimate = Some(est);
                break;
            }
        }
        match estimate {
            Some(est) if est.samples_used == 100 => estimates.push(est.mass),
            Some(est) => return error(NAME, format!("trial {trial} used {} samples", est.samples_used)),
            None => return error(NAME, format!("trial {trial} produced no estimate")),
        }
    }
    let n = estimates.len() as f64;
    let mae = estimates.iter().map(|m| (m - TRUE_MASS).abs()).sum::<f64>() / n;
    let mean = estimates.iter().sum::<f64>() / n;
    let std = (estimates.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    result(
        NAME,
        mae <= 0.1 && std <= 0.06,
        format!("15 trials x 100 samples: mean {mean:.4} kg, MAE {mae:.4} kg (<= 0.1), std {std:.4} kg (<= 0.06)"),
    )
}

fn random_chain(rng: &mut ChaCha8Rng) -> ChainModel {
    let n = rng.gen_range(1..=7);
    let joints = (0..n)
        .map(|i| {
            let mut v = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let axis = v().try_normalize(1e-6).unwrap_or_else(Vec3::z);
            let offset = v() * 0.5;
            let rpy = v() * 3.0;
            Joint {
                name: format!("j{i}"),
                link: format!("l{i}"),
                kind: if rng.gen_bool(0.8) { JointKind::Revolute } else { JointKind::Prismatic },
                axis,
                origin: RigidTransform::from_rpy(offset, rpy.x, rpy.y, rpy.z),
                limits: [-10.0, 10.0],
                vel_limit: 1.0,
            }
        })
        .collect();
    ChainModel::new("random", RigidTransform::identity(), joints).expect("valid random chain")
}

pub fn jacobian_random_chains() -> CriterionResult {
    const NAME: &str = "jacobian vs finite differences";
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let chain = random_chain(&mut rng);
        let q = DVector::from_fn(chain.dof(), |_, _| rng.gen_range(-2.0..2.0));
        let local = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let tip = chain.tip_link().to_string();
        let j = match point_jacobian(&chain, &JointState::new(q.clone()), &tip, &local) {
            Ok(j) => j.matrix,
            Err(e) => return error(NAME, e),
        };
        let scale = j.amax().max(1.0);
        let h = 1e-6;
        for k in 0..chain.dof() {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[k] += h;
            qm[k] -= h;
            let (Ok(pp), Ok(pm)) = (chain.point_position(&qp, &tip, &local), chain.point_position(&qm, &tip, &local))
            else {
                return error(NAME, "forward kinematics failed");
            };
            let fd = (pp - pm) / (2.0 * h);
            for r in 0..3 {
                worst = worst.max((j[(r, k)] - fd[r]).abs() / scale);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    result(
        NAME,
        worst <= 1e-6 && secs < 10.0,
        format!("1000 chains, max relative error {worst:.2e} (<= 1e-6), {secs:.2} s (< 10 s)"),
    )
}

pub fn vtr_split_conservation() -> CriterionResult {
    const NAME: &str = "VTR split conservation";
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let x = Vec3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let w = Vec3::from_fn(|_, _| rng.gen_range(0.0..=1.0));
        let s = split_cartesian(&x, &VtrWeights::from_weights(w));
        worst = worst.max(((s.x_star + s.nu) - x).amax());
    }
    let mut endpoints = true;
    for (d, delta) in [(0.25, 0.1), (0.3, 0.05), (0.5, 0.2), (0.1, 0.01)] {
        endpoints &= axis_weight(d - delta, d, delta) == 0.0 && axis_weight(d + delta, d, delta) == 1.0;
    }
    result(
        NAME,
        worst <= 1e-12 && endpoints,
        format!("1e5 samples, max |x* + nu - x| {worst:.1e} (<= 1e-12), endpoints exact: {endpoints}"),
    )
}

/// Leaves named `sN` report a scripted status; aborts are recorded.
struct Scripted {
    statuses: Vec<TickStatus>,
    aborted: Vec<usize>,
    ticked: Vec<usize>,
}

impl Scripted {
    fn new(statuses: &[TickStatus]) -> Self {
        Self { statuses: statuses.to_vec(), aborted: Vec::new(), ticked: Vec::new() }
    }

    fn index(call: &ActionCall<'_>) -> usize {
        call.module[1..].parse().expect("leaf ids are sN")
    }
}

impl BtEnv for Scripted {
    fn condition(&mut self, id: &str, _: &Params, _: &mut Blackboard) -> Result<bool, BtError> {
        Err(BtError::UnknownCondition(id.into()))
    }
    fn start_action(&mut self, call: ActionCall<'_>, _: &mut Blackboard) -> Result<TickStatus, BtError> {
        let i = Self::index(&call);
        self.ticked.push(i);
        Ok(self.statuses[i])
    }
    fn poll_action(&mut self, call: ActionCall<'_>, bb: &mut Blackboard) -> Result<TickStatus, BtError> {
        self.start_action(call, bb)
    }
    fn abort_action(&mut self, call: ActionCall<'_>, _: &mut Blackboard) {
        self.aborted.push(Self::index(&call));
    }
}

fn leaves(n: usize) -> Vec<BtNode> {
    (0..n).map(|i| BtNode::action(&format!("s{i}"))).collect()
}

fn tick(tree: BtNode, env: &mut Scripted) -> Result<TickStatus, BtError> {
    let mut bt = BehaviorTree::new(tree).expect("well-formed tree");
    bt.tick(&mut Blackboard::new(), env)
}

fn and_status(s: &[TickStatus]) -> TickStatus {
    if s.iter().all(|x| *x == TickStatus::Success) {
        TickStatus::Success
    } else if s.contains(&TickStatus::Failure) {
        TickStatus::Failure
    } else {
        TickStatus::Running
    }
}

fn or_status(s: &[TickStatus]) -> TickStatus {
    if s.contains(&TickStatus::Success) {
        TickStatus::Success
    } else if s.iter().all(|x| *x == TickStatus::Failure) {
        TickStatus::Failure
    } else {
        TickStatus::Running
    }
}

fn assignments(n: usize) -> Vec<Vec<TickStatus>> {
    let opts = [TickStatus::Success, TickStatus::Failure, TickStatus::Running];
    (0..3usize.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let s = opts[code % 3];
                    code /= 3;
                    s
                })
                .collect()
        })
        .collect()
}

fn bt_table() -> Result<Vec<String>, BtError> {
    use TickStatus::{Failure as F, Running as R, Success as S};
    let mut failures = Vec::new();
    let mut expect = |label: &str, got: TickStatus, want: TickStatus| {
        if got != want {
            failures.push(format!("{label}: got {got:?}, want {want:?}"));
        }
    };

    // sequence: succeeds if all succeed, stops at the first failure or running child
    let mut env = Scripted::new(&[S, S, S]);
    expect("sequence all success", tick(BtNode::sequence(leaves(3)), &mut env)?, S);
    let mut env = Scripted::new(&[S, F, S]);
    expect("sequence failure", tick(BtNode::sequence(leaves(3)), &mut env)?, F);
    expect("sequence stops at failure", if env.ticked == [0, 1] { S } else { F }, S);
    let mut env = Scripted::new(&[S, R, S]);
    expect("sequence running", tick(BtNode::sequence(leaves(3)), &mut env)?, R);

    // fallback: fails if all fail, stops at the first success or running child
    let mut env = Scripted::new(&[F, F, F]);
    expect("fallback all failure", tick(BtNode::fallback(leaves(3)), &mut env)?, F);
    let mut env = Scripted::new(&[F, S, F]);
    expect("fallback success", tick(BtNode::fallback(leaves(3)), &mut env)?, S);
    expect("fallback stops at success", if env.ticked == [0, 1] { S } else { F }, S);
    let mut env = Scripted::new(&[F, R, F]);
    expect("fallback running", tick(BtNode::fallback(leaves(3)), &mut env)?, R);

    // parallel with threshold M over N children
    let mut env = Scripted::new(&[S, S, R]);
    expect("parallel M reached", tick(BtNode::parallel(2, leaves(3)), &mut env)?, S);
    let mut env = Scripted::new(&[F, F, R]);
    expect("parallel M unreachable", tick(BtNode::parallel(2, leaves(3)), &mut env)?, F);
    let mut env = Scripted::new(&[S, R, R]);
    expect("parallel pending", tick(BtNode::parallel(2, leaves(3)), &mut env)?, R);

    // reactive sequence: earlier children re-ticked, a later failure halts the running child
    let mut bt = BehaviorTree::new(BtNode::reactive_sequence(leaves(2))).expect("well-formed tree");
    let mut bb = Blackboard::new();
    let mut env = Scripted::new(&[S, R]);
    expect("reactive sequence running", bt.tick(&mut bb, &mut env)?, R);
    env.statuses = vec![S, S];
    expect("reactive sequence success", bt.tick(&mut bb, &mut env)?, S);
    env.statuses = vec![S, R];
    bt.tick(&mut bb, &mut env)?;
    env.statuses[0] = F;
    env.ticked.clear();
    expect("reactive sequence failure", bt.tick(&mut bb, &mut env)?, F);
    expect("reactive sequence halts running child", if env.aborted == [1] && env.ticked == [0] { S } else { F }, S);
    Ok(failures)
}

pub fn bt_semantics() -> CriterionResult {
    const NAME: &str = "behavior tree semantics";
    let mut failures = match bt_table() {
        Ok(f) => f,
        Err(e) => return error(NAME, e),
    };
    let mut checked = 0;
    for n in 1..=4 {
        for statuses in assignments(n) {
            let run = |tree: BtNode| tick(tree, &mut Scripted::new(&statuses));
            match (run(BtNode::parallel(n, leaves(n))), run(BtNode::parallel(1, leaves(n)))) {
                (Ok(all), Ok(any)) => {
                    if all != and_status(&statuses) || any != or_status(&statuses) {
                        failures.push(format!("parallel mismatch on {statuses:?}"));
                    }
                }
                (Err(e), _) | (_, Err(e)) => return error(NAME, e),
            }
            checked += 1;
        }
    }
    let detail = if failures.is_empty() {
        format!("table rows hold, {checked} status assignments match for N <= 4")
    } else {
        failures.join("; ")
    };
    result(NAME, failures.is_empty(), detail)
}

pub fn tracking_mission(dir: &Path) -> CriterionResult {
    const NAME: &str = "tracking mission";
    let run = match run_fixture(dir, "tracking", Some("tracking"), Some("tracking"), None) {
        Ok(r) => r,
        Err(e) => return error(NAME, e),
    };
    let r = &run.report;
    let base_err = r.metrics.goal_errors.get("base_planar_tracking").copied().unwrap_or(f64::INFINITY);
    let overlap = extra(r, "base_overlap_steps");
    let alternations = extra(r, "base_alternations");
    let arm_steps = extra(r, "arm_active_steps");
    let outside = extra(r, "arm_outside_box_steps");
    let wall = run.wall.as_secs_f64();
    let passed = r.completed
        && base_err <= 0.05
        && overlap == 0.0
        && alternations >= 2.0
        && arm_steps > 0.0
        && outside == 0.0
        && r.sim_time <= 60.0
        && wall <= 5.0;
    result(
        NAME,
        passed,
        format!(
            "completed {}, base error {base_err:.4} m (<= 0.05), yaw/planar switches {alternations}, overlap steps {overlap}, \
             arm steps {arm_steps} with {outside} outside the reach box, sim {:.2} s (<= 60), wall {wall:.2} s (<= 5)",
            r.completed, r.sim_time
        ),
    )
}

pub fn shared_locomanipulation(dir: &Path) -> CriterionResult {
    const NAME: &str = "shared locomanipulation";
    let runs = [
        run_fixture(dir, "vtr_on", None, None, None),
        run_fixture(dir, "vtr_off", None, None, None),
        run_fixture(dir, "vtr_off", None, Some("vtr_switch"), None),
    ];
    let mut reports = Vec::new();
    for r in runs {
        match r {
            Ok(r) if !r.jsonl.is_empty() => reports.push(r.report),
            Ok(_) => return error(NAME, "empty log"),
            Err(e) => return error(NAME, e),
        }
    }
    let [on, off, switched] = [&reports[0], &reports[1], &reports[2]];
    let m = |r: &Report| (r.metrics.goals_reached, r.metrics.goals_total, r.metrics.switch_count);
    let passed = on.completed
        && on.metrics.goals_reached == 3
        && on.metrics.switch_count == 0
        && off.metrics.goals_reached < 3
        && off.metrics.switch_count == 0
        && switched.completed
        && switched.metrics.goals_reached == 3
        && switched.metrics.switch_count >= 2;
    let (a, b, c) = (m(on), m(off), m(switched));
    result(
        NAME,
        passed,
        format!(
            "sharing on: {}/{} goals, {} switches; off: {}/{} goals, {} switches; off with trace: {}/{} goals, {} switches",
            a.0, a.1, a.2, b.0, b.1, b.2, c.0, c.1, c.2
        ),
    )
}

pub fn cooperative_transport(dir: &Path) -> CriterionResult {
    const NAME: &str = "cooperative transport";
    let run = match run_fixture(dir, "transport", None, Some("transport"), None) {
        Ok(r) => r,
        Err(e) => return error(NAME, e),
    };
    let r = &run.report;
    let time = extra(r, "transport_time");
    let drift = extra(r, "max_contact_drift");
    let dev = extra(r, "max_force_deviation");
    let disp = extra(r, "object_displacement");
    let yaw = extra(r, "object_yaw_change");
    let f_bar = extra(r, "f_bar");
    let passed = r.completed
        && r.metrics.slip_count == 0
        && time >= 30.0 - 1e-9
        && drift <= 1e-3
        && dev <= 3.0
        && (disp - 0.5).abs() <= 0.05
        && (yaw - 0.2).abs() <= 0.02;
    result(
        NAME,
        passed,
        format!(
            "f_bar {f_bar:.2} N, slips {}, {time:.1} s held (>= 30), drift {:.3} mm (<= 1), \
             force deviation {dev:.2} N (<= 3), moved {disp:.3} m / {yaw:.3} rad (want 0.5 / 0.2)",
            r.metrics.slip_count,
            drift * 1e3
        ),
    )
}

/// Constant torque into a mass-damper joint: q̇ = τ/D (1 − e^{−t/T}) with T = M/D.
pub fn admittance_step_response() -> CriterionResult {
    const NAME: &str = "admittance step response";
    let joint = Joint {
        name: "j".into(),
        link: "l".into(),
        kind: JointKind::Revolute,
        axis: Vec3::z(),
        origin: RigidTransform::identity(),
        limits: [-100.0, 100.0],
        vel_limit: 10.0,
    };
    let model = match ChainModel::new("one", RigidTransform::identity(), vec![joint]) {
        Ok(m) => m,
        Err(e) => return error(NAME, e),
    };
    let (m, d, tau, dt) = (1.0, 2.0, 0.6, 0.01);
    let params = match AdmittanceParams::uniform(1, m, 0.0, d, DVector::zeros(1), dt) {
        Ok(p) => p,
        Err(e) => return error(NAME, e),
    };
    let mut st = AdmittanceState::at_rest(DVector::zeros(1));
    let t_c = m / d;
    let steps = (5.0 * t_c / dt).round() as usize;
    for _ in 0..steps {
        let js = JointState::new(st.q_ref.clone());
        st = match admittance_step(&model, &js, &DVector::from_element(1, tau), &params, &st) {
            Ok(s) => s,
            Err(e) => return error(NAME, e),
        };
    }
    let t = steps as f64 * dt;
    let v = tau / d * (1.0 - (-t / t_c).exp());
    let q = tau / d * (t - t_c * (1.0 - (-t / t_c).exp()));
    let ev = (st.q_dot_ref[0] - v).abs() / v.abs();
    let eq = (st.q_ref[0] - q).abs() / q.abs();
    result(
        NAME,
        ev <= 0.01 && eq <= 0.01,
        format!("after 5 time constants: velocity error {:.3}%, position error {:.3}% (<= 1%)", ev * 100.0, eq * 100.0),
    )
}

pub fn determinism(dir: &Path) -> CriterionResult {
    const NAME: &str = "determinism";
    let cases: [(&str, Option<&str>, Option<&str>); 4] = [
        ("tracking", Some("tracking"), Some("tracking")),
        ("vtr_on", None, None),
        ("vtr_off", None, Some("vtr_switch")),
        ("transport", None, Some("transport")),
    ];
    let mut detail = Vec::new();
    let mut passed = true;
    for (scenario, tree, trace) in cases {
        let pair = (run_fixture(dir, scenario, tree, trace, None), run_fixture(dir, scenario, tree, trace, None));
        match pair {
            (Ok(a), Ok(b)) => {
                let same = a.csv == b.csv && a.jsonl == b.jsonl;
                passed &= same;
                detail.push(format!("{scenario}: {} bytes {}", a.csv.len() + a.jsonl.len(), if same { "identical" } else { "DIFFER" }));
            }
            (Err(e), _) | (_, Err(e)) => return error(NAME, e),
        }
    }
    result(NAME, passed, detail.join(", "))
}
