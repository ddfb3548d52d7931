//! Simulated laser-pointer perception: ray casting against the scene, spot
//! smoothing, dwell-based selection and the printed keyboard.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::LowPass;
use crate::kinematics::{RigidTransform, Vec3};

pub const DEFAULT_DWELL_RADIUS: f64 = 0.04;
pub const DEFAULT_DWELL_TIME: f64 = 3.0;
pub const KEYBOARD_DWELL_TIME: f64 = 1.0;
pub const KEYBOARD_LINEAR_SPEED: f64 = 0.025;
pub const KEYBOARD_ANGULAR_SPEED: f64 = 0.25;
pub const BUTTON_SIZE: [f64; 2] = [0.105, 0.099];
pub const DEFAULT_SPOT_NOISE: f64 = 0.003;
pub const DEFAULT_STALE_GAP: f64 = 0.033;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("surface `{0}`: {1}")]
    BadSurface(String, String),
    #[error("box `{0}` has non-positive extents")]
    BadBox(String),
    #[error("keyboard layout: {0}")]
    BadKeyboard(String),
}

/// Bounded planar rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub label: String,
    pub center: Vec3,
    pub normal: Vec3,
    pub u_axis: Vec3,
    /// Half sizes along `u_axis` and `normal × u_axis`.
    pub half_extents: [f64; 2],
}

impl Surface {
    pub fn new(label: &str, center: Vec3, normal: Vec3, u_axis: Vec3, half_extents: [f64; 2]) -> Result<Self, SceneError> {
        let bad = |m: &str| SceneError::BadSurface(label.to_string(), m.to_string());
        let n = normal.try_normalize(1e-12).ok_or_else(|| bad("zero normal"))?;
        let u = (u_axis - n * n.dot(&u_axis)).try_normalize(1e-12).ok_or_else(|| bad("u axis parallel to normal"))?;
        if !(half_extents[0] > 0.0 && half_extents[1] > 0.0) {
            return Err(bad("degenerate bounds"));
        }
        Ok(Self { label: label.to_string(), center, normal: n, u_axis: u, half_extents })
    }

    /// Horizontal rectangle at height `z`, sides aligned with world x and y.
    pub fn horizontal(label: &str, center: Vec3, half_x: f64, half_y: f64) -> Result<Self, SceneError> {
        Self::new(label, center, Vec3::z(), Vec3::x(), [half_x, half_y])
    }

    pub fn v_axis(&self) -> Vec3 {
        self.normal.cross(&self.u_axis)
    }

    /// In-plane coordinates of `p`.
    pub fn local(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.center;
        (d.dot(&self.u_axis), d.dot(&self.v_axis()))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.center).dot(&self.normal)
    }

    fn within_bounds(&self, p: &Vec3) -> bool {
        let (u, v) = self.local(p);
        u.abs() <= self.half_extents[0] + HIT_EPS && v.abs() <= self.half_extents[1] + HIT_EPS
    }

    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.center - origin)) / denom;
        if t <= HIT_EPS {
            return None;
        }
        let raw = origin + dir * t;
        let p = raw - self.normal * self.signed_distance(&raw);
        self.within_bounds(&p).then_some((t, p))
    }
}

/// Box with a planar pose (center plus yaw about world z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub label: String,
    pub center: Vec3,
    pub yaw: f64,
    pub half_extents: Vec3,
}

impl SceneBox {
    pub fn new(label: &str, center: Vec3, yaw: f64, half_extents: Vec3) -> Result<Self, SceneError> {
        if half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(SceneError::BadBox(label.to_string()));
        }
        Ok(Self { label: label.to_string(), center, yaw, half_extents })
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::planar(self.center.x, self.center.y, self.center.z, self.yaw)
    }

    /// Slab test in the box frame; returns the entry distance, point and
    /// outward face normal.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3, Vec3)> {
        let pose = self.pose();
        let inv = pose.inverse();
        let o = inv.transform_point(origin);
        let d = inv.transform_vector(dir);
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_axis = 0;
        for a in 0..3 {
            let h = self.half_extents[a];
            if d[a].abs() < 1e-15 {
                if o[a].abs() > h {
                    return None;
                }
                continue;
            }
            let t1 = (-h - o[a]) / d[a];
            let t2 = (h - o[a]) / d[a];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if lo > t_near {
                t_near = lo;
                near_axis = a;
            }
            t_far = t_far.min(hi);
        }
        if t_near > t_far || t_near <= HIT_EPS {
            return None;
        }
        let mut local = o + d * t_near;
        let sign = -d[near_axis].signum();
        local[near_axis] = sign * self.half_extents[near_axis];
        let mut n = Vec3::zeros();
        n[near_axis] = sign;
        Some((t_near, pose.transform_point(&local), pose.transform_vector(&n)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    pub boxes: Vec<SceneBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserSpot {
    pub position: Vec3,
    pub surface: String,
    /// Outward normal of the hit surface.
    pub normal: Vec3,
    pub distance: f64,
    pub timestamp: f64,
}

/// Casts the emitter's +x axis into the scene and returns the nearest hit.
pub fn laser_raycast(scene: &Scene, emitter: &RigidTransform, timestamp: f64) -> Option<LaserSpot> {
    let origin = emitter.translation;
    let dir = emitter.rotation.column(0).into_owned();
    let mut best: Option<LaserSpot> = None;
    let mut consider = |t: f64, p: Vec3, n: Vec3, label: &str| {
        if best.as_ref().is_none_or(|b| t < b.distance) {
            best = Some(LaserSpot { position: p, surface: label.to_string(), normal: n, distance: t, timestamp });
        }
    };
    for s in &scene.surfaces {
        if let Some((t, p)) = s.intersect(&origin, &dir) {
            let n = if s.normal.dot(&dir) < 0.0 { s.normal } else { -s.normal };
            consider(t, p, n, &s.label);
        }
    }
    for b in &scene.boxes {
        if let Some((t, p, n)) = b.intersect(&origin, &dir) {
            consider(t, p, n, &b.label);
        }
    }
    best
}

/// Emitter pose at `origin` whose ray passes through `target`.
pub fn aim_emitter(origin: Vec3, target: Vec3) -> Option<RigidTransform> {
    let x = (target - origin).try_normalize(1e-12)?;
    let helper = if x.z.abs() < 0.9 { Vec3::z() } else { Vec3::y() };
    let y = helper.cross(&x).normalize();
    let z = x.cross(&y);
    Some(RigidTransform::new(nalgebra::Matrix3::from_columns(&[x, y, z]), origin))
}

/// Zero-mean Gaussian noise tangent to the hit surface, so the spot stays
/// on its plane.
pub fn perturb_spot<R: Rng>(spot: &mut LaserSpot, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let raw = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * sigma;
    spot.position += raw - spot.normal * spot.normal.dot(&raw);
}

/// Low-pass filter on the spot stream that restarts after a stale gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotSmoother {
    pub filter: LowPass,
    pub stale_gap: f64,
    last_t: Option<f64>,
}

impl SpotSmoother {
    pub fn new(cutoff_hz: Option<f64>, stale_gap: f64) -> Self {
        Self { filter: LowPass::new(cutoff_hz), stale_gap, last_t: None }
    }

    pub fn update(&mut self, position: Vec3, t: f64) -> Vec3 {
        let dt = match self.last_t {
            Some(prev) if t - prev <= self.stale_gap + HIT_EPS => t - prev,
            _ => {
                self.filter.reset();
                0.0
            }
        };
        self.last_t = Some(t);
        self.filter.update(position, dt)
    }

    pub fn reset(&mut self) {
        self.filter.reset();
        self.last_t = None;
    }
}

impl Default for SpotSmoother {
    fn default() -> Self {
        Self::new(Some(5.0), DEFAULT_STALE_GAP)
    }
}

/// Dwell rule with a rolling anchor: a selection fires once every sample
/// has stayed within `radius` of the anchor for `required` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellSelector {
    pub radius: f64,
    pub required: f64,
    anchor: Option<(Vec3, f64)>,
    last_t: f64,
}

impl DwellSelector {
    pub fn new(radius: f64, required: f64) -> Self {
        assert!(radius > 0.0 && required > 0.0, "dwell radius and time must be positive");
        Self { radius, required, anchor: None, last_t: 0.0 }
    }

    pub fn anchor(&self) -> Option<Vec3> {
        self.anchor.map(|a| a.0)
    }

    pub fn elapsed(&self) -> f64 {
        self.anchor.map_or(0.0, |(_, t0)| (self.last_t - t0).max(0.0))
    }

    pub fn reset(&mut self) {
        self.anchor = None;
    }

    /// Feeds one sample; returns the anchor position when the dwell completes.
    pub fn update(&mut self, position: Vec3, t: f64) -> Option<Vec3> {
        self.last_t = t;
        match self.anchor {
            Some((a, t0)) if (position - a).norm() <= self.radius => {
                if t - t0 >= self.required - HIT_EPS {
                    self.anchor = Some((position, t));
                    Some(a)
                } else {
                    None
                }
            }
            _ => {
                self.anchor = Some((position, t));
                None
            }
        }
    }
}

impl Default for DwellSelector {
    fn default() -> Self {
        Self::new(DEFAULT_DWELL_RADIUS, DEFAULT_DWELL_TIME)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyCommand {
    /// Linear end-effector velocity along `axis` (0..3) with `sign`.
    Linear { axis: usize, sign: i8 },
    Angular { axis: usize, sign: i8 },
    GripperOpen,
    GripperClose,
}

impl KeyCommand {
    /// Linear and angular velocity commanded while the key is held.
    pub fn twist(&self) -> Option<(Vec3, Vec3)> {
        let unit = |axis: usize, sign: i8| {
            let mut v = Vec3::zeros();
            v[axis] = f64::from(sign);
            v
        };
        match *self {
            KeyCommand::Linear { axis, sign } => Some((unit(axis, sign) * KEYBOARD_LINEAR_SPEED, Vec3::zeros())),
            KeyCommand::Angular { axis, sign } => Some((Vec3::zeros(), unit(axis, sign) * KEYBOARD_ANGULAR_SPEED)),
            _ => None,
        }
    }

    pub fn id(&self) -> String {
        let axis_name = |a: usize| ["x", "y", "z"][a];
        let sign = |s: i8| if s > 0 { '+' } else { '-' };
        match *self {
            KeyCommand::Linear { axis, sign: s } => format!("{}{}", sign(s), axis_name(axis)),
            KeyCommand::Angular { axis, sign: s } => format!("{}r{}", sign(s), axis_name(axis)),
            KeyCommand::GripperOpen => "open".into(),
            KeyCommand::GripperClose => "close".into(),
        }
    }
}

impl fmt::Display for KeyCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis_name = |a: usize| ["x", "y", "z"][a];
        let sign = |s: i8| if s > 0 { '+' } else { '-' };
        match *self {
            KeyCommand::Linear { axis, sign: s } => {
                write!(f, "{}{} linear, {} m/s", sign(s), axis_name(axis), KEYBOARD_LINEAR_SPEED)
            }
            KeyCommand::Angular { axis, sign: s } => {
                write!(f, "{}{} angular, {} rad/s", sign(s), axis_name(axis), KEYBOARD_ANGULAR_SPEED)
            }
            KeyCommand::GripperOpen => write!(f, "gripper open"),
            KeyCommand::GripperClose => write!(f, "gripper close"),
        }
    }
}

/// Grid of equally sized buttons on a plane. `origin` is the keyboard
/// center; its x axis runs along columns, y up the rows (row 0 on top),
/// z is the plane normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyboardLayout {
    pub origin: RigidTransform,
    pub button_size: [f64; 2],
    pub rows: Vec<Vec<KeyCommand>>,
}

impl KeyboardLayout {
    pub fn new(origin: RigidTransform, button_size: [f64; 2], rows: Vec<Vec<KeyCommand>>) -> Result<Self, SceneError> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(SceneError::BadKeyboard("rows must be non-empty and equally long".into()));
        }
        if !(button_size[0] > 0.0 && button_size[1] > 0.0) {
            return Err(SceneError::BadKeyboard("button size must be positive".into()));
        }
        Ok(Self { origin, button_size, rows })
    }

    /// Ten-button layout: linear ±x ±y ±z, angular ±z, gripper open/close.
    pub fn standard(origin: RigidTransform) -> Self {
        use KeyCommand::*;
        let rows = vec![
            vec![
                Linear { axis: 0, sign: 1 },
                Linear { axis: 1, sign: 1 },
                Linear { axis: 2, sign: 1 },
                Angular { axis: 2, sign: 1 },
                GripperOpen,
            ],
            vec![
                Linear { axis: 0, sign: -1 },
                Linear { axis: 1, sign: -1 },
                Linear { axis: 2, sign: -1 },
                Angular { axis: 2, sign: -1 },
                GripperClose,
            ],
        ];
        Self { origin, button_size: BUTTON_SIZE, rows }
    }

    pub fn cols(&self) -> usize {
        self.rows[0].len()
    }

    pub fn size(&self) -> [f64; 2] {
        [self.cols() as f64 * self.button_size[0], self.rows.len() as f64 * self.button_size[1]]
    }

    /// The keyboard as a scene surface.
    pub fn surface(&self) -> Surface {
        let [w, h] = self.size();
        Surface {
            label: "keyboard".into(),
            center: self.origin.translation,
            normal: self.origin.rotation.column(2).into_owned(),
            u_axis: self.origin.rotation.column(0).into_owned(),
            half_extents: [w / 2.0, h / 2.0],
        }
    }

    /// Grid coordinates (column, row units from the top-left corner).
    fn grid(&self, point: &Vec3) -> Option<(f64, f64)> {
        let local = self.origin.inverse().transform_point(point);
        if local.z.abs() > 1e-6 {
            return None;
        }
        let [w, h] = self.size();
        Some(((local.x + w / 2.0) / self.button_size[0], (h / 2.0 - local.y) / self.button_size[1]))
    }

    /// Whether the point lies on the keyboard area, edges included.
    pub fn contains(&self, point: &Vec3) -> bool {
        self.grid(point).is_some_and(|(c, r)| {
            (-HIT_EPS..=self.cols() as f64 + HIT_EPS).contains(&c)
                && (-HIT_EPS..=self.rows.len() as f64 + HIT_EPS).contains(&r)
        })
    }

    /// Button strictly containing the point; edges belong to no button.
    pub fn hit(&self, point: &Vec3) -> Option<KeyCommand> {
        let (c, r) = self.grid(point)?;
        let on_line = |x: f64| (x - x.round()).abs() < 1e-9;
        if on_line(c) || on_line(r) || c < 0.0 || r < 0.0 {
            return None;
        }
        let (ci, ri) = (c.floor() as usize, r.floor() as usize);
        self.rows.get(ri)?.get(ci).copied()
    }

    /// Center of the button issuing `cmd`.
    pub fn button_center(&self, cmd: KeyCommand) -> Option<Vec3> {
        let [w, h] = self.size();
        for (ri, row) in self.rows.iter().enumerate() {
            if let Some(ci) = row.iter().position(|k| *k == cmd) {
                let local = Vec3::new(
                    -w / 2.0 + (ci as f64 + 0.5) * self.button_size[0],
                    h / 2.0 - (ri as f64 + 0.5) * self.button_size[1],
                    0.0,
                );
                return Some(self.origin.transform_point(&local));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LaserEvent {
    Goal { position: Vec3, surface: String },
    Key { command: KeyCommand },
}

/// Arbitrates between environment goals and keyboard presses depending on
/// where the spot lands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserInterface {
    pub keyboard: Option<KeyboardLayout>,
    pub smoother: SpotSmoother,
    pub env_dwell: DwellSelector,
    pub key_dwell: DwellSelector,
    /// Key selected by dwell and still under the spot.
    pub active_key: Option<KeyCommand>,
    last_surface: String,
    #[serde(default)]
    smoothed: Option<Vec3>,
}

impl LaserInterface {
    pub fn new(keyboard: Option<KeyboardLayout>) -> Self {
        Self {
            keyboard,
            smoother: SpotSmoother::default(),
            env_dwell: DwellSelector::default(),
            key_dwell: DwellSelector::new(DEFAULT_DWELL_RADIUS, KEYBOARD_DWELL_TIME),
            active_key: None,
            last_surface: String::new(),
            smoothed: None,
        }
    }

    /// Filtered spot position of the last update, if the spot was visible.
    pub fn smoothed(&self) -> Option<Vec3> {
        self.smoothed
    }

    pub fn update(&mut self, spot: Option<&LaserSpot>) -> Option<LaserEvent> {
        let Some(spot) = spot else {
            self.smoother.reset();
            self.env_dwell.reset();
            self.key_dwell.reset();
            self.active_key = None;
            self.smoothed = None;
            return None;
        };
        let p = self.smoother.update(spot.position, spot.timestamp);
        self.smoothed = Some(p);
        let on_keyboard = self.keyboard.as_ref().is_some_and(|k| k.contains(&spot.position));
        if on_keyboard {
            self.env_dwell.reset();
            let kb = self.keyboard.as_ref().expect("checked above");
            let under = kb.hit(&spot.position);
            if self.active_key.is_some() && under != self.active_key {
                self.active_key = None;
            }
            let anchor = self.key_dwell.update(spot.position, spot.timestamp)?;
            let cmd = kb.hit(&anchor)?;
            if matches!(cmd, KeyCommand::Linear { .. } | KeyCommand::Angular { .. }) {
                self.active_key = Some(cmd);
            }
            Some(LaserEvent::Key { command: cmd })
        } else {
            self.key_dwell.reset();
            self.active_key = None;
            self.last_surface.clone_from(&spot.surface);
            let anchor = self.env_dwell.update(p, spot.timestamp)?;
            Some(LaserEvent::Goal { position: anchor, surface: self.last_surface.clone() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn floor() -> Surface {
        Surface::horizontal("floor", Vec3::zeros(), 10.0, 10.0).unwrap()
    }

    fn down_from(p: Vec3) -> RigidTransform {
        aim_emitter(p, p - Vec3::z()).unwrap()
    }

    #[test]
    fn floor_hit_straight_down() {
        let scene = Scene { surfaces: vec![floor()], boxes: vec![] };
        let spot = laser_raycast(&scene, &down_from(Vec3::new(0.0, 0.0, 1.0)), 0.0).unwrap();
        assert!((spot.position - Vec3::zeros()).norm() < 1e-12);
        assert_eq!(spot.surface, "floor");
        assert!((spot.distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let scene = Scene { surfaces: vec![floor()], boxes: vec![] };
        let emitter = aim_emitter(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0)).unwrap();
        assert!(laser_raycast(&scene, &emitter, 0.0).is_none());
    }

    #[test]
    fn nearest_surface_wins() {
        let table = Surface::horizontal("table", Vec3::new(0.0, 0.0, 0.75), 0.5, 0.5).unwrap();
        let scene = Scene { surfaces: vec![floor(), table], boxes: vec![] };
        let spot = laser_raycast(&scene, &down_from(Vec3::new(0.1, 0.0, 1.5)), 0.0).unwrap();
        assert_eq!(spot.surface, "table");
        assert!((spot.position.z - 0.75).abs() < 1e-12);
    }

    #[test]
    fn box_top_is_hit() {
        let b = SceneBox::new("block", Vec3::new(1.0, 0.0, 0.1), 0.3, Vec3::new(0.1, 0.1, 0.1)).unwrap();
        let scene = Scene { surfaces: vec![floor()], boxes: vec![b] };
        let spot = laser_raycast(&scene, &down_from(Vec3::new(1.02, 0.01, 2.0)), 0.0).unwrap();
        assert_eq!(spot.surface, "block");
        assert!((spot.position.z - 0.2).abs() < 1e-9);
        assert!((spot.normal - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn emitter_behind_surface_misses() {
        let scene = Scene { surfaces: vec![floor()], boxes: vec![] };
        let up = aim_emitter(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert!(laser_raycast(&scene, &up, 0.0).is_none());
    }

    #[test]
    fn noise_stays_on_plane() {
        let scene = Scene { surfaces: vec![floor()], boxes: vec![] };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spot = laser_raycast(&scene, &down_from(Vec3::new(0.3, 0.2, 1.0)), 0.0).unwrap();
        perturb_spot(&mut spot, DEFAULT_SPOT_NOISE, &mut rng);
        assert!(spot.position.z.abs() < 1e-12);
        assert!((spot.position - Vec3::new(0.3, 0.2, 0.0)).norm() > 0.0);
    }

    #[test]
    fn smoother_step_and_reset() {
        let mut s = SpotSmoother::new(Some(5.0), DEFAULT_STALE_GAP);
        let tau = 1.0 / (2.0 * std::f64::consts::PI * 5.0);
        s.update(Vec3::zeros(), 0.0);
        let n = 1000;
        let dt = tau / n as f64;
        let mut out = Vec3::zeros();
        for i in 1..=n {
            out = s.update(Vec3::x(), i as f64 * dt);
        }
        assert!((out.x - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
        let after_gap = s.update(Vec3::new(5.0, 0.0, 0.0), tau + 0.05);
        assert_eq!(after_gap, Vec3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn dwell_rules() {
        let mut d = DwellSelector::default();
        let p = Vec3::new(1.0, 0.0, 0.0);
        let mut hits = Vec::new();
        for i in 0..=700 {
            let t = i as f64 * 0.01;
            if d.update(p, t).is_some() {
                hits.push(i);
            }
        }
        assert_eq!(hits, vec![300, 600]);

        let mut d = DwellSelector::default();
        for i in 0..290 {
            assert!(d.update(p, i as f64 * 0.01).is_none());
        }
        assert!(d.update(p + Vec3::new(0.05, 0.0, 0.0), 2.9).is_none());
        assert!(d.update(p, 3.0).is_none());
        assert!(d.elapsed() < 1e-12);
    }

    fn keyboard() -> KeyboardLayout {
        KeyboardLayout::standard(RigidTransform::from_translation(Vec3::new(0.5, 0.6, 0.75)))
    }

    #[test]
    fn keyboard_hits() {
        let kb = keyboard();
        let plus_x = KeyCommand::Linear { axis: 0, sign: 1 };
        let c = kb.button_center(plus_x).unwrap();
        assert_eq!(kb.hit(&c), Some(plus_x));
        assert_eq!(plus_x.to_string(), "+x linear, 0.025 m/s");
        let edge = c + Vec3::new(BUTTON_SIZE[0] / 2.0, 0.0, 0.0);
        assert_eq!(kb.hit(&edge), None);
        assert!(kb.contains(&edge));
        assert_eq!(kb.hit(&(c + Vec3::new(-0.2, 0.0, 0.0))), None);
        assert_eq!(kb.hit(&(c + Vec3::new(0.0, 0.0, 0.01))), None);
    }

    #[test]
    fn keyboard_dwell_is_one_second_and_excludes_goals() {
        let kb = keyboard();
        let key = KeyCommand::Angular { axis: 2, sign: -1 };
        let c = kb.button_center(key).unwrap();
        let mut li = LaserInterface::new(Some(kb));
        let mut events = Vec::new();
        for i in 0..=400 {
            let t = i as f64 * 0.01;
            let spot = LaserSpot { position: c, surface: "keyboard".into(), normal: Vec3::z(), distance: 1.0, timestamp: t };
            if let Some(e) = li.update(Some(&spot)) {
                events.push((i, e));
            }
        }
        assert_eq!(events[0].0, 100);
        assert!(events.iter().all(|(_, e)| matches!(e, LaserEvent::Key { .. })));
        assert_eq!(li.active_key, Some(key));
    }
}
