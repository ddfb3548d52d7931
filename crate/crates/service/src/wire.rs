//! Wire protocol between the service and a UI client.
//!
//! Every message is a JSON object `{"seq": n, "kind": k, "payload": p}`.
//! Over a raw socket each message is preceded by its byte length as a
//! 4-byte big-endian integer; over WebSocket each text message carries one
//! object. Unknown fields are ignored.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use teleop_core::bimanual::EEForce;
use teleop_core::kinematics::{RigidTransform, Vec3};
use teleop_core::sim::{BasePose, ControlPointId};
use thiserror::Error;

use crate::feedback::FeedbackFrame;
use crate::mission::{Mission, MissionEvent};
use crate::trace::OperatorEvent;

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("expected a command, got `{0}`")]
    NotACommand(String),
    #[error("sequence {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub label: String,
    pub pose: RigidTransform,
    pub half_extents: Vec3,
    pub grasped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub label: String,
    pub status: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub step: u64,
    pub base: BasePose,
    pub pelvis_z: f64,
    pub end_effectors: BTreeMap<String, Vec3>,
    pub objects: Vec<ObjectView>,
    pub emitter: Option<RigidTransform>,
    pub spot: Option<Vec3>,
    pub beta: Vec3,
    pub w: Vec3,
    pub sensed: EEForce,
    pub f_bar: Option<f64>,
    pub bt: Vec<NodeView>,
    pub active: Vec<String>,
    pub control_point: Option<ControlPointId>,
    pub feedback: FeedbackFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    StateSnapshot(Box<Snapshot>),
    Command(OperatorEvent),
    Feedback(FeedbackFrame),
    GoalEvent(MissionEvent),
    Error(ErrorPayload),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::StateSnapshot(_) => "state_snapshot",
            Payload::Command(_) => "command",
            Payload::Feedback(_) => "feedback",
            Payload::GoalEvent(_) => "goal_event",
            Payload::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

/// Hands out strictly increasing sequence numbers for one direction.
#[derive(Debug, Clone, Default)]
pub struct Sequencer {
    next: u64,
}

impl Sequencer {
    pub fn stamp(&mut self, payload: Payload) -> WireMessage {
        let seq = self.next;
        self.next += 1;
        WireMessage { seq, payload }
    }
}

/// Checks that inbound sequence numbers only increase.
#[derive(Debug, Clone, Default)]
pub struct SequenceGuard {
    last: Option<u64>,
}

impl SequenceGuard {
    pub fn accept(&mut self, seq: u64) -> Result<(), WireError> {
        if let Some(last) = self.last {
            if seq <= last {
                return Err(WireError::OutOfOrder { last, got: seq });
            }
        }
        self.last = Some(seq);
        Ok(())
    }
}

pub fn to_json(msg: &WireMessage) -> String {
    serde_json::to_string(msg).expect("wire messages serialize")
}

pub fn from_json(text: &[u8]) -> Result<WireMessage, WireError> {
    serde_json::from_slice(text).map_err(|e| WireError::Malformed(e.to_string()))
}

/// Length-prefixed frame.
pub fn encode_frame(msg: &WireMessage) -> Vec<u8> {
    let body = to_json(msg).into_bytes();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Incremental splitter of length-prefixed frames out of a byte stream.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame body, if buffered.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME {
            self.buf.clear();
            return Err(WireError::TooLarge(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let body = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(body))
    }
}

pub fn decode_command(msg: &WireMessage) -> Result<OperatorEvent, WireError> {
    match &msg.payload {
        Payload::Command(e) => Ok(e.clone()),
        other => Err(WireError::NotACommand(other.kind().to_string())),
    }
}

pub fn snapshot(mission: &Mission) -> Snapshot {
    let sim = &mission.sim;
    let s = &sim.state;
    let end_effectors = s.arms.keys().filter_map(|a| sim.ee_position(a).ok().map(|p| (a.clone(), p))).collect();
    let objects = s
        .objects
        .iter()
        .map(|o| ObjectView {
            label: o.label.clone(),
            pose: o.pose,
            half_extents: o.half_extents,
            grasped: !matches!(o.attachment, teleop_core::sim::Attachment::Free),
        })
        .collect();
    let bt = mission.tree().map_or_else(Vec::new, |t| {
        (0..t.len()).map(|i| NodeView { label: t.label(i).to_string(), status: t.last_tick()[i].map(|st| st.letter()) }).collect()
    });
    let w = mission.weights();
    Snapshot {
        t: s.clock,
        step: s.step,
        base: s.base,
        pelvis_z: sim.pelvis_pose().translation.z,
        end_effectors,
        objects,
        emitter: s.emitter,
        spot: mission.spot(),
        beta: w.beta,
        w: w.w,
        sensed: s.sensed,
        f_bar: mission.pipeline().and_then(|p| p.f_bar),
        bt,
        active: mission.active_modules(),
        control_point: mission.control_point(),
        feedback: mission.feedback(),
    }
}

pub fn encode_snapshot(mission: &Mission) -> Payload {
    Payload::StateSnapshot(Box::new(snapshot(mission)))
}
