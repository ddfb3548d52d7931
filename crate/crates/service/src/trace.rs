//! Operator traces: timestamped inputs replayed into a mission, one JSON
//! object per line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use teleop_core::kinematics::{RigidTransform, Vec3};
use teleop_core::sim::{ControlPointId, GripperAction};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {t} is earlier than the previous event")]
    NotMonotone { line: usize, t: f64 },
}

/// One operator input. Also the payload of `command` wire messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum OperatorEvent {
    /// Raw tracker displacement from its reference, world axes, m.
    Tracker { displacement: Vec3 },
    /// Force applied directly to the active control point, N.
    Force { force: Vec3 },
    /// Goal handed to the scripted operator for the active control point.
    Target { position: Vec3 },
    /// Releases the scripted operator and zeroes the tracker input.
    Release,
    SwitchControlPoint { control_point: ControlPointId },
    /// Teleoperation engage/disengage for one side.
    Toggle { side: Side, active: bool },
    Gripper { action: GripperAction },
    /// Discrete request for the behavior tree (e.g. "grasp").
    Request { name: String },
    EmitterPose { pose: RigidTransform },
    /// Points the emitter from `origin` toward `target`.
    EmitterAim { origin: Vec3, target: Vec3 },
    EmitterOff,
    /// Object velocity during cooperative transport.
    Transport { x_dot: Vec3, yaw_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: f64,
    #[serde(flatten)]
    pub event: OperatorEvent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorTrace {
    events: Vec<TimedEvent>,
}

impl OperatorTrace {
    pub fn new(events: Vec<TimedEvent>) -> Result<Self, TraceError> {
        let mut last = f64::NEG_INFINITY;
        for (i, e) in events.iter().enumerate() {
            if !(e.t >= last) {
                return Err(TraceError::NotMonotone { line: i + 1, t: e.t });
            }
            last = e.t;
        }
        Ok(Self { events })
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let e: TimedEvent =
                serde_json::from_str(line).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            events.push(e);
        }
        Self::new(events)
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("trace events serialize") + "\n").collect()
    }

    pub fn events(&self) -> &[TimedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Time of the last event, 0 for an empty trace.
    pub fn end_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }
}

/// Replays a trace by time.
#[derive(Debug, Clone)]
pub struct TraceCursor {
    trace: OperatorTrace,
    next: usize,
}

impl TraceCursor {
    pub fn new(trace: OperatorTrace) -> Self {
        Self { trace, next: 0 }
    }

    /// Events with `t <= now` not yet returned, in order.
    pub fn due(&mut self, now: f64) -> Vec<OperatorEvent> {
        let mut out = Vec::new();
        while let Some(e) = self.trace.events.get(self.next) {
            if e.t > now + 1e-9 {
                break;
            }
            out.push(e.event.clone());
            self.next += 1;
        }
        out
    }

    pub fn exhausted(&self) -> bool {
        self.next >= self.trace.events.len()
    }
}
