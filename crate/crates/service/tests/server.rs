use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use teleop_core::kinematics::Vec3;
use teleop_service::mission::Mission;
use teleop_service::scenario::Scenario;
use teleop_service::server::{self, ServerConfig};
use teleop_service::trace::{OperatorEvent, OperatorTrace};
use teleop_service::wire::{encode_frame, from_json, to_json, FrameBuffer, Payload, Sequencer, WireMessage};

fn mission(duration: f64) -> Mission {
    let text = format!(r#"{{"name": "live", "duration": {duration}, "teleop": {{"enabled": true}}}}"#);
    Mission::new(Scenario::parse(&text, "inline").unwrap(), None, OperatorTrace::default()).unwrap()
}

fn config(rate: f64, linger: bool) -> ServerConfig {
    ServerConfig { bind: "127.0.0.1:0".into(), rate, linger, ..Default::default() }
}

struct Client {
    stream: TcpStream,
    buf: FrameBuffer,
    seq: Sequencer,
}

impl Client {
    fn connect(addr: std::net::SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        Self { stream, buf: FrameBuffer::default(), seq: Sequencer::default() }
    }

    fn send(&mut self, event: OperatorEvent) {
        let msg = self.seq.stamp(Payload::Command(event));
        self.stream.write_all(&encode_frame(&msg)).unwrap();
    }

    fn recv(&mut self, timeout: Duration) -> Option<WireMessage> {
        let deadline = Instant::now() + timeout;
        let mut chunk = [0u8; 8192];
        loop {
            if let Some(body) = self.buf.next_frame().unwrap() {
                return Some(from_json(&body).unwrap());
            }
            if Instant::now() > deadline {
                return None;
            }
            match self.stream.read(&mut chunk) {
                Ok(0) => return None,
                Ok(n) => self.buf.push(&chunk[..n]),
                Err(_) => {}
            }
        }
    }

    /// Reads until `pred` matches, returning every message seen.
    fn until(&mut self, timeout: Duration, pred: impl Fn(&WireMessage) -> bool) -> Vec<WireMessage> {
        let deadline = Instant::now() + timeout;
        let mut seen = Vec::new();
        while Instant::now() < deadline {
            if let Some(m) = self.recv(Duration::from_millis(100)) {
                let hit = pred(&m);
                seen.push(m);
                if hit {
                    return seen;
                }
            }
        }
        panic!("no matching message within {timeout:?}; saw {} messages", seen.len());
    }
}

fn is_snapshot(m: &WireMessage) -> bool {
    matches!(m.payload, Payload::StateSnapshot(_))
}

#[test]
fn raw_client_gets_snapshots_and_drives_the_robot() {
    let handle = server::start(mission(30.0), config(1.0, true)).unwrap();
    let mut c = Client::connect(handle.addr);
    let first = c.until(Duration::from_secs(5), is_snapshot);
    let Payload::StateSnapshot(s0) = &first.last().unwrap().payload else { unreachable!() };
    assert!(s0.end_effectors.contains_key("right_arm"));

    c.send(OperatorEvent::Force { force: Vec3::new(0.2, 0.0, 0.0) });
    let seen = c.until(Duration::from_secs(5), |m| match &m.payload {
        Payload::StateSnapshot(s) => s.feedback.forearm_squeeze.right > 0.5,
        _ => false,
    });
    let seqs: Vec<u64> = first.iter().chain(&seen).map(|m| m.seq).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "{seqs:?}");
    handle.stop().unwrap();
}

#[test]
fn snapshots_arrive_at_about_thirty_hertz() {
    let handle = server::start(mission(30.0), config(1.0, true)).unwrap();
    let mut c = Client::connect(handle.addr);
    c.until(Duration::from_secs(5), is_snapshot);
    let mut times = Vec::new();
    while times.len() < 15 {
        if let Some(WireMessage { payload: Payload::StateSnapshot(s), .. }) = c.recv(Duration::from_secs(2)) {
            times.push(s.t);
        }
    }
    let mean = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    assert!((mean - 1.0 / 30.0).abs() < 0.01, "mean snapshot period {mean}");
    handle.stop().unwrap();
}

#[test]
fn truncated_payload_gets_error_frame_and_connection_survives() {
    let handle = server::start(mission(30.0), config(1.0, true)).unwrap();
    let mut c = Client::connect(handle.addr);
    let mut seen = c.until(Duration::from_secs(5), is_snapshot);

    let full = to_json(&c.seq.stamp(Payload::Command(OperatorEvent::Release)));
    let cut = &full.as_bytes()[..full.len() / 2];
    let mut frame = (cut.len() as u32).to_be_bytes().to_vec();
    frame.extend_from_slice(cut);
    c.stream.write_all(&frame).unwrap();
    seen.extend(c.until(Duration::from_secs(5), |m| matches!(m.payload, Payload::Error(_))));

    c.send(OperatorEvent::Force { force: Vec3::new(0.0, 0.2, 0.0) });
    seen.extend(c.until(Duration::from_secs(5), |m| match &m.payload {
        Payload::StateSnapshot(s) => s.feedback.forearm_squeeze.right > 0.5,
        _ => false,
    }));
    let seqs: Vec<u64> = seen.iter().map(|m| m.seq).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "{seqs:?}");
    handle.stop().unwrap();
}

#[test]
fn non_command_and_replayed_sequence_are_rejected() {
    let handle = server::start(mission(30.0), config(1.0, true)).unwrap();
    let mut c = Client::connect(handle.addr);
    c.until(Duration::from_secs(5), is_snapshot);
    let msg = WireMessage { seq: 0, payload: Payload::GoalEvent(teleop_service::mission::MissionEvent::Key { command: "x".into() }) };
    c.stream.write_all(&encode_frame(&msg)).unwrap();
    c.until(Duration::from_secs(5), |m| matches!(&m.payload, Payload::Error(e) if e.message.contains("command")));
    c.stream.write_all(&encode_frame(&WireMessage { seq: 0, payload: Payload::Command(OperatorEvent::Release) })).unwrap();
    c.until(Duration::from_secs(5), |m| matches!(&m.payload, Payload::Error(e) if e.message.contains("sequence")));
    handle.stop().unwrap();
}

#[test]
fn silent_client_does_not_stall_the_simulation() {
    let handle = server::start(mission(20.0), config(0.0, false)).unwrap();
    let _silent = TcpStream::connect(handle.addr).unwrap();
    let start = Instant::now();
    let report = handle.wait().unwrap();
    assert_eq!(report.steps, 2000);
    assert!(start.elapsed() < Duration::from_secs(30));
}

#[test]
fn websocket_client_is_upgraded() {
    let handle = server::start(mission(30.0), config(1.0, true)).unwrap();
    let (mut ws, _) = tungstenite::connect(format!("ws://{}/", handle.addr)).unwrap();
    let text = loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            break t;
        }
    };
    let msg = from_json(text.as_bytes()).unwrap();
    assert!(is_snapshot(&msg));
    let cmd = Sequencer::default().stamp(Payload::Command(OperatorEvent::Force { force: Vec3::new(0.2, 0.0, 0.0) }));
    ws.send(tungstenite::Message::Text(to_json(&cmd))).unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut driven = false;
    while Instant::now() < deadline && !driven {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            if let Payload::StateSnapshot(s) = from_json(t.as_bytes()).unwrap().payload {
                driven = s.feedback.forearm_squeeze.right > 0.5;
            }
        }
    }
    assert!(driven);
    let _ = ws.close(None);
    handle.stop().unwrap();
}
