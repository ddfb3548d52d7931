//! Live teleoperation server.
//!
//! One thread steps the mission at a fixed real-time factor and publishes
//! snapshots at a fixed rate. Each client gets its own bounded outbound
//! queue that drops the oldest message when full, so a slow client never
//! stalls the simulation. A connection whose first bytes are `GET ` is
//! upgraded to WebSocket; anything else speaks length-prefixed frames.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError};
use tungstenite::{Message, WebSocket};

use crate::mission::{Mission, MissionError, Report};
use crate::trace::OperatorEvent;
use crate::wire::{
    decode_command, encode_frame, encode_snapshot, from_json, to_json, ErrorPayload, FrameBuffer, Payload,
    SequenceGuard, Sequencer, WireError,
};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    /// Simulated seconds per wall second; zero runs as fast as possible.
    pub rate: f64,
    pub snapshot_hz: f64,
    pub queue_depth: usize,
    /// Keep serving snapshots after the mission completes.
    pub linger: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8765".into(), rate: 1.0, snapshot_hz: 30.0, queue_depth: 8, linger: true }
    }
}

/// Bounded queue that evicts its oldest entry instead of blocking.
#[derive(Debug)]
pub struct DropOldest<T> {
    tx: Sender<T>,
    rx: Receiver<T>,
    alive: Arc<AtomicBool>,
}

impl<T> Clone for DropOldest<T> {
    fn clone(&self) -> Self {
        Self { tx: self.tx.clone(), rx: self.rx.clone(), alive: self.alive.clone() }
    }
}

impl<T> DropOldest<T> {
    pub fn new(depth: usize) -> Self {
        let (tx, rx) = bounded(depth.max(1));
        Self { tx, rx, alive: Arc::new(AtomicBool::new(true)) }
    }

    /// Enqueue, returning how many old entries were evicted.
    pub fn push(&self, mut item: T) -> usize {
        let mut dropped = 0;
        loop {
            match self.tx.try_send(item) {
                Ok(()) => return dropped,
                Err(crossbeam_channel::TrySendError::Full(back)) => {
                    item = back;
                    if self.rx.try_recv().is_ok() {
                        dropped += 1;
                    }
                }
                Err(crossbeam_channel::TrySendError::Disconnected(_)) => return dropped,
            }
        }
    }

    pub fn pop(&self) -> Option<T> {
        self.rx.try_recv().ok()
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        self.rx.recv_timeout(timeout).ok()
    }

    pub fn len(&self) -> usize {
        self.rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx.is_empty()
    }

    pub fn close(&self) {
        self.alive.store(false, Ordering::SeqCst);
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }
}

type Outbox = DropOldest<Payload>;

struct Inbound {
    reply: Outbox,
    event: OperatorEvent,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<Result<Report, MissionError>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn is_finished(&self) -> bool {
        self.sim.as_ref().map_or(true, |h| h.is_finished())
    }

    /// Stop every thread and return the mission report.
    pub fn stop(mut self) -> Result<Report, MissionError> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.sim.take().expect("joined once").join().expect("simulation thread panicked")
    }

    /// Block until the simulation thread exits by itself.
    pub fn wait(mut self) -> Result<Report, MissionError> {
        let report = self.sim.take().expect("joined once").join().expect("simulation thread panicked");
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        report
    }
}

pub fn start(mission: Mission, config: ServerConfig) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(&config.bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (cmd_tx, cmd_rx) = unbounded::<Inbound>();
    let (reg_tx, reg_rx) = unbounded::<Outbox>();

    let accept = {
        let stop = stop.clone();
        let depth = config.queue_depth;
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let outbox = Outbox::new(depth);
                if reg_tx.send(outbox.clone()).is_err() {
                    break;
                }
                let cmd_tx = cmd_tx.clone();
                let stop = stop.clone();
                std::thread::spawn(move || {
                    let _ = serve_client(stream, outbox.clone(), cmd_tx, stop);
                    outbox.close();
                });
            }
        })
    };

    let sim = {
        let stop = stop.clone();
        std::thread::spawn(move || simulate(mission, config, cmd_rx, reg_rx, stop))
    };

    Ok(ServerHandle { addr, stop, sim: Some(sim), accept: Some(accept) })
}

fn broadcast(clients: &mut Vec<Outbox>, payload: &Payload) {
    clients.retain(|c| c.is_alive());
    for c in clients.iter() {
        c.push(payload.clone());
    }
}

fn simulate(
    mut mission: Mission,
    config: ServerConfig,
    commands: Receiver<Inbound>,
    registrations: Receiver<Outbox>,
    stop: Arc<AtomicBool>,
) -> Result<Report, MissionError> {
    let period = 1.0 / config.snapshot_hz.max(1e-3);
    let mut clients: Vec<Outbox> = Vec::new();
    let mut next_snapshot = 0.0;
    let wall0 = Instant::now();
    let mut sim0 = mission.sim.state.clock;

    while !stop.load(Ordering::SeqCst) {
        while let Ok(c) = registrations.try_recv() {
            c.push(encode_snapshot(&mission));
            clients.push(c);
        }
        loop {
            match commands.try_recv() {
                Ok(cmd) => {
                    if let Err(e) = mission.apply(cmd.event) {
                        cmd.reply.push(Payload::Error(ErrorPayload { message: e.to_string() }));
                    }
                }
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => break,
            }
        }

        if mission.finished().is_none() {
            let row = mission.step();
            if let Err(e) = row {
                broadcast(&mut clients, &Payload::Error(ErrorPayload { message: e.to_string() }));
                return Err(e);
            }
            for ev in mission.drain_events() {
                broadcast(&mut clients, &Payload::GoalEvent(ev));
            }
            let fb = mission.feedback();
            if fb.vibration.is_some() {
                broadcast(&mut clients, &Payload::Feedback(fb));
            }
            let t = mission.sim.state.clock;
            if t + 1e-9 >= next_snapshot {
                broadcast(&mut clients, &encode_snapshot(&mission));
                next_snapshot += period;
                while next_snapshot <= t {
                    next_snapshot += period;
                }
            }
            if config.rate > 0.0 {
                let due = wall0 + Duration::from_secs_f64((t - sim0) / config.rate);
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
        } else if config.linger {
            broadcast(&mut clients, &encode_snapshot(&mission));
            std::thread::sleep(Duration::from_secs_f64(period));
            sim0 = mission.sim.state.clock - wall0.elapsed().as_secs_f64() * config.rate.max(0.0);
        } else {
            broadcast(&mut clients, &encode_snapshot(&mission));
            break;
        }
    }
    for c in &clients {
        c.close();
    }
    Ok(mission.report())
}

enum Conn {
    Raw(TcpStream, FrameBuffer),
    Ws(Box<WebSocket<TcpStream>>),
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn serve_client(
    stream: TcpStream,
    outbox: Outbox,
    commands: Sender<Inbound>,
    stop: Arc<AtomicBool>,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut head = [0u8; 4];
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let n = stream.peek(&mut head).unwrap_or(0);
    let mut conn = if n == 4 && &head == b"GET " {
        let ws = tungstenite::accept(stream).map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
        Conn::Ws(Box::new(ws))
    } else {
        Conn::Raw(stream, FrameBuffer::default())
    };
    match &conn {
        Conn::Raw(s, _) => s.set_read_timeout(Some(Duration::from_millis(5)))?,
        Conn::Ws(ws) => ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?,
    }

    let mut out_seq = Sequencer::default();
    let mut guard = SequenceGuard::default();
    let mut chunk = [0u8; 4096];

    while !stop.load(Ordering::SeqCst) && outbox.is_alive() {
        let mut bodies: Vec<Result<Vec<u8>, WireError>> = Vec::new();
        match &mut conn {
            Conn::Raw(s, buf) => match s.read(&mut chunk) {
                Ok(0) => return Ok(()),
                Ok(n) => {
                    buf.push(&chunk[..n]);
                    loop {
                        match buf.next_frame() {
                            Ok(Some(b)) => bodies.push(Ok(b)),
                            Ok(None) => break,
                            Err(e) => {
                                bodies.push(Err(e));
                                break;
                            }
                        }
                    }
                }
                Err(e) if is_timeout(&e) => {}
                Err(e) => return Err(e),
            },
            Conn::Ws(ws) => match ws.read() {
                Ok(Message::Text(t)) => bodies.push(Ok(t.into_bytes())),
                Ok(Message::Binary(b)) => bodies.push(Ok(b)),
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
                Err(_) => return Ok(()),
            },
        }

        for body in bodies {
            let parsed = body.and_then(|b| from_json(&b)).and_then(|msg| {
                guard.accept(msg.seq)?;
                decode_command(&msg)
            });
            match parsed {
                Ok(event) => {
                    let _ = commands.send(Inbound { reply: outbox.clone(), event });
                }
                Err(e) => {
                    outbox.push(Payload::Error(ErrorPayload { message: e.to_string() }));
                }
            }
        }

        while let Some(payload) = outbox.pop() {
            let msg = out_seq.stamp(payload);
            match &mut conn {
                Conn::Raw(s, _) => s.write_all(&encode_frame(&msg))?,
                Conn::Ws(ws) => {
                    if ws.send(Message::Text(to_json(&msg))).is_err() {
                        return Ok(());
                    }
                }
            }
        }
    }
    if let Conn::Ws(ws) = &mut conn {
        let _ = ws.close(None);
        let _ = ws.flush();
    }
    Ok(())
}
