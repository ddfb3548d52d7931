//! Mission runner, live teleoperation server and acceptance checks built on
//! `teleop-core`.

pub mod acceptance;
pub mod feedback;
pub mod log;
pub mod mission;
pub mod scenario;
pub mod server;
pub mod trace;
pub mod wire;
