//! Shared-control engine for a simulated mobile manipulator.

pub mod bimanual;
pub mod bt;
pub mod filter;
pub mod kinematics;
pub mod perception;
pub mod sim;
pub mod tpo;
pub mod vtr;
