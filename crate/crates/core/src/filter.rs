//! First-order low-pass filtering of 3-vectors.

use serde::{Deserialize, Serialize};

use crate::kinematics::Vec3;

/// Per-axis first-order low-pass with an exact zero-order-hold
/// discretization, so a step input reaches `1 - e^-1` after one time
/// constant regardless of the sample period. The first sample (or the
/// first after [`LowPass::reset`]) initializes the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowPass {
    /// Cutoff frequency in Hz; `None` passes the input through.
    pub cutoff_hz: Option<f64>,
    pub state: Option<Vec3>,
}

impl LowPass {
    pub fn new(cutoff_hz: Option<f64>) -> Self {
        Self { cutoff_hz, state: None }
    }

    pub fn time_constant(&self) -> Option<f64> {
        self.cutoff_hz.map(|fc| 1.0 / (2.0 * std::f64::consts::PI * fc))
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn update(&mut self, input: Vec3, dt: f64) -> Vec3 {
        let out = match (self.state, self.time_constant()) {
            (Some(prev), Some(tau)) if dt > 0.0 => {
                let alpha = 1.0 - (-dt / tau).exp();
                prev + (input - prev) * alpha
            }
            (Some(prev), Some(_)) => prev,
            _ => input,
        };
        self.state = Some(out);
        out
    }
}
