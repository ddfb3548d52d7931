//! Per-step mission logs, as CSV and as line-delimited JSON.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use teleop_core::kinematics::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub t: f64,
    pub q: BTreeMap<String, Vec<f64>>,
    /// x, y, yaw, pelvis height.
    pub base: [f64; 4],
    pub beta: Vec3,
    pub w: Vec3,
    /// Sensed end-effector loads, left then right, world frame.
    pub f_s: [Vec3; 2],
    pub f_bar: Option<f64>,
    /// One letter per tree node in depth-first order: S, F, R, or `-` if not ticked.
    pub bt: String,
    pub active: Vec<String>,
    pub control_point: Option<String>,
    pub spot: Option<Vec3>,
    pub phase: Option<String>,
}

impl LogRow {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "t".to_string()];
        for (arm, q) in &self.q {
            h.extend((0..q.len()).map(|i| format!("q_{arm}_{i}")));
        }
        h.extend(["base_x", "base_y", "base_yaw", "base_z"].map(String::from));
        for v in ["beta", "w", "fs_left", "fs_right", "spot"] {
            h.extend(["x", "y", "z"].map(|a| format!("{v}_{a}")));
        }
        h.extend(["f_bar", "bt", "active", "control_point", "phase"].map(String::from));
        h
    }

    fn record(&self) -> Vec<String> {
        let num = |x: f64| x.to_string();
        let mut r = vec![self.step.to_string(), num(self.t)];
        for q in self.q.values() {
            r.extend(q.iter().map(|x| num(*x)));
        }
        r.extend(self.base.iter().map(|x| num(*x)));
        let spot = self.spot.map(|s| s.map(num));
        for v in [self.beta, self.w, self.f_s[0], self.f_s[1]] {
            r.extend(v.iter().map(|x| num(*x)));
        }
        match spot {
            Some(s) => r.extend(s.iter().cloned()),
            None => r.extend(std::iter::repeat(String::new()).take(3)),
        }
        r.push(self.f_bar.map(num).unwrap_or_default());
        r.push(self.bt.clone());
        r.push(self.active.join("|"));
        r.push(self.control_point.clone().unwrap_or_default());
        r.push(self.phase.clone().unwrap_or_default());
        r
    }
}

/// Streams rows to a CSV and a JSONL sink.
pub struct LogWriter<C: Write, J: Write> {
    csv: csv::Writer<C>,
    jsonl: J,
    header_written: bool,
    rows: u64,
}

impl<C: Write, J: Write> LogWriter<C, J> {
    pub fn new(csv_sink: C, jsonl: J) -> Self {
        Self { csv: csv::Writer::from_writer(csv_sink), jsonl, header_written: false, rows: 0 }
    }

    pub fn write(&mut self, row: &LogRow) -> std::io::Result<()> {
        if !self.header_written {
            self.csv.write_record(row.header())?;
            self.header_written = true;
        }
        self.csv.write_record(row.record())?;
        serde_json::to_writer(&mut self.jsonl, row)?;
        self.jsonl.write_all(b"\n")?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> std::io::Result<(C, J)> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        let csv = self.csv.into_inner().map_err(|e| e.into_error())?;
        Ok((csv, self.jsonl))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64) -> LogRow {
        let mut q = BTreeMap::new();
        q.insert("right_arm".into(), vec![0.1, 0.2]);
        LogRow {
            step,
            t: step as f64 * 0.01,
            q,
            base: [0.0, 0.0, 0.0, 1.0],
            beta: Vec3::new(0.5, 0.5, 0.5),
            w: Vec3::repeat(1.0),
            f_s: [Vec3::zeros(), Vec3::zeros()],
            f_bar: None,
            bt: "SR-".into(),
            active: vec!["arm_tracking".into()],
            control_point: None,
            spot: None,
            phase: None,
        }
    }

    #[test]
    fn csv_and_json_line_counts() {
        let mut w = LogWriter::new(Vec::new(), Vec::new());
        for i in 0..3 {
            w.write(&row(i)).unwrap();
        }
        let (csv, json) = w.finish().unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("step,t,q_right_arm_0,q_right_arm_1,base_x"));
        let json = String::from_utf8(json).unwrap();
        assert_eq!(json.lines().count(), 3);
        let back: LogRow = serde_json::from_str(json.lines().next().unwrap()).unwrap();
        assert_eq!(back, row(0));
    }
}
