//! Timestamped 2D trajectories and the integration rules that turn network
//! outputs into them.

use std::path::Path;

use super::{AlignmentSE2, MetricsError};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory2D {
    pub timestamps: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
}

impl Trajectory2D {
    pub fn new(timestamps: Vec<f64>, positions: Vec<[f64; 2]>) -> Result<Self, MetricsError> {
        if timestamps.len() != positions.len() {
            return Err(MetricsError::LengthMismatch { timestamps: timestamps.len(), positions: positions.len() });
        }
        if let Some(i) = (1..timestamps.len()).find(|&i| !(timestamps[i] > timestamps[i - 1])) {
            return Err(MetricsError::NonMonotonicTime(i));
        }
        Ok(Self { timestamps, positions })
    }

    /// Ground-truth XY track of a sequence.
    pub fn from_ground_truth(seq: &crate::seqdata::SensorSequence) -> Self {
        Self { timestamps: seq.timestamps.clone(), positions: seq.gt_pos.iter().map(|p| p.xy()).collect() }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Linear interpolation at `t`, clamped to the end points.
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        let ts = &self.timestamps;
        let k = ts.partition_point(|&s| s <= t);
        if k == 0 {
            return self.positions[0];
        }
        if k == ts.len() {
            return self.positions[k - 1];
        }
        let (t0, t1) = (ts[k - 1], ts[k]);
        let u = (t - t0) / (t1 - t0);
        let (a, b) = (self.positions[k - 1], self.positions[k]);
        [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
    }

    /// Positions at each of `stamps`. Exact stamps return the stored point.
    pub fn resample(&self, stamps: &[f64]) -> Vec<[f64; 2]> {
        if self.timestamps == stamps {
            return self.positions.clone();
        }
        stamps.iter().map(|&t| self.position_at(t)).collect()
    }

    pub fn translated(&self, d: [f64; 2]) -> Self {
        let positions = self.positions.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect();
        Self { timestamps: self.timestamps.clone(), positions }
    }

    pub fn transformed(&self, a: &AlignmentSE2) -> Self {
        Self { timestamps: self.timestamps.clone(), positions: self.positions.iter().map(|&p| a.apply(p)).collect() }
    }

    /// Writes `t,x,y` rows with a header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "x", "y"])?;
        for (t, p) in self.timestamps.iter().zip(&self.positions) {
            w.write_record([t.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != ["t", "x", "y"] {
            return Err(MetricsError::Malformed(format!("expected header t,x,y, found {}", header.join(","))));
        }
        let (mut ts, mut pos) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64, MetricsError> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| MetricsError::Malformed(format!("row {}: bad field {k}", i + 1)))
            };
            ts.push(num(0)?);
            pos.push([num(1)?, num(2)?]);
        }
        Self::new(ts, pos)
    }
}

/// Integrates window predictions made every `step` frames.
///
/// Each prediction is a displacement over one second (200 frames at
/// 200 Hz), i.e. a mean velocity, and moves the position by
/// `pred * step / rate_hz`. The trajectory starts at the origin at `t0`
/// and gains one point per prediction, `step / rate_hz` seconds apart.
pub fn integrate_resnet(preds: &[[f64; 2]], t0: f64, rate_hz: f64, step: usize) -> Trajectory2D {
    let h = step as f64 / rate_hz;
    integrate(preds, t0, h, h)
}

/// Cumulative sum of per-frame displacements: point `k` is the sum of the
/// first `k` rows, at `t0 + k / rate_hz`.
pub fn integrate_latent(latent: &[[f64; 2]], t0: f64, rate_hz: f64) -> Trajectory2D {
    integrate(latent, t0, 1.0, 1.0 / rate_hz)
}

fn integrate(rows: &[[f64; 2]], t0: f64, gain: f64, dt: f64) -> Trajectory2D {
    let mut ts = Vec::with_capacity(rows.len() + 1);
    let mut pos = Vec::with_capacity(rows.len() + 1);
    let mut p = [0.0, 0.0];
    ts.push(t0);
    pos.push(p);
    for (k, r) in rows.iter().enumerate() {
        p = [p[0] + r[0] * gain, p[1] + r[1] * gain];
        ts.push(t0 + (k + 1) as f64 * dt);
        pos.push(p);
    }
    Trajectory2D { timestamps: ts, positions: pos }
}
