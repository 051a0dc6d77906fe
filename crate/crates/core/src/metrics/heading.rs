//! Heading error metrics and the device-orientation heading baseline.

use serde::{Deserialize, Serialize};

use super::{MetricsError, ALIGN_WINDOW_S};
use crate::geom::{wrap_angle, yaw_of};
use crate::seqdata::SensorSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingMetrics {
    /// Mean squared error of `(x, y)` against `(sin, cos)`, over both components.
    pub mse: f64,
    /// Mean absolute wrapped angle error, degrees.
    pub mae_deg: f64,
    /// Frames whose prediction had norm below `1e-6`, so no direction.
    pub degenerate_frames: usize,
}

/// Compares per-frame `(x, y) ~ (sin, cos)` predictions with headings in
/// radians. The predicted angle is `atan2(x, y)`.
pub fn heading_metrics(pred: &[[f64; 2]], gt: &[f64]) -> Result<HeadingMetrics, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { timestamps: gt.len(), positions: pred.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut degenerate_frames = 0;
    for (p, &th) in pred.iter().zip(gt) {
        se += (p[0] - th.sin()).powi(2) + (p[1] - th.cos()).powi(2);
        if p[0].hypot(p[1]) <= 1e-6 {
            degenerate_frames += 1;
        }
        ae += wrap_angle(p[0].atan2(p[1]) - th).abs();
    }
    Ok(HeadingMetrics { mse: se / (2.0 * n), mae_deg: (ae / n).to_degrees(), degenerate_frames })
}

/// Per-frame yaw of the device orientation, shifted by the constant that
/// minimises the mean absolute error against the ground-truth heading over
/// the first five seconds.
pub fn device_heading_baseline(seq: &SensorSequence) -> Result<Vec<f64>, MetricsError> {
    let gt = seq.gt_heading.as_ref().ok_or(MetricsError::MissingHeading)?;
    if seq.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut yaw = Vec::with_capacity(seq.len());
    let mut last = 0.0;
    for q in &seq.q_device {
        // keep the previous value through gimbal-lock frames
        if let Ok(y) = yaw_of(*q) {
            last = y.radians();
        }
        yaw.push(last);
    }
    let t0 = seq.timestamps[0];
    let n = seq.timestamps.partition_point(|&t| t <= t0 + ALIGN_WINDOW_S + 1e-9).max(1);
    let diff: Vec<f64> = (0..n).map(|i| wrap_angle(gt[i] - yaw[i])).collect();
    let cost = |c: f64| diff.iter().map(|d| wrap_angle(d - c).abs()).sum::<f64>();
    // an L1 optimum on the circle sits on one of the samples
    let mut best = (f64::INFINITY, 0.0);
    for &c in &diff {
        let v = cost(c);
        if v < best.0 {
            best = (v, c);
        }
    }
    Ok(yaw.iter().map(|y| wrap_angle(y + best.1)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_wraparound() {
        let th = [0.3, -2.0, 3.1];
        let pred: Vec<[f64; 2]> = th.iter().map(|t: &f64| [t.sin(), t.cos()]).collect();
        let m = heading_metrics(&pred, &th).unwrap();
        assert!(m.mse < 1e-30 && m.mae_deg < 1e-12);
        let a = 10f64.to_radians();
        let m = heading_metrics(&[[a.sin(), a.cos()]], &[350f64.to_radians()]).unwrap();
        assert!((m.mae_deg - 20.0).abs() < 1e-9);
        let m = heading_metrics(&[[0.0, 0.0]], &[0.0]).unwrap();
        assert_eq!(m.degenerate_frames, 1);
        assert!(heading_metrics(&[], &[]).is_err());
    }
}
