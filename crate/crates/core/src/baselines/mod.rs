//! Classical comparators: naive double integration of the accelerometer and
//! pedestrian dead reckoning from detected steps.

mod filter;

pub use filter::{filtfilt, Biquad};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{yaw_of, Vec3};
use crate::metrics::Trajectory2D;
use crate::seqdata::SensorSequence;
use crate::synth::GRAVITY;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("sequence has {len} frames, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid pdr config: {0}")]
    InvalidConfig(String),
}

/// Naive double integration: gravity-compensated world acceleration,
/// integrated twice with the trapezoid rule from rest at the origin.
pub fn ndi(seq: &SensorSequence, gravity: f64) -> Result<Trajectory2D, BaselineError> {
    let n = seq.len();
    if n < 2 {
        return Err(BaselineError::TooShort { len: n, min: 2 });
    }
    let g = Vec3::new(0.0, 0.0, gravity);
    let a: Vec<Vec3> = (0..n).map(|i| seq.q_device[i].rotate(seq.accel[i]) - g).collect();
    let mut v = Vec3::ZERO;
    let mut p = Vec3::ZERO;
    let mut pos = Vec::with_capacity(n);
    pos.push([0.0, 0.0]);
    for i in 1..n {
        let dt = seq.timestamps[i] - seq.timestamps[i - 1];
        let v_next = v + (a[i] + a[i - 1]).scale(0.5 * dt);
        p = p + (v + v_next).scale(0.5 * dt);
        v = v_next;
        pos.push(p.xy());
    }
    Ok(Trajectory2D { timestamps: seq.timestamps.clone(), positions: pos })
}

/// [`ndi`] with standard gravity.
pub fn ndi_default(seq: &SensorSequence) -> Result<Trajectory2D, BaselineError> {
    ndi(seq, GRAVITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdrConfig {
    /// Distance advanced per detected step, metres.
    pub step_length_m: f64,
    /// Pass band of the step detector, Hz.
    pub band_hz: [f64; 2],
    /// Minimum filtered peak height, m/s^2.
    pub peak_threshold: f64,
    /// Minimum time between steps, seconds.
    pub min_interval_s: f64,
}

impl Default for PdrConfig {
    fn default() -> Self {
        Self { step_length_m: 0.67, band_hz: [0.8, 3.0], peak_threshold: 0.4, min_interval_s: 0.25 }
    }
}

impl PdrConfig {
    pub fn validate(&self, rate_hz: f64) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidConfig(m.to_string()));
        if !(self.step_length_m > 0.0) || !(self.min_interval_s > 0.0) {
            return bad("step length and minimum interval must be positive");
        }
        let [lo, hi] = self.band_hz;
        if !(lo > 0.0 && lo < hi && hi < 0.5 * rate_hz) {
            return bad("band must satisfy 0 < low < high < nyquist");
        }
        if !self.peak_threshold.is_finite() {
            return bad("peak threshold must be finite");
        }
        Ok(())
    }
}

/// Band-passed accelerometer magnitude minus gravity, the step detector's input.
pub fn step_signal(seq: &SensorSequence, cfg: &PdrConfig) -> Result<Vec<f64>, BaselineError> {
    let rate = seq.rate_hz();
    cfg.validate(rate)?;
    let raw: Vec<f64> = seq.accel.iter().map(|a| a.norm() - GRAVITY).collect();
    let sections = [Biquad::butter_highpass(cfg.band_hz[0], rate), Biquad::butter_lowpass(cfg.band_hz[1], rate)];
    Ok(filtfilt(&sections, &raw, (2.0 * rate / cfg.band_hz[0]).ceil() as usize))
}

/// Frames of detected steps: local maxima of the step signal above the
/// threshold, at least `min_interval_s` apart (the larger peak wins).
pub fn detect_steps(seq: &SensorSequence, cfg: &PdrConfig) -> Result<Vec<usize>, BaselineError> {
    if seq.len() < 3 {
        return Ok(Vec::new());
    }
    let x = step_signal(seq, cfg)?;
    let min_gap = cfg.min_interval_s;
    let mut steps: Vec<usize> = Vec::new();
    for i in 1..x.len() - 1 {
        if !(x[i] > cfg.peak_threshold && x[i] > x[i - 1] && x[i] >= x[i + 1]) {
            continue;
        }
        match steps.last() {
            Some(&j) if seq.timestamps[i] - seq.timestamps[j] < min_gap => {
                if x[i] > x[j] {
                    *steps.last_mut().expect("non-empty") = i;
                }
            }
            _ => steps.push(i),
        }
    }
    Ok(steps)
}

/// Dead reckoning: every step advances `step_length_m` along the device
/// heading at the step frame. Positions are held between steps.
pub fn pdr(seq: &SensorSequence, cfg: &PdrConfig) -> Result<Trajectory2D, BaselineError> {
    let steps = detect_steps(seq, cfg)?;
    let mut pos = Vec::with_capacity(seq.len());
    let mut p = [0.0, 0.0];
    let mut next = steps.iter().peekable();
    let mut heading = 0.0;
    for i in 0..seq.len() {
        if let Ok(y) = yaw_of(seq.q_device[i]) {
            heading = y.radians();
        }
        if next.peek() == Some(&&i) {
            next.next();
            p = [p[0] + cfg.step_length_m * heading.cos(), p[1] + cfg.step_length_m * heading.sin()];
        }
        pos.push(p);
    }
    Ok(Trajectory2D { timestamps: seq.timestamps.clone(), positions: pos })
}
