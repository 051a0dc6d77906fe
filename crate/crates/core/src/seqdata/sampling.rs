//! Training-window samplers.
//!
//! Window-based models take a fixed-length window every few frames; recurrent
//! and temporal-convolution models take longer windows separated by a random
//! gap. Every window carries its own random horizontal rotation so the
//! training frame changes from sample to sample.

use std::f64::consts::TAU;
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::YawAngle;

pub const RESNET_WINDOW: usize = 200;
pub const RESNET_STEP: usize = 10;
pub const RNN_WINDOW: usize = 400;
pub const RNN_GAP: RangeInclusive<usize> = 50..=150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    /// Index of the sequence within its dataset.
    pub seq: usize,
    pub start: usize,
    pub len: usize,
    pub yaw: YawAngle,
}

impl SampleWindow {
    /// One past the last frame.
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }
}

fn random_yaw<R: Rng + ?Sized>(rng: &mut R) -> YawAngle {
    YawAngle::new(rng.gen_range(0.0..TAU))
}

/// Windows of `len` frames starting at `0, step, 2 step, ...`.
pub fn sample_windows_every<R: Rng + ?Sized>(
    n_frames: usize,
    seq: usize,
    len: usize,
    step: usize,
    rng: &mut R,
) -> Vec<SampleWindow> {
    assert!(step > 0 && len > 0);
    if n_frames < len {
        return Vec::new();
    }
    (0..=n_frames - len)
        .step_by(step)
        .map(|start| SampleWindow { seq, start, len, yaw: random_yaw(rng) })
        .collect()
}

/// Windows of `len` frames whose consecutive starts differ by a gap drawn
/// uniformly from `gap`.
pub fn sample_windows_random_gap<R: Rng + ?Sized>(
    n_frames: usize,
    seq: usize,
    len: usize,
    gap: RangeInclusive<usize>,
    rng: &mut R,
) -> Vec<SampleWindow> {
    assert!(*gap.start() > 0 && len > 0);
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= n_frames {
        out.push(SampleWindow { seq, start, len, yaw: random_yaw(rng) });
        start += rng.gen_range(gap.clone());
    }
    out
}

/// 200-frame windows every 10 frames.
pub fn sample_resnet<R: Rng + ?Sized>(n_frames: usize, seq: usize, rng: &mut R) -> Vec<SampleWindow> {
    sample_windows_every(n_frames, seq, RESNET_WINDOW, RESNET_STEP, rng)
}

/// `len`-frame windows (400 for velocity models) every 50-150 frames.
pub fn sample_rnn<R: Rng + ?Sized>(n_frames: usize, seq: usize, len: usize, rng: &mut R) -> Vec<SampleWindow> {
    sample_windows_random_gap(n_frames, seq, len, RNN_GAP, rng)
}
