//! Ground-truth supervision built from positions.

use super::{SensorSequence, SeqError};
use crate::geom::Vec3;

/// Smoothing width used for dense velocity targets, in frames.
pub const DEFAULT_SIGMA_FRAMES: f64 = 30.0;
/// Positional-difference stride (one second at 200 Hz).
pub const STRIDE_FRAMES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityTarget {
    /// Smoothed per-frame world XY velocity, m/s; one entry per frame.
    Dense { sigma_frames: f64, velocity: Vec<[f64; 2]> },
    /// XY displacement over `stride` frames, m; entry `k` belongs to frame
    /// `k + stride`.
    Strided { stride: usize, displacement: Vec<[f64; 2]> },
}

impl VelocityTarget {
    pub fn len(&self) -> usize {
        match self {
            VelocityTarget::Dense { velocity, .. } => velocity.len(),
            VelocityTarget::Strided { displacement, .. } => displacement.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at frame `i`, if defined there.
    pub fn at(&self, i: usize) -> Option<[f64; 2]> {
        match self {
            VelocityTarget::Dense { velocity, .. } => velocity.get(i).copied(),
            VelocityTarget::Strided { stride, displacement } => {
                i.checked_sub(*stride).and_then(|k| displacement.get(k).copied())
            }
        }
    }
}

/// Truncated (4 sigma) Gaussian kernel, unnormalized, centred at index `radius`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect()
}

/// Gaussian smoothing with the kernel renormalized over the samples that
/// exist near the ends (no reflection or padding).
pub fn gaussian_smooth(values: &[Vec3], sigma: f64) -> Vec<Vec3> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() - 1) / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let (mut acc, mut wsum) = (Vec3::ZERO, 0.0);
            for (j, v) in values.iter().enumerate().take(hi + 1).skip(lo) {
                let w = kernel[j + radius - i];
                acc = acc + v.scale(w);
                wsum += w;
            }
            acc.scale(1.0 / wsum)
        })
        .collect()
}

fn finite_difference_velocity(seq: &SensorSequence) -> Vec<Vec3> {
    let (t, p) = (&seq.timestamps, &seq.gt_pos);
    let n = t.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                // second-order one-sided, assumes near-uniform spacing
                let h = 0.5 * (t[2] - t[0]);
                (p[1].scale(4.0) - p[0].scale(3.0) - p[2]).scale(1.0 / (2.0 * h))
            } else if i == n - 1 {
                let h = 0.5 * (t[n - 1] - t[n - 3]);
                (p[n - 1].scale(3.0) - p[n - 2].scale(4.0) + p[n - 3]).scale(1.0 / (2.0 * h))
            } else {
                (p[i + 1] - p[i - 1]).scale(1.0 / (t[i + 1] - t[i - 1]))
            }
        })
        .collect()
}

/// Smoothed 3D world velocity (used by the local-frame ablation).
pub fn dense_velocity_3d(seq: &SensorSequence, sigma_frames: f64) -> Result<Vec<Vec3>, SeqError> {
    if seq.len() < 3 {
        return Err(SeqError::TooShort { len: seq.len(), min: 3 });
    }
    Ok(gaussian_smooth(&finite_difference_velocity(seq), sigma_frames))
}

/// Central finite differences of the XY positions followed by Gaussian
/// smoothing over `sigma_frames`.
pub fn dense_velocity_target(seq: &SensorSequence, sigma_frames: f64) -> Result<VelocityTarget, SeqError> {
    let v = dense_velocity_3d(seq, sigma_frames)?;
    Ok(VelocityTarget::Dense { sigma_frames, velocity: v.into_iter().map(Vec3::xy).collect() })
}

/// `gt_pos[i].xy - gt_pos[i - stride].xy`.
pub fn strided_target(seq: &SensorSequence, i: usize, stride: usize) -> Result<[f64; 2], SeqError> {
    if i < stride || i >= seq.len() {
        return Err(SeqError::OutOfRange { start: i.saturating_sub(stride), end: i + 1, len: seq.len() });
    }
    let d = seq.gt_pos[i] - seq.gt_pos[i - stride];
    Ok([d.x, d.y])
}
