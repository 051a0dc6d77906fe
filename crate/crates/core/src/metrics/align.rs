//! Closed-form rigid 2D alignment over the opening seconds of a trajectory.

use serde::{Deserialize, Serialize};

use super::{MetricsError, Trajectory2D};
use crate::geom::wrap_angle;

/// Length of the alignment window, seconds.
pub const ALIGN_WINDOW_S: f64 = 5.0;

/// `p -> R(rotation) p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentSE2 {
    pub rotation: f64,
    pub translation: [f64; 2],
    /// The estimate did not move in the window, so only a translation was fitted.
    pub degenerate: bool,
}

impl AlignmentSE2 {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [c * p[0] - s * p[1] + self.translation[0], s * p[0] + c * p[1] + self.translation[1]]
    }
}

/// Rotation and translation taking `est` onto `gt` with least squared
/// error over the ground-truth frames in the first five seconds.
pub fn align_first_5s(est: &Trajectory2D, gt: &Trajectory2D) -> Result<AlignmentSE2, MetricsError> {
    if est.is_empty() || gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let t0 = gt.timestamps[0];
    let overlap = gt.duration().min(est.timestamps[est.len() - 1] - t0);
    // half a frame of slack for the sampling grid
    let slack = if gt.len() > 1 { 0.5 * gt.duration() / (gt.len() - 1) as f64 } else { 0.0 };
    if overlap + slack < ALIGN_WINDOW_S {
        return Err(MetricsError::TooShort { needed_s: ALIGN_WINDOW_S, got_s: overlap });
    }
    let n = gt.timestamps.partition_point(|&t| t <= t0 + ALIGN_WINDOW_S + 1e-9);
    let g = &gt.positions[..n];
    let e = est.resample(&gt.timestamps[..n]);
    let mean = |v: &[[f64; 2]]| {
        let s = v.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / v.len() as f64, s[1] / v.len() as f64]
    };
    let (me, mg) = (mean(&e), mean(g));
    let (mut sxx, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for (a, b) in e.iter().zip(g) {
        let (ex, ey) = (a[0] - me[0], a[1] - me[1]);
        let (gx, gy) = (b[0] - mg[0], b[1] - mg[1]);
        sxx += ex * gx + ey * gy;
        cross += ex * gy - ey * gx;
        spread += ex * ex + ey * ey;
    }
    let scale = g.iter().map(|p| p[0].abs() + p[1].abs()).fold(1.0, f64::max);
    if spread <= 1e-24 * scale * scale * n as f64 {
        return Ok(AlignmentSE2 { rotation: 0.0, translation: [mg[0] - me[0], mg[1] - me[1]], degenerate: true });
    }
    let rotation = wrap_angle(cross.atan2(sxx));
    let r = AlignmentSE2 { rotation, translation: [0.0, 0.0], degenerate: false }.apply(me);
    Ok(AlignmentSE2 { rotation, translation: [mg[0] - r[0], mg[1] - r[1]], degenerate: false })
}
