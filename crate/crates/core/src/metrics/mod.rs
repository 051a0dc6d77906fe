//! Trajectory integration of network outputs, rigid alignment and the
//! trajectory / heading error metrics.
//!
//! Every metric compares an estimate against ground truth at the ground
//! truth's timestamps; the estimate is linearly interpolated there (and
//! clamped at its ends).

mod align;
mod heading;
mod traj;

pub use align::{align_first_5s, AlignmentSE2, ALIGN_WINDOW_S};
pub use heading::{device_heading_baseline, heading_metrics, HeadingMetrics};
pub use traj::{integrate_latent, integrate_resnet, Trajectory2D};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default RTE interval, seconds.
pub const RTE_INTERVAL_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory has {positions} positions but {timestamps} timestamps")]
    LengthMismatch { timestamps: usize, positions: usize },
    #[error("timestamps must increase strictly (index {0})")]
    NonMonotonicTime(usize),
    #[error("trajectory is empty")]
    Empty,
    #[error("need at least {needed_s} s of overlap, got {got_s} s")]
    TooShort { needed_s: f64, got_s: f64 },
    #[error("ground-truth heading is missing")]
    MissingHeading,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory file: {0}")]
    Malformed(String),
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence: String,
    pub estimator: String,
    pub ate_m: f64,
    pub rte_m: f64,
    pub heading_mse: Option<f64>,
    pub heading_mae_deg: Option<f64>,
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Root mean squared position error over the ground-truth frames.
pub fn ate(est: &Trajectory2D, gt: &Trajectory2D) -> Result<f64, MetricsError> {
    if est.is_empty() || gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let e = est.resample(&gt.timestamps);
    let sum: f64 = e.iter().zip(&gt.positions).map(|(a, b)| sq_dist(*a, *b)).sum();
    Ok((sum / gt.len() as f64).sqrt())
}

/// Relative trajectory error over non-overlapping windows of `interval_s`.
///
/// Inside each window the estimate is translated so its first frame sits
/// on the ground truth's first frame (no rotation). Complete windows
/// contribute the RMSE over their frames. A window shorter than the
/// interval (the whole sequence when it is short, or a trailing remainder
/// of at least half an interval) contributes its last-frame error scaled
/// by `interval / duration`; shorter remainders are dropped. The result is
/// the mean over contributing windows.
pub fn rte(est: &Trajectory2D, gt: &Trajectory2D, interval_s: f64) -> Result<f64, MetricsError> {
    if est.is_empty() || gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let e = est.resample(&gt.timestamps);
    let windows = rte_windows(&gt.timestamps, interval_s);
    let mut total = 0.0;
    let mut count = 0usize;
    for w in &windows {
        let (a, b) = (w.range.start, w.range.end);
        let offset = [gt.positions[a][0] - e[a][0], gt.positions[a][1] - e[a][1]];
        let shifted = |j: usize| [e[j][0] + offset[0], e[j][1] + offset[1]];
        let err = match w.scale {
            None => {
                let s: f64 = (a..b).map(|j| sq_dist(shifted(j), gt.positions[j])).sum();
                (s / (b - a) as f64).sqrt()
            }
            Some(scale) => sq_dist(shifted(b - 1), gt.positions[b - 1]).sqrt() * scale,
        };
        total += err;
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(total / count as f64)
}

struct RteWindow {
    range: std::ops::Range<usize>,
    /// `Some(interval / duration)` for a partial window.
    scale: Option<f64>,
}

/// Frame ranges of the RTE windows. Durations count one frame period per
/// frame, so 6000 frames at 200 Hz last exactly 30 s.
fn rte_windows(ts: &[f64], interval_s: f64) -> Vec<RteWindow> {
    let n = ts.len();
    let dt = if n > 1 { (ts[n - 1] - ts[0]) / (n - 1) as f64 } else { 0.0 };
    let mut out = Vec::new();
    let mut a = 0;
    while a < n {
        let limit = ts[a] + interval_s - 0.5 * dt;
        let mut b = a;
        while b < n && ts[b] < limit {
            b += 1;
        }
        let b = b.max(a + 1);
        let duration = ts[b - 1] - ts[a] + dt;
        let tol = 1e-9 * interval_s;
        let complete = b < n || duration >= interval_s - tol;
        if complete {
            out.push(RteWindow { range: a..b, scale: None });
        } else if (out.is_empty() || duration >= 0.5 * interval_s - tol) && duration > 0.0 {
            out.push(RteWindow { range: a..b, scale: Some(interval_s / duration) });
        }
        a = b;
    }
    out
}
