//! Sensor sequences, their on-disk format, ground-truth targets and the
//! training-window samplers.

mod io;
mod sampling;
mod targets;

pub use io::{load_meta, load_sequence, save_sequence, CSV_HEADER};
pub use sampling::{
    sample_resnet, sample_rnn, sample_windows_every, sample_windows_random_gap, SampleWindow,
    RESNET_STEP, RESNET_WINDOW, RNN_GAP, RNN_WINDOW,
};
pub use targets::{
    dense_velocity_3d, dense_velocity_target, gaussian_kernel, gaussian_smooth, strided_target,
    VelocityTarget, DEFAULT_SIGMA_FRAMES, STRIDE_FRAMES,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{rotate_z, to_hacf, UnitQuaternion, Vec3, YawAngle};

/// Nominal IMU rate.
pub const RATE_HZ: f64 = 200.0;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("malformed row {row}: {msg}")]
    MalformedRow { row: usize, msg: String },
    #[error("timestamps not strictly increasing at frame {0}")]
    NonMonotonicTime(usize),
    #[error("quaternion at frame {0} is not unit length")]
    NonUnitQuaternion(usize),
    #[error("channel `{channel}` has {found} frames, expected {expected}")]
    LengthMismatch { channel: &'static str, expected: usize, found: usize },
    #[error("sequence too short: {len} frames, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("median frame interval {median_dt} s deviates more than 10% from {expected} s")]
    IrregularRate { median_dt: f64, expected: f64 },
    #[error("frame range {start}..{end} outside sequence of {len} frames")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("sequence has no ground-truth heading")]
    MissingHeading,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Val,
    TestSeen,
    TestUnseen,
}

impl Split {
    pub fn is_test(self) -> bool {
        matches!(self, Split::TestSeen | Split::TestUnseen)
    }
}

/// Sidecar metadata stored next to each sequence CSV as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub subject: String,
    pub device: String,
    pub split: Split,
    pub rate_hz: f64,
}

impl Default for SequenceMeta {
    fn default() -> Self {
        Self {
            subject: "unknown".into(),
            device: "unknown".into(),
            split: Split::Train,
            rate_hz: RATE_HZ,
        }
    }
}

/// One recording: IMU channels, device orientation and ground truth, all
/// indexed by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    pub name: String,
    pub timestamps: Vec<f64>,
    /// Device-frame angular rate, rad/s.
    pub gyro: Vec<Vec3>,
    /// Device-frame specific force (gravity included), m/s^2.
    pub accel: Vec<Vec3>,
    /// Device-to-world orientation.
    pub q_device: Vec<UnitQuaternion>,
    /// World-frame position, m.
    pub gt_pos: Vec<Vec3>,
    /// Body heading, rad.
    pub gt_heading: Option<Vec<f64>>,
    pub meta: SequenceMeta,
}

impl SensorSequence {
    /// Checks the structural invariants: equal channel lengths (at least 2
    /// frames), strictly increasing time, and a median rate within 10% of
    /// `meta.rate_hz`.
    pub fn validate(&self) -> Result<(), SeqError> {
        let n = self.timestamps.len();
        if n < 2 {
            return Err(SeqError::TooShort { len: n, min: 2 });
        }
        let check = |channel: &'static str, found: usize| {
            if found != n {
                Err(SeqError::LengthMismatch { channel, expected: n, found })
            } else {
                Ok(())
            }
        };
        check("gyro", self.gyro.len())?;
        check("accel", self.accel.len())?;
        check("q_device", self.q_device.len())?;
        check("gt_pos", self.gt_pos.len())?;
        if let Some(h) = &self.gt_heading {
            check("gt_heading", h.len())?;
        }
        for i in 1..n {
            if !(self.timestamps[i] > self.timestamps[i - 1]) {
                return Err(SeqError::NonMonotonicTime(i));
            }
        }
        let mut dts: Vec<f64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        dts.sort_by(f64::total_cmp);
        let median = dts[dts.len() / 2];
        let expected = 1.0 / self.meta.rate_hz;
        if (median - expected).abs() > 0.1 * expected {
            return Err(SeqError::IrregularRate { median_dt: median, expected });
        }
        Ok(())
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

    pub fn rate_hz(&self) -> f64 {
        self.meta.rate_hz
    }

    fn check_range(&self, start: usize, len: usize) -> Result<(), SeqError> {
        let end = start.saturating_add(len);
        if len == 0 || end > self.len() {
            return Err(SeqError::OutOfRange { start, end, len: self.len() });
        }
        Ok(())
    }

    /// Network input for frames `start..start + len`: columns 0-2 are the
    /// gyro and 3-5 the accelerometer, each rotated into the HACF given by
    /// that frame's orientation and the window-wide `yaw`.
    pub fn window_features(
        &self,
        start: usize,
        len: usize,
        yaw: YawAngle,
    ) -> Result<Vec<[f64; 6]>, SeqError> {
        self.check_range(start, len)?;
        Ok((start..start + len)
            .map(|i| {
                let q = self.q_device[i];
                let g = to_hacf(q, yaw, self.gyro[i]);
                let a = to_hacf(q, yaw, self.accel[i]);
                [g.x, g.y, g.z, a.x, a.y, a.z]
            })
            .collect())
    }

    /// Raw device-frame IMU rows, the input of the local-frame ablation.
    pub fn window_features_local(&self, start: usize, len: usize) -> Result<Vec<[f64; 6]>, SeqError> {
        self.check_range(start, len)?;
        Ok((start..start + len)
            .map(|i| {
                let (g, a) = (self.gyro[i], self.accel[i]);
                [g.x, g.y, g.z, a.x, a.y, a.z]
            })
            .collect())
    }

    /// Per-frame rotation from the device frame into the HACF selected by
    /// `yaw`, as row-major 3x3 matrices.
    pub fn hacf_rotations(&self, start: usize, len: usize, yaw: YawAngle) -> Result<Vec<[[f64; 3]; 3]>, SeqError> {
        self.check_range(start, len)?;
        let rz = UnitQuaternion::from_yaw(yaw.radians());
        Ok((start..start + len).map(|i| (rz * self.q_device[i]).to_matrix()).collect())
    }

    /// Ground-truth XY displacement between frames `from` and `to`, rotated
    /// into the HACF selected by `yaw`.
    pub fn displacement_hacf(&self, from: usize, to: usize, yaw: YawAngle) -> Result<[f64; 2], SeqError> {
        if from >= self.len() || to >= self.len() {
            return Err(SeqError::OutOfRange { start: from.min(to), end: from.max(to) + 1, len: self.len() });
        }
        let d = rotate_z(self.gt_pos[to] - self.gt_pos[from], yaw);
        Ok([d.x, d.y])
    }

    /// Frame index of the first timestamp `>= t`, clamped to the last frame.
    pub fn frame_at(&self, t: f64) -> usize {
        self.timestamps.partition_point(|&s| s < t).min(self.len().saturating_sub(1))
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Sequence with positions from `pos(t)`, identity orientation,
    /// stationary IMU readings and heading 0.
    pub fn sequence_from_positions(n: usize, pos: impl Fn(f64) -> Vec3) -> SensorSequence {
        let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / RATE_HZ).collect();
        SensorSequence {
            name: "test".into(),
            gt_pos: timestamps.iter().map(|&t| pos(t)).collect(),
            gyro: vec![Vec3::ZERO; n],
            accel: vec![Vec3::new(0.0, 0.0, 9.80665); n],
            q_device: vec![UnitQuaternion::IDENTITY; n],
            gt_heading: Some(vec![0.0; n]),
            timestamps,
            meta: SequenceMeta::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::sequence_from_positions;
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn stationary_features() {
        let s = sequence_from_positions(50, |_| Vec3::ZERO);
        let f = s.window_features(0, 50, YawAngle::new(0.0)).unwrap();
        for row in &f {
            assert_eq!(&row[..5], &[0.0; 5]);
            assert_eq!(row[5], 9.80665);
        }
    }

    #[test]
    fn yaw_pi_negates_horizontal_columns() {
        let mut s = sequence_from_positions(20, |t| Vec3::new(t, 0.0, 0.0));
        for (i, a) in s.accel.iter_mut().enumerate() {
            *a = Vec3::new(0.3 * i as f64, -0.1, 9.8);
        }
        for g in s.gyro.iter_mut() {
            *g = Vec3::new(0.01, 0.02, 0.03);
        }
        s.q_device = vec![UnitQuaternion::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.7); 20];
        let a = s.window_features(2, 10, YawAngle::new(0.0)).unwrap();
        let b = s.window_features(2, 10, YawAngle::new(PI)).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for c in [0, 1, 3, 4] {
                assert!((ra[c] + rb[c]).abs() < 1e-12);
            }
            for c in [2, 5] {
                assert_eq!(ra[c], rb[c]);
            }
        }
    }

    #[test]
    fn window_bounds() {
        let s = sequence_from_positions(20, |_| Vec3::ZERO);
        assert!(matches!(s.window_features(15, 10, YawAngle::new(0.0)), Err(SeqError::OutOfRange { .. })));
        assert!(s.window_features(10, 10, YawAngle::new(0.0)).is_ok());
    }

    #[test]
    fn validation_catches_bad_time() {
        let mut s = sequence_from_positions(10, |_| Vec3::ZERO);
        s.timestamps[4] = s.timestamps[3];
        assert!(matches!(s.validate(), Err(SeqError::NonMonotonicTime(4))));
        let mut s = sequence_from_positions(10, |_| Vec3::ZERO);
        s.gyro.pop();
        assert!(matches!(s.validate(), Err(SeqError::LengthMismatch { channel: "gyro", .. })));
        let mut s = sequence_from_positions(10, |_| Vec3::ZERO);
        s.meta.rate_hz = 100.0;
        assert!(matches!(s.validate(), Err(SeqError::IrregularRate { .. })));
    }
}
