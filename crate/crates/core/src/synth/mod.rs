//! Synthetic walking trajectories and the IMU streams they imply.
//!
//! Positions are generated from a smooth speed/heading description and the
//! IMU channels are derived from them by finite differences, so naive double
//! integration of a noise-free stream recovers the positions up to
//! discretization error. Walking specs can add a gait pattern: a vertical
//! bounce at the step frequency and an asymmetric along-track surge whose
//! amplitude scales with speed.

mod dataset;
mod imu;
mod trajectory;

pub use dataset::{gen_dataset, DatasetSpec, SubjectParams, SubjectRanges};
pub use imu::{imu_from_trajectory, ImuNoiseModel, GRAVITY};
pub use trajectory::{gen_trajectory, GaitSpec, GroundTruth, PathKind, TrajectorySpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("trajectory too short: {len} frames, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error(transparent)]
    Seq(#[from] crate::seqdata::SeqError),
}
