//! Losses, batch assembly, the training loop and full-sequence prediction.
//!
//! Objectives:
//!
//! * strided: a window model's output against the 200-frame positional
//!   difference ending at the window's last frame (MSE);
//! * dense velocity: the same window model against the smoothed velocity
//!   at the last frame (ablation);
//! * latent: per-frame velocities times the frame period are summed over
//!   the window and compared with the positional difference (L2 norm);
//! * direct MSE: per-frame velocities against smoothed velocity targets
//!   (ablation);
//! * heading: per-frame `(sin, cos)` regression plus a unit-norm penalty,
//!   with updates only from windows that start in motion.
//!
//! Network outputs are velocities in m/s; for the latent objective the
//! latent row of frame `j` is `v_j * dt`, the displacement over
//! `(j - 1, j]`.

mod batch;
mod config;
mod fit;
mod infer;
mod losses;

pub use batch::{Batch, WindowData};
pub use config::{InputFrame, Objective, TrainConfig};
pub use fit::{fit, write_log_csv, EpochRecord, TrainOutcome, Trainer};
pub use infer::{predict_heading, predict_trajectory, RESNET_PREDICT_STEP};
pub use losses::{
    heading_loss, heading_loss_graph, heading_update_mask, latent_loss_graph, latent_velocity_loss, mse2,
    strided_velocity_loss, velocity_mask, MASK_SPEED_MPS,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::models::ModelError;
use crate::seqdata::SeqError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("loss diverged (non-finite) in epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sequence `{0}` has no ground-truth heading")]
    MissingHeading(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
