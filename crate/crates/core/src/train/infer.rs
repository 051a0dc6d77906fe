//! Running trained networks over whole sequences.

use super::{InputFrame, TrainError};
use crate::autodiff::Tensor;
use crate::geom::YawAngle;
use crate::metrics::{integrate_latent, integrate_resnet, Trajectory2D};
use crate::models::{Model, ModelConfig, ModelError};
use crate::par::Exec;
use crate::seqdata::SensorSequence;

/// Window models predict every this many frames.
pub const RESNET_PREDICT_STEP: usize = 5;

const PREDICT_BATCH: usize = 64;

/// Trajectory estimated by a velocity network, starting at the ground
/// truth's initial position. Inputs use the HACF with zero yaw, i.e. the
/// world frame of the device orientations.
///
/// Window models predict every five frames and are integrated with
/// [`integrate_resnet`]; sequence models give per-frame velocities that
/// are scaled by the frame period and summed with [`integrate_latent`].
pub fn predict_trajectory(model: &Model, seq: &SensorSequence, frame: InputFrame, exec: Exec) -> Result<Trajectory2D, TrainError> {
    let rate = seq.rate_hz();
    let origin = seq.gt_pos.first().map(|p| p.xy()).unwrap_or([0.0, 0.0]);
    let yaw = YawAngle::new(0.0);
    match model.config() {
        ModelConfig::Heading(_) => Err(ModelError::WrongArchitecture { expected: "velocity", found: "heading" }.into()),
        ModelConfig::Resnet(c) => {
            let w = c.window;
            if seq.len() < w + RESNET_PREDICT_STEP {
                return Err(crate::seqdata::SeqError::TooShort { len: seq.len(), min: w + RESNET_PREDICT_STEP }.into());
            }
            let starts: Vec<usize> = (0..=seq.len() - w).step_by(RESNET_PREDICT_STEP).collect();
            let mut preds = Vec::with_capacity(starts.len());
            for chunk in starts.chunks(PREDICT_BATCH) {
                let feats = chunk.iter().map(|&s| seq.window_features(s, w, yaw)).collect::<Result<Vec<_>, _>>()?;
                let y = model.predict_windows(&Tensor::from_frames(&feats)?, exec)?;
                preds.extend(y.data().chunks(2).map(|r| [r[0], r[1]]));
            }
            // the first prediction covers the step ending at frame w - 1
            let first = w - 1 - RESNET_PREDICT_STEP;
            let t0 = seq.timestamps[first];
            let anchor = seq.gt_pos[first].xy();
            Ok(integrate_resnet(&preds, t0, rate, RESNET_PREDICT_STEP).translated(anchor))
        }
        _ => {
            let n = seq.len();
            let feats = match frame {
                InputFrame::Hacf => seq.window_features(0, n, yaw)?,
                InputFrame::Local => seq.window_features_local(0, n)?,
            };
            let (y, _) = model.predict_seq(&Tensor::from_frames(&[feats])?, None, exec)?;
            let dt = 1.0 / rate;
            let out = y.dim(1);
            let d = y.data();
            let latent: Vec<[f64; 2]> = (1..n)
                .map(|t| match frame {
                    InputFrame::Hacf => [d[t] * dt, d[n + t] * dt],
                    InputFrame::Local => {
                        let v = crate::geom::Vec3::new(d[t], d[n + t], if out > 2 { d[2 * n + t] } else { 0.0 });
                        let w = seq.q_device[t].rotate(v);
                        [w.x * dt, w.y * dt]
                    }
                })
                .collect();
            Ok(integrate_latent(&latent, seq.timestamps[0], rate).translated(origin))
        }
    }
}

/// Per-frame `(sin, cos)` heading predictions of a heading network, in the
/// world frame of the device orientations.
pub fn predict_heading(model: &Model, seq: &SensorSequence, exec: Exec) -> Result<Vec<[f64; 2]>, TrainError> {
    if !matches!(model.config(), ModelConfig::Heading(_)) {
        return Err(ModelError::WrongArchitecture { expected: "heading", found: model.config().name() }.into());
    }
    let n = seq.len();
    let feats = seq.window_features(0, n, YawAngle::new(0.0))?;
    let (y, _) = model.predict_seq(&Tensor::from_frames(&[feats])?, None, exec)?;
    let d = y.data();
    Ok((0..n).map(|t| [d[t], d[n + t]]).collect())
}
