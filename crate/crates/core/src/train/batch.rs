//! Sample windows and their assembly into network batches.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{losses::velocity_mask, InputFrame, Objective, TrainConfig, TrainError};
use crate::autodiff::Tensor;
use crate::geom::{rotate_z, Vec3};
use crate::par::Exec;
use crate::seqdata::{
    dense_velocity_3d, sample_windows_every, sample_windows_random_gap, SampleWindow, SensorSequence, STRIDE_FRAMES,
};

/// A set of sequences prepared for one objective: smoothed velocities are
/// computed once when the objective needs them.
#[derive(Debug, Clone)]
pub struct WindowData<'a> {
    seqs: &'a [SensorSequence],
    dense: Vec<Vec<Vec3>>,
    dt: f64,
}

impl<'a> WindowData<'a> {
    pub fn new(seqs: &'a [SensorSequence], cfg: &TrainConfig, exec: Exec) -> Result<Self, TrainError> {
        let rate = seqs.first().map_or(crate::seqdata::RATE_HZ, |s| s.rate_hz());
        if let Some(s) = seqs.iter().find(|s| (s.rate_hz() - rate).abs() > 1e-9 * rate) {
            return Err(TrainError::InvalidConfig(format!("sequence `{}` has rate {} Hz, expected {rate}", s.name, s.rate_hz())));
        }
        if cfg.objective == Objective::Heading {
            if let Some(s) = seqs.iter().find(|s| s.gt_heading.is_none()) {
                return Err(TrainError::MissingHeading(s.name.clone()));
            }
        }
        let needs_dense = matches!(cfg.objective, Objective::DenseVelocity | Objective::DirectMse | Objective::Heading);
        let dense = if needs_dense {
            exec.map(seqs, |s| dense_velocity_3d(s, cfg.sigma_frames)).into_iter().collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        Ok(Self { seqs, dense, dt: 1.0 / rate })
    }

    pub fn sequences(&self) -> &'a [SensorSequence] {
        self.seqs
    }

    /// Frame period shared by every sequence.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Whether a window carries a usable target for the objective.
    fn usable(&self, w: &SampleWindow, cfg: &TrainConfig) -> bool {
        match cfg.objective {
            Objective::Strided => w.last() >= STRIDE_FRAMES,
            Objective::Latent => w.end() - cfg.loss_frames() >= 1,
            _ => true,
        }
    }

    /// Draws one epoch of windows (random yaw per sample), in shuffled order.
    pub fn sample<R: Rng + ?Sized>(&self, cfg: &TrainConfig, rng: &mut R) -> Vec<SampleWindow> {
        let mut out = Vec::new();
        for (i, s) in self.seqs.iter().enumerate() {
            let ws = match cfg.objective {
                Objective::Strided | Objective::DenseVelocity => {
                    sample_windows_every(s.len(), i, cfg.window, cfg.window_step, rng)
                }
                _ => sample_windows_random_gap(s.len(), i, cfg.window, cfg.window_gap[0]..=cfg.window_gap[1], rng),
            };
            out.extend(ws.into_iter().filter(|w| self.usable(w, cfg)));
        }
        out.shuffle(rng);
        out
    }

    /// The heading update rule for `w`.
    pub fn update_mask(&self, w: &SampleWindow) -> bool {
        match self.dense.get(w.seq) {
            Some(v) => velocity_mask(v[w.start].xy()),
            None => true,
        }
    }
}

/// Network input and targets for a list of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[batch, 6, window]`.
    pub x: Tensor,
    /// `[batch, 2]` for strided, dense and latent objectives; `[batch, out,
    /// loss_frames]` for direct MSE; `[batch, 2, window]` of `(sin, cos)`
    /// for heading.
    pub target: Tensor,
    /// Local frame only: per-frame rotation into the HACF, the first two
    /// rows of each 3x3 matrix, flattened as `[batch, loss_frames, 2, 3]`.
    pub rotations: Option<Vec<f64>>,
}

struct Item {
    x: Vec<[f64; 6]>,
    target: Vec<f64>,
    rot: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn assemble(data: &WindowData<'_>, windows: &[SampleWindow], cfg: &TrainConfig, exec: Exec) -> Result<Self, TrainError> {
        let items: Vec<Item> =
            exec.map(windows, |w| build_item(data, w, cfg)).into_iter().collect::<Result<_, TrainError>>()?;
        let x = Tensor::from_frames(&items.iter().map(|i| i.x.clone()).collect::<Vec<_>>())?;
        let b = items.len();
        let per = items.first().map_or(0, |i| i.target.len());
        let tshape = match cfg.objective {
            Objective::Strided | Objective::DenseVelocity | Objective::Latent => vec![b, 2],
            Objective::DirectMse => vec![b, cfg.expected_out_dim(), cfg.loss_frames()],
            Objective::Heading => vec![b, 2, cfg.window],
        };
        debug_assert_eq!(tshape.iter().skip(1).product::<usize>(), per);
        let target = Tensor::new(&tshape, items.iter().flat_map(|i| i.target.iter().copied()).collect())?;
        let rotations = (cfg.frame == InputFrame::Local && cfg.objective == Objective::Latent)
            .then(|| items.iter().flat_map(|i| i.rot.iter().copied()).collect());
        Ok(Self { x, target, rotations })
    }
}

fn build_item(data: &WindowData<'_>, w: &SampleWindow, cfg: &TrainConfig) -> Result<Item, TrainError> {
    let seq = &data.seqs[w.seq];
    let x = match cfg.frame {
        InputFrame::Hacf => seq.window_features(w.start, w.len, w.yaw)?,
        InputFrame::Local => seq.window_features_local(w.start, w.len)?,
    };
    let last = w.last();
    let s = cfg.loss_frames();
    let first_summed = w.end() - s;
    let mut rot = Vec::new();
    let target = match cfg.objective {
        Objective::Strided => seq.displacement_hacf(last - STRIDE_FRAMES, last, w.yaw)?.to_vec(),
        Objective::DenseVelocity => {
            let v = rotate_z(data.dense[w.seq][last], w.yaw);
            vec![v.x, v.y]
        }
        Objective::Latent => {
            if cfg.frame == InputFrame::Local {
                for m in seq.hacf_rotations(first_summed, s, w.yaw)? {
                    rot.extend_from_slice(&m[0]);
                    rot.extend_from_slice(&m[1]);
                }
            }
            seq.displacement_hacf(first_summed - 1, last, w.yaw)?.to_vec()
        }
        Objective::DirectMse => {
            let vel = &data.dense[w.seq][first_summed..w.end()];
            let rows: Vec<Vec3> = match cfg.frame {
                InputFrame::Hacf => vel.iter().map(|v| rotate_z(*v, w.yaw)).collect(),
                InputFrame::Local => {
                    vel.iter().zip(&seq.q_device[first_summed..w.end()]).map(|(v, q)| q.inverse().rotate(*v)).collect()
                }
            };
            let mut t: Vec<f64> = rows.iter().map(|v| v.x).collect();
            t.extend(rows.iter().map(|v| v.y));
            if cfg.frame == InputFrame::Local {
                t.extend(rows.iter().map(|v| v.z));
            }
            t
        }
        Objective::Heading => {
            let h = seq.gt_heading.as_ref().ok_or_else(|| TrainError::MissingHeading(seq.name.clone()))?;
            let th = &h[w.start..w.end()];
            let yaw = w.yaw.radians();
            let mut t: Vec<f64> = th.iter().map(|t| (t + yaw).sin()).collect();
            t.extend(th.iter().map(|t| (t + yaw).cos()));
            t
        }
    };
    Ok(Item { x, target, rot })
}
