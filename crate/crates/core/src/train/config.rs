//! Training hyperparameters.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::models::{HeadingNetConfig, LstmConfig, ModelConfig, ResNetConfig, TcnConfig};
use crate::seqdata::{DEFAULT_SIGMA_FRAMES, RESNET_WINDOW, RNN_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Strided,
    DenseVelocity,
    Latent,
    DirectMse,
    Heading,
}

/// Frame the network sees its inputs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFrame {
    /// Gravity-aligned frame with a random yaw per sample.
    #[default]
    Hacf,
    /// Raw device-frame IMU; the network predicts 3D device-frame velocity
    /// that is rotated into the HACF before integration.
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub objective: Objective,
    pub frame: InputFrame,
    pub batch_size: usize,
    pub lr: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Sample length in frames (the unroll length of recurrent models).
    pub window: usize,
    /// Frames at the end of each sample that the latent / direct losses
    /// cover; defaults to the whole window, or the receptive field for a TCN.
    pub loss_frames: Option<usize>,
    /// Gap between consecutive sequence-model samples, frames (inclusive).
    pub window_gap: [usize; 2],
    /// Stride between window-model samples, frames.
    pub window_step: usize,
    pub sigma_frames: f64,
    /// Weight of the heading unit-norm penalty.
    pub lambda_norm: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Caps batches per epoch (and validation batches); `None` uses all.
    pub max_batches_per_epoch: Option<usize>,
}

impl TrainConfig {
    fn base(model: ModelConfig, objective: Objective, window: usize) -> Self {
        let window_model = matches!(model, ModelConfig::Resnet(_));
        Self {
            model,
            objective,
            frame: InputFrame::Hacf,
            batch_size: if window_model { 128 } else { 72 },
            lr: if window_model { 1e-4 } else { 3e-4 },
            plateau_factor: if window_model { 0.1 } else { 0.75 },
            patience: 10,
            max_epochs: 200,
            seed: 0,
            window,
            loss_frames: None,
            window_gap: [50, 150],
            window_step: 10,
            sigma_frames: DEFAULT_SIGMA_FRAMES,
            lambda_norm: 1.0,
            clip_norm: 10.0,
            max_batches_per_epoch: None,
        }
    }

    pub fn resnet() -> Self {
        Self { max_epochs: 100, ..Self::base(ModelConfig::Resnet(ResNetConfig::default()), Objective::Strided, RESNET_WINDOW) }
    }

    pub fn lstm() -> Self {
        Self { max_epochs: 300, ..Self::base(ModelConfig::Lstm(LstmConfig::default()), Objective::Latent, RNN_WINDOW) }
    }

    pub fn tcn() -> Self {
        Self { max_epochs: 200, ..Self::base(ModelConfig::Tcn(TcnConfig::default()), Objective::Latent, RNN_WINDOW) }
    }

    pub fn heading() -> Self {
        Self { max_epochs: 300, ..Self::base(ModelConfig::Heading(HeadingNetConfig::default()), Objective::Heading, 1000) }
    }

    /// Defaults for `resnet`, `lstm`, `tcn` or `heading`.
    pub fn for_arch(arch: &str) -> Option<Self> {
        match arch {
            "resnet" => Some(Self::resnet()),
            "lstm" => Some(Self::lstm()),
            "tcn" => Some(Self::tcn()),
            "heading" => Some(Self::heading()),
            _ => None,
        }
    }

    /// Frames covered by the latent / direct losses.
    pub fn loss_frames(&self) -> usize {
        self.loss_frames.unwrap_or(match &self.model {
            ModelConfig::Tcn(c) => c.receptive_field().min(self.window),
            _ => self.window,
        })
    }

    /// Output channels the objective expects from the network.
    pub fn expected_out_dim(&self) -> usize {
        match self.frame {
            InputFrame::Local => 3,
            InputFrame::Hacf => 2,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        self.model.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.window == 0 || self.window_step == 0 {
            return bad("batch size, window and step must be at least 1".into());
        }
        if self.window_gap[0] == 0 || self.window_gap[0] > self.window_gap[1] {
            return bad("window gap must be an ordered positive range".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) || !(self.clip_norm > 0.0) {
            return bad("plateau factor must be in (0, 1] and clip norm positive".into());
        }
        if !(self.sigma_frames >= 0.0) || !(self.lambda_norm >= 0.0) {
            return bad("sigma and lambda must be non-negative".into());
        }
        if self.model.in_channels() != 6 {
            return bad("networks take the 6 IMU channels".into());
        }
        let window_model = !self.model.is_sequence();
        match self.objective {
            Objective::Strided | Objective::DenseVelocity => {
                if !window_model {
                    return bad(format!("{:?} needs a window model", self.objective));
                }
                if let ModelConfig::Resnet(c) = &self.model {
                    if c.window != self.window {
                        return bad(format!("model window {} differs from sample window {}", c.window, self.window));
                    }
                }
                if self.frame != InputFrame::Hacf {
                    return bad("window models train in the HACF only".into());
                }
            }
            Objective::Latent | Objective::DirectMse => {
                if window_model {
                    return bad(format!("{:?} needs a sequence model", self.objective));
                }
                let s = self.loss_frames();
                if s == 0 || s > self.window {
                    return bad(format!("loss frames {s} must be within the window {}", self.window));
                }
            }
            Objective::Heading => {
                if window_model || self.frame != InputFrame::Hacf {
                    return bad("heading needs a sequence model in the HACF".into());
                }
            }
        }
        if self.model.out_dim() != self.expected_out_dim() {
            return bad(format!("model outputs {} channels, objective needs {}", self.model.out_dim(), self.expected_out_dim()));
        }
        Ok(())
    }
}
