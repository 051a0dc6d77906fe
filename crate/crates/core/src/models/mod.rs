//! Velocity and heading networks built on [`crate::autodiff`], plus their
//! checkpoint format.
//!
//! * ResNet: a 1D ResNet-18 mapping a 200-frame window to one 2D
//!   displacement.
//! * LSTM: bilinear input enrichment, stacked LSTM, per-frame 2D velocity.
//! * TCN: causal dilated residual blocks, per-frame 2D velocity.
//! * Heading: the LSTM body predicting per-frame `(sin, cos)` of the body
//!   heading.
//! * Pointwise: a per-frame affine map, the smallest sequence model.

mod checkpoint;
mod layers;
mod lstm;
mod resnet;
mod tcn;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::{LstmConfig, LstmState};
pub use resnet::ResNetConfig;
pub use tcn::TcnConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ConvOpts, ParamStore, Tape, Tensor, Var};
use crate::par::Exec;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("operation needs a {expected} model, this is a {found} model")]
    WrongArchitecture { expected: &'static str, found: &'static str },
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingNetConfig {
    pub body: LstmConfig,
}

impl Default for HeadingNetConfig {
    fn default() -> Self {
        Self { body: LstmConfig { out_dim: 2, ..LstmConfig::default() } }
    }
}

/// Per-frame affine map from input channels to outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseConfig {
    pub in_channels: usize,
    pub out_dim: usize,
}

impl Default for PointwiseConfig {
    fn default() -> Self {
        Self { in_channels: 6, out_dim: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelConfig {
    Resnet(ResNetConfig),
    Lstm(LstmConfig),
    Tcn(TcnConfig),
    Heading(HeadingNetConfig),
    Pointwise(PointwiseConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Resnet(_) => "resnet",
            ModelConfig::Lstm(_) => "lstm",
            ModelConfig::Tcn(_) => "tcn",
            ModelConfig::Heading(_) => "heading",
            ModelConfig::Pointwise(_) => "pointwise",
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ModelConfig::Resnet(c) => c.in_channels,
            ModelConfig::Lstm(c) => c.in_channels,
            ModelConfig::Tcn(c) => c.in_channels,
            ModelConfig::Heading(c) => c.body.in_channels,
            ModelConfig::Pointwise(c) => c.in_channels,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ModelConfig::Resnet(c) => c.out_dim,
            ModelConfig::Lstm(c) => c.out_dim,
            ModelConfig::Tcn(c) => c.out_dim,
            ModelConfig::Heading(c) => c.body.out_dim,
            ModelConfig::Pointwise(c) => c.out_dim,
        }
    }

    /// Whether the model produces one output per frame.
    pub fn is_sequence(&self) -> bool {
        !matches!(self, ModelConfig::Resnet(_))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelConfig::Resnet(c) => c.validate(),
            ModelConfig::Lstm(c) => c.validate(),
            ModelConfig::Tcn(c) => c.validate(),
            ModelConfig::Heading(c) => c.body.validate(),
            ModelConfig::Pointwise(c) => {
                if c.in_channels == 0 || c.out_dim == 0 {
                    Err("pointwise sizes must be positive".to_string())
                } else {
                    Ok(())
                }
            }
        }
        .map_err(ModelError::InvalidConfig)
    }
}

#[derive(Debug, Clone)]
enum Net {
    Resnet(resnet::ResNet),
    Lstm(lstm::Lstm),
    Tcn(tcn::Tcn),
    Pointwise(layers::Conv),
}

/// A network: its configuration, parameters and layer layout.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    net: Net,
}

impl Model {
    /// Builds the network with freshly initialized parameters drawn from a
    /// generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match &config {
            ModelConfig::Resnet(c) => Net::Resnet(resnet::ResNet::new(c, &mut store, &mut rng)),
            ModelConfig::Lstm(c) => Net::Lstm(lstm::Lstm::new(c, &mut store, &mut rng)),
            ModelConfig::Heading(c) => Net::Lstm(lstm::Lstm::new(&c.body, &mut store, &mut rng)),
            ModelConfig::Tcn(c) => Net::Tcn(tcn::Tcn::new(c, &mut store, &mut rng)),
            ModelConfig::Pointwise(c) => Net::Pointwise(layers::Conv::new(
                &mut store,
                "head",
                c.in_channels,
                c.out_dim,
                1,
                true,
                ConvOpts::causal(1, 1),
                &mut rng,
            )),
        };
        Ok(Self { config, store, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.n_trainable()
    }

    /// Frames of history a TCN output depends on.
    pub fn receptive_field(&self) -> Option<usize> {
        match &self.config {
            ModelConfig::Tcn(c) => Some(c.receptive_field()),
            _ => None,
        }
    }

    /// Window model: `x: [batch, channels, window]` to `[batch, out_dim]`.
    pub fn forward_window(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        self.forward_window_with(tape, &self.store, x)
    }

    /// [`forward_window`](Self::forward_window) reading parameters from
    /// `store` (which must have this model's layout) instead of the model's own.
    pub fn forward_window_with(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, ModelError> {
        match &self.net {
            Net::Resnet(r) => Ok(r.forward(tape, store, x)?),
            _ => Err(ModelError::WrongArchitecture { expected: "resnet", found: self.config.name() }),
        }
    }

    /// Sequence model: `x: [batch, channels, t]` to per-frame outputs
    /// `[batch, out_dim, t]`. Recurrent models also return their final
    /// state, which can seed the next chunk.
    pub fn forward_seq(
        &self,
        tape: &mut Tape,
        x: Var,
        state: Option<&LstmState>,
    ) -> Result<(Var, Option<LstmState>), ModelError> {
        self.forward_seq_with(tape, &self.store, x, state)
    }

    /// [`forward_seq`](Self::forward_seq) reading parameters from `store`.
    pub fn forward_seq_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: Option<&LstmState>,
    ) -> Result<(Var, Option<LstmState>), ModelError> {
        match &self.net {
            Net::Lstm(l) => {
                let (y, s) = l.forward(tape, store, x, state)?;
                Ok((y, Some(s)))
            }
            Net::Tcn(t) => Ok((t.forward(tape, store, x)?, None)),
            Net::Pointwise(c) => Ok((c.forward(tape, store, x)?, None)),
            Net::Resnet(_) => Err(ModelError::WrongArchitecture { expected: "sequence", found: "resnet" }),
        }
    }

    /// Eval-mode [`forward_window`](Self::forward_window) on plain tensors.
    pub fn predict_windows(&self, x: &Tensor, exec: Exec) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new(false, 0).with_exec(exec);
        let xv = tape.constant(x.clone());
        let y = self.forward_window(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Eval-mode [`forward_seq`](Self::forward_seq) on plain tensors.
    pub fn predict_seq(
        &self,
        x: &Tensor,
        state: Option<&LstmState>,
        exec: Exec,
    ) -> Result<(Tensor, Option<LstmState>), ModelError> {
        let mut tape = Tape::new(false, 0).with_exec(exec);
        let xv = tape.constant(x.clone());
        let (y, s) = self.forward_seq(&mut tape, xv, state)?;
        Ok((tape.value(y).clone(), s))
    }
}
