//! Temporal convolutional network: causal dilated residual blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use crate::autodiff::{AutodiffError, ConvOpts, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcnConfig {
    pub in_channels: usize,
    /// Output channels of each residual block; block `i` uses dilation `2^i`.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub dropout: f64,
    pub out_dim: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self { in_channels: 6, channels: vec![16, 32, 64, 128, 72, 36], kernel: 3, dropout: 0.2, out_dim: 2 }
    }
}

impl TcnConfig {
    /// Default layout with every block width halved.
    pub fn small() -> Self {
        let d = Self::default();
        Self { channels: d.channels.iter().map(|c| c / 2).collect(), ..d }
    }

    /// Frames that can influence one output: `1 + sum_i 2 (k - 1) 2^i`.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.channels.len()).map(|i| 2 * (self.kernel - 1) * (1 << i)).sum::<usize>()
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.in_channels == 0 || self.channels.is_empty() || self.channels.contains(&0) || self.out_dim == 0 {
            return Err("tcn sizes must be positive".into());
        }
        if self.kernel == 0 || self.channels.len() > 20 {
            return Err("tcn kernel must be positive and depth at most 20".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    residual: Option<Conv>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tcn {
    cfg: TcnConfig,
    blocks: Vec<Block>,
    head: Conv,
}

impl Tcn {
    pub fn new<R: Rng + ?Sized>(cfg: &TcnConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let k = cfg.kernel;
        let mut c_in = cfg.in_channels;
        let mut blocks = Vec::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let d = 1 << i;
            let conv1 = Conv::new(store, &format!("block{i}.conv1"), c_in, c, k, true, ConvOpts::causal(k, d), rng);
            let conv2 = Conv::new(store, &format!("block{i}.conv2"), c, c, k, true, ConvOpts::causal(k, d), rng);
            let residual = (c_in != c)
                .then(|| Conv::new(store, &format!("block{i}.residual"), c_in, c, 1, true, ConvOpts::causal(1, 1), rng));
            blocks.push(Block { conv1, conv2, residual });
            c_in = c;
        }
        let head = Conv::new(store, "head", c_in, cfg.out_dim, 1, true, ConvOpts::causal(1, 1), rng);
        Self { cfg: cfg.clone(), blocks, head }
    }

    /// `x: [batch, in_channels, t]` to `[batch, out_dim, t]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] != self.cfg.in_channels || s[2] == 0 {
            return Err(AutodiffError::ShapeMismatch { op: "tcn input", left: s.to_vec(), right: vec![0, self.cfg.in_channels, 1] });
        }
        let mut h = x;
        for b in &self.blocks {
            let y = b.conv1.forward(tape, store, h)?;
            let y = tape.relu(y);
            let y = tape.dropout(y, self.cfg.dropout);
            let y = b.conv2.forward(tape, store, y)?;
            let y = tape.relu(y);
            let y = tape.dropout(y, self.cfg.dropout);
            let r = match &b.residual {
                Some(c) => c.forward(tape, store, h)?,
                None => h,
            };
            let sum = tape.add(y, r)?;
            h = tape.relu(sum);
        }
        self.head.forward(tape, store, h)
    }
}
