//! One-dimensional ResNet-18 regressing a 2D displacement from a window.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv, Linear};
use crate::autodiff::{AutodiffError, ConvOpts, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub window: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub fc_units: usize,
    /// Drop probability before the output layer.
    pub dropout: f64,
    pub out_dim: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            window: 200,
            stem_channels: 64,
            stem_kernel: 7,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
            fc_units: 512,
            dropout: 0.5,
            out_dim: 2,
        }
    }
}

impl ResNetConfig {
    /// Same layout with every width divided by `div` (for quick runs).
    pub fn narrow(div: usize) -> Self {
        let d = Self::default();
        Self {
            stem_channels: d.stem_channels / div,
            stage_channels: d.stage_channels.iter().map(|c| c / div).collect(),
            fc_units: d.fc_units / div,
            ..d
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.in_channels == 0 || self.window == 0 || self.stem_channels == 0 || self.out_dim == 0 {
            return Err("resnet sizes must be positive".into());
        }
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.blocks_per_stage.len() {
            return Err("resnet needs one block count per stage".into());
        }
        if self.stage_channels.contains(&0) || self.fc_units == 0 || self.stem_kernel == 0 {
            return Err("resnet widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    shortcut: Option<(Conv, BatchNorm)>,
}

impl BasicBlock {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let h = self.conv1.forward(tape, store, x)?;
        let h = self.bn1.forward(tape, store, h)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, store, h)?;
        let h = self.bn2.forward(tape, store, h)?;
        let s = match &self.shortcut {
            Some((c, bn)) => {
                let s = c.forward(tape, store, x)?;
                bn.forward(tape, store, s)?
            }
            None => x,
        };
        let y = tape.add(h, s)?;
        Ok(tape.relu(y))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ResNet {
    cfg: ResNetConfig,
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
    fc: Linear,
    out: Linear,
}

impl ResNet {
    pub fn new<R: Rng + ?Sized>(cfg: &ResNetConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let stem = Conv::new(
            store,
            "stem",
            cfg.in_channels,
            cfg.stem_channels,
            cfg.stem_kernel,
            false,
            ConvOpts::centered(cfg.stem_kernel, 2),
            rng,
        );
        let stem_bn = BatchNorm::new(store, "stem.bn", cfg.stem_channels);
        let mut blocks = Vec::new();
        let mut c_in = cfg.stem_channels;
        for (s, (&c, &n)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{b}");
                let conv1 = Conv::new(store, &format!("{name}.conv1"), c_in, c, 3, false, ConvOpts::centered(3, stride), rng);
                let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), c);
                let conv2 = Conv::new(store, &format!("{name}.conv2"), c, c, 3, false, ConvOpts::centered(3, 1), rng);
                let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), c);
                let shortcut = (stride != 1 || c_in != c).then(|| {
                    let opts = ConvOpts { stride, dilation: 1, pad_left: 0, pad_right: 0 };
                    (
                        Conv::new(store, &format!("{name}.down"), c_in, c, 1, false, opts, rng),
                        BatchNorm::new(store, &format!("{name}.down.bn"), c),
                    )
                });
                blocks.push(BasicBlock { conv1, bn1, conv2, bn2, shortcut });
                c_in = c;
            }
        }
        let fc = Linear::new(store, "fc", c_in, cfg.fc_units, rng);
        let out = Linear::new(store, "out", cfg.fc_units, cfg.out_dim, rng);
        Self { cfg: cfg.clone(), stem, stem_bn, blocks, fc, out }
    }

    /// `x: [batch, in_channels, window]` to `[batch, out_dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] != self.cfg.in_channels || s[2] != self.cfg.window {
            return Err(AutodiffError::ShapeMismatch {
                op: "resnet input",
                left: s.to_vec(),
                right: vec![s.first().copied().unwrap_or(0), self.cfg.in_channels, self.cfg.window],
            });
        }
        let h = self.stem.forward(tape, store, x)?;
        let h = self.stem_bn.forward(tape, store, h)?;
        let mut h = tape.relu(h);
        for b in &self.blocks {
            h = b.forward(tape, store, h)?;
        }
        let len = tape.shape(h)[2] as f64;
        let pooled = tape.sum_axis(h, 2)?;
        let pooled = tape.scale(pooled, 1.0 / len);
        let f = self.fc.forward(tape, store, pooled)?;
        let f = tape.relu(f);
        let f = tape.dropout(f, self.cfg.dropout);
        self.out.forward(tape, store, f)
    }
}
