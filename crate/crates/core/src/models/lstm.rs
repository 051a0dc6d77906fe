//! Stacked unidirectional LSTM with a bilinear input enrichment layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use crate::autodiff::{orthogonal, uniform, AutodiffError, ConvOpts, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub in_channels: usize,
    /// Output width of the bilinear layer; its output is concatenated with
    /// the raw input.
    pub bilinear_features: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Drop probability between layers and before the head.
    pub dropout: f64,
    pub out_dim: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self { in_channels: 6, bilinear_features: 32, hidden: 100, layers: 3, dropout: 0.2, out_dim: 2 }
    }
}

impl LstmConfig {
    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.in_channels == 0 || self.hidden == 0 || self.layers == 0 || self.out_dim == 0 {
            return Err("lstm sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        Ok(())
    }

    fn lstm_input(&self) -> usize {
        self.in_channels + self.bilinear_features
    }
}

/// Hidden and cell state of every layer, each `[batch, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        Self { h: vec![Tensor::zeros(&[batch, hidden]); layers], c: vec![Tensor::zeros(&[batch, hidden]); layers] }
    }
}

#[derive(Debug, Clone)]
struct Cell {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    cfg: LstmConfig,
    bil_w: Option<ParamId>,
    bil_b: Option<ParamId>,
    cells: Vec<Cell>,
    head: Conv,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(cfg: &LstmConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let (i, f) = (cfg.in_channels, cfg.bilinear_features);
        let (bil_w, bil_b) = if f > 0 {
            let bound = 1.0 / (i as f64);
            (Some(store.add("bilinear.weight", uniform(&[f, i, i], bound, rng))), Some(store.add("bilinear.bias", Tensor::zeros(&[f]))))
        } else {
            (None, None)
        };
        let hd = cfg.hidden;
        let cells = (0..cfg.layers)
            .map(|l| {
                let inp = if l == 0 { cfg.lstm_input() } else { hd };
                let bound = (6.0 / (inp + hd) as f64).sqrt();
                let wx = store.add(format!("lstm{l}.wx"), uniform(&[4 * hd, inp], bound, rng));
                // orthogonal recurrent matrix per gate
                let mut wh = Vec::with_capacity(4 * hd * hd);
                for _ in 0..4 {
                    wh.extend_from_slice(orthogonal(hd, hd, rng).data());
                }
                let wh = store.add(format!("lstm{l}.wh"), Tensor::new(&[4 * hd, hd], wh).expect("shape"));
                let mut b = vec![0.0; 4 * hd];
                b[hd..2 * hd].iter_mut().for_each(|v| *v = 1.0);
                let b = store.add(format!("lstm{l}.bias"), Tensor::new(&[4 * hd], b).expect("shape"));
                Cell { wx, wh, b }
            })
            .collect();
        let head = Conv::new(store, "head", hd, cfg.out_dim, 1, true, ConvOpts::causal(1, 1), rng);
        Self { cfg: cfg.clone(), bil_w, bil_b, cells, head }
    }

    /// `x: [batch, in_channels, t]` to per-frame outputs `[batch, out_dim, t]`
    /// plus the final state.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: Option<&LstmState>,
    ) -> Result<(Var, LstmState), AutodiffError> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.cfg.in_channels || s[2] == 0 {
            return Err(AutodiffError::ShapeMismatch { op: "lstm input", left: s, right: vec![0, self.cfg.in_channels, 1] });
        }
        let (nb, c, nt) = (s[0], s[1], s[2]);
        let hd = self.cfg.hidden;
        let zeros = LstmState::zeros(self.cfg.layers, nb, hd);
        let state = state.unwrap_or(&zeros);
        if state.h.len() != self.cfg.layers || state.h.iter().chain(&state.c).any(|t| t.shape() != [nb, hd]) {
            return Err(AutodiffError::ShapeMismatch {
                op: "lstm state",
                left: state.h.first().map(|t| t.shape().to_vec()).unwrap_or_default(),
                right: vec![nb, hd],
            });
        }

        // per-frame feature rows [batch * t, c]
        let rows = tape.swap_last(x)?;
        let rows = tape.reshape(rows, &[nb * nt, c])?;
        let feats = match (self.bil_w, self.bil_b) {
            (Some(w), Some(b)) => {
                let (w, b) = (tape.param(store, w), tape.param(store, b));
                let bil = tape.bilinear(rows, rows, w, Some(b))?;
                tape.concat(&[bil, rows], 1)?
            }
            _ => rows,
        };
        let width = tape.shape(feats)[1];
        let feats = tape.reshape(feats, &[nb, nt, width])?;
        let mut inputs = Vec::with_capacity(nt);
        for t in 0..nt {
            let ft = tape.slice(feats, 1, t, 1)?;
            inputs.push(tape.reshape(ft, &[nb, width])?);
        }

        let mut final_state = LstmState { h: Vec::new(), c: Vec::new() };
        for (l, cell) in self.cells.iter().enumerate() {
            let wx = tape.param(store, cell.wx);
            let wh = tape.param(store, cell.wh);
            let b = tape.param(store, cell.b);
            let mut h = tape.constant(state.h[l].clone());
            let mut cs = tape.constant(state.c[l].clone());
            let mut outputs = Vec::with_capacity(nt);
            for &xt in &inputs {
                let hc = tape.lstm_cell(xt, h, cs, wx, wh, b)?;
                h = tape.slice(hc, 1, 0, hd)?;
                cs = tape.slice(hc, 1, hd, hd)?;
                outputs.push(h);
            }
            final_state.h.push(tape.value(h).clone());
            final_state.c.push(tape.value(cs).clone());
            if l + 1 < self.cells.len() {
                inputs = outputs.into_iter().map(|o| tape.dropout(o, self.cfg.dropout)).collect();
            } else {
                inputs = outputs;
            }
        }
        let mut cols = Vec::with_capacity(nt);
        for h in inputs {
            cols.push(tape.reshape(h, &[nb, hd, 1])?);
        }
        let hs = tape.concat(&cols, 2)?;
        let hs = tape.dropout(hs, self.cfg.dropout);
        let y = self.head.forward(tape, store, hs)?;
        Ok((y, final_state))
    }
}
