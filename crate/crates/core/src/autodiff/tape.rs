//! The recording tape and its operations.
//!
//! Every op evaluates eagerly, stores its output on the tape and remembers
//! its inputs plus whatever it needs for the backward pass. `backward` walks
//! the tape once in reverse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{gemm, sigmoid, ConvGeom, Mat};
use super::{AutodiffError, ParamId, ParamStore, Tensor};
use crate::par::Exec;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm numerical guard.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Stride, dilation and padding of a 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvOpts {
    /// Left padding of `(k - 1) * dilation`, so output frame `t` only sees
    /// input frames `<= t`; output length equals input length.
    pub fn causal(k: usize, dilation: usize) -> Self {
        Self { stride: 1, dilation, pad_left: (k - 1) * dilation, pad_right: 0 }
    }

    /// Symmetric "same"-style padding `k / 2` on both sides.
    pub fn centered(k: usize, stride: usize) -> Self {
        Self { stride, dilation: 1, pad_left: k / 2, pad_right: k / 2 }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    ChannelBias { x: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Dropout { x: Var, mask: Vec<f64> },
    Bilinear { x: Var, y: Var, w: Var, b: Option<Var>, t: Vec<f64> },
    LstmCell { x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var, gates: Vec<f64>, tanh_c: Vec<f64> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    SwapLast(Var),
    SumAxis { x: Var, axis: usize },
    L2Norm { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    FrameTransform { x: Var, mats: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of every recorded value that required one.
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A single forward pass worth of recorded operations.
pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
    exec: Exec,
    buffer_updates: Vec<(ParamId, Vec<f64>)>,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
}

/// `(outer, axis length, inner)` for a row-major shape.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Tape {
    /// `train` switches batch-norm to batch statistics and enables dropout,
    /// whose masks come from a generator seeded with `seed`.
    pub fn new(train: bool, seed: u64) -> Self {
        Self { nodes: Vec::new(), train, rng: ChaCha8Rng::seed_from_u64(seed), exec: Exec::default(), buffer_updates: Vec::new() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of the sign of every input to a non-differentiable point
    /// (`relu`, `abs`). Two passes with equal signatures lie on the same
    /// smooth piece of the graph.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::Abs(a) = node.op {
                for &v in self.data(a) {
                    v.partial_cmp(&0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_data(&mut self, shape: &[usize], data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        let t = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(t, op, requires_grad)
    }

    /// Running-statistic updates produced by train-mode batch norm; apply
    /// them with [`ParamStore::set_value`] once the step is accepted.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Vec<f64>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn apply_buffer_updates(&mut self, store: &mut ParamStore) {
        for (id, v) in self.take_buffer_updates() {
            store.set_value(id, &v);
        }
    }

    // ---- leaves ----

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies parameter `id` onto the tape. Trainable parameters collect
    /// their gradient into the store during [`backward`](Self::backward).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// Same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    // ---- elementwise ----

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push_data(&shape, data, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_data(&shape, data, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p_drop` and survivors are scaled by `1 / (1 - p_drop)`;
    /// in eval mode the input is returned unchanged.
    pub fn dropout(&mut self, a: Var, p_drop: f64) -> Var {
        if !self.train || p_drop <= 0.0 {
            return a;
        }
        let keep = 1.0 - p_drop;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_data(&shape, data, Op::Dropout { x: a, mask }, rg)
    }

    // ---- linear algebra ----

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(Mat::rm(self.data(a), m, k), Mat::rm(self.data(b), k, n), 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_data(&[m, n], out, Op::MatMul(a, b), rg))
    }

    /// `x W^T + b` for `x: [n, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(mismatch("linear", sx, sw));
        }
        let (n, i, o) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch("linear bias", self.shape(b), &[o]));
            }
        }
        let mut out = vec![0.0; n * o];
        gemm(Mat::rm(self.data(x), n, i), Mat::rm(self.data(w), o, i).t(), 0.0, &mut out);
        if let Some(b) = b {
            let bd = self.data(b);
            out.chunks_mut(o).for_each(|row| add_into(row, bd));
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push_data(&[n, o], out, Op::Linear { x, w, b }, rg))
    }

    /// Adds `b[c]` to every element of channel `c` of `x: [batch, c, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || self.shape(b) != [sx[1]] {
            return Err(mismatch("add_channel_bias", &sx, self.shape(b)));
        }
        let (_, c, inner) = split_axis(&sx, 1);
        let bd = self.data(b);
        let data = self.data(x).iter().enumerate().map(|(i, v)| v + bd[(i / inner) % c]).collect();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push_data(&sx, data, Op::ChannelBias { x, b }, rg))
    }

    /// `x: [batch, c_in, t]`, `w: [c_out, c_in, k]`, optional `b: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, opts: ConvOpts) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || opts.stride == 0 || opts.dilation == 0 || sw[2] == 0 {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let (batch, c_out) = (sx[0], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(mismatch("conv1d bias", self.shape(b), &[c_out]));
            }
        }
        let geom = ConvGeom {
            c_in: sx[1],
            t_in: sx[2],
            k: sw[2],
            stride: opts.stride,
            dilation: opts.dilation,
            pad_left: opts.pad_left,
            pad_right: opts.pad_right,
        };
        let t_out = geom.t_out().ok_or_else(|| mismatch("conv1d (input shorter than kernel span)", &sx, &sw))?;
        let ck = geom.c_in * geom.k;
        let mut out = vec![0.0; batch * c_out * t_out];
        if t_out > 0 && c_out > 0 {
            let (xd, wd) = (self.data(x), self.data(w));
            let bd = b.map(|b| self.data(b));
            self.exec.for_each_chunk_mut(&mut out, c_out * t_out, |bi, ob| {
                let mut cols = vec![0.0; ck * t_out];
                geom.im2col(&xd[bi * geom.c_in * geom.t_in..(bi + 1) * geom.c_in * geom.t_in], &mut cols);
                gemm(Mat::rm(wd, c_out, ck), Mat::rm(&cols, ck, t_out), 0.0, ob);
                if let Some(bd) = bd {
                    for (co, row) in ob.chunks_mut(t_out).enumerate() {
                        row.iter_mut().for_each(|v| *v += bd[co]);
                    }
                }
            });
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push_data(&[batch, c_out, t_out], out, Op::Conv1d { x, w, b, geom }, rg))
    }

    /// Batch normalization over all axes but the channel axis (1) of
    /// `x: [batch, c]` or `[batch, c, t]`.
    ///
    /// Train mode normalizes with batch statistics and queues running
    /// statistic updates (momentum [`BN_MOMENTUM`], unbiased variance);
    /// eval mode uses the stored running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        store: &ParamStore,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(mismatch("batchnorm1d", &sx, self.shape(gamma)));
        }
        let (outer, c, inner) = split_axis(&sx, 1);
        let count = (outer * inner) as f64;
        let xd = self.nodes[x.0].value.data();
        let idx = |o: usize, ch: usize, i: usize| (o * c + ch) * inner + i;
        let (mean, var) = if self.train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for o in 0..outer {
                    for i in 0..inner {
                        s += xd[idx(o, ch, i)];
                    }
                }
                let m = s / count;
                let mut ss = 0.0;
                for o in 0..outer {
                    for i in 0..inner {
                        let d = xd[idx(o, ch, i)] - m;
                        ss += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = ss / count;
            }
            let rm = store.value(running_mean).data();
            let rv = store.value(running_var).data();
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let new_m = (0..c).map(|ch| (1.0 - BN_MOMENTUM) * rm[ch] + BN_MOMENTUM * mean[ch]).collect();
            let new_v = (0..c).map(|ch| (1.0 - BN_MOMENTUM) * rv[ch] + BN_MOMENTUM * var[ch] * unbias).collect();
            self.buffer_updates.push((running_mean, new_m));
            self.buffer_updates.push((running_var, new_v));
            (mean, var)
        } else {
            (store.value(running_mean).data().to_vec(), store.value(running_var).data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (j, (xh, o)) in xhat.iter_mut().zip(out.iter_mut()).enumerate() {
            let ch = (j / inner) % c;
            *xh = (xd[j] - mean[ch]) * inv_std[ch];
            *o = g[ch] * *xh + bt[ch];
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let train = self.train;
        Ok(self.push_data(&sx, out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, rg))
    }

    /// `out[n, o] = x[n]^T W[o] y[n] + b[o]` for `x: [n, i]`, `y: [n, j]`,
    /// `W: [o, i, j]`.
    pub fn bilinear(&mut self, x: Var, y: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (sx, sy, sw) = (self.shape(x).to_vec(), self.shape(y).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sy.len() != 2 || sw.len() != 3 || sx[0] != sy[0] || sw[1] != sx[1] || sw[2] != sy[1] {
            return Err(mismatch("bilinear", &sx, &sw));
        }
        let (n, i, j, o) = (sx[0], sx[1], sy[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch("bilinear bias", self.shape(b), &[o]));
            }
        }
        let mut t = vec![0.0; n * o * i];
        gemm(Mat::rm(self.data(y), n, j), Mat::rm(self.data(w), o * i, j).t(), 0.0, &mut t);
        let xd = self.data(x);
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            for oo in 0..o {
                let trow = &t[(r * o + oo) * i..(r * o + oo + 1) * i];
                out[r * o + oo] = trow.iter().zip(&xd[r * i..(r + 1) * i]).map(|(a, b)| a * b).sum::<f64>()
                    + b.map_or(0.0, |b| self.data(b)[oo]);
            }
        }
        let rg = self.rg(x) || self.rg(y) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push_data(&[n, o], out, Op::Bilinear { x, y, w, b, t }, rg))
    }

    /// One step of a standard LSTM with gate order (input, forget, cell,
    /// output). `x: [n, in]`, `h, c: [n, hid]`, `wx: [4 hid, in]`,
    /// `wh: [4 hid, hid]`, `b: [4 hid]`. Returns `[n, 2 hid]` holding the
    /// new hidden state followed by the new cell state.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sx, sh) = (self.shape(x).to_vec(), self.shape(h).to_vec());
        if sx.len() != 2 || sh.len() != 2 || sx[0] != sh[0] || self.shape(c) != sh.as_slice() {
            return Err(mismatch("lstm_cell", &sx, &sh));
        }
        let (n, inp, hid) = (sx[0], sx[1], sh[1]);
        if self.shape(wx) != [4 * hid, inp] || self.shape(wh) != [4 * hid, hid] || self.shape(b) != [4 * hid] {
            return Err(mismatch("lstm_cell weights", self.shape(wx), &[4 * hid, inp]));
        }
        let mut gates = vec![0.0; n * 4 * hid];
        gemm(Mat::rm(self.data(x), n, inp), Mat::rm(self.data(wx), 4 * hid, inp).t(), 0.0, &mut gates);
        gemm(Mat::rm(self.data(h), n, hid), Mat::rm(self.data(wh), 4 * hid, hid).t(), 1.0, &mut gates);
        let bd = self.data(b);
        let cd = self.data(c);
        let mut out = vec![0.0; n * 2 * hid];
        let mut tanh_c = vec![0.0; n * hid];
        for r in 0..n {
            let g = &mut gates[r * 4 * hid..(r + 1) * 4 * hid];
            add_into(g, bd);
            for k in 0..hid {
                let ig = sigmoid(g[k]);
                let fg = sigmoid(g[hid + k]);
                let cg = g[2 * hid + k].tanh();
                let og = sigmoid(g[3 * hid + k]);
                g[k] = ig;
                g[hid + k] = fg;
                g[2 * hid + k] = cg;
                g[3 * hid + k] = og;
                let c_new = fg * cd[r * hid + k] + ig * cg;
                let tc = c_new.tanh();
                tanh_c[r * hid + k] = tc;
                out[r * 2 * hid + k] = og * tc;
                out[r * 2 * hid + hid + k] = c_new;
            }
        }
        let rg = [x, h, c, wx, wh, b].iter().any(|&v| self.rg(v));
        Ok(self.push_data(&[n, 2 * hid], out, Op::LstmCell { x, h, c, wx, wh, b, gates, tanh_c }, rg))
    }

    /// Per-frame linear map: `out[b, :, t] = M[b, t] x[b, :, t]` for
    /// `x: [batch, c, t]` and constant matrices `mats[b][t]` of shape
    /// `o x c` (row-major, flattened).
    pub fn frame_transform(&mut self, x: Var, mats: Vec<f64>, o: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || mats.len() != sx[0] * sx[2] * o * sx[1] {
            return Err(mismatch("frame_transform", &sx, &[mats.len()]));
        }
        let (nb, c, nt) = (sx[0], sx[1], sx[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; nb * o * nt];
        for b in 0..nb {
            for t in 0..nt {
                let m = &mats[(b * nt + t) * o * c..(b * nt + t + 1) * o * c];
                for oo in 0..o {
                    out[(b * o + oo) * nt + t] = (0..c).map(|cc| m[oo * c + cc] * xd[(b * c + cc) * nt + t]).sum();
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push_data(&[nb, o, nt], out, Op::FrameTransform { x, mats }, rg))
    }

    // ---- shape ops ----

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.shape(*inputs.first().ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(mismatch("concat axis", &first, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(a, &d)| a != axis && d != first[a]) {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * n..(o + 1) * n]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push_data(&shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(mismatch("slice", &sx, &[axis, start, len]));
        }
        let (outer, n, inner) = split_axis(&sx, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = sx.clone();
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push_data(&shape, out, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Swaps the last two axes of a rank-3 tensor: `[a, b, c] -> [a, c, b]`.
    pub fn swap_last(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(mismatch("swap_last", &sx, &[3]));
        }
        let (a, b, c) = (sx[0], sx[1], sx[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out[(i * c + k) * b + j] = xd[(i * b + j) * c + k];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push_data(&[a, c, b], out, Op::SwapLast(x), rg))
    }

    // ---- reductions ----

    /// Sum over `axis`, removing it (so `[b, c, t]` summed over time is `[b, c]`).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || sx.len() < 2 {
            return Err(mismatch("sum_axis", &sx, &[axis]));
        }
        let (outer, n, inner) = split_axis(&sx, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                add_into(&mut out[o * inner..(o + 1) * inner], &xd[(o * n + k) * inner..(o * n + k + 1) * inner]);
            }
        }
        let mut shape = sx.clone();
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push_data(&shape, out, Op::SumAxis { x, axis }, rg))
    }

    /// Euclidean norm over `axis`, removing it.
    pub fn l2norm(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || sx.len() < 2 {
            return Err(mismatch("l2norm", &sx, &[axis]));
        }
        let (outer, n, inner) = split_axis(&sx, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                out[o * inner + i] = (0..n).map(|k| xd[(o * n + k) * inner + i].powi(2)).sum::<f64>().sqrt();
            }
        }
        let mut shape = sx.clone();
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push_data(&shape, out, Op::L2Norm { x, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mse", a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let s = da.iter().zip(db).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / da.len().max(1) as f64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), rg))
    }

    // ---- backward ----

    /// Reverse pass from a scalar `loss`. Gradients of trainable parameters
    /// are added to `store` (call [`ParamStore::zero_grad`] to reset);
    /// gradients of every other value are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients(grads));
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut grads, store);
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        // Accumulator for `v`'s gradient, or None when `v` needs none.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if self.rg(v) {
                    let n = self.value(v).len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                if p.trainable {
                    add_into(&mut p.grad, g);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = acc!(*a) {
                    let bd = self.data(*b);
                    ga.iter_mut().zip(g).zip(bd).for_each(|((d, s), y)| *d += s * y);
                }
                if let Some(gb) = acc!(*b) {
                    let ad = self.data(*a);
                    gb.iter_mut().zip(g).zip(ad).for_each(|((d, s), x)| *d += s * x);
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = acc!(*a) {
                    let x = self.data(*a);
                    ga.iter_mut().zip(g).zip(x).for_each(|((d, s), x)| {
                        if *x > 0.0 {
                            *d += s
                        }
                    });
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    let y = node.value.data();
                    ga.iter_mut().zip(g).zip(y).for_each(|((d, s), y)| *d += s * (1.0 - y * y));
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = acc!(*a) {
                    let y = node.value.data();
                    ga.iter_mut().zip(g).zip(y).for_each(|((d, s), y)| *d += s * y * (1.0 - y));
                }
            }
            Op::Abs(a) => {
                if let Some(ga) = acc!(*a) {
                    let x = self.data(*a);
                    ga.iter_mut().zip(g).zip(x).for_each(|((d, s), x)| *d += s * x.signum() * f64::from(u8::from(*x != 0.0)));
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().zip(g).zip(mask).for_each(|((d, s), m)| *d += s * m);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let bd = self.data(*b);
                    let ga = acc!(*a).expect("requires grad");
                    gemm(Mat::rm(g, m, n), Mat::rm(bd, k, n).t(), 1.0, ga);
                }
                if self.rg(*b) {
                    let ad = self.data(*a);
                    let gb = acc!(*b).expect("requires grad");
                    gemm(Mat::rm(ad, m, k).t(), Mat::rm(g, m, n), 1.0, gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, i) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                if self.rg(*x) {
                    let wd = self.data(*w);
                    gemm(Mat::rm(g, n, o), Mat::rm(wd, o, i), 1.0, acc!(*x).expect("rg"));
                }
                if self.rg(*w) {
                    let xd = self.data(*x);
                    gemm(Mat::rm(g, n, o).t(), Mat::rm(xd, n, i), 1.0, acc!(*w).expect("rg"));
                }
                if let Some(gb) = b.and_then(|b| acc!(b)) {
                    g.chunks(o).for_each(|row| add_into(gb, row));
                }
            }
            Op::ChannelBias { x, b } => {
                if let Some(gx) = acc!(*x) {
                    add_into(gx, g);
                }
                if let Some(gb) = acc!(*b) {
                    let (_, c, inner) = split_axis(self.shape(*x), 1);
                    g.iter().enumerate().for_each(|(i, v)| gb[(i / inner) % c] += v);
                }
            }
            Op::Conv1d { x, w, b, geom } => self.conv_backward(*x, *w, *b, geom, g, grads),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (outer, c, inner) = split_axis(self.shape(*x), 1);
                let count = (outer * inner) as f64;
                let gam = self.data(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (j, (gv, xh)) in g.iter().zip(xhat).enumerate() {
                    let ch = (j / inner) % c;
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * xh;
                }
                if let Some(gg) = acc!(*gamma) {
                    add_into(gg, &sum_gx);
                }
                if let Some(gbt) = acc!(*beta) {
                    add_into(gbt, &sum_g);
                }
                if let Some(gx) = acc!(*x) {
                    for (j, d) in gx.iter_mut().enumerate() {
                        let ch = (j / inner) % c;
                        let k = gam[ch] * inv_std[ch];
                        *d += if *train {
                            k * (g[j] - sum_g[ch] / count - xhat[j] * sum_gx[ch] / count)
                        } else {
                            k * g[j]
                        };
                    }
                }
            }
            Op::Bilinear { x, y, w, b, t } => {
                let (n, i) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (j, o) = (self.shape(*y)[1], self.shape(*w)[0]);
                if let Some(gx) = acc!(*x) {
                    for r in 0..n {
                        for oo in 0..o {
                            let gv = g[r * o + oo];
                            let trow = &t[(r * o + oo) * i..(r * o + oo + 1) * i];
                            gx[r * i..(r + 1) * i].iter_mut().zip(trow).for_each(|(d, tv)| *d += gv * tv);
                        }
                    }
                }
                if self.rg(*w) || self.rg(*y) {
                    let xd = self.data(*x);
                    let mut dt = vec![0.0; n * o * i];
                    for r in 0..n {
                        for oo in 0..o {
                            let gv = g[r * o + oo];
                            dt[(r * o + oo) * i..(r * o + oo + 1) * i]
                                .iter_mut()
                                .zip(&xd[r * i..(r + 1) * i])
                                .for_each(|(d, xv)| *d = gv * xv);
                        }
                    }
                    if self.rg(*w) {
                        let yd = self.data(*y);
                        gemm(Mat::rm(&dt, n, o * i).t(), Mat::rm(yd, n, j), 1.0, acc!(*w).expect("rg"));
                    }
                    if self.rg(*y) {
                        let wd = self.data(*w);
                        gemm(Mat::rm(&dt, n, o * i), Mat::rm(wd, o * i, j), 1.0, acc!(*y).expect("rg"));
                    }
                }
                if let Some(gb) = b.and_then(|b| acc!(b)) {
                    g.chunks(o).for_each(|row| add_into(gb, row));
                }
            }
            Op::LstmCell { x, h, c, wx, wh, b, gates, tanh_c } => {
                let (n, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let hid = self.shape(*h)[1];
                let cd = self.data(*c);
                let mut dg = vec![0.0; n * 4 * hid];
                let mut dc_prev = vec![0.0; n * hid];
                for r in 0..n {
                    let gr = &gates[r * 4 * hid..(r + 1) * 4 * hid];
                    for k in 0..hid {
                        let (ig, fg, cg, og) = (gr[k], gr[hid + k], gr[2 * hid + k], gr[3 * hid + k]);
                        let tc = tanh_c[r * hid + k];
                        let dh = g[r * 2 * hid + k];
                        let dc = g[r * 2 * hid + hid + k] + dh * og * (1.0 - tc * tc);
                        let d = &mut dg[r * 4 * hid..(r + 1) * 4 * hid];
                        d[k] = dc * cg * ig * (1.0 - ig);
                        d[hid + k] = dc * cd[r * hid + k] * fg * (1.0 - fg);
                        d[2 * hid + k] = dc * ig * (1.0 - cg * cg);
                        d[3 * hid + k] = dh * tc * og * (1.0 - og);
                        dc_prev[r * hid + k] = dc * fg;
                    }
                }
                if self.rg(*x) {
                    let wxd = self.data(*wx);
                    gemm(Mat::rm(&dg, n, 4 * hid), Mat::rm(wxd, 4 * hid, inp), 1.0, acc!(*x).expect("rg"));
                }
                if self.rg(*h) {
                    let whd = self.data(*wh);
                    gemm(Mat::rm(&dg, n, 4 * hid), Mat::rm(whd, 4 * hid, hid), 1.0, acc!(*h).expect("rg"));
                }
                if let Some(gc) = acc!(*c) {
                    add_into(gc, &dc_prev);
                }
                if self.rg(*wx) {
                    let xd = self.data(*x);
                    gemm(Mat::rm(&dg, n, 4 * hid).t(), Mat::rm(xd, n, inp), 1.0, acc!(*wx).expect("rg"));
                }
                if self.rg(*wh) {
                    let hd = self.data(*h);
                    gemm(Mat::rm(&dg, n, 4 * hid).t(), Mat::rm(hd, n, hid), 1.0, acc!(*wh).expect("rg"));
                }
                if let Some(gb) = acc!(*b) {
                    dg.chunks(4 * hid).for_each(|row| add_into(gb, row));
                }
            }
            Op::FrameTransform { x, mats } => {
                if let Some(gx) = acc!(*x) {
                    let sx = self.shape(*x);
                    let (nb, c, nt) = (sx[0], sx[1], sx[2]);
                    let o = node.value.dim(1);
                    for bb in 0..nb {
                        for t in 0..nt {
                            let m = &mats[(bb * nt + t) * o * c..(bb * nt + t + 1) * o * c];
                            for cc in 0..c {
                                gx[(bb * c + cc) * nt + t] += (0..o).map(|oo| m[oo * c + cc] * g[(bb * o + oo) * nt + t]).sum::<f64>();
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let nv = self.shape(v)[*axis];
                    if let Some(gv) = acc!(v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + nv) * inner];
                            add_into(&mut gv[o * nv * inner..(o + 1) * nv * inner], src);
                        }
                    }
                    offset += nv;
                }
            }
            Op::Slice { x, axis, start } => {
                if let Some(gx) = acc!(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let len = node.value.dim(*axis);
                    for o in 0..outer {
                        add_into(
                            &mut gx[(o * n + start) * inner..(o * n + start + len) * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = acc!(*x) {
                    add_into(gx, g);
                }
            }
            Op::SwapLast(x) => {
                if let Some(gx) = acc!(*x) {
                    let sx = self.shape(*x);
                    let (a, b, c) = (sx[0], sx[1], sx[2]);
                    for i in 0..a {
                        for j in 0..b {
                            for k in 0..c {
                                gx[(i * b + j) * c + k] += g[(i * c + k) * b + j];
                            }
                        }
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                if let Some(gx) = acc!(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    for o in 0..outer {
                        for k in 0..n {
                            add_into(&mut gx[(o * n + k) * inner..(o * n + k + 1) * inner], &g[o * inner..(o + 1) * inner]);
                        }
                    }
                }
            }
            Op::L2Norm { x, axis } => {
                if let Some(gx) = acc!(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let xd = self.data(*x);
                    let nv = node.value.data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let norm = nv[o * inner + i];
                            if norm > 0.0 {
                                let s = g[o * inner + i] / norm;
                                for k in 0..n {
                                    let j = (o * n + k) * inner + i;
                                    gx[j] += s * xd[j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = acc!(*x) {
                    let s = g[0] / gx.len().max(1) as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let s = 2.0 * g[0] / ad.len().max(1) as f64;
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(ad.iter().zip(bd)).for_each(|(d, (x, y))| *d += s * (x - y));
                }
                if let Some(gb) = acc!(*b) {
                    gb.iter_mut().zip(ad.iter().zip(bd)).for_each(|(d, (x, y))| *d -= s * (x - y));
                }
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let batch = self.shape(x)[0];
        let c_out = self.shape(w)[0];
        let t_out = geom.t_out().expect("valid geometry");
        let ck = geom.c_in * geom.k;
        let x_len = geom.c_in * geom.t_in;
        let g_len = c_out * t_out;
        if t_out == 0 {
            return;
        }
        let xd = self.data(x);
        let wd = self.data(w);
        if self.rg(x) {
            let gx = grads[x.0].get_or_insert_with(|| vec![0.0; batch * x_len]);
            self.exec.for_each_chunk_mut(gx, x_len, |bi, gxb| {
                let mut dcols = vec![0.0; ck * t_out];
                gemm(Mat::rm(wd, c_out, ck).t(), Mat::rm(&g[bi * g_len..(bi + 1) * g_len], c_out, t_out), 0.0, &mut dcols);
                geom.col2im(&dcols, gxb);
            });
        }
        if self.rg(w) {
            // Fixed batch grouping keeps the summation order, and therefore
            // the result, independent of the executor.
            let groups = batch.clamp(1, 8);
            let per = batch.div_ceil(groups);
            let partials = self.exec.map_range(groups, |gi| {
                let mut dw = vec![0.0; c_out * ck];
                let mut cols = vec![0.0; ck * t_out];
                for bi in gi * per..((gi + 1) * per).min(batch) {
                    geom.im2col(&xd[bi * x_len..(bi + 1) * x_len], &mut cols);
                    gemm(Mat::rm(&g[bi * g_len..(bi + 1) * g_len], c_out, t_out), Mat::rm(&cols, ck, t_out).t(), 1.0, &mut dw);
                }
                dw
            });
            let gw = grads[w.0].get_or_insert_with(|| vec![0.0; c_out * ck]);
            for p in &partials {
                add_into(gw, p);
            }
        }
        if let Some(b) = b.filter(|&b| self.rg(b)) {
            let gb = grads[b.0].get_or_insert_with(|| vec![0.0; c_out]);
            for bi in 0..batch {
                for co in 0..c_out {
                    gb[co] += g[(bi * c_out + co) * t_out..(bi * c_out + co + 1) * t_out].iter().sum::<f64>();
                }
            }
        }
    }
}
