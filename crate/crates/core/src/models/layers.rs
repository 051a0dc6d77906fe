//! Parameterized building blocks.

use rand::Rng;

use crate::autodiff::{kaiming_uniform, AutodiffError, ConvOpts, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    opts: ConvOpts,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        bias: bool,
        opts: ConvOpts,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), kaiming_uniform(&[c_out, c_in, k], c_in * k, rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Self { w, b, opts }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.conv1d(x, w, b, self.opts)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batchnorm1d(store, x, g, b, self.mean, self.var)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.weight"), kaiming_uniform(&[o, i], i, rng)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[o])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, Some(b))
    }
}
