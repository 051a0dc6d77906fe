//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOpts {
    pub eps: f64,
    /// Check at most this many coordinates per parameter (sampled
    /// deterministically); `None` checks them all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords: None, seed: 0 }
    }
}

/// Outcome of [`grad_check_report`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose difference stencil crossed a `relu` / `abs` kink,
    /// where central differences do not estimate the derivative.
    pub skipped_kinks: usize,
}

/// [`grad_check_report`] reduced to the largest relative error.
pub fn grad_check<F>(store: &mut ParamStore, opts: GradCheckOpts, f: F) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    Ok(grad_check_report(store, opts, f)?.max_rel_err)
}

/// Compares the analytic gradient of `f` with central differences over the
/// trainable parameters of `store`, using the relative error
/// `|a - n| / max(1, |a|, |n|)`.
///
/// `f` builds the graph on a fresh tape and returns the scalar loss; it is
/// called once per perturbation, so it must be deterministic (tapes with
/// the same seed give the same dropout masks).
pub fn grad_check_report<F>(store: &mut ParamStore, opts: GradCheckOpts, mut f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    let mut run = |store: &ParamStore| -> Result<(Tape, Var), AutodiffError> {
        let mut tape = Tape::new(true, opts.seed);
        let loss = f(&mut tape, store)?;
        Ok((tape, loss))
    };
    store.zero_grad();
    let (tape, loss) = run(store)?;
    let base_sig = tape.kink_signature();
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut report = GradCheckReport::default();
    for id in ids {
        let n = store.get(id).value.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let (t, l) = run(store)?;
            let (up, sig_up) = (t.value(l).item(), t.kink_signature());
            store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let (t, l) = run(store)?;
            let (down, sig_down) = (t.value(l).item(), t.kink_signature());
            store.get_mut(id).value.data_mut()[i] = orig;
            if sig_up != base_sig || sig_down != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let num = (up - down) / (2.0 * opts.eps);
            let a = analytic[id.0][i];
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max((a - num).abs() / 1f64.max(a.abs()).max(num.abs()));
        }
    }
    store.zero_grad();
    Ok(report)
}
