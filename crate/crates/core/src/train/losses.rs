//! Loss functions on plain values and as graph operations.

use super::TrainError;
use crate::autodiff::{AutodiffError, Tape, Var};
use crate::geom::{rotate2d, YawAngle};
use crate::seqdata::{dense_velocity_target, strided_target, SampleWindow, SensorSequence, STRIDE_FRAMES};

/// Heading updates need the window to start faster than this, m/s.
pub const MASK_SPEED_MPS: f64 = 0.1;

/// Mean of the squared component errors of two 2-vectors.
pub fn mse2(pred: [f64; 2], target: [f64; 2]) -> f64 {
    0.5 * ((pred[0] - target[0]).powi(2) + (pred[1] - target[1]).powi(2))
}

/// MSE between a window prediction at frame `i` and the 200-frame
/// positional difference ending there, rotated into the sample's HACF.
pub fn strided_velocity_loss(pred: [f64; 2], seq: &SensorSequence, i: usize, yaw: YawAngle) -> Result<f64, TrainError> {
    let target = rotate2d(strided_target(seq, i, STRIDE_FRAMES)?, yaw);
    Ok(mse2(pred, target))
}

/// `|sum_t latent[t] - delta_p|`.
pub fn latent_velocity_loss(latent: &[[f64; 2]], delta_p: [f64; 2]) -> f64 {
    let s = latent.iter().fold([0.0, 0.0], |a, r| [a[0] + r[0], a[1] + r[1]]);
    (s[0] - delta_p[0]).hypot(s[1] - delta_p[1])
}

/// `mean_t [(x - sin)^2 + (y - cos)^2] / 2 + lambda mean_t |1 - x^2 - y^2|`.
pub fn heading_loss(pred: &[[f64; 2]], theta: &[f64], lambda_norm: f64) -> f64 {
    let n = pred.len().max(1) as f64;
    let fit: f64 = pred.iter().zip(theta).map(|(p, t)| mse2(*p, [t.sin(), t.cos()])).sum();
    let norm: f64 = pred.iter().map(|p| (1.0 - p[0] * p[0] - p[1] * p[1]).abs()).sum();
    fit / n + lambda_norm * norm / n
}

/// Whether a horizontal velocity is fast enough for a heading update.
pub fn velocity_mask(v_xy: [f64; 2]) -> bool {
    v_xy[0].hypot(v_xy[1]) > MASK_SPEED_MPS
}

/// Whether `window` may update the heading network: the smoothed ground
/// truth speed at its first frame must exceed 0.1 m/s.
pub fn heading_update_mask(seq: &SensorSequence, window: &SampleWindow, sigma_frames: f64) -> Result<bool, TrainError> {
    let v = dense_velocity_target(seq, sigma_frames)?;
    let first = v.at(window.start).ok_or(crate::seqdata::SeqError::OutOfRange {
        start: window.start,
        end: window.end(),
        len: seq.len(),
    })?;
    Ok(velocity_mask(first))
}

/// Integration layer and L2 loss: `latent: [batch, 2, frames]`,
/// `delta_p: [batch, 2]`; the mean over the batch of the residual norms.
pub fn latent_loss_graph(tape: &mut Tape, latent: Var, delta_p: Var) -> Result<Var, AutodiffError> {
    let summed = tape.sum_axis(latent, 2)?;
    let r = tape.sub(summed, delta_p)?;
    let n = tape.l2norm(r, 1)?;
    Ok(tape.mean(n))
}

/// Heading loss on `pred, target: [batch, 2, frames]` with `target` holding
/// `(sin, cos)` rows.
pub fn heading_loss_graph(tape: &mut Tape, pred: Var, target: Var, lambda_norm: f64) -> Result<Var, AutodiffError> {
    let fit = tape.mse(pred, target)?;
    let sq = tape.mul(pred, pred)?;
    let n2 = tape.sum_axis(sq, 1)?;
    let neg = tape.scale(n2, -1.0);
    let resid = tape.add_scalar(neg, 1.0);
    let a = tape.abs(resid);
    let m = tape.mean(a);
    let pen = tape.scale(m, lambda_norm);
    tape.add(fit, pen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};

    #[test]
    fn plain_examples() {
        assert_eq!(mse2([1.0, 2.0], [1.0, 2.0]), 0.0);
        assert_eq!(mse2([2.0, 2.0], [1.0, 2.0]), 0.5);
        assert_eq!(latent_velocity_loss(&[[0.0, 0.0]; 4], [3.0, 4.0]), 5.0);
        assert_eq!(latent_velocity_loss(&[[1.0, 1.0], [2.0, 3.0]], [3.0, 4.0]), 0.0);
        let th = [0.4, -1.0];
        let perfect: Vec<[f64; 2]> = th.iter().map(|t: &f64| [t.sin(), t.cos()]).collect();
        assert!(heading_loss(&perfect, &th, 1.0) < 1e-15);
        // norm term of (1, 1) is |1 - 2| = 1; of (0.6, 0.8) it is 0
        assert!((heading_loss(&[[1.0, 1.0]], &[0.0], 1.0) - heading_loss(&[[1.0, 1.0]], &[0.0], 0.0) - 1.0).abs() < 1e-15);
        assert!((heading_loss(&[[0.6, 0.8]], &[0.0], 1.0) - heading_loss(&[[0.6, 0.8]], &[0.0], 0.0)).abs() < 1e-15);
        assert!(!velocity_mask([0.1, 0.0]));
        assert!(velocity_mask([0.0, 1.0]));
        assert!(!velocity_mask([0.0, 0.0]));
    }

    #[test]
    fn latent_graph_gradient_is_unit_residual() {
        let mut tape = Tape::new(true, 0);
        let data: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let latent = tape.leaf(Tensor::new(&[1, 2, 5], data.clone()).unwrap(), true);
        let dp = tape.constant(Tensor::new(&[1, 2], vec![0.3, -1.0]).unwrap());
        let loss = latent_loss_graph(&mut tape, latent, dp).unwrap();
        let sum = [data[..5].iter().sum::<f64>(), data[5..].iter().sum::<f64>()];
        let r = [sum[0] - 0.3, sum[1] + 1.0];
        let norm = r[0].hypot(r[1]);
        assert!((tape.value(loss).item() - norm).abs() < 1e-12);
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        let gl = g.get(latent).unwrap();
        for t in 0..5 {
            assert!((gl[t] - r[0] / norm).abs() < 1e-15);
            assert!((gl[5 + t] - r[1] / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn heading_graph_matches_plain() {
        let pred = [[0.3, 0.9], [-0.5, 0.1], [1.2, -0.2]];
        let th = [0.2, 2.5, -1.0];
        let mut tape = Tape::new(true, 0);
        let p = tape.constant(Tensor::new(&[1, 2, 3], pred.iter().map(|r| r[0]).chain(pred.iter().map(|r| r[1])).collect()).unwrap());
        let t = tape.constant(
            Tensor::new(&[1, 2, 3], th.iter().map(|t: &f64| t.sin()).chain(th.iter().map(|t: &f64| t.cos())).collect()).unwrap(),
        );
        let l = heading_loss_graph(&mut tape, p, t, 0.7).unwrap();
        assert!((tape.value(l).item() - heading_loss(&pred, &th, 0.7)).abs() < 1e-14);
    }
}
