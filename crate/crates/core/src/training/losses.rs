//! Value-level losses over frame sequences (`frames x (agents x dim)`).

use super::TrainError;
use crate::diffcore::Tensor;

fn sq_diff(a: &Tensor, b: &Tensor) -> Result<f64, TrainError> {
    if a.shape() != b.shape() {
        return Err(TrainError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn same_len(a: &[Tensor], b: &[Tensor]) -> Result<(), TrainError> {
    if a.len() != b.len() {
        return Err(TrainError::Shape(format!("{} frames vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `sum_t ||y(t) - yhat(t)||^2`.
pub fn loss_pred(pred: &[Tensor], truth: &[Tensor]) -> Result<f64, TrainError> {
    same_len(pred, truth)?;
    pred.iter().zip(truth).map(|(a, b)| sq_diff(a, b)).sum()
}

/// `sum_t ||fwd(t) - rev(T - t)||^2`.
pub fn loss_reverse(fwd: &[Tensor], rev: &[Tensor]) -> Result<f64, TrainError> {
    same_len(fwd, rev)?;
    let terms = fwd.iter().zip(rev.iter().rev()).map(|(a, b)| sq_diff(a, b)).collect::<Result<Vec<f64>, _>>()?;
    // Swapping the arguments reverses the term order; mirrored pairs keep the sum bitwise symmetric.
    let n = terms.len();
    Ok((0..(n + 1) / 2).map(|i| if i == n - 1 - i { terms[i] } else { terms[i] + terms[n - 1 - i] }).sum())
}

pub fn loss_gt_rev(truth: &[Tensor], rev: &[Tensor]) -> Result<f64, TrainError> {
    loss_reverse(truth, rev)
}

/// `rev2(t)` is the negated-field pass from the same initial latent; the
/// comparison is frame by frame.
pub fn loss_rev2(fwd: &[Tensor], rev2: &[Tensor]) -> Result<f64, TrainError> {
    loss_pred(fwd, rev2)
}
