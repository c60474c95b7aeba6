use serde::{Deserialize, Serialize};

use super::linalg::Mat;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean of squared errors over every output entry.
    Mse,
    /// Softmax cross-entropy on logits, averaged over the batch.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Dense targets, same shape as the predictions (one-hot for cross-entropy).
    Values(&'a Mat),
    /// Class indices, one per row.
    Classes(&'a [usize]),
}

/// Loss value and its exact derivative with respect to the predictions.
pub fn loss_eval(kind: LossKind, predictions: &Mat, targets: Targets<'_>) -> Result<(f64, Mat)> {
    let (n, k) = (predictions.rows(), predictions.cols());
    if n == 0 || k == 0 {
        return Err(Error::contract("loss over an empty batch"));
    }
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(t)) => {
            check_len("mse targets rows", n, t.rows())?;
            check_len("mse targets cols", k, t.cols())?;
            let count = (n * k) as f64;
            let mut grad = Mat::zeros(n, k);
            let mut value = 0.0;
            for (g, (p, y)) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(predictions.as_slice().iter().zip(t.as_slice()))
            {
                let e = p - y;
                value += e * e;
                *g = 2.0 * e / count;
            }
            Ok((value / count, grad))
        }
        (LossKind::Mse, Targets::Classes(_)) => {
            Err(Error::contract("mean-squared error needs dense targets"))
        }
        (LossKind::CrossEntropy, targets) => {
            let classes: Vec<usize> = match targets {
                Targets::Classes(c) => {
                    check_len("cross-entropy targets", n, c.len())?;
                    c.to_vec()
                }
                Targets::Values(t) => {
                    check_len("cross-entropy targets rows", n, t.rows())?;
                    check_len("cross-entropy targets cols", k, t.cols())?;
                    (0..n)
                        .map(|r| {
                            t.row(r)
                                .iter()
                                .position(|&v| v == 1.0)
                                .ok_or_else(|| Error::contract("one-hot row without a 1"))
                        })
                        .collect::<Result<_>>()?
                }
            };
            let mut grad = Mat::zeros(n, k);
            let mut value = 0.0;
            for (r, &c) in classes.iter().enumerate() {
                if c >= k {
                    return Err(Error::contract(format!("class {c} out of range {k}")));
                }
                let row = predictions.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                value += z.ln() + m - row[c];
                let g = grad.row_mut(r);
                for (j, v) in row.iter().enumerate() {
                    g[j] = ((v - m).exp() / z - if j == c { 1.0 } else { 0.0 }) / n as f64;
                }
            }
            Ok((value / n as f64, grad))
        }
    }
}

/// Mean-squared error over the entries where `mask` is non-zero.
///
/// Used for sparse regression where only one output per row is observed.
pub fn masked_mse(predictions: &Mat, targets: &Mat, mask: &Mat) -> Result<(f64, Mat)> {
    let (n, k) = (predictions.rows(), predictions.cols());
    check_len("masked_mse targets", n * k, targets.as_slice().len())?;
    check_len("masked_mse mask", n * k, mask.as_slice().len())?;
    let count = mask.as_slice().iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::contract("masked loss without observed entries"));
    }
    let count = count as f64;
    let mut grad = Mat::zeros(n, k);
    let mut value = 0.0;
    for (i, g) in grad.as_mut_slice().iter_mut().enumerate() {
        if mask.as_slice()[i] != 0.0 {
            let e = predictions.as_slice()[i] - targets.as_slice()[i];
            value += e * e;
            *g = 2.0 * e / count;
        }
    }
    Ok((value / count, grad))
}
