//! Classification losses. Gradients use the mean-over-batch convention:
//! grad = (softmax(logits) - target) / batch.

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Real>(logits: &Tensor<S>) -> Tensor<S> {
    let (bsz, k) = (logits.dims()[0], logits.dims()[1]);
    let mut out = vec![S::zero(); bsz * k];
    let zd = logits.data();
    for i in 0..bsz {
        let row = &zd[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for j in 0..k {
            let e = (row[j] - m).exp();
            out[i * k + j] = e;
            denom = denom + e;
        }
        for j in 0..k {
            out[i * k + j] = out[i * k + j] / denom;
        }
    }
    Tensor::new(vec![bsz, k], out).unwrap()
}

fn row_logsumexp<S: Real>(row: &[S]) -> S {
    let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
    let s: S = row.iter().map(|&z| (z - m).exp()).sum();
    m + s.ln()
}

/// Mean cross-entropy against hard class indices.
/// Returns (loss, dLoss/dlogits).
pub fn cross_entropy_hard<S: Real>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>), NnError> {
    let (bsz, k) = (logits.dims()[0], logits.dims()[1]);
    if labels.len() != bsz {
        return Err(NnError::BatchMismatch { logits: bsz, targets: labels.len() });
    }
    for &y in labels {
        if y >= k {
            return Err(NnError::LabelOutOfRange { label: y, classes: k });
        }
    }
    let zd = logits.data();
    let inv_b = S::from_f64(1.0 / bsz as f64);
    let mut grad = softmax_rows(logits);
    let mut loss = S::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = &zd[i * k..(i + 1) * k];
        loss = loss + row_logsumexp(row) - row[y];
        let grow = &mut grad.data_mut()[i * k..(i + 1) * k];
        grow[y] = grow[y] - S::one();
        for v in grow.iter_mut() {
            *v = *v * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// Mean cross-entropy against soft target distributions (rows of `q`).
pub fn cross_entropy_soft<S: Real>(
    logits: &Tensor<S>,
    q: &Tensor<S>,
) -> Result<(S, Tensor<S>), NnError> {
    let (bsz, k) = (logits.dims()[0], logits.dims()[1]);
    if q.dims() != logits.dims() {
        return Err(NnError::BatchMismatch { logits: bsz, targets: q.dims()[0] });
    }
    let zd = logits.data();
    let qd = q.data();
    let inv_b = S::from_f64(1.0 / bsz as f64);
    let mut grad = softmax_rows(logits);
    let mut loss = S::zero();
    for i in 0..bsz {
        let row = &zd[i * k..(i + 1) * k];
        let lse = row_logsumexp(row);
        let grow = &mut grad.data_mut()[i * k..(i + 1) * k];
        for j in 0..k {
            loss = loss + qd[i * k + j] * (lse - row[j]);
            grow[j] = (grow[j] - qd[i * k + j]) * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// Mean squared error, 0.5*||z - t||^2 per sample. Used by oracle tests and
/// the scalar gradient-matching toy.
pub fn squared_error<S: Real>(
    logits: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<(S, Tensor<S>), NnError> {
    if logits.dims() != target.dims() {
        return Err(NnError::BatchMismatch {
            logits: logits.dims()[0],
            targets: target.dims()[0],
        });
    }
    let bsz = logits.dims()[0];
    let inv_b = S::from_f64(1.0 / bsz as f64);
    let half = S::from_f64(0.5);
    let mut loss = S::zero();
    let data = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &t)| {
            let d = z - t;
            loss = loss + half * d * d;
            d * inv_b
        })
        .collect();
    Ok((loss * inv_b, Tensor::new(logits.dims().to_vec(), data).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::zeros(vec![4, 10]);
        let (loss, _) = cross_entropy_hard(&logits, &[0, 3, 5, 9]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut logits = Tensor::<f64>::zeros(vec![1, 10]);
        logits.data_mut()[2] = 100.0;
        let (loss, _) = cross_entropy_hard(&logits, &[2]).unwrap();
        assert!(loss < 1e-8);
    }

    #[test]
    fn two_class_uniform_grad() {
        let logits = Tensor::<f64>::zeros(vec![1, 2]);
        let (_, grad) = cross_entropy_hard(&logits, &[0]).unwrap();
        assert!((grad.data()[0] + 0.5).abs() < 1e-12);
        assert!((grad.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(matches!(
            cross_entropy_hard(&logits, &[3]),
            Err(NnError::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits =
            Tensor::<f32>::new(vec![2, 3], vec![1.0, -2.0, 0.5, 30.0, 31.0, 29.0]).unwrap();
        let p = softmax_rows(&logits);
        for i in 0..2 {
            let s: f32 = p.data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn soft_targets_match_hard_at_onehot() {
        let logits =
            Tensor::<f64>::new(vec![2, 3], vec![0.3, -1.0, 0.2, 2.0, 0.0, -0.5]).unwrap();
        let (lh, gh) = cross_entropy_hard(&logits, &[2, 0]).unwrap();
        let q = Tensor::new(vec![2, 3], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let (ls, gs) = cross_entropy_soft(&logits, &q).unwrap();
        assert!((lh - ls).abs() < 1e-12);
        for (a, b) in gh.data().iter().zip(gs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
