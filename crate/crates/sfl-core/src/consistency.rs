//! The gradient-consistency probe: how much the server's answer to a fixed
//! query drifts between epochs. Frozen servers score zero everywhere;
//! from-scratch training drifts heavily early and settles after the last
//! learning-rate drop.

use sfl_nn::Tensor;

use crate::error::CoreError;

fn row_norms(snapshot: &Tensor<f32>) -> Vec<f64> {
    let b = snapshot.dims()[0];
    let n = snapshot.len() / b;
    (0..b)
        .map(|i| {
            snapshot.data()[i * n..(i + 1) * n]
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// For each epoch t >= 1: mean over probes of ||g_t - g_{t-1}||_2,
/// normalized by the mean of ||g_{t-1}||_2. Series length = snapshots - 1.
pub fn gradient_consistency(snapshots: &[Tensor<f32>]) -> Result<Vec<f64>, CoreError> {
    if snapshots.len() < 2 {
        return Err(CoreError::NotEnoughSnapshots(snapshots.len()));
    }
    let mut series = Vec::with_capacity(snapshots.len() - 1);
    for t in 1..snapshots.len() {
        let prev = &snapshots[t - 1];
        let cur = &snapshots[t];
        if prev.dims() != cur.dims() {
            return Err(CoreError::QueryLog(
                "probe snapshots changed shape between epochs".into(),
            ));
        }
        let b = prev.dims()[0];
        let n = prev.len() / b;
        let mut diff_mean = 0.0f64;
        for i in 0..b {
            let d: f64 = prev.data()[i * n..(i + 1) * n]
                .iter()
                .zip(&cur.data()[i * n..(i + 1) * n])
                .map(|(&a, &b)| {
                    let d = f64::from(b) - f64::from(a);
                    d * d
                })
                .sum();
            diff_mean += d.sqrt();
        }
        diff_mean /= b as f64;
        let base_mean = row_norms(prev).iter().sum::<f64>() / b as f64;
        series.push(if base_mean == 0.0 { 0.0 } else { diff_mean / base_mean });
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_snapshots_score_zero() {
        let snap = Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap();
        let series = gradient_consistency(&[snap.clone(), snap.clone(), snap]).unwrap();
        assert_eq!(series, vec![0.0, 0.0]);
    }

    #[test]
    fn series_length_is_snapshots_minus_one() {
        let snaps: Vec<Tensor<f32>> = (0..5)
            .map(|i| Tensor::full(vec![1, 4], i as f32))
            .collect();
        assert_eq!(gradient_consistency(&snaps).unwrap().len(), 4);
    }

    #[test]
    fn one_snapshot_is_an_error() {
        let snap = Tensor::full(vec![1, 4], 1.0);
        assert!(matches!(
            gradient_consistency(&[snap]),
            Err(CoreError::NotEnoughSnapshots(1))
        ));
    }

    #[test]
    fn normalization_uses_previous_norm() {
        let a = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(); // norm 5
        let b = Tensor::new(vec![1, 2], vec![3.0, 14.0]).unwrap(); // diff norm 10
        let series = gradient_consistency(&[a, b]).unwrap();
        assert!((series[0] - 2.0).abs() < 1e-9);
    }
}
