//! FedAvg synchronization of client parts.

use sfl_nn::{ParamSet, Tensor, UnitParams};

use crate::error::CoreError;

/// Elementwise mean of client parameter sets, taken in the given
/// (ascending client-id) order. Accumulation runs in f64 so averaging M
/// identical copies returns them bit-for-bit, which makes synchronization
/// idempotent and M=1 a no-op.
pub fn fedavg(copies: &[&ParamSet]) -> Result<ParamSet, CoreError> {
    let first = copies.first().ok_or(CoreError::SyncShapeMismatch)?;
    let inv_m = 1.0 / copies.len() as f64;
    let mut entries = Vec::with_capacity(first.len());
    for slot in 0..first.len() {
        let Some(proto) = first.get(slot) else {
            if copies.iter().any(|c| c.get(slot).is_some()) {
                return Err(CoreError::SyncShapeMismatch);
            }
            entries.push(None);
            continue;
        };
        let mut wacc = vec![0.0f64; proto.weight.len()];
        let mut bacc = vec![0.0f64; proto.bias.len()];
        for c in copies {
            let p = c.get(slot).ok_or(CoreError::SyncShapeMismatch)?;
            if p.weight.dims() != proto.weight.dims() || p.bias.dims() != proto.bias.dims() {
                return Err(CoreError::SyncShapeMismatch);
            }
            for (a, &v) in wacc.iter_mut().zip(p.weight.data()) {
                *a += f64::from(v);
            }
            for (a, &v) in bacc.iter_mut().zip(p.bias.data()) {
                *a += f64::from(v);
            }
        }
        let weight = Tensor::new(
            proto.weight.dims().to_vec(),
            wacc.into_iter().map(|v| (v * inv_m) as f32).collect(),
        )
        .unwrap();
        let bias = Tensor::new(
            proto.bias.dims().to_vec(),
            bacc.into_iter().map(|v| (v * inv_m) as f32).collect(),
        )
        .unwrap();
        entries.push(Some(UnitParams { weight, bias }));
    }
    Ok(ParamSet::from_entries(entries))
}

/// Tensor-wise mean across client uploads (each a parallel tensor list),
/// in upload order, accumulated in f64 like `fedavg`.
pub fn fedavg_tensors(uploads: &[Vec<Tensor<f32>>]) -> Result<Vec<Tensor<f32>>, CoreError> {
    let first = uploads.first().ok_or(CoreError::SyncShapeMismatch)?;
    let inv_m = 1.0 / uploads.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for pos in 0..first.len() {
        let proto = &first[pos];
        let mut acc = vec![0.0f64; proto.len()];
        for up in uploads {
            let t = up.get(pos).ok_or(CoreError::SyncShapeMismatch)?;
            if t.dims() != proto.dims() {
                return Err(CoreError::SyncShapeMismatch);
            }
            for (a, &v) in acc.iter_mut().zip(t.data()) {
                *a += f64::from(v);
            }
        }
        out.push(
            Tensor::new(
                proto.dims().to_vec(),
                acc.into_iter().map(|v| (v * inv_m) as f32).collect(),
            )
            .unwrap(),
        );
    }
    Ok(out)
}

/// Flatten a ParamSet into wire tensors (weight, bias per parameterized
/// slot, in slot order) and back.
pub fn params_to_tensors(params: &ParamSet) -> Vec<Tensor<f32>> {
    let mut out = Vec::new();
    for e in params.entries().iter().flatten() {
        out.push(e.weight.clone());
        out.push(e.bias.clone());
    }
    out
}

/// Write wire tensors back into an existing layout.
pub fn tensors_into_params(tensors: &[Tensor<f32>], layout: &mut ParamSet) -> Result<(), CoreError> {
    let mut it = tensors.iter();
    for e in layout.entries_mut().iter_mut().flatten() {
        let w = it.next().ok_or(CoreError::SyncShapeMismatch)?;
        let b = it.next().ok_or(CoreError::SyncShapeMismatch)?;
        if w.dims() != e.weight.dims() || b.dims() != e.bias.dims() {
            return Err(CoreError::SyncShapeMismatch);
        }
        e.weight = w.clone();
        e.bias = b.clone();
    }
    if it.next().is_some() {
        return Err(CoreError::SyncShapeMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfl_nn::unit::init_params;
    use sfl_nn::{Rng, UnitSpec};

    fn some_units() -> Vec<UnitSpec> {
        vec![
            UnitSpec::Linear { inputs: 6, outputs: 4 },
            UnitSpec::ReLU,
            UnitSpec::Linear { inputs: 4, outputs: 3 },
        ]
    }

    #[test]
    fn identical_copies_average_to_themselves() {
        let p: ParamSet = init_params(&some_units(), &Rng::from_seed(2));
        let avg = fedavg(&[&p, &p, &p]).unwrap();
        assert_eq!(avg, p);
    }

    #[test]
    fn zero_and_two_average_to_one() {
        let mut a: ParamSet = init_params(&some_units(), &Rng::from_seed(0));
        let mut b = a.clone();
        for e in a.entries_mut().iter_mut().flatten() {
            e.weight = Tensor::full(e.weight.dims().to_vec(), 0.0);
            e.bias = Tensor::full(e.bias.dims().to_vec(), 0.0);
        }
        for e in b.entries_mut().iter_mut().flatten() {
            e.weight = Tensor::full(e.weight.dims().to_vec(), 2.0);
            e.bias = Tensor::full(e.bias.dims().to_vec(), 2.0);
        }
        let avg = fedavg(&[&a, &b]).unwrap();
        for e in avg.entries().iter().flatten() {
            assert!(e.weight.data().iter().all(|&v| v == 1.0));
            assert!(e.bias.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn matches_independent_mean_within_f32_tolerance() {
        let copies: Vec<ParamSet> = (0..10)
            .map(|s| init_params(&some_units(), &Rng::from_seed(100 + s)))
            .collect();
        let refs: Vec<&ParamSet> = copies.iter().collect();
        let avg = fedavg(&refs).unwrap();
        // Independent oracle: mean per element in plain f64 over a flat dump.
        for slot in 0..avg.len() {
            let Some(a) = avg.get(slot) else { continue };
            for j in 0..a.weight.len() {
                let mean: f64 = copies
                    .iter()
                    .map(|c| f64::from(c.get(slot).unwrap().weight.data()[j]))
                    .sum::<f64>()
                    / 10.0;
                assert!((f64::from(a.weight.data()[j]) - mean).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn synchronization_is_idempotent() {
        let copies: Vec<ParamSet> = (0..7)
            .map(|s| init_params(&some_units(), &Rng::from_seed(s)))
            .collect();
        let refs: Vec<&ParamSet> = copies.iter().collect();
        let once = fedavg(&refs).unwrap();
        // After a sync every client holds `once`; a second sync must return
        // it unchanged.
        let again = fedavg(&[&once, &once, &once, &once, &once, &once, &once]).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn wire_round_trip() {
        let p: ParamSet = init_params(&some_units(), &Rng::from_seed(4));
        let tensors = params_to_tensors(&p);
        let mut back = p.zeros_like();
        tensors_into_params(&tensors, &mut back).unwrap();
        assert_eq!(back, p);
    }
}
