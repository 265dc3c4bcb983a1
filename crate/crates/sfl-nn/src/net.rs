//! Forward and reverse passes over a chain of units.

use crate::error::NnError;
use crate::ops;
use crate::tensor::{Real, Tensor};
use crate::unit::{ParamSet, UnitSpec};

fn geom(unit: &UnitSpec) -> ops::ConvGeom {
    match *unit {
        UnitSpec::Conv2d { kernel, stride, pad, .. } => ops::ConvGeom { kernel, stride, pad },
        _ => unreachable!(),
    }
}

fn feature_dims(t: &Tensor<impl Real>) -> &[usize] {
    &t.dims()[1..]
}

/// Run the chain on a batch `x` (dims `[B, features...]`), returning every
/// intermediate activation: `acts[0]` is the input, `acts[i+1]` the output
/// of unit `i`. The final entry holds the logits when the chain ends in the
/// classifier head.
pub fn forward<S: Real>(
    units: &[UnitSpec],
    params: &ParamSet<S>,
    x: &Tensor<S>,
) -> Result<Vec<Tensor<S>>, NnError> {
    let mut acts = Vec::with_capacity(units.len() + 1);
    acts.push(x.clone());
    for (i, u) in units.iter().enumerate() {
        let cur = acts.last().unwrap();
        let out_shape = u.infer_output(i, feature_dims(cur))?;
        let batch = cur.dims()[0];
        let next = match u {
            UnitSpec::Linear { .. } => {
                let p = params.get(i).expect("linear unit missing params");
                ops::linear_forward(cur, &p.weight, &p.bias)
            }
            UnitSpec::Conv2d { .. } => {
                let p = params.get(i).expect("conv unit missing params");
                ops::conv2d_forward(cur, &p.weight, &p.bias, &geom(u))
            }
            UnitSpec::ReLU => ops::relu_forward(cur),
            UnitSpec::MaxPool2x2 => ops::maxpool2x2_forward(cur).0,
            UnitSpec::Flatten => {
                let mut dims = vec![batch];
                dims.extend_from_slice(&out_shape);
                cur.reshaped(dims)?
            }
        };
        debug_assert_eq!(feature_dims(&next), &out_shape[..]);
        acts.push(next);
    }
    Ok(acts)
}

/// Logits only (last activation of `forward`).
pub fn forward_logits<S: Real>(
    units: &[UnitSpec],
    params: &ParamSet<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>, NnError> {
    Ok(forward(units, params, x)?.pop().unwrap())
}

fn check_acts<S: Real>(units: &[UnitSpec], acts: &[Tensor<S>]) -> Result<(), NnError> {
    if acts.len() != units.len() + 1 {
        return Err(NnError::BadActivationCache {
            expected: units.len() + 1,
            got: acts.len(),
        });
    }
    Ok(())
}

/// Exact reverse-mode gradients of a scalar loss w.r.t. every parameter and
/// the chain input, given `upstream` = dLoss/d(final activation).
pub fn backward<S: Real>(
    units: &[UnitSpec],
    params: &ParamSet<S>,
    acts: &[Tensor<S>],
    upstream: &Tensor<S>,
) -> Result<(ParamSet<S>, Tensor<S>), NnError> {
    check_acts(units, acts)?;
    let mut grads = params.zeros_like();
    let mut delta = upstream.clone();
    for (i, u) in units.iter().enumerate().rev() {
        let input = &acts[i];
        delta = match u {
            UnitSpec::Linear { .. } => {
                let p = params.get(i).expect("linear unit missing params");
                let (wg, bg) = ops::linear_param_grads(input, &delta);
                let slot = grads.get_mut(i).unwrap();
                slot.weight = wg;
                slot.bias = bg;
                ops::linear_input_grad(&delta, &p.weight)
            }
            UnitSpec::Conv2d { .. } => {
                let p = params.get(i).expect("conv unit missing params");
                let g = geom(u);
                let (wg, bg) = ops::conv2d_param_grads(input, &delta, &g);
                let slot = grads.get_mut(i).unwrap();
                slot.weight = wg;
                slot.bias = bg;
                let (h, w) = (input.dims()[2], input.dims()[3]);
                ops::conv2d_input_grad(&delta, &p.weight, &g, (h, w))
            }
            UnitSpec::ReLU => ops::relu_backward(input, &delta),
            UnitSpec::MaxPool2x2 => {
                let (_, arg) = ops::maxpool2x2_forward(input);
                ops::maxpool2x2_backward(&arg, &delta, input.dims())
            }
            UnitSpec::Flatten => delta.reshaped(input.dims().to_vec())?,
        };
    }
    Ok((grads, delta))
}

/// Like `backward` but returns the gradient w.r.t. *every* boundary
/// activation (`deltas[i]` = dLoss/d acts[i]) and skips parameter grads.
/// Feeds the second-order pass.
pub fn input_deltas<S: Real>(
    units: &[UnitSpec],
    params: &ParamSet<S>,
    acts: &[Tensor<S>],
    upstream: &Tensor<S>,
) -> Result<Vec<Tensor<S>>, NnError> {
    check_acts(units, acts)?;
    let mut deltas = vec![Tensor::zeros(vec![0]); units.len() + 1];
    deltas[units.len()] = upstream.clone();
    for (i, u) in units.iter().enumerate().rev() {
        let input = &acts[i];
        let delta = &deltas[i + 1];
        deltas[i] = match u {
            UnitSpec::Linear { .. } => {
                ops::linear_input_grad(delta, &params.get(i).unwrap().weight)
            }
            UnitSpec::Conv2d { .. } => {
                let (h, w) = (input.dims()[2], input.dims()[3]);
                ops::conv2d_input_grad(delta, &params.get(i).unwrap().weight, &geom(u), (h, w))
            }
            UnitSpec::ReLU => ops::relu_backward(input, delta),
            UnitSpec::MaxPool2x2 => {
                let (_, arg) = ops::maxpool2x2_forward(input);
                ops::maxpool2x2_backward(&arg, delta, input.dims())
            }
            UnitSpec::Flatten => delta.reshaped(input.dims().to_vec())?,
        };
    }
    Ok(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unit::{init_params, UnitParams};
    use crate::Rng;

    #[test]
    fn forward_returns_all_activations() {
        let units = [
            UnitSpec::Flatten,
            UnitSpec::Linear { inputs: 4, outputs: 2 },
        ];
        let params = init_params::<f32>(&units, &Rng::from_seed(0));
        let x = Tensor::new(vec![3, 1, 2, 2], vec![0.5; 12]).unwrap();
        let acts = forward(&units, &params, &x).unwrap();
        assert_eq!(acts.len(), 3);
        assert_eq!(acts[1].dims(), &[3, 4]);
        assert_eq!(acts[2].dims(), &[3, 2]);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let units = [
            UnitSpec::Flatten,
            UnitSpec::Linear { inputs: 4, outputs: 2 },
        ];
        let params = init_params::<f32>(&units, &Rng::from_seed(0));
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let mut acts = forward(&units, &params, &x).unwrap();
        let upstream = Tensor::zeros(vec![1, 2]);
        acts.pop();
        assert!(matches!(
            backward(&units, &params, &acts, &upstream),
            Err(NnError::BadActivationCache { .. })
        ));
    }

    #[test]
    fn single_linear_input_grad_is_w_transpose_delta() {
        let units = [UnitSpec::Linear { inputs: 2, outputs: 2 }];
        let w = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let params = ParamSet::from_entries(vec![Some(UnitParams {
            weight: w,
            bias: Tensor::zeros(vec![2]),
        })]);
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let acts = forward(&units, &params, &x).unwrap();
        let delta = Tensor::new(vec![1, 2], vec![1.0, 10.0]).unwrap();
        let (_, gx) = backward(&units, &params, &acts, &delta).unwrap();
        // W^T delta = [1*1 + 3*10, 2*1 + 4*10]
        assert_eq!(gx.data(), &[31.0, 42.0]);
    }
}
