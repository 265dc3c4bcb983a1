//! Second-order reverse pass for the gradient-matching objective.
//!
//! Given a server-side chain S with parameters theta, an input batch A, a
//! target (labels or regression values) and a target gradient g*, this
//! computes d/dtheta of phi(theta) = sum_i || grad_{A_i} L_i(theta) - g*_i ||^2,
//! where L_i is the *per-sample* loss (no 1/batch factor), by running a
//! second reverse pass through the first one.
//!
//! The dependency of phi on theta has two routes:
//!   1. the backward operators themselves (W appears in W^T delta), handled
//!      by propagating the residual r forward through the linearized chain
//!      and accumulating outer products against the first-pass deltas;
//!   2. the loss-gradient seed s(z), handled by pushing the propagated r
//!      through the loss Hessian and running an ordinary backward pass.
//! ReLU masks and pool argmaxes are piecewise constant, so their
//! contribution is zero almost everywhere and they are held fixed.

use crate::error::NnError;
use crate::loss::softmax_rows;
use crate::net::{backward, forward, input_deltas};
use crate::ops;
use crate::tensor::{Real, Tensor};
use crate::unit::{ParamSet, UnitSpec};

/// What the queried loss was computed against.
#[derive(Debug, Clone)]
pub enum GmTarget<S: Real> {
    /// Cross-entropy against hard class indices.
    Classes(Vec<usize>),
    /// 0.5*||z - t||^2 regression loss (used by oracle tests).
    Values(Tensor<S>),
}

#[derive(Debug, Clone)]
pub struct GmOutput<S: Real> {
    /// sum over samples of ||grad_A L_i - g*_i||^2.
    pub loss: S,
    /// The chain's own per-sample input gradient (same convention as g*).
    pub cut_grad: Tensor<S>,
    /// d phi / d theta.
    pub param_grads: ParamSet<S>,
}

/// Per-sample loss gradient at the logits (sum convention, no 1/batch).
fn loss_seed<S: Real>(z: &Tensor<S>, target: &GmTarget<S>) -> Result<Tensor<S>, NnError> {
    match target {
        GmTarget::Classes(labels) => {
            let (bsz, k) = (z.dims()[0], z.dims()[1]);
            if labels.len() != bsz {
                return Err(NnError::BatchMismatch { logits: bsz, targets: labels.len() });
            }
            for &y in labels {
                if y >= k {
                    return Err(NnError::LabelOutOfRange { label: y, classes: k });
                }
            }
            let mut s = softmax_rows(z);
            for (i, &y) in labels.iter().enumerate() {
                let v = &mut s.data_mut()[i * k + y];
                *v = *v - S::one();
            }
            Ok(s)
        }
        GmTarget::Values(t) => {
            if t.dims() != z.dims() {
                return Err(NnError::BatchMismatch { logits: z.dims()[0], targets: t.dims()[0] });
            }
            let data = z.data().iter().zip(t.data()).map(|(&z, &t)| z - t).collect();
            Ok(Tensor::new(z.dims().to_vec(), data).unwrap())
        }
    }
}

/// Push `r` through the Hessian of the per-sample loss at the logits.
fn loss_hessian_vec<S: Real>(z: &Tensor<S>, target: &GmTarget<S>, r: &Tensor<S>) -> Tensor<S> {
    match target {
        GmTarget::Classes(_) => {
            // Softmax Jacobian per row: diag(p) - p p^T (symmetric).
            let (bsz, k) = (z.dims()[0], z.dims()[1]);
            let p = softmax_rows(z);
            let mut out = vec![S::zero(); bsz * k];
            for i in 0..bsz {
                let prow = &p.data()[i * k..(i + 1) * k];
                let rrow = &r.data()[i * k..(i + 1) * k];
                let mut dot = S::zero();
                for j in 0..k {
                    dot = dot + prow[j] * rrow[j];
                }
                for j in 0..k {
                    out[i * k + j] = prow[j] * (rrow[j] - dot);
                }
            }
            Tensor::new(vec![bsz, k], out).unwrap()
        }
        GmTarget::Values(_) => r.clone(),
    }
}

/// Gradient of the GM objective w.r.t. the chain parameters.
///
/// `target_grad` must hold per-sample input gradients (dims equal to the
/// input batch). When the chain's own gradient equals `target_grad`
/// bit-for-bit, the loss and every returned gradient are exactly zero.
pub fn gm_backward<S: Real>(
    units: &[UnitSpec],
    params: &ParamSet<S>,
    input: &Tensor<S>,
    target: &GmTarget<S>,
    target_grad: &Tensor<S>,
) -> Result<GmOutput<S>, NnError> {
    let acts = forward(units, params, input)?;
    let z = acts.last().unwrap();
    let seed = loss_seed(z, target)?;
    let deltas = input_deltas(units, params, &acts, &seed)?;
    let cut_grad = deltas[0].clone();
    if target_grad.dims() != cut_grad.dims() {
        return Err(NnError::BadTensor {
            dims: target_grad.dims().to_vec(),
            len: cut_grad.len(),
        });
    }

    let mut loss = S::zero();
    let two = S::from_f64(2.0);
    let r0_data: Vec<S> = cut_grad
        .data()
        .iter()
        .zip(target_grad.data())
        .map(|(&g, &t)| {
            let d = g - t;
            loss = loss + d * d;
            two * d
        })
        .collect();
    let mut r = Tensor::new(cut_grad.dims().to_vec(), r0_data).unwrap();

    // Route 1: r flows forward through the linearized chain; each
    // parameterized unit picks up delta (x) r outer products.
    let mut grads = params.zeros_like();
    for (i, u) in units.iter().enumerate() {
        r = match u {
            UnitSpec::Linear { .. } => {
                let p = params.get(i).unwrap();
                let (wg, _) = ops::linear_param_grads(&r, &deltas[i + 1]);
                crate::tensor::add_assign(&mut grads.get_mut(i).unwrap().weight, &wg);
                let zero_bias = Tensor::zeros(vec![p.weight.dims()[0]]);
                ops::linear_forward(&r, &p.weight, &zero_bias)
            }
            UnitSpec::Conv2d { kernel, stride, pad, .. } => {
                let p = params.get(i).unwrap();
                let g = ops::ConvGeom { kernel: *kernel, stride: *stride, pad: *pad };
                let (wg, _) = ops::conv2d_param_grads(&r, &deltas[i + 1], &g);
                crate::tensor::add_assign(&mut grads.get_mut(i).unwrap().weight, &wg);
                let zero_bias = Tensor::zeros(vec![p.weight.dims()[0]]);
                ops::conv2d_forward(&r, &p.weight, &zero_bias, &g)
            }
            UnitSpec::ReLU => ops::relu_backward(&acts[i], &r),
            UnitSpec::MaxPool2x2 => {
                let (_, arg) = ops::maxpool2x2_forward(&acts[i]);
                ops::maxpool2x2_gather(&arg, &r, acts[i + 1].dims())
            }
            UnitSpec::Flatten => r.reshaped(acts[i + 1].dims().to_vec())?,
        };
    }

    // Route 2: the seed s(z) depends on theta through z.
    let z_bar = loss_hessian_vec(z, target, &r);
    let (second, _) = backward(units, params, &acts, &z_bar)?;
    grads.add_assign(&second);

    Ok(GmOutput { loss, cut_grad, param_grads: grads })
}
