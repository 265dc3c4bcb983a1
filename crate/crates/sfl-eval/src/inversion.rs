//! Model inversion: train a decoder from cut activations back to images
//! on data the attacking server holds, then score reconstruction MSE on
//! probe activations from benign clients.

use sfl_core::CoreError;
use sfl_data::Dataset;
use sfl_nn::gen::{GenLayer, GenNet};
use sfl_nn::loss::squared_error;
use sfl_nn::net::forward_logits;
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::{ParamSet, Rng, UnitSpec};

use crate::error::EvalError;

#[derive(Debug, Clone)]
pub struct InverterSpec {
    pub epochs: u32,
    pub batch_size: usize,
    pub adam_lr: f64,
    /// Channel width of the decoder trunk.
    pub base_channels: usize,
}

impl Default for InverterSpec {
    fn default() -> Self {
        InverterSpec { epochs: 50, batch_size: 128, adam_lr: 1e-3, base_channels: 32 }
    }
}

/// Decoder layers for a given cut shape: an adapter (dense or conv) into a
/// spatial trunk, transposed-conv upsampling to the image extent, and a
/// sigmoid squashing into [0,1].
pub fn build_inverter(
    cut_shape: &[usize],
    out_dims: &[usize],
    spec: &InverterSpec,
    rng: &Rng,
) -> Result<GenNet<f32>, EvalError> {
    let [c, h, w] = *out_dims else {
        return Err(EvalError::Shape(format!(
            "image dims must be (C,H,W), got {out_dims:?}"
        )));
    };
    let ch = spec.base_channels;
    let mut layers: Vec<GenLayer> = Vec::new();
    match *cut_shape {
        [features] => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(EvalError::Shape(format!(
                    "flat-cut decoder upsamples once; {h}x{w} must divide by 2"
                )));
            }
            let (h0, w0) = (h / 2, w / 2);
            layers.push(GenLayer::Dense { inputs: features, outputs: ch * h0 * w0 });
            layers.push(GenLayer::ReLU);
            layers.push(GenLayer::Reshape(vec![ch, h0, w0]));
            layers.push(GenLayer::TConv2d { in_ch: ch, out_ch: ch / 2, kernel: 4, stride: 2, pad: 1 });
            layers.push(GenLayer::ReLU);
            layers.push(GenLayer::TConv2d { in_ch: ch / 2, out_ch: c, kernel: 3, stride: 1, pad: 1 });
        }
        [cc, chh, cww] => {
            // Conv adapter, then upsample until the extent matches.
            if h % chh != 0 || w % cww != 0 || h / chh != w / cww {
                return Err(EvalError::Shape(format!(
                    "cut {chh}x{cww} does not upsample evenly to {h}x{w}"
                )));
            }
            let mut ratio = h / chh;
            if !ratio.is_power_of_two() {
                return Err(EvalError::Shape(format!(
                    "upsampling ratio {ratio} must be a power of two"
                )));
            }
            layers.push(GenLayer::Conv2d { in_ch: cc, out_ch: ch, kernel: 3, stride: 1, pad: 1 });
            layers.push(GenLayer::ReLU);
            let mut cur = ch;
            while ratio > 1 {
                let next = if ratio == 2 { c } else { (cur / 2).max(4) };
                layers.push(GenLayer::TConv2d { in_ch: cur, out_ch: next, kernel: 4, stride: 2, pad: 1 });
                if ratio > 2 {
                    layers.push(GenLayer::ReLU);
                }
                cur = next;
                ratio /= 2;
            }
            if h == chh {
                // Same extent: plain conv head.
                layers.push(GenLayer::Conv2d { in_ch: ch, out_ch: c, kernel: 3, stride: 1, pad: 1 });
            }
        }
        _ => {
            return Err(EvalError::Shape(format!(
                "unsupported cut shape {cut_shape:?}"
            )))
        }
    }
    layers.push(GenLayer::Sigmoid);
    Ok(GenNet::init(layers, &rng.stream("inverter")))
}

/// Train the decoder on (cut activation, image) pairs from `holdout`, then
/// reconstruct `probes` and return the mean per-pixel squared error.
pub fn model_inversion(
    client_units: &[UnitSpec],
    client_params: &ParamSet,
    holdout: &Dataset,
    probes: &Dataset,
    spec: &InverterSpec,
    rng: &Rng,
) -> Result<f64, EvalError> {
    if holdout.is_empty() || probes.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let cut_shape = {
        let (x, _) = holdout.batch(0, 1);
        let a = forward_logits(client_units, client_params, &x).map_err(CoreError::Nn)?;
        a.dims()[1..].to_vec()
    };
    let mut decoder = build_inverter(&cut_shape, holdout.sample_dims(), spec, rng)?;
    let mut optimizer = Optimizer::new(OptimKind::adam(spec.adam_lr), Schedule::default());
    let mut order: Vec<usize> = (0..holdout.len()).collect();
    let train_rng = rng.stream("inverter-train");
    let steps = (holdout.len() / spec.batch_size).max(1);
    for epoch in 0..spec.epochs {
        let mut shuffle_rng = train_rng.stream(&format!("shuffle/e{epoch}"));
        shuffle_rng.shuffle(&mut order);
        let mut pos = 0usize;
        for _ in 0..steps {
            if pos + spec.batch_size > order.len() {
                pos = 0;
            }
            let indices = &order[pos..pos + spec.batch_size.min(order.len())];
            pos += spec.batch_size;
            let picked = holdout.select(indices);
            let (images, _) = picked.batch(0, picked.len());
            let activations =
                forward_logits(client_units, client_params, &images).map_err(CoreError::Nn)?;
            let acts = decoder.forward(&activations).map_err(CoreError::Nn)?;
            let (loss, grad) =
                squared_error(acts.last().unwrap(), &images).map_err(CoreError::Nn)?;
            if !loss.is_finite() {
                return Err(EvalError::Core(CoreError::Diverged {
                    epoch,
                    loss: f64::from(loss),
                }));
            }
            let (grads, _) = decoder.backward(&acts, &grad).map_err(CoreError::Nn)?;
            optimizer.step(&mut decoder.params, &grads);
        }
    }

    // Reconstruction error over the probe set, per pixel.
    let mut se_sum = 0.0f64;
    let mut count = 0usize;
    let chunk = 256usize;
    let mut start = 0;
    while start < probes.len() {
        let len = chunk.min(probes.len() - start);
        let (images, _) = probes.batch(start, len);
        let activations =
            forward_logits(client_units, client_params, &images).map_err(CoreError::Nn)?;
        let recon = decoder.output(&activations).map_err(CoreError::Nn)?;
        se_sum += recon
            .data()
            .iter()
            .zip(images.data())
            .map(|(&r, &t)| (f64::from(r) - f64::from(t)).powi(2))
            .sum::<f64>();
        count += recon.len();
        start += len;
    }
    Ok(se_sum / count as f64)
}
