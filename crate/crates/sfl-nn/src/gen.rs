//! Differentiable layer stack for image synthesis networks (the attack
//! generator and the inversion decoder). Kept separate from `UnitSpec`:
//! these layers never appear in a victim model and are not splittable.

use crate::error::NnError;
use crate::ops;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use crate::unit::{ParamSet, UnitParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenLayer {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    /// Transposed convolution; output extent = (in-1)*stride - 2*pad + kernel.
    TConv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    ReLU,
    Sigmoid,
    /// Reinterpret the feature dims (batch dim untouched).
    Reshape(Vec<usize>),
}

impl GenLayer {
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            GenLayer::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            GenLayer::Conv2d { in_ch, out_ch, kernel, .. } => {
                Some((vec![out_ch, in_ch, kernel, kernel], vec![out_ch]))
            }
            GenLayer::TConv2d { in_ch, out_ch, kernel, .. } => {
                // Stored in (in, out, k, k) layout.
                Some((vec![in_ch, out_ch, kernel, kernel], vec![out_ch]))
            }
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            GenLayer::Dense { inputs, .. } => inputs,
            GenLayer::Conv2d { in_ch, kernel, .. } | GenLayer::TConv2d { in_ch, kernel, .. } => {
                in_ch * kernel * kernel
            }
            _ => 0,
        }
    }
}

fn tconv_out_extent(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (n - 1) * stride + kernel - 2 * pad
}

fn tconv2d_forward<S: Real>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let [bsz, cin, h, wd_] = *x.dims() else { unreachable!() };
    let cout = w.dims()[1];
    let (oh, ow) = (
        tconv_out_extent(h, kernel, stride, pad),
        tconv_out_extent(wd_, kernel, stride, pad),
    );
    let mut out = vec![S::zero(); bsz * cout * oh * ow];
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    for bi in 0..bsz {
        for o in 0..cout {
            let obase = ((bi * cout) + o) * oh * ow;
            for v in &mut out[obase..obase + oh * ow] {
                *v = bd[o];
            }
        }
        for ci in 0..cin {
            let xbase = ((bi * cin) + ci) * h * wd_;
            for o in 0..cout {
                let obase = ((bi * cout) + o) * oh * ow;
                let wbase = ((ci * cout) + o) * kernel * kernel;
                for r in 0..h {
                    for c in 0..wd_ {
                        let xv = xd[xbase + r * wd_ + c];
                        for kh in 0..kernel {
                            let orow = (r * stride + kh) as isize - pad as isize;
                            if orow < 0 || orow as usize >= oh {
                                continue;
                            }
                            for kw in 0..kernel {
                                let ocol = (c * stride + kw) as isize - pad as isize;
                                if ocol < 0 || ocol as usize >= ow {
                                    continue;
                                }
                                let idx = obase + orow as usize * ow + ocol as usize;
                                out[idx] = out[idx] + xv * wdat[wbase + kh * kernel + kw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![bsz, cout, oh, ow], out).unwrap()
}

fn tconv2d_input_grad<S: Real>(
    delta: &Tensor<S>,
    w: &Tensor<S>,
    kernel: usize,
    stride: usize,
    pad: usize,
    input_dims: &[usize],
) -> Tensor<S> {
    let [bsz, cin, h, wd_] = *input_dims else { unreachable!() };
    let cout = w.dims()[1];
    let [_, _, oh, ow] = *delta.dims() else { unreachable!() };
    let mut out = vec![S::zero(); bsz * cin * h * wd_];
    let (dd, wdat) = (delta.data(), w.data());
    for bi in 0..bsz {
        for ci in 0..cin {
            let xbase = ((bi * cin) + ci) * h * wd_;
            for o in 0..cout {
                let dbase = ((bi * cout) + o) * oh * ow;
                let wbase = ((ci * cout) + o) * kernel * kernel;
                for r in 0..h {
                    for c in 0..wd_ {
                        let mut acc = S::zero();
                        for kh in 0..kernel {
                            let orow = (r * stride + kh) as isize - pad as isize;
                            if orow < 0 || orow as usize >= oh {
                                continue;
                            }
                            for kw in 0..kernel {
                                let ocol = (c * stride + kw) as isize - pad as isize;
                                if ocol < 0 || ocol as usize >= ow {
                                    continue;
                                }
                                acc = acc
                                    + dd[dbase + orow as usize * ow + ocol as usize]
                                        * wdat[wbase + kh * kernel + kw];
                            }
                        }
                        let idx = xbase + r * wd_ + c;
                        out[idx] = out[idx] + acc;
                    }
                }
            }
        }
    }
    Tensor::new(input_dims.to_vec(), out).unwrap()
}

fn tconv2d_param_grads<S: Real>(
    x: &Tensor<S>,
    delta: &Tensor<S>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>) {
    let [bsz, cin, h, wd_] = *x.dims() else { unreachable!() };
    let [_, cout, oh, ow] = *delta.dims() else { unreachable!() };
    let mut wg = vec![S::zero(); cin * cout * kernel * kernel];
    let mut bg = vec![S::zero(); cout];
    let (xd, dd) = (x.data(), delta.data());
    for bi in 0..bsz {
        for o in 0..cout {
            let dbase = ((bi * cout) + o) * oh * ow;
            for d in &dd[dbase..dbase + oh * ow] {
                bg[o] = bg[o] + *d;
            }
        }
        for ci in 0..cin {
            let xbase = ((bi * cin) + ci) * h * wd_;
            for o in 0..cout {
                let dbase = ((bi * cout) + o) * oh * ow;
                let wbase = ((ci * cout) + o) * kernel * kernel;
                for r in 0..h {
                    for c in 0..wd_ {
                        let xv = xd[xbase + r * wd_ + c];
                        for kh in 0..kernel {
                            let orow = (r * stride + kh) as isize - pad as isize;
                            if orow < 0 || orow as usize >= oh {
                                continue;
                            }
                            for kw in 0..kernel {
                                let ocol = (c * stride + kw) as isize - pad as isize;
                                if ocol < 0 || ocol as usize >= ow {
                                    continue;
                                }
                                wg[wbase + kh * kernel + kw] = wg[wbase + kh * kernel + kw]
                                    + xv * dd[dbase + orow as usize * ow + ocol as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![cin, cout, kernel, kernel], wg).unwrap(),
        Tensor::new(vec![cout], bg).unwrap(),
    )
}

/// A small feed-forward net over `GenLayer`s with its own parameters.
#[derive(Debug, Clone)]
pub struct GenNet<S: Real = f32> {
    pub layers: Vec<GenLayer>,
    pub params: ParamSet<S>,
}

impl<S: Real> GenNet<S> {
    /// Build with fan-in-scaled uniform init from a named stream per layer.
    pub fn init(layers: Vec<GenLayer>, rng: &Rng) -> Self {
        let entries = layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (wdims, bdims) = l.param_shapes()?;
                let bound = (1.0 / l.fan_in() as f64).sqrt();
                let mut stream = rng.stream(&format!("gen{i}"));
                let mut draw = |dims: Vec<usize>| {
                    let n: usize = dims.iter().product();
                    let data = (0..n)
                        .map(|_| S::from_f64(stream.range_f64(-bound, bound)))
                        .collect();
                    Tensor::new(dims, data).unwrap()
                };
                Some(UnitParams { weight: draw(wdims), bias: draw(bdims) })
            })
            .collect();
        GenNet { layers, params: ParamSet::from_entries(entries) }
    }

    /// Forward pass returning all boundary activations (acts[0] = input).
    pub fn forward(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>, NnError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let cur = acts.last().unwrap();
            let batch = cur.dims()[0];
            let next = match l {
                GenLayer::Dense { .. } => {
                    let p = self.params.get(i).unwrap();
                    ops::linear_forward(cur, &p.weight, &p.bias)
                }
                GenLayer::Conv2d { kernel, stride, pad, .. } => {
                    let p = self.params.get(i).unwrap();
                    let g = ops::ConvGeom { kernel: *kernel, stride: *stride, pad: *pad };
                    ops::conv2d_forward(cur, &p.weight, &p.bias, &g)
                }
                GenLayer::TConv2d { kernel, stride, pad, .. } => {
                    let p = self.params.get(i).unwrap();
                    tconv2d_forward(cur, &p.weight, &p.bias, *kernel, *stride, *pad)
                }
                GenLayer::ReLU => ops::relu_forward(cur),
                GenLayer::Sigmoid => cur.map(|v| S::one() / (S::one() + (-v).exp())),
                GenLayer::Reshape(feat) => {
                    let mut dims = vec![batch];
                    dims.extend_from_slice(feat);
                    cur.reshaped(dims)?
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn output(&self, x: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        Ok(self.forward(x)?.pop().unwrap())
    }

    /// Reverse pass; returns (param grads, input grad).
    pub fn backward(
        &self,
        acts: &[Tensor<S>],
        upstream: &Tensor<S>,
    ) -> Result<(ParamSet<S>, Tensor<S>), NnError> {
        if acts.len() != self.layers.len() + 1 {
            return Err(NnError::BadActivationCache {
                expected: self.layers.len() + 1,
                got: acts.len(),
            });
        }
        let mut grads = self.params.zeros_like();
        let mut delta = upstream.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            delta = match l {
                GenLayer::Dense { .. } => {
                    let p = self.params.get(i).unwrap();
                    let (wg, bg) = ops::linear_param_grads(input, &delta);
                    let slot = grads.get_mut(i).unwrap();
                    slot.weight = wg;
                    slot.bias = bg;
                    ops::linear_input_grad(&delta, &p.weight)
                }
                GenLayer::Conv2d { kernel, stride, pad, .. } => {
                    let p = self.params.get(i).unwrap();
                    let g = ops::ConvGeom { kernel: *kernel, stride: *stride, pad: *pad };
                    let (wg, bg) = ops::conv2d_param_grads(input, &delta, &g);
                    let slot = grads.get_mut(i).unwrap();
                    slot.weight = wg;
                    slot.bias = bg;
                    let (h, w) = (input.dims()[2], input.dims()[3]);
                    ops::conv2d_input_grad(&delta, &p.weight, &g, (h, w))
                }
                GenLayer::TConv2d { kernel, stride, pad, .. } => {
                    let p = self.params.get(i).unwrap();
                    let (wg, bg) = tconv2d_param_grads(input, &delta, *kernel, *stride, *pad);
                    let slot = grads.get_mut(i).unwrap();
                    slot.weight = wg;
                    slot.bias = bg;
                    tconv2d_input_grad(&delta, &p.weight, *kernel, *stride, *pad, input.dims())
                }
                GenLayer::ReLU => ops::relu_backward(input, &delta),
                GenLayer::Sigmoid => {
                    // d sigma = sigma (1 - sigma), from the stored output.
                    let y = &acts[i + 1];
                    let data = y
                        .data()
                        .iter()
                        .zip(delta.data())
                        .map(|(&y, &d)| d * y * (S::one() - y))
                        .collect();
                    Tensor::new(delta.dims().to_vec(), data).unwrap()
                }
                GenLayer::Reshape(_) => delta.reshaped(input.dims().to_vec())?,
            };
        }
        Ok((grads, delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tconv_upsamples_extent() {
        // 2x2 -> 4x4 with k=4, s=2, p=1.
        let x = Tensor::<f32>::full(vec![1, 1, 2, 2], 1.0);
        let w = Tensor::full(vec![1, 1, 4, 4], 0.5);
        let b = Tensor::zeros(vec![1]);
        let y = tconv2d_forward(&x, &w, &b, 4, 2, 1);
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
    }

    #[test]
    fn sigmoid_bounds_output() {
        let net: GenNet<f32> = GenNet::init(
            vec![GenLayer::Dense { inputs: 3, outputs: 5 }, GenLayer::Sigmoid],
            &Rng::from_seed(1),
        );
        let x = Tensor::new(vec![2, 3], vec![5.0, -5.0, 0.0, 100.0, -100.0, 1.0]).unwrap();
        let y = net.output(&x).unwrap();
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
