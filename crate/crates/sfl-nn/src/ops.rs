//! Dense kernels behind the unit forward/backward passes.
//!
//! All loops run in a fixed order so results are bit-reproducible.

use crate::tensor::{Real, Tensor};

pub fn linear_forward<S: Real>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (bsz, nin) = (x.dims()[0], x.dims()[1]);
    let nout = w.dims()[0];
    let mut out = vec![S::zero(); bsz * nout];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    for i in 0..bsz {
        let xrow = &xd[i * nin..(i + 1) * nin];
        let orow = &mut out[i * nout..(i + 1) * nout];
        for o in 0..nout {
            let wrow = &wd[o * nin..(o + 1) * nin];
            let mut acc = bd[o];
            for k in 0..nin {
                acc = acc + xrow[k] * wrow[k];
            }
            orow[o] = acc;
        }
    }
    Tensor::new(vec![bsz, nout], out).unwrap()
}

/// Gradient w.r.t. the input: delta (B,out) x w (out,in) -> (B,in).
pub fn linear_input_grad<S: Real>(delta: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    let (bsz, nout) = (delta.dims()[0], delta.dims()[1]);
    let nin = w.dims()[1];
    let mut out = vec![S::zero(); bsz * nin];
    let (dd, wd) = (delta.data(), w.data());
    for i in 0..bsz {
        let drow = &dd[i * nout..(i + 1) * nout];
        let orow = &mut out[i * nin..(i + 1) * nin];
        for o in 0..nout {
            let g = drow[o];
            let wrow = &wd[o * nin..(o + 1) * nin];
            for k in 0..nin {
                orow[k] = orow[k] + g * wrow[k];
            }
        }
    }
    Tensor::new(vec![bsz, nin], out).unwrap()
}

/// Gradients w.r.t. weight and bias: (x (B,in), delta (B,out)) -> ((out,in), (out)).
pub fn linear_param_grads<S: Real>(x: &Tensor<S>, delta: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let (bsz, nin) = (x.dims()[0], x.dims()[1]);
    let nout = delta.dims()[1];
    let mut wg = vec![S::zero(); nout * nin];
    let mut bg = vec![S::zero(); nout];
    let (xd, dd) = (x.data(), delta.data());
    for i in 0..bsz {
        let xrow = &xd[i * nin..(i + 1) * nin];
        let drow = &dd[i * nout..(i + 1) * nout];
        for o in 0..nout {
            let g = drow[o];
            bg[o] = bg[o] + g;
            let wrow = &mut wg[o * nin..(o + 1) * nin];
            for k in 0..nin {
                wrow[k] = wrow[k] + g * xrow[k];
            }
        }
    }
    (
        Tensor::new(vec![nout, nin], wg).unwrap(),
        Tensor::new(vec![nout], bg).unwrap(),
    )
}

pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[inline]
fn conv_out_extent(n: usize, g: &ConvGeom) -> usize {
    (n + 2 * g.pad - g.kernel) / g.stride + 1
}

pub fn conv2d_forward<S: Real>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    g: &ConvGeom,
) -> Tensor<S> {
    let [bsz, cin, h, wd_] = *x.dims() else { unreachable!() };
    let cout = w.dims()[0];
    let (oh, ow) = (conv_out_extent(h, g), conv_out_extent(wd_, g));
    let mut out = vec![S::zero(); bsz * cout * oh * ow];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let k = g.kernel;
    for bi in 0..bsz {
        for o in 0..cout {
            let obase = ((bi * cout) + o) * oh * ow;
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bd[o];
                    for ci in 0..cin {
                        let xbase = ((bi * cin) + ci) * h * wd_;
                        let wbase = ((o * cin) + ci) * k * k;
                        for kh in 0..k {
                            let ih = (r * g.stride + kh) as isize - g.pad as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (c * g.stride + kw) as isize - g.pad as isize;
                                if iw < 0 || iw as usize >= wd_ {
                                    continue;
                                }
                                acc = acc
                                    + xd[xbase + ih as usize * wd_ + iw as usize]
                                        * wd[wbase + kh * k + kw];
                            }
                        }
                    }
                    out[obase + r * ow + c] = acc;
                }
            }
        }
    }
    Tensor::new(vec![bsz, cout, oh, ow], out).unwrap()
}

/// Gradient w.r.t. the conv input (scatter of delta through the kernel).
pub fn conv2d_input_grad<S: Real>(
    delta: &Tensor<S>,
    w: &Tensor<S>,
    g: &ConvGeom,
    input_hw: (usize, usize),
) -> Tensor<S> {
    let [bsz, cout, oh, ow] = *delta.dims() else { unreachable!() };
    let cin = w.dims()[1];
    let (h, wd_) = input_hw;
    let mut out = vec![S::zero(); bsz * cin * h * wd_];
    let (dd, wd) = (delta.data(), w.data());
    let k = g.kernel;
    for bi in 0..bsz {
        for o in 0..cout {
            let dbase = ((bi * cout) + o) * oh * ow;
            for r in 0..oh {
                for c in 0..ow {
                    let dv = dd[dbase + r * ow + c];
                    for ci in 0..cin {
                        let obase = ((bi * cin) + ci) * h * wd_;
                        let wbase = ((o * cin) + ci) * k * k;
                        for kh in 0..k {
                            let ih = (r * g.stride + kh) as isize - g.pad as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (c * g.stride + kw) as isize - g.pad as isize;
                                if iw < 0 || iw as usize >= wd_ {
                                    continue;
                                }
                                let idx = obase + ih as usize * wd_ + iw as usize;
                                out[idx] = out[idx] + dv * wd[wbase + kh * k + kw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![bsz, cin, h, wd_], out).unwrap()
}

/// Gradients w.r.t. conv weight and bias.
pub fn conv2d_param_grads<S: Real>(
    x: &Tensor<S>,
    delta: &Tensor<S>,
    g: &ConvGeom,
) -> (Tensor<S>, Tensor<S>) {
    let [bsz, cin, h, wd_] = *x.dims() else { unreachable!() };
    let [_, cout, oh, ow] = *delta.dims() else { unreachable!() };
    let k = g.kernel;
    let mut wg = vec![S::zero(); cout * cin * k * k];
    let mut bg = vec![S::zero(); cout];
    let (xd, dd) = (x.data(), delta.data());
    for bi in 0..bsz {
        for o in 0..cout {
            let dbase = ((bi * cout) + o) * oh * ow;
            for r in 0..oh {
                for c in 0..ow {
                    let dv = dd[dbase + r * ow + c];
                    bg[o] = bg[o] + dv;
                    for ci in 0..cin {
                        let xbase = ((bi * cin) + ci) * h * wd_;
                        let wbase = ((o * cin) + ci) * k * k;
                        for kh in 0..k {
                            let ih = (r * g.stride + kh) as isize - g.pad as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (c * g.stride + kw) as isize - g.pad as isize;
                                if iw < 0 || iw as usize >= wd_ {
                                    continue;
                                }
                                wg[wbase + kh * k + kw] = wg[wbase + kh * k + kw]
                                    + dv * xd[xbase + ih as usize * wd_ + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![cout, cin, k, k], wg).unwrap(),
        Tensor::new(vec![cout], bg).unwrap(),
    )
}

pub fn relu_forward<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// delta masked by the sign of the forward *input*.
pub fn relu_backward<S: Real>(input: &Tensor<S>, delta: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(input.dims(), delta.dims());
    let data = input
        .data()
        .iter()
        .zip(delta.data())
        .map(|(&x, &d)| if x > S::zero() { d } else { S::zero() })
        .collect();
    Tensor::new(delta.dims().to_vec(), data).unwrap()
}

/// 2x2 max pool, stride 2. Also returns, per output element, the flat index
/// of the selected input element (first max in scan order on ties).
pub fn maxpool2x2_forward<S: Real>(x: &Tensor<S>) -> (Tensor<S>, Vec<usize>) {
    let [bsz, ch, h, w] = *x.dims() else { unreachable!() };
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![S::zero(); bsz * ch * oh * ow];
    let mut arg = vec![0usize; out.len()];
    let xd = x.data();
    for bc in 0..bsz * ch {
        let xbase = bc * h * w;
        let obase = bc * oh * ow;
        for r in 0..oh {
            for c in 0..ow {
                let mut best = xd[xbase + (2 * r) * w + 2 * c];
                let mut best_idx = xbase + (2 * r) * w + 2 * c;
                for (kh, kw) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = xbase + (2 * r + kh) * w + (2 * c + kw);
                    if xd[idx] > best {
                        best = xd[idx];
                        best_idx = idx;
                    }
                }
                out[obase + r * ow + c] = best;
                arg[obase + r * ow + c] = best_idx;
            }
        }
    }
    (
        Tensor::new(vec![bsz, ch, oh, ow], out).unwrap(),
        arg,
    )
}

/// Scatter pooled deltas back to the argmax positions.
pub fn maxpool2x2_backward<S: Real>(
    arg: &[usize],
    delta: &Tensor<S>,
    input_dims: &[usize],
) -> Tensor<S> {
    let mut out = vec![S::zero(); input_dims.iter().product()];
    for (i, &d) in delta.data().iter().enumerate() {
        out[arg[i]] = out[arg[i]] + d;
    }
    Tensor::new(input_dims.to_vec(), out).unwrap()
}

/// Adjoint of the pool backward: gather values at the argmax positions.
/// This is the pool's action on a tangent that shares the primal's argmax.
pub fn maxpool2x2_gather<S: Real>(
    arg: &[usize],
    r: &Tensor<S>,
    output_dims: &[usize],
) -> Tensor<S> {
    let rd = r.data();
    let data = arg.iter().map(|&idx| rd[idx]).collect();
    Tensor::new(output_dims.to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(dims, data).unwrap()
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let x = t(vec![1, 3], vec![1.0, -2.0, 3.0]);
        let w = t(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let b = Tensor::zeros(vec![3]);
        assert_eq!(linear_forward(&x, &w, &b).data(), x.data());
    }

    #[test]
    fn linear_input_grad_is_w_transpose_times_delta() {
        let w = t(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let delta = t(vec![1, 2], vec![10.0, 100.0]);
        let gx = linear_input_grad(&delta, &w);
        assert_eq!(gx.data(), &[410.0, 520.0, 630.0]);
    }

    #[test]
    fn one_by_one_conv_scales_channels() {
        // All-ones 1x1x2x2 input, single weight 2.0 -> all twos.
        let x = t(vec![1, 1, 2, 2], vec![1.0; 4]);
        let w = t(vec![1, 1, 1, 1], vec![2.0]);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d_forward(&x, &w, &b, &ConvGeom { kernel: 1, stride: 1, pad: 0 });
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.0; 4]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = t(vec![1, 2], vec![-1.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0]);
        let delta = t(vec![1, 2], vec![5.0, 5.0]);
        assert_eq!(relu_backward(&x, &delta).data(), &[0.0, 5.0]);
    }

    #[test]
    fn maxpool_selects_max_and_routes_gradient() {
        let x = t(vec![1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]);
        let (y, arg) = maxpool2x2_forward(&x);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![1]);
        let delta = t(vec![1, 1, 1, 1], vec![7.0]);
        let gx = maxpool2x2_backward(&arg, &delta, x.dims());
        assert_eq!(gx.data(), &[0.0, 7.0, 0.0, 0.0]);
    }
}
