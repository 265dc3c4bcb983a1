//! Splittable layer units, their parameters, and shape inference.

use crate::error::NnError;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// One splittable layer-like unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ReLU,
    MaxPool2x2,
    Flatten,
}

impl UnitSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            UnitSpec::Linear { .. } => "Linear",
            UnitSpec::Conv2d { .. } => "Conv2d",
            UnitSpec::ReLU => "ReLU",
            UnitSpec::MaxPool2x2 => "MaxPool2x2",
            UnitSpec::Flatten => "Flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, UnitSpec::Linear { .. } | UnitSpec::Conv2d { .. })
    }

    /// Feature shape (batch dim excluded) produced from `input`, or an error
    /// naming this unit.
    pub fn infer_output(&self, unit: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |expected: String| NnError::ShapeMismatch {
            unit,
            kind: self.kind_name().to_string(),
            expected,
            got: format!("{input:?}"),
        };
        match *self {
            UnitSpec::Linear { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch(format!("[{inputs}]")));
                }
                Ok(vec![outputs])
            }
            UnitSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                let [c, h, w] = *input else {
                    return Err(mismatch(format!("[{in_ch}, H, W]")));
                };
                if c != in_ch {
                    return Err(mismatch(format!("[{in_ch}, H, W]")));
                }
                let span = |n: usize| -> Result<usize, NnError> {
                    let padded = n + 2 * pad;
                    if padded < kernel {
                        return Err(NnError::BadUnit {
                            unit,
                            kind: "Conv2d".into(),
                            msg: format!(
                                "spatial extent {n} incompatible with kernel {kernel}, stride {stride}, pad {pad}"
                            ),
                        });
                    }
                    // Floor division: a trailing partial stride is ignored.
                    Ok((padded - kernel) / stride + 1)
                };
                Ok(vec![out_ch, span(h)?, span(w)?])
            }
            UnitSpec::ReLU => Ok(input.to_vec()),
            UnitSpec::MaxPool2x2 => {
                let [c, h, w] = *input else {
                    return Err(mismatch("[C, H, W]".into()));
                };
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(NnError::BadUnit {
                        unit,
                        kind: "MaxPool2x2".into(),
                        msg: format!("spatial dims must be even, got {h}x{w}"),
                    });
                }
                Ok(vec![c, h / 2, w / 2])
            }
            UnitSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Weight/bias pair of a parameterized unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitParams<S: Real = f32> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Parameters for a chain of units; `None` for parameter-free units.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S: Real = f32> {
    entries: Vec<Option<UnitParams<S>>>,
}

impl<S: Real> ParamSet<S> {
    pub fn from_entries(entries: Vec<Option<UnitParams<S>>>) -> Self {
        ParamSet { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, unit: usize) -> Option<&UnitParams<S>> {
        self.entries.get(unit).and_then(|e| e.as_ref())
    }

    pub fn get_mut(&mut self, unit: usize) -> Option<&mut UnitParams<S>> {
        self.entries.get_mut(unit).and_then(|e| e.as_mut())
    }

    pub fn entries(&self) -> &[Option<UnitParams<S>>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Option<UnitParams<S>>] {
        &mut self.entries
    }

    /// Same slots, all tensors zeroed. Used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| {
                    e.as_ref().map(|p| UnitParams {
                        weight: Tensor::zeros(p.weight.dims().to_vec()),
                        bias: Tensor::zeros(p.bias.dims().to_vec()),
                    })
                })
                .collect(),
        }
    }

    /// Elementwise accumulate. Slot layout and shapes must match.
    pub fn add_assign(&mut self, other: &ParamSet<S>) {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(other.entries.iter()) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                crate::tensor::add_assign(&mut a.weight, &b.weight);
                crate::tensor::add_assign(&mut a.bias, &b.bias);
            }
        }
    }

    pub fn scale_assign(&mut self, k: S) {
        for e in self.entries.iter_mut().flatten() {
            crate::tensor::scale_assign(&mut e.weight, k);
            crate::tensor::scale_assign(&mut e.bias, k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .flatten()
            .all(|p| p.weight.all_finite() && p.bias.all_finite())
    }

    pub fn to_f64(&self) -> ParamSet<f64> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| {
                    e.as_ref().map(|p| UnitParams {
                        weight: p.weight.to_f64_tensor(),
                        bias: p.bias.to_f64_tensor(),
                    })
                })
                .collect(),
        }
    }
}

/// Validate a unit chain and return per-boundary feature shapes
/// (`shapes[0]` = input shape, `shapes[i+1]` = output of unit i).
pub fn chain_shapes(units: &[UnitSpec], input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
    let mut shapes = Vec::with_capacity(units.len() + 1);
    shapes.push(input.to_vec());
    for (i, u) in units.iter().enumerate() {
        let next = u.infer_output(i, shapes.last().unwrap())?;
        shapes.push(next);
    }
    Ok(shapes)
}

/// Weight/bias shapes for one unit, if any.
pub fn param_shapes(unit: &UnitSpec) -> Option<(Vec<usize>, Vec<usize>)> {
    match *unit {
        UnitSpec::Linear { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
        UnitSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
            Some((vec![out_ch, in_ch, kernel, kernel], vec![out_ch]))
        }
        _ => None,
    }
}

fn fan_in(unit: &UnitSpec) -> usize {
    match *unit {
        UnitSpec::Linear { inputs, .. } => inputs,
        UnitSpec::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
        _ => 0,
    }
}

/// Fan-in-scaled uniform init: U(-b, b) with b = sqrt(1/fan_in).
/// Each unit draws from its own named stream, so parameter values do not
/// depend on where the chain is later split.
pub fn init_params<S: Real>(units: &[UnitSpec], rng: &Rng) -> ParamSet<S> {
    let entries = units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let (wdims, bdims) = param_shapes(u)?;
            let bound = (1.0 / fan_in(u) as f64).sqrt();
            let mut stream = rng.stream(&format!("unit{i}"));
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
    ParamSet::from_entries(entries)
}
