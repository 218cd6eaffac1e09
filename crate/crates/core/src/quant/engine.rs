use std::ops::{Add, AddAssign, Mul};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::{Precision, QuantSpec};
use crate::error::{Error, Result};
use crate::nn::conv::{col2im, im2col};
use crate::nn::{ConvGeom, LayerSpec};

/// Fixed-point real multiplier `significand · 2^-shift` with a 31-bit
/// significand in `[2^30, 2^31)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Multiplier {
    pub significand: i32,
    pub shift: u32,
}

impl Multiplier {
    pub fn from_real(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::invalid(format!("requantization multiplier must be positive, got {m}")));
        }
        // m = f · 2^e with f in [0.5, 1).
        let mut e = m.log2().floor() as i32 + 1;
        let mut f = m / 2f64.powi(e);
        while f >= 1.0 {
            f /= 2.0;
            e += 1;
        }
        while f < 0.5 {
            f *= 2.0;
            e -= 1;
        }
        let mut sig = (f * 2f64.powi(31)).round() as i64;
        if sig == 1 << 31 {
            sig = 1 << 30;
            e += 1;
        }
        let shift = 31 - e;
        if shift < 1 {
            return Err(Error::invalid(format!("requantization multiplier {m} is too large")));
        }
        Ok(Self {
            significand: sig as i32,
            shift: shift as u32,
        })
    }

    pub fn real(&self) -> f64 {
        self.significand as f64 * 2f64.powi(-(self.shift as i32))
    }

    /// `round(acc · m)` with ties away from zero.
    pub fn apply(&self, acc: i64) -> i64 {
        if self.shift >= 127 {
            return 0;
        }
        let p = acc as i128 * self.significand as i128;
        let half = 1i128 << (self.shift - 1);
        let r = if p >= 0 {
            (p + half) >> self.shift
        } else {
            -((-p + half) >> self.shift)
        };
        r as i64
    }
}

/// One quantized conv, transposed conv or dense layer with optional fused ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLinear {
    pub layer: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub input: QuantSpec,
    pub weight_scale: f64,
    pub output: QuantSpec,
    pub multiplier: Multiplier,
    pub relu: bool,
    /// Symmetric weights in the source layout.
    #[serde(skip)]
    pub weight: Vec<i16>,
    /// Biases at scale `input.scale · weight_scale`.
    #[serde(skip)]
    pub bias: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum QOp {
    Linear(QLinear),
    /// Flatten or reshape; integer data passes through unchanged.
    Reshape { shape: Vec<usize> },
}

/// A quantized network: input spec plus integer ops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNet {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub input: QuantSpec,
    pub ops: Vec<QOp>,
}

/// Integer accumulator type.
pub(crate) trait Acc: Copy + Zero + Add<Output = Self> + AddAssign + Mul<Output = Self> {
    fn from_i32(v: i32) -> Self;
    fn to_i64(self) -> i64;
}

impl Acc for i32 {
    fn from_i32(v: i32) -> Self {
        v
    }
    fn to_i64(self) -> i64 {
        self as i64
    }
}

impl Acc for i64 {
    fn from_i32(v: i32) -> Self {
        v as i64
    }
    fn to_i64(self) -> i64 {
        self
    }
}

impl QLinear {
    pub(crate) fn geometry(&self) -> Result<Option<ConvGeom>> {
        self.layer.geometry(&self.in_shape)
    }

    fn out_channels(&self) -> usize {
        self.out_shape[0]
    }

    /// Largest accumulator magnitude reachable from any input.
    pub fn accumulator_bound(&self, precision: Precision) -> i64 {
        let zp = self.input.zero_point as i64;
        let span = (precision.qmax() as i64 - zp).max(zp - precision.qmin() as i64);
        let co = self.out_channels();
        let mut abs_sum = vec![0i64; co];
        match &self.layer {
            LayerSpec::TransposedConv { .. } => {
                // weight [Cin, Cout, K]
                let per_in = self.weight.len() / self.in_shape[0];
                let k = per_in / co;
                for row in self.weight.chunks(per_in) {
                    for (c, taps) in row.chunks(k).enumerate() {
                        abs_sum[c] += taps.iter().map(|&w| (w as i64).abs()).sum::<i64>();
                    }
                }
            }
            _ => {
                let per_out = self.weight.len() / co;
                for (c, row) in self.weight.chunks(per_out).enumerate() {
                    abs_sum[c] = row.iter().map(|&w| (w as i64).abs()).sum();
                }
            }
        }
        abs_sum
            .iter()
            .zip(&self.bias)
            .map(|(s, b)| s * span + b.abs())
            .max()
            .unwrap_or(0)
    }

    /// Requantized outputs from centered inputs `q - zero_point`.
    pub(crate) fn forward<A: Acc>(&self, xc: &[A], precision: Precision, cols: &mut Vec<A>) -> Result<Vec<i32>> {
        let w: Vec<A> = self.weight.iter().map(|&v| A::from_i32(v as i32)).collect();
        let co = self.out_channels();
        let acc: Vec<A> = match &self.layer {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => w
                .chunks(*in_features)
                .take(*out_features)
                .map(|row| row.iter().zip(xc).fold(A::zero(), |s, (&a, &b)| s + a * b))
                .collect(),
            LayerSpec::TransposedConv { .. } => {
                let g = self.geometry()?.expect("conv geometry");
                let rows = g.in_channels * g.kernel_volume();
                let n_in = g.output_volume();
                cols.clear();
                cols.resize(rows * n_in, A::zero());
                for ci in 0..g.out_channels {
                    let xrow = &xc[ci * n_in..(ci + 1) * n_in];
                    for r in 0..rows {
                        let wv = w[ci * rows + r];
                        if wv.is_zero() {
                            continue;
                        }
                        for (c, &x) in cols[r * n_in..(r + 1) * n_in].iter_mut().zip(xrow) {
                            *c += wv * x;
                        }
                    }
                }
                let mut y = vec![A::zero(); g.in_channels * g.input_volume()];
                col2im(cols, &g, &mut y);
                y
            }
            _ => {
                let g = self.geometry()?.expect("conv geometry");
                let rows = g.in_channels * g.kernel_volume();
                let n_out = g.output_volume();
                cols.clear();
                cols.resize(rows * n_out, A::zero());
                im2col(xc, &g, cols);
                let mut y = vec![A::zero(); co * n_out];
                for (c, out) in y.chunks_mut(n_out).enumerate() {
                    for k in 0..rows {
                        let wv = w[c * rows + k];
                        if wv.is_zero() {
                            continue;
                        }
                        for (o, &x) in out.iter_mut().zip(&cols[k * n_out..(k + 1) * n_out]) {
                            *o += wv * x;
                        }
                    }
                }
                y
            }
        };
        let plane = acc.len() / co;
        let zp = self.output.zero_point as i64;
        let (lo, hi) = (precision.qmin() as i64, precision.qmax() as i64);
        let floor = if self.relu { zp.max(lo) } else { lo };
        Ok(acc
            .chunks(plane)
            .zip(&self.bias)
            .flat_map(|(chunk, &b)| {
                chunk
                    .iter()
                    .map(move |&a| (zp + self.multiplier.apply(a.to_i64() + b)).clamp(floor, hi) as i32)
            })
            .collect())
    }
}

impl QNet {
    pub fn output_spec(&self) -> Option<&QuantSpec> {
        self.ops.iter().rev().find_map(|op| match op {
            QOp::Linear(l) => Some(&l.output),
            QOp::Reshape { .. } => None,
        })
    }

    pub fn linear_layers(&self) -> impl Iterator<Item = &QLinear> {
        self.ops.iter().filter_map(|op| match op {
            QOp::Linear(l) => Some(l),
            QOp::Reshape { .. } => None,
        })
    }

    /// Start state: the quantized input of one sample.
    pub(crate) fn quantize_input(&self, x: &[f32], precision: Precision) -> Result<Vec<i32>> {
        let want: usize = self.input_shape.iter().product();
        if x.len() != want {
            return Err(Error::DimensionMismatch {
                expected: self.input_shape.clone(),
                found: vec![x.len()],
            });
        }
        Ok(x.iter().map(|&v| self.input.quantize_with(v as f64, precision)).collect())
    }

    /// Advance integer state `q` (quantized with `spec`) through op `i`.
    pub(crate) fn step(&self, i: usize, q: Vec<i32>, spec: QuantSpec, precision: Precision) -> Result<(Vec<i32>, QuantSpec)> {
        match &self.ops[i] {
            QOp::Reshape { .. } => Ok((q, spec)),
            QOp::Linear(l) => {
                let zp = spec.zero_point;
                let out = match precision {
                    Precision::Int8 => {
                        let xc: Vec<i32> = q.iter().map(|&v| v - zp).collect();
                        l.forward(&xc, precision, &mut Vec::new())?
                    }
                    Precision::Int16 => {
                        let xc: Vec<i64> = q.iter().map(|&v| (v - zp) as i64).collect();
                        l.forward(&xc, precision, &mut Vec::new())?
                    }
                };
                Ok((out, l.output))
            }
        }
    }

    /// Full integer pass over one sample; returns dequantized outputs.
    pub fn run(&self, x: &[f32], precision: Precision) -> Result<Vec<f32>> {
        let mut q = self.quantize_input(x, precision)?;
        let mut spec = self.input;
        for i in 0..self.ops.len() {
            (q, spec) = self.step(i, q, spec, precision)?;
        }
        Ok(q.iter().map(|&v| spec.dequantize(v) as f32).collect())
    }
}
