//! Simulated full-integer post-training quantization.
//!
//! Weights are quantized symmetrically per tensor, activations with an
//! asymmetric affine map calibrated from observed ranges. Convolutions and
//! dense layers run on integer operands with integer accumulators and are
//! requantized with a fixed-point multiplier; only the network input and the
//! final outputs cross the float boundary.

mod bench;
mod drift;
mod engine;
mod model;
mod persist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bench::{bench, write_bench_csv, BenchReport, Detector, TimingStats, BENCH_CSV_HEADER, WARMUP_RUNS};
pub use drift::{drift_report, write_drift_csv, DriftReport, DRIFT_CSV_HEADER};
pub use engine::{Multiplier, QLinear, QNet, QOp};
pub use model::{calibrate, CalibrationConfig, Execution, QuantModel};
pub use persist::{load_quant, save_quant, QUANT_MAGIC};

/// Smallest scale a calibrated range may produce.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Operand width of the integer engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    /// int8 operands, 32-bit accumulators.
    #[default]
    Int8,
    /// int16 operands, 64-bit accumulators; a high-precision reference.
    Int16,
}

impl Precision {
    pub fn qmin(self) -> i32 {
        match self {
            Precision::Int8 => i8::MIN as i32,
            Precision::Int16 => i16::MIN as i32,
        }
    }

    pub fn qmax(self) -> i32 {
        match self {
            Precision::Int8 => i8::MAX as i32,
            Precision::Int16 => i16::MAX as i32,
        }
    }

    pub fn levels(self) -> f64 {
        (self.qmax() - self.qmin()) as f64
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int8" => Ok(Precision::Int8),
            "int16" => Ok(Precision::Int16),
            other => Err(Error::invalid(format!("unknown precision {other:?} (int8 or int16)"))),
        }
    }
}

/// Affine map `q = round(x / scale) + zero_point`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantSpec {
    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("quantization scale must be positive, got {scale}")));
        }
        Ok(Self { scale, zero_point })
    }

    /// Asymmetric spec covering `[lo, hi]`, widened to contain zero so that
    /// zero is exactly representable.
    pub fn from_range(lo: f64, hi: f64, precision: Precision) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::invalid(format!("invalid calibration range [{lo}, {hi}]")));
        }
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        let scale = ((hi - lo) / precision.levels()).max(SCALE_FLOOR);
        let zp = round_half_away(precision.qmin() as f64 - lo / scale) as i64;
        let zp = zp.clamp(precision.qmin() as i64, precision.qmax() as i64) as i32;
        Self::new(scale, zp)
    }

    /// Symmetric spec (zero point 0) for values in `[-max_abs, max_abs]`.
    pub fn symmetric(max_abs: f64, precision: Precision) -> Result<Self> {
        if !max_abs.is_finite() {
            return Err(Error::NonFinite("weight range".into()));
        }
        Self::new((max_abs.abs() / precision.qmax() as f64).max(SCALE_FLOOR), 0)
    }

    pub fn quantize_with(&self, x: f64, precision: Precision) -> i32 {
        let q = round_half_away(x / self.scale + self.zero_point as f64);
        q.clamp(precision.qmin() as f64, precision.qmax() as f64) as i32
    }

    pub fn dequantize(&self, q: i32) -> f64 {
        (q - self.zero_point) as f64 * self.scale
    }

    /// Real interval representable without saturation.
    pub fn range(&self, precision: Precision) -> (f64, f64) {
        (self.dequantize(precision.qmin()), self.dequantize(precision.qmax()))
    }
}

/// Round to nearest, ties away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Saturating int8 quantization of a tensor.
pub fn quantize_tensor(x: &[f32], spec: &QuantSpec) -> Vec<i8> {
    x.iter().map(|&v| spec.quantize_with(v as f64, Precision::Int8) as i8).collect()
}

pub fn dequantize_tensor(q: &[i8], spec: &QuantSpec) -> Vec<f32> {
    q.iter().map(|&v| spec.dequantize(v as i32) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_examples() {
        let s = QuantSpec::from_range(-1.0, 1.0, Precision::Int8).unwrap();
        assert!((s.scale - 2.0 / 255.0).abs() < 1e-15);
        assert!(s.zero_point.abs() <= 1);
        assert_eq!(s.dequantize(s.quantize_with(0.0, Precision::Int8)), 0.0);

        let s = QuantSpec::from_range(0.0, 2.55, Precision::Int8).unwrap();
        assert!((s.scale - 0.01).abs() < 1e-12);
        assert_eq!(s.zero_point, -128);

        let flat = QuantSpec::from_range(0.0, 0.0, Precision::Int8).unwrap();
        assert_eq!(flat.scale, SCALE_FLOOR);
    }

    #[test]
    fn reference_constants() {
        let s = QuantSpec::new(0.01613845, 13).unwrap();
        assert_eq!(quantize_tensor(&[0.5], &s), vec![44]);
        assert_eq!(quantize_tensor(&[0.0], &s), vec![13]);
        assert_eq!(dequantize_tensor(&[13], &s), vec![0.0]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
        assert_eq!(round_half_away(-0.4), 0.0);
        let s = QuantSpec::new(1.0, 0).unwrap();
        assert_eq!(s.quantize_with(-1.5, Precision::Int8), -2);
    }

    #[test]
    fn saturation() {
        let s = QuantSpec::new(0.1, 0).unwrap();
        assert_eq!(quantize_tensor(&[1e6, -1e6, f32::INFINITY], &s), vec![127, -128, 127]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(QuantSpec::new(0.0, 0).is_err());
        assert!(QuantSpec::new(f64::NAN, 0).is_err());
        assert!(QuantSpec::from_range(1.0, -1.0, Precision::Int8).is_err());
    }

    #[test]
    fn sixteen_bit_is_finer() {
        let a = QuantSpec::from_range(-3.0, 5.0, Precision::Int8).unwrap();
        let b = QuantSpec::from_range(-3.0, 5.0, Precision::Int16).unwrap();
        assert!(b.scale < a.scale / 200.0);
    }
}
