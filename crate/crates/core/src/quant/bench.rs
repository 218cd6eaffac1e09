use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::{Execution, QuantModel};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowParams, FlowVolume};
use crate::scoring::ScoreConfig;
use crate::vae::{ModelBundle, Sample};
use crate::videoio::Frame;

/// Untimed runs before measurement starts.
pub const WARMUP_RUNS: usize = 3;

pub const BENCH_CSV_HEADER: &str =
    "label,n_runs,preprocess_ms,inference_ms,total_ms,preprocess_p95_ms,inference_p95_ms,total_p95_ms";

/// Anything that turns one input window into a detection score.
pub trait Detector {
    fn label(&self) -> String;
    /// Flow pairs per window; 0 for single-frame models.
    fn flow_depth(&self) -> usize;
    fn detect(&self, sample: &Sample) -> Result<f64>;
}

impl Detector for ModelBundle {
    fn label(&self) -> String {
        format!("{}-float", self.variant)
    }

    fn flow_depth(&self) -> usize {
        if self.variant.is_flow() {
            self.arch.depth
        } else {
            0
        }
    }

    fn detect(&self, sample: &Sample) -> Result<f64> {
        let e = self.encode_refs(&[sample])?;
        Ok(ScoreConfig::default().latent_total(self, &e[0])?.0)
    }
}

impl Detector for (&QuantModel, Execution) {
    fn label(&self) -> String {
        let p = match self.0.precision {
            super::Precision::Int8 => "int8",
            super::Precision::Int16 => "int16",
        };
        let e = match self.1 {
            Execution::Fused => "fused",
            Execution::Split => "split",
        };
        format!("{}-{p}-{e}", self.0.variant)
    }

    fn flow_depth(&self) -> usize {
        if self.0.variant.is_flow() {
            self.0.arch.depth
        } else {
            0
        }
    }

    fn detect(&self, sample: &Sample) -> Result<f64> {
        let e = self.0.encode_one(sample, self.1)?;
        Ok(ScoreConfig::default().latent_total_with(&e, self.0.priors(), self.0.divergence)?.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl TimingStats {
    /// Mean and nearest-rank 95th percentile.
    pub fn from_ms(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = ((0.95 * s.len() as f64).ceil() as usize).clamp(1, s.len());
        Self {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p95_ms: s[rank - 1],
        }
    }
}

/// Wall-clock cost of one detection, split into flow pre-processing and
/// model inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub n_runs: usize,
    pub warmup: usize,
    pub preprocess_ms: TimingStats,
    pub inference_ms: TimingStats,
    pub total_ms: TimingStats,
}

/// Time `n_runs` detections on the leading frames of `frames`. Every run
/// recomputes all flow fields of the window.
pub fn bench(det: &dyn Detector, frames: &[Frame], flow: &FlowParams, n_runs: usize) -> Result<BenchReport> {
    if n_runs < 10 {
        return Err(Error::invalid(format!("bench needs at least 10 runs, got {n_runs}")));
    }
    let depth = det.flow_depth();
    if frames.len() < depth + 1 {
        return Err(Error::invalid(format!(
            "{} frames given, a depth-{depth} window needs {}",
            frames.len(),
            depth + 1
        )));
    }
    let window = &frames[..depth + 1];
    let once = || -> Result<(f64, f64)> {
        let t0 = Instant::now();
        let sample = if depth > 0 {
            let fields = window
                .windows(2)
                .map(|p| estimate_flow(&p[0], &p[1], flow))
                .collect::<Result<Vec<_>>>()?;
            Sample::Flow(FlowVolume::from_fields(&fields)?)
        } else {
            Sample::Frame(window[0].clone())
        };
        let t1 = Instant::now();
        std::hint::black_box(det.detect(&sample)?);
        let t2 = Instant::now();
        Ok(((t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3))
    };
    for _ in 0..WARMUP_RUNS {
        once()?;
    }
    let mut pre = Vec::with_capacity(n_runs);
    let mut inf = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let (a, b) = once()?;
        pre.push(a);
        inf.push(b);
    }
    let total: Vec<f64> = pre.iter().zip(&inf).map(|(a, b)| a + b).collect();
    Ok(BenchReport {
        label: det.label(),
        n_runs,
        warmup: WARMUP_RUNS,
        preprocess_ms: TimingStats::from_ms(&pre),
        inference_ms: TimingStats::from_ms(&inf),
        total_ms: TimingStats::from_ms(&total),
    })
}

pub fn write_bench_csv<W: Write>(reports: &[BenchReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.label,
            r.n_runs,
            r.preprocess_ms.mean_ms,
            r.inference_ms.mean_ms,
            r.total_ms.mean_ms,
            r.preprocess_ms.p95_ms,
            r.inference_ms.p95_ms,
            r.total_ms.p95_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let t = TimingStats::from_ms(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(t.mean_ms, 5.5);
        assert_eq!(t.p95_ms, 10.0);
        let flat = TimingStats::from_ms(&[2.0; 10]);
        assert!(flat.p95_ms >= flat.mean_ms && flat.mean_ms >= 0.0);
    }

    struct Constant;

    impl Detector for Constant {
        fn label(&self) -> String {
            "constant".into()
        }
        fn flow_depth(&self) -> usize {
            2
        }
        fn detect(&self, _: &Sample) -> Result<f64> {
            Ok(1.0)
        }
    }

    #[test]
    fn harness_schema_and_validation() {
        let frames: Vec<Frame> = (0..3).map(|i| Frame::filled(8, 8, 0.1 * i as f32)).collect();
        let fp = FlowParams::default();
        let r = bench(&Constant, &frames, &fp, 10).unwrap();
        assert_eq!((r.n_runs, r.warmup), (10, 3));
        for t in [r.preprocess_ms, r.inference_ms, r.total_ms] {
            assert!(t.p95_ms >= t.mean_ms && t.mean_ms >= 0.0);
        }
        assert!(bench(&Constant, &frames, &fp, 9).is_err());
        assert!(bench(&Constant, &frames[..2], &fp, 10).is_err());
        let mut csv = Vec::new();
        write_bench_csv(&[r], &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(BENCH_CSV_HEADER));
        assert!(BENCH_CSV_HEADER.contains("preprocess_ms,inference_ms,total_ms"));
    }
}
