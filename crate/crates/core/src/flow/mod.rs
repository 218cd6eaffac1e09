//! Dense first-order optical flow, flow volumes and flow statistics.

mod stats;
mod volume;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::videoio::Frame;

pub use stats::{estimate_prior, flow_stats, FlowStats, Histogram, PriorSpec, HISTOGRAM_BINS, SIGMA_FLOOR};
pub use volume::{build_volume, sequence_flows, FlowVolume, VOLUME_MAGIC};

/// Horn–Schunck parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Smoothness weight.
    pub alpha: f32,
    /// Number of Jacobi iterations.
    pub iters: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            iters: 100,
        }
    }
}

/// Per-pixel velocity in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn from_parts(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::shape("flow components must be height*width long"));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Horizontal component.
    pub fn u(&self) -> &[f32] {
        &self.u
    }

    /// Vertical component.
    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// Mean of `u` and `v` over the rectangle that excludes `margin` pixels at every border.
    pub fn interior_mean(&self, margin: usize) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                su += self.u[y * self.width + x] as f64;
                sv += self.v[y * self.width + x] as f64;
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        (su / n, sv / n)
    }
}

/// Spatial derivative along one axis: central differences inside, one-sided at the border.
fn derivative(frame: &Frame, horizontal: bool) -> Vec<f32> {
    let (h, w) = frame.dims();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi, span) = if horizontal {
                let lo = x.saturating_sub(1);
                let hi = (x + 1).min(w - 1);
                (frame.get(y, lo), frame.get(y, hi), (hi - lo) as f32)
            } else {
                let lo = y.saturating_sub(1);
                let hi = (y + 1).min(h - 1);
                (frame.get(lo, x), frame.get(hi, x), (hi - lo) as f32)
            };
            out[y * w + x] = if span > 0.0 { (hi - lo) / span } else { 0.0 };
        }
    }
    out
}

/// Intensities are processed on the 8-bit scale.
const INTENSITY_SCALE: f32 = 255.0;

/// Horn–Schunck estimate of the flow carrying `f0` onto `f1`.
///
/// Spatial gradients are averaged over both frames; the flow average uses the
/// classic 3×3 weights (1/6 edge neighbours, 1/12 corners) with replicate padding.
pub fn estimate_flow(f0: &Frame, f1: &Frame, params: &FlowParams) -> Result<FlowField> {
    if f0.dims() != f1.dims() {
        return Err(Error::DimensionMismatch {
            expected: vec![f0.height(), f0.width()],
            found: vec![f1.height(), f1.width()],
        });
    }
    if !(params.alpha > 0.0 && params.alpha.is_finite()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    if params.iters == 0 {
        return Err(Error::invalid("iters must be at least 1"));
    }
    let (h, w) = f0.dims();
    let (gx0, gy0) = (derivative(f0, true), derivative(f0, false));
    let (gx1, gy1) = (derivative(f1, true), derivative(f1, false));
    let n = h * w;
    let mut ix = vec![0.0f32; n];
    let mut iy = vec![0.0f32; n];
    let mut it = vec![0.0f32; n];
    let mut denom = vec![0.0f32; n];
    let a2 = params.alpha * params.alpha;
    for i in 0..n {
        ix[i] = 0.5 * (gx0[i] + gx1[i]) * INTENSITY_SCALE;
        iy[i] = 0.5 * (gy0[i] + gy1[i]) * INTENSITY_SCALE;
        it[i] = (f1.data()[i] - f0.data()[i]) * INTENSITY_SCALE;
        denom[i] = a2 + ix[i] * ix[i] + iy[i] * iy[i];
    }

    // Padded buffers; the one-pixel ring replicates the border after every sweep.
    let pw = w + 2;
    let mut u = vec![0.0f32; (h + 2) * pw];
    let mut v = vec![0.0f32; (h + 2) * pw];
    let mut u_next = u.clone();
    let mut v_next = v.clone();
    let edge = 1.0 / 6.0;
    let corner = 1.0 / 12.0;
    for _ in 0..params.iters {
        for y in 0..h {
            let row = (y + 1) * pw;
            let up = row - pw;
            let down = row + pw;
            for x in 0..w {
                let c = x + 1;
                let avg = |f: &[f32]| {
                    edge * (f[up + c] + f[down + c] + f[row + c - 1] + f[row + c + 1])
                        + corner * (f[up + c - 1] + f[up + c + 1] + f[down + c - 1] + f[down + c + 1])
                };
                let ub = avg(&u);
                let vb = avg(&v);
                let i = y * w + x;
                let d = (ix[i] * ub + iy[i] * vb + it[i]) / denom[i];
                u_next[row + c] = ub - ix[i] * d;
                v_next[row + c] = vb - iy[i] * d;
            }
        }
        replicate_ring(&mut u_next, h, w);
        replicate_ring(&mut v_next, h, w);
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }
    let strip = |buf: &[f32]| {
        let mut out = Vec::with_capacity(n);
        for y in 0..h {
            out.extend_from_slice(&buf[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
        }
        out
    };
    Ok(FlowField {
        height: h,
        width: w,
        u: strip(&u),
        v: strip(&v),
    })
}

fn replicate_ring(buf: &mut [f32], h: usize, w: usize) {
    let pw = w + 2;
    for y in 1..=h {
        buf[y * pw] = buf[y * pw + 1];
        buf[y * pw + w + 1] = buf[y * pw + w];
    }
    let (top, rest) = buf.split_at_mut(pw);
    top.copy_from_slice(&rest[..pw]);
    let last = (h + 1) * pw;
    let (body, bottom) = buf.split_at_mut(last);
    bottom.copy_from_slice(&body[last - pw..]);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth textured ramp; `dx`, `dy` translate the content.
    fn textured(h: usize, w: usize, dx: f64, dy: f64) -> Frame {
        Frame::from_fn(h, w, |y, x| {
            let (xf, yf) = (x as f64 - dx, y as f64 - dy);
            let v = 0.25
                + 0.004 * xf
                + 0.08 * (0.35 * xf + 0.1 * yf).sin()
                + 0.07 * (0.12 * xf - 0.4 * yf + 1.0).sin()
                + 0.06 * (0.23 * yf + 0.5).cos();
            v.clamp(0.0, 1.0) as f32
        })
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = textured(30, 40, 0.0, 0.0);
        let flow = estimate_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(flow.u().iter().chain(flow.v()).all(|&x| x == 0.0));
    }

    #[test]
    fn one_pixel_shift_right() {
        let flow = estimate_flow(
            &textured(60, 80, 0.0, 0.0),
            &textured(60, 80, 1.0, 0.0),
            &FlowParams::default(),
        )
        .unwrap();
        let (mu, mv) = flow.interior_mean(5);
        assert!((0.7..=1.3).contains(&mu), "mean u = {mu}");
        assert!(mv.abs() <= 0.3, "mean v = {mv}");
    }

    #[test]
    fn one_pixel_shift_down_swaps_roles() {
        let flow = estimate_flow(
            &textured(60, 80, 0.0, 0.0),
            &textured(60, 80, 0.0, 1.0),
            &FlowParams::default(),
        )
        .unwrap();
        let (mu, mv) = flow.interior_mean(5);
        assert!((0.7..=1.3).contains(&mv), "mean v = {mv}");
        assert!(mu.abs() <= 0.3, "mean u = {mu}");
    }

    #[test]
    fn mirroring_negates_horizontal_flow() {
        let (f0, f1) = (textured(40, 60, 0.0, 0.0), textured(40, 60, 1.0, 0.5));
        let p = FlowParams::default();
        let a = estimate_flow(&f0, &f1, &p).unwrap();
        let b = estimate_flow(&f0.mirrored(), &f1.mirrored(), &p).unwrap();
        let (au, av) = a.interior_mean(5);
        let (bu, bv) = b.interior_mean(5);
        assert!((au + bu).abs() < 0.1, "{au} vs {bu}");
        assert!((av.abs() - bv.abs()).abs() < 0.1, "{av} vs {bv}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = estimate_flow(
            &Frame::filled(20, 20, 0.0),
            &Frame::filled(20, 24, 0.0),
            &FlowParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn invalid_params_rejected() {
        let f = Frame::filled(20, 20, 0.0);
        assert!(estimate_flow(&f, &f, &FlowParams { alpha: 0.0, iters: 10 }).is_err());
        assert!(estimate_flow(&f, &f, &FlowParams { alpha: 1.0, iters: 0 }).is_err());
    }
}
