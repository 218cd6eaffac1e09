//! Frame ingestion, synthetic driving scenes and procedural visibility
//! perturbations.

mod io;
mod perturb;
mod profile;
mod scene;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_frame_dir, save_frame_dir, MANIFEST_FILE};
pub use perturb::{perturb, Perturbation};
pub use profile::{SceneClass, SceneProfile};
pub use scene::{gen_scene, ActorSpec, Jolt, MotionEvent, OodEvent, SceneConfig, Swerve, Tap, MIN_FRAME_SIDE};

/// Per-frame ground truth tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameLabel {
    Id,
    OodMotion,
    OodRain,
    OodFog,
    OodDarkness,
}

impl FrameLabel {
    pub fn is_ood(self) -> bool {
        self != FrameLabel::Id
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameLabel::Id => "id",
            FrameLabel::OodMotion => "ood-motion",
            FrameLabel::OodRain => "ood-rain",
            FrameLabel::OodFog => "ood-fog",
            FrameLabel::OodDarkness => "ood-darkness",
        }
    }
}

impl std::fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FrameLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "id" => FrameLabel::Id,
            "ood-motion" => FrameLabel::OodMotion,
            "ood-rain" => FrameLabel::OodRain,
            "ood-fog" => FrameLabel::OodFog,
            "ood-darkness" => FrameLabel::OodDarkness,
            other => return Err(Error::invalid(format!("unknown frame label {other:?}"))),
        })
    }
}

/// A single grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    /// Value with coordinates clamped to the border (replicate padding).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Frame {
        Frame::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }
}

/// Time-ordered grayscale frames with per-frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: f64,
    labels: Vec<FrameLabel>,
    seed: u64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64, labels: Vec<FrameLabel>, seed: u64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if labels.len() != frames.len() {
            return Err(Error::shape(format!(
                "{} labels for {} frames",
                labels.len(),
                frames.len()
            )));
        }
        if let Some(first) = frames.first() {
            let dims = first.dims();
            if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
                return Err(Error::DimensionMismatch {
                    expected: vec![dims.0, dims.1],
                    found: vec![bad.height(), bad.width()],
                });
            }
        }
        Ok(Self {
            frames,
            fps,
            labels,
            seed,
        })
    }

    /// Sequence with every frame labelled in-distribution.
    pub fn unlabelled(frames: Vec<Frame>, fps: f64, seed: u64) -> Result<Self> {
        let labels = vec![FrameLabel::Id; frames.len()];
        Self::new(frames, fps, labels, seed)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn labels(&self) -> &[FrameLabel] {
        &self.labels
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of every frame, or `None` for an empty sequence.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    pub fn with_labels(mut self, labels: Vec<FrameLabel>) -> Result<Self> {
        if labels.len() != self.frames.len() {
            return Err(Error::shape("label count differs from frame count"));
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Bilinear resampling of every frame to `height × width`.
///
/// Corner samples are aligned, so linear ramps keep their endpoints.
pub fn resize(seq: &FrameSequence, height: usize, width: usize) -> Result<FrameSequence> {
    if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
        return Err(Error::invalid(format!(
            "target size {height}x{width} below minimum {MIN_FRAME_SIDE}"
        )));
    }
    let frames = seq
        .frames()
        .iter()
        .map(|f| resize_frame(f, height, width))
        .collect();
    FrameSequence::new(frames, seq.fps(), seq.labels().to_vec(), seq.seed())
}

pub fn resize_frame(frame: &Frame, height: usize, width: usize) -> Frame {
    if frame.dims() == (height, width) {
        return frame.clone();
    }
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(frame.height(), height);
    let sx = scale(frame.width(), width);
    Frame::from_fn(height, width, |y, x| {
        let fy = y as f64 * sy;
        let fx = x as f64 * sx;
        let y0 = (fy.floor() as usize).min(frame.height() - 1);
        let x0 = (fx.floor() as usize).min(frame.width() - 1);
        let y1 = (y0 + 1).min(frame.height() - 1);
        let x1 = (x0 + 1).min(frame.width() - 1);
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let top = frame.get(y0, x0) as f64 * (1.0 - tx) + frame.get(y0, x1) as f64 * tx;
        let bottom = frame.get(y1, x0) as f64 * (1.0 - tx) + frame.get(y1, x1) as f64 * tx;
        (top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0) as f32
    })
}
