use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, FrameLabel, FrameSequence};
use crate::error::{Error, Result};

/// Visibility degradations applied on top of rendered sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    Rain,
    Fog,
    Darkness,
}

impl Perturbation {
    pub fn as_str(self) -> &'static str {
        match self {
            Perturbation::Rain => "rain",
            Perturbation::Fog => "fog",
            Perturbation::Darkness => "darkness",
        }
    }

    pub fn label(self) -> FrameLabel {
        match self {
            Perturbation::Rain => FrameLabel::OodRain,
            Perturbation::Fog => FrameLabel::OodFog,
            Perturbation::Darkness => FrameLabel::OodDarkness,
        }
    }
}

impl std::str::FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rain" => Ok(Perturbation::Rain),
            "fog" => Ok(Perturbation::Fog),
            "darkness" => Ok(Perturbation::Darkness),
            other => Err(Error::invalid(format!("unknown perturbation {other:?}"))),
        }
    }
}

const HAZE_LEVEL: f64 = 0.85;

struct Streak {
    x: f64,
    y0: f64,
    length: f64,
    speed: f64,
}

/// Apply a visibility perturbation to every frame and relabel the sequence.
///
/// Randomness (rain streak placement) is drawn from the sequence seed, so the
/// result is a pure function of the inputs.
pub fn perturb(seq: &FrameSequence, kind: Perturbation, intensity: f64) -> Result<FrameSequence> {
    if !(intensity > 0.0 && intensity <= 1.0) {
        return Err(Error::invalid(format!("intensity {intensity} outside (0, 1]")));
    }
    let frames: Vec<Frame> = match kind {
        Perturbation::Darkness => {
            let gain = (1.0 - intensity) as f32;
            seq.frames()
                .iter()
                .map(|f| {
                    let mut out = f.clone();
                    out.data_mut().iter_mut().for_each(|v| *v = (*v * gain).clamp(0.0, 1.0));
                    out
                })
                .collect()
        }
        Perturbation::Fog => {
            // Uniform blend weight: a constant field is trivially smooth and keeps
            // constant frames constant.
            let weight = 0.85 * intensity;
            seq.frames()
                .iter()
                .map(|f| {
                    let mut out = f.clone();
                    out.data_mut().iter_mut().for_each(|v| {
                        *v = ((1.0 - weight) * *v as f64 + weight * HAZE_LEVEL).clamp(0.0, 1.0) as f32
                    });
                    out
                })
                .collect()
        }
        Perturbation::Rain => rain(seq, intensity),
    };
    let labels = vec![kind.label(); frames.len()];
    FrameSequence::new(frames, seq.fps(), labels, seq.seed())
}

fn rain(seq: &FrameSequence, intensity: f64) -> Vec<Frame> {
    let Some((h, w)) = seq.dims() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seq.seed() ^ 0x5241_494e);
    let n_streaks = ((h * w) as f64 * 0.012 * intensity).ceil() as usize;
    let streaks: Vec<Streak> = (0..n_streaks)
        .map(|_| Streak {
            x: rng.random_range(0.0..w as f64),
            y0: rng.random_range(0.0..h as f64),
            length: rng.random_range(4.0..9.0),
            speed: rng.random_range(2.5..4.5),
        })
        .collect();
    let alpha = 0.35 + 0.45 * intensity;
    let period = |s: &Streak| h as f64 + s.length + 2.0;
    seq.frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mut out = f.clone();
            for s in &streaks {
                let p = period(s);
                // Head position advances every frame and wraps past the bottom.
                let head = (s.y0 + s.speed * t as f64).rem_euclid(p) - 1.0;
                let tail = head - s.length;
                let y_lo = tail.floor().max(0.0) as usize;
                let y_hi = (head.ceil() as isize).clamp(0, h as isize - 1) as usize;
                for y in y_lo..=y_hi {
                    let yf = y as f64;
                    let cover_y = ((head - yf + 0.5).min(yf - tail + 0.5)).clamp(0.0, 1.0);
                    if cover_y <= 0.0 {
                        continue;
                    }
                    // Two-pixel-wide streak with soft sides.
                    let xl = (s.x - 1.0).floor().max(0.0) as usize;
                    let xr = ((s.x + 1.0).ceil() as usize).min(w - 1);
                    for x in xl..=xr {
                        let cover_x = (1.5 - (x as f64 - s.x).abs()).clamp(0.0, 1.0);
                        let a = alpha * cover_x * cover_y;
                        if a > 0.0 {
                            let v = out.get(y, x) as f64;
                            out.set(y, x, (v * (1.0 - a) + 0.95 * a).clamp(0.0, 1.0) as f32);
                        }
                    }
                }
            }
            out
        })
        .collect()
}
