use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::videoio::Frame;

pub const DEFAULT_WINDOW: usize = 9;
const LEVELS: usize = 256;
const ENTROPY_FLOOR: f64 = 1e-6;

/// Mean local entropy of the training images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBaseline {
    pub value: f64,
    pub window: usize,
    pub n_images: usize,
}

/// How a reconstruction score is adjusted for image complexity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    /// Boost scores of images less complex than the baseline:
    /// `raw · max(1, baseline / entropy)`.
    #[default]
    Boost,
    /// `raw · min(1, baseline / entropy)`, as the formula is literally printed.
    Literal,
}

impl std::str::FromStr for Compensation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boost" => Ok(Compensation::Boost),
            "literal" => Ok(Compensation::Literal),
            other => Err(Error::invalid(format!("unknown compensation {other:?} (boost or literal)"))),
        }
    }
}

/// Reflect-101 index into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Mean over pixels of the Shannon entropy (bits) of 256-level intensities in
/// a `window × window` neighbourhood with reflect padding.
pub fn image_entropy(img: &Frame, window: usize) -> Result<f64> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("entropy window must be odd and >= 3, got {window}")));
    }
    let (h, w) = img.dims();
    let levels: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8)
        .collect();
    let r = (window / 2) as isize;
    let n = window * window;
    // -p·log2(p) for every possible count.
    let table: Vec<f64> = (0..=n)
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                let p = c as f64 / n as f64;
                -p * p.log2()
            }
        })
        .collect();
    let rows: Vec<Vec<usize>> = (0..h as isize)
        .map(|y| (-r..=r).map(|d| reflect(y + d, h)).collect())
        .collect();
    let mut total = 0.0;
    let mut hist = [0usize; LEVELS];
    for row_idx in &rows {
        hist.iter_mut().for_each(|c| *c = 0);
        for dx in -r..=r {
            let x = reflect(dx, w);
            for &y in row_idx {
                hist[levels[y * w + x] as usize] += 1;
            }
        }
        for x in 0..w as isize {
            if x > 0 {
                let out = reflect(x - r - 1, w);
                let inn = reflect(x + r, w);
                if out != inn {
                    for &y in row_idx {
                        hist[levels[y * w + out] as usize] -= 1;
                        hist[levels[y * w + inn] as usize] += 1;
                    }
                }
            }
            total += hist.iter().map(|&c| table[c]).sum::<f64>();
        }
    }
    Ok(total / (h * w) as f64)
}

pub fn entropy_baseline(images: &[Frame], window: usize) -> Result<EntropyBaseline> {
    if images.is_empty() {
        return Err(Error::Empty("entropy baseline needs at least one image".into()));
    }
    let mut sum = 0.0;
    for img in images {
        sum += image_entropy(img, window)?;
    }
    Ok(EntropyBaseline {
        value: sum / images.len() as f64,
        window,
        n_images: images.len(),
    })
}

/// Entropy-compensated reconstruction score.
pub fn compensated_score(raw: f64, entropy_x: f64, baseline: &EntropyBaseline, mode: Compensation) -> Result<f64> {
    if [raw, entropy_x, baseline.value].iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("compensation inputs must be non-negative"));
    }
    let ratio = baseline.value / entropy_x.max(ENTROPY_FLOOR);
    let factor = match mode {
        Compensation::Boost => ratio.max(1.0),
        Compensation::Literal => ratio.min(1.0),
    };
    Ok(raw * factor)
}
