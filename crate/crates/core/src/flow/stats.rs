use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FlowVolume;
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 101;

/// Smallest prior standard deviation `estimate_prior` will return.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Fixed-width histogram over the symmetric range `[-limit, +limit]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub limit: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn build<'a>(values: impl Iterator<Item = &'a f32> + Clone) -> Self {
        let limit = values.clone().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &x in values {
            let bin = if limit > 0.0 {
                let pos = (x as f64 + limit) / (2.0 * limit) * HISTOGRAM_BINS as f64;
                (pos.floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
            } else {
                HISTOGRAM_BINS / 2
            };
            counts[bin] += 1;
        }
        Self { limit, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub mean_h: f64,
    pub mean_v: f64,
    pub sigma_h: f64,
    pub sigma_v: f64,
    pub histogram_h: Histogram,
    pub histogram_v: Histogram,
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f32>) -> (f64, f64) {
    // Two-pass in f64 so the result does not depend on float accumulation order quirks.
    let vals: Vec<f64> = values.map(|&x| x as f64).collect();
    let n = vals.len().max(1) as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Means, standard deviations and histograms of all flow entries, per direction.
pub fn flow_stats(volumes: &[FlowVolume]) -> Result<FlowStats> {
    if volumes.is_empty() {
        return Err(Error::Empty("flow_stats needs at least one volume".into()));
    }
    let hs = || volumes.iter().flat_map(|v| v.h().iter());
    let vs = || volumes.iter().flat_map(|v| v.v().iter());
    let (mean_h, sigma_h) = mean_std(hs());
    let (mean_v, sigma_v) = mean_std(vs());
    Ok(FlowStats {
        mean_h,
        mean_v,
        sigma_h,
        sigma_v,
        histogram_h: Histogram::build(hs()),
        histogram_v: Histogram::build(vs()),
    })
}

/// Isotropic Gaussian prior `N(mu, sigma² I)` over one latent sub-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl PriorSpec {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("prior sigma must be > 0, got {sigma}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("prior mean".into()));
        }
        Ok(Self { mu, sigma })
    }

    /// `N(0, I)` over `dims` dimensions.
    pub fn standard(dims: usize) -> Self {
        Self {
            mu: vec![0.0; dims],
            sigma: 1.0,
        }
    }

    /// Zero-mean prior with the given scale.
    pub fn centered(dims: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![0.0; dims], sigma)
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    /// Same scale, re-dimensioned to `dims` with a zero mean.
    pub fn resized(&self, dims: usize) -> Self {
        Self {
            mu: vec![0.0; dims],
            sigma: self.sigma,
        }
    }
}

/// Horizontal and vertical prior scales from a seeded random subset of the
/// training volumes.
///
/// The returned specs are one-dimensional templates (`mu = [0]`); callers
/// re-dimension them with [`PriorSpec::resized`]. A subset whose flow values
/// are all identical has no scale and is rejected; any other scale is floored at
/// [`SIGMA_FLOOR`].
pub fn estimate_prior(train: &[FlowVolume], fraction: f64, seed: u64) -> Result<(PriorSpec, PriorSpec)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = ((train.len() as f64) * fraction).ceil() as usize;
    if train.is_empty() || k == 0 {
        return Err(Error::Empty("prior estimation selected no volumes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, train.len(), k.min(train.len())).into_vec();
    picked.sort_unstable();
    let subset: Vec<FlowVolume> = picked.iter().map(|&i| train[i].clone()).collect();
    let stats = flow_stats(&subset)?;
    let make = |sigma: f64, dir: &str| {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!(
                "{dir} flow values have zero spread; prior scale undefined"
            )));
        }
        PriorSpec::new(vec![0.0], sigma.max(SIGMA_FLOOR))
    };
    Ok((make(stats.sigma_h, "horizontal")?, make(stats.sigma_v, "vertical")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volumes_stats() {
        let s = flow_stats(&[FlowVolume::zeros(2, 4, 4)]).unwrap();
        assert_eq!((s.mean_h, s.sigma_h, s.mean_v, s.sigma_v), (0.0, 0.0, 0.0, 0.0));
        let occupied: Vec<usize> = (0..HISTOGRAM_BINS).filter(|&i| s.histogram_h.counts[i] > 0).collect();
        assert_eq!(occupied, vec![HISTOGRAM_BINS / 2]);
        assert_eq!(s.histogram_h.total(), 32);
    }

    #[test]
    fn two_point_distribution() {
        let vol = FlowVolume::from_parts(1, 1, 4, vec![-1.0, 1.0, -1.0, 1.0], vec![0.0; 4]).unwrap();
        let s = flow_stats(&[vol]).unwrap();
        assert_eq!(s.mean_h, 0.0);
        assert!((s.sigma_h - 1.0).abs() < 1e-12);
        assert_eq!(s.histogram_h.counts[0], 2);
        assert_eq!(s.histogram_h.counts[HISTOGRAM_BINS - 1], 2);
    }

    #[test]
    fn empty_input_errors() {
        assert!(flow_stats(&[]).is_err());
        assert!(estimate_prior(&[], 1.0, 0).is_err());
    }

    #[test]
    fn degenerate_prior_errors() {
        let vols = vec![FlowVolume::zeros(1, 4, 4); 3];
        assert!(estimate_prior(&vols, 1.0, 0).is_err());
    }

    #[test]
    fn prior_is_deterministic_and_positive() {
        let vols: Vec<FlowVolume> = (0..10)
            .map(|i| {
                let h: Vec<f32> = (0..16).map(|j| ((i * 16 + j) % 7) as f32 * 0.01).collect();
                let v: Vec<f32> = (0..16).map(|j| ((i + j) % 3) as f32 * 0.002).collect();
                FlowVolume::from_parts(1, 4, 4, h, v).unwrap()
            })
            .collect();
        let a = estimate_prior(&vols, 0.3, 9).unwrap();
        let b = estimate_prior(&vols, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.0.sigma > 0.0 && a.1.sigma > 0.0);
    }

    #[test]
    fn tiny_spread_is_floored() {
        let vol = FlowVolume::from_parts(1, 1, 2, vec![0.0, 1e-7], vec![0.0, 1e-7]).unwrap();
        let (h, _) = estimate_prior(&[vol], 1.0, 0).unwrap();
        assert_eq!(h.sigma, SIGMA_FLOOR);
    }

    #[test]
    fn prior_spec_validation() {
        assert!(PriorSpec::new(vec![0.0], 0.0).is_err());
        assert!(PriorSpec::new(vec![0.0], f64::NAN).is_err());
        assert_eq!(PriorSpec::standard(3).dims(), 3);
    }
}
