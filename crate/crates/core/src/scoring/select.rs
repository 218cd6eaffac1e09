use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::PriorSpec;
use crate::vae::{kl_diag, Encoded, ModelBundle, Sample};

/// Anything that maps inputs to per-branch posteriors.
pub trait LatentEncoder {
    fn encode_latents(&self, samples: &[Sample]) -> Result<Vec<Encoded>>;
}

impl LatentEncoder for ModelBundle {
    fn encode_latents(&self, samples: &[Sample]) -> Result<Vec<Encoded>> {
        self.encode(samples)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSelectionReport {
    /// First `n` dimensions by decreasing average inter-frame KL change.
    pub ranked_indices: Vec<usize>,
    pub avg_kl_diff: Vec<f64>,
}

fn standard_kl(e: &Encoded) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for l in e.branches() {
        out.extend(kl_diag(l, &PriorSpec::standard(l.dims()))?);
    }
    Ok(out)
}

/// Rank latent dimensions by how much their KL against N(0, I) changes
/// between consecutive inputs. Pairs are taken with stride 2 (inputs 0–1,
/// 2–3, ...), averaged over all pairs of all scenes; ties keep index order.
pub fn select_latents<E: LatentEncoder + ?Sized>(calib: &[Vec<Sample>], model: &E, n: usize) -> Result<LatentSelectionReport> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration scenes".into()));
    }
    let mut sum: Vec<f64> = Vec::new();
    let mut pairs = 0usize;
    for (s, scene) in calib.iter().enumerate() {
        if scene.len() < 2 {
            return Err(Error::invalid(format!("scene {s} has fewer than 2 inputs")));
        }
        let kls = model
            .encode_latents(scene)?
            .iter()
            .map(standard_kl)
            .collect::<Result<Vec<_>>>()?;
        if sum.is_empty() {
            sum = vec![0.0; kls[0].len()];
        }
        let mut i = 0;
        while i + 1 < kls.len() {
            if kls[i].len() != sum.len() || kls[i + 1].len() != sum.len() {
                return Err(Error::invalid("latent size changed between inputs"));
            }
            for (acc, (a, b)) in sum.iter_mut().zip(kls[i].iter().zip(&kls[i + 1])) {
                *acc += (b - a).abs();
            }
            pairs += 1;
            i += 2;
        }
    }
    if n > sum.len() {
        return Err(Error::invalid(format!("cannot select {n} of {} latent dimensions", sum.len())));
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / pairs as f64).collect();
    let mut order: Vec<usize> = (0..avg.len()).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]));
    order.truncate(n);
    Ok(LatentSelectionReport {
        ranked_indices: order,
        avg_kl_diff: avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::GaussianLatent;
    use crate::videoio::Frame;

    /// Emits constant latents except dimension `k`, which follows the mean
    /// intensity of the input frame.
    struct OneDim {
        dims: usize,
        k: usize,
    }

    impl LatentEncoder for OneDim {
        fn encode_latents(&self, samples: &[Sample]) -> Result<Vec<Encoded>> {
            Ok(samples
                .iter()
                .map(|s| {
                    let m = match s {
                        Sample::Frame(f) => f.mean(),
                        Sample::Flow(_) => 0.0,
                    };
                    let mut mu = vec![0.3; self.dims];
                    mu[self.k] = 4.0 * m;
                    Encoded {
                        h: GaussianLatent::new(mu, vec![-0.5; self.dims]).unwrap(),
                        v: None,
                    }
                })
                .collect())
        }
    }

    fn scene(values: &[f32]) -> Vec<Sample> {
        values.iter().map(|&v| Sample::Frame(Frame::filled(4, 4, v))).collect()
    }

    #[test]
    fn varying_dimension_ranks_first() {
        let enc = OneDim { dims: 6, k: 4 };
        let calib = vec![scene(&[0.1, 0.9, 0.2, 0.5]), scene(&[0.7, 0.3, 0.4])];
        let r = select_latents(&calib, &enc, 6).unwrap();
        assert_eq!(r.ranked_indices[0], 4);
        let mut sorted = r.ranked_indices.clone();
        sorted.sort();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn constant_latents_keep_index_order() {
        let enc = OneDim { dims: 5, k: 2 };
        let r = select_latents(&[scene(&[0.5, 0.5, 0.5])], &enc, 3).unwrap();
        assert!(r.avg_kl_diff.iter().all(|&d| d == 0.0));
        assert_eq!(r.ranked_indices, vec![0, 1, 2]);
    }

    #[test]
    fn scene_order_does_not_matter() {
        let enc = OneDim { dims: 4, k: 1 };
        let (a, b) = (scene(&[0.1, 0.6]), scene(&[0.9, 0.2, 0.3, 0.35]));
        let r1 = select_latents(&[a.clone(), b.clone()], &enc, 4).unwrap();
        let r2 = select_latents(&[b, a], &enc, 4).unwrap();
        assert_eq!(r1.ranked_indices, r2.ranked_indices);
        for (x, y) in r1.avg_kl_diff.iter().zip(&r2.avg_kl_diff) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn short_scene_is_rejected() {
        let enc = OneDim { dims: 2, k: 0 };
        assert!(select_latents(&[scene(&[0.1])], &enc, 1).is_err());
        assert!(select_latents(&[scene(&[0.1, 0.2])], &enc, 3).is_err());
    }
}
