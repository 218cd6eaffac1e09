//! OoD scores: latent divergences, reconstruction error with entropy
//! compensation, latent selection and a streaming detector.

mod entropy;
mod records;
mod select;
mod stream;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::PriorSpec;
use crate::vae::{divergence_diag, Divergence, Encoded};

pub use entropy::{compensated_score, entropy_baseline, image_entropy, Compensation, EntropyBaseline, DEFAULT_WINDOW};
pub use records::{score_samples, split_scores, write_scores_csv, ScoreConfig, ScoreKind, ScoreRecord, SCORE_CSV_HEADER};
pub use select::{select_latents, LatentEncoder, LatentSelectionReport};
pub use stream::{stream_detect, StreamDecision};

/// Which latent sub-spaces contribute to the total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subspace {
    #[default]
    Both,
    H,
    V,
}

impl std::str::FromStr for Subspace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Subspace::Both),
            "h" => Ok(Subspace::H),
            "v" => Ok(Subspace::V),
            other => Err(Error::invalid(format!("unknown subspace {other:?}"))),
        }
    }
}

/// Latent divergence score of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodScore {
    pub total: f64,
    pub score_h: f64,
    pub score_v: f64,
    /// Horizontal dimensions first, then vertical.
    pub per_dim: Vec<f64>,
}

/// Divergence of each sub-space posterior from its prior, summed per sub-space.
pub fn latent_score(latents: &Encoded, priors: [&PriorSpec; 2], divergence: Divergence, subspace: Subspace) -> Result<OodScore> {
    let dh = divergence_diag(divergence, &latents.h, priors[0])?;
    let dv = match &latents.v {
        Some(v) => divergence_diag(divergence, v, priors[1])?,
        None => Vec::new(),
    };
    if latents.v.is_none() && subspace == Subspace::V {
        return Err(Error::invalid("single-encoder model has no vertical sub-space"));
    }
    let score_h: f64 = dh.iter().sum();
    let score_v: f64 = dv.iter().sum();
    let total = match subspace {
        Subspace::Both => score_h + score_v,
        Subspace::H => score_h,
        Subspace::V => score_v,
    };
    let mut per_dim = dh;
    per_dim.extend(dv);
    Ok(OodScore {
        total,
        score_h,
        score_v,
        per_dim,
    })
}

/// Divergence summed over a chosen set of dimensions (indices into the
/// concatenated `[h, v]` latent).
pub fn selected_score(score: &OodScore, dims: &[usize]) -> Result<f64> {
    dims.iter()
        .map(|&i| {
            score
                .per_dim
                .get(i)
                .copied()
                .ok_or_else(|| Error::invalid(format!("latent index {i} out of range")))
        })
        .sum()
}

/// Mean squared residual.
pub fn recon_score(x: &[f32], x_hat: &[f32]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: vec![x.len()],
            found: vec![x_hat.len()],
        });
    }
    let sse: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sse / x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::GaussianLatent;

    fn shifted(n: usize) -> Encoded {
        let l = GaussianLatent::new(vec![1.0; n], vec![0.0; n]).unwrap();
        Encoded {
            h: l.clone(),
            v: Some(l),
        }
    }

    #[test]
    fn additivity_and_subspaces() {
        let p = PriorSpec::standard(12);
        let e = shifted(12);
        let s = latent_score(&e, [&p, &p], Divergence::Kl, Subspace::Both).unwrap();
        assert!((s.score_h - 6.0).abs() < 1e-12 && (s.score_v - 6.0).abs() < 1e-12);
        assert!((s.total - 12.0).abs() < 1e-12);
        assert!((s.per_dim.iter().sum::<f64>() - s.total).abs() < 1e-12);
        let v = latent_score(&e, [&p, &p], Divergence::Kl, Subspace::V).unwrap();
        assert!((v.total - 6.0).abs() < 1e-12);
        assert!((selected_score(&s, &[0, 12, 13]).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn prior_match_scores_zero() {
        let p = PriorSpec::new(vec![0.2; 4], 0.3).unwrap();
        let l = GaussianLatent::from_prior(&p);
        let e = Encoded {
            h: l.clone(),
            v: Some(l),
        };
        for d in [Divergence::Kl, Divergence::W2] {
            assert!(latent_score(&e, [&p, &p], d, Subspace::Both).unwrap().total.abs() < 1e-12);
        }
    }

    #[test]
    fn recon_examples() {
        let x = [0.0f32, 1.0, 2.0];
        assert_eq!(recon_score(&x, &x).unwrap(), 0.0);
        let y: Vec<f32> = x.iter().map(|v| v + 0.5).collect();
        assert_eq!(recon_score(&x, &y).unwrap(), 0.25);
        let z: Vec<f32> = x.iter().map(|v| v + 1.5).collect();
        assert!((recon_score(&x, &z).unwrap() - 9.0 * 0.25).abs() < 1e-12);
        assert!(recon_score(&x, &x[..2]).is_err());
    }
}
