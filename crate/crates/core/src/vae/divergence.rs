use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::PriorSpec;

/// Lower and upper clamp applied to encoder log-variances.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Diagonal Gaussian posterior of one latent sub-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() || mu.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: vec![mu.len()],
                found: vec![logvar.len()],
            });
        }
        if mu.iter().chain(&logvar).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent parameters".into()));
        }
        Ok(Self { mu, logvar })
    }

    /// Latent matching a prior exactly.
    pub fn from_prior(p: &PriorSpec) -> Self {
        Self {
            mu: p.mu.clone(),
            logvar: vec![2.0 * p.sigma.ln(); p.mu.len()],
        }
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        (0.5 * self.logvar[i]).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    Kl,
    W2,
}

impl Divergence {
    pub fn as_str(self) -> &'static str {
        match self {
            Divergence::Kl => "kl",
            Divergence::W2 => "w2",
        }
    }
}

impl std::str::FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Divergence::Kl),
            "w2" => Ok(Divergence::W2),
            other => Err(Error::invalid(format!("unknown divergence {other:?}"))),
        }
    }
}

fn check(q: &GaussianLatent, p: &PriorSpec) -> Result<()> {
    if q.dims() != p.dims() {
        return Err(Error::DimensionMismatch {
            expected: vec![p.dims()],
            found: vec![q.dims()],
        });
    }
    if !(p.sigma > 0.0 && p.sigma.is_finite()) {
        return Err(Error::invalid(format!("prior sigma must be positive, got {}", p.sigma)));
    }
    Ok(())
}

/// Per-dimension KL(q ‖ p) for a diagonal Gaussian against an isotropic prior.
pub fn kl_diag(q: &GaussianLatent, p: &PriorSpec) -> Result<Vec<f64>> {
    check(q, p)?;
    let var_p = p.sigma * p.sigma;
    Ok(q.mu
        .iter()
        .zip(&q.logvar)
        .zip(&p.mu)
        .map(|((&m, &lv), &mp)| kl_term(m, lv, mp, var_p).0)
        .collect())
}

/// Per-dimension squared 2-Wasserstein distance between q and p.
pub fn w2_diag(q: &GaussianLatent, p: &PriorSpec) -> Result<Vec<f64>> {
    check(q, p)?;
    Ok(q.mu
        .iter()
        .zip(&q.logvar)
        .zip(&p.mu)
        .map(|((&m, &lv), &mp)| w2_term(m, lv, mp, p.sigma).0)
        .collect())
}

pub fn divergence_diag(kind: Divergence, q: &GaussianLatent, p: &PriorSpec) -> Result<Vec<f64>> {
    match kind {
        Divergence::Kl => kl_diag(q, p),
        Divergence::W2 => w2_diag(q, p),
    }
}

/// KL value and its partials with respect to (mu, logvar).
pub(crate) fn kl_term(mu: f64, logvar: f64, mu_p: f64, var_p: f64) -> (f64, f64, f64) {
    let var_q = logvar.exp();
    let d = mu - mu_p;
    let ratio = var_q / var_p;
    let value = 0.5 * (ratio + d * d / var_p - 1.0 - ratio.ln());
    (value.max(0.0), d / var_p, 0.5 * (ratio - 1.0))
}

/// Squared W2 value and its partials with respect to (mu, logvar).
pub(crate) fn w2_term(mu: f64, logvar: f64, mu_p: f64, sigma_p: f64) -> (f64, f64, f64) {
    let sq = (0.5 * logvar).exp();
    let d = mu - mu_p;
    let s = sq - sigma_p;
    (d * d + s * s, 2.0 * d, s * sq)
}

pub(crate) fn term(kind: Divergence, mu: f64, logvar: f64, mu_p: f64, sigma_p: f64) -> (f64, f64, f64) {
    match kind {
        Divergence::Kl => kl_term(mu, logvar, mu_p, sigma_p * sigma_p),
        Divergence::W2 => w2_term(mu, logvar, mu_p, sigma_p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(mu: f64, var: f64, n: usize) -> GaussianLatent {
        GaussianLatent::new(vec![mu; n], vec![var.ln(); n]).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = PriorSpec::new(vec![0.3, -1.0], 0.7).unwrap();
        let q = GaussianLatent::from_prior(&p);
        for v in kl_diag(&q, &p).unwrap().into_iter().chain(w2_diag(&q, &p).unwrap()) {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_examples() {
        let p = PriorSpec::standard(3);
        assert!(kl_diag(&lat(1.0, 1.0, 3), &p).unwrap().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(w2_diag(&lat(2.0, 1.0, 3), &p).unwrap().iter().all(|&v| (v - 4.0).abs() < 1e-15));
        assert!(w2_diag(&lat(0.0, 4.0, 3), &p).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn partials_match_finite_differences() {
        for kind in [Divergence::Kl, Divergence::W2] {
            for &(m, lv, mp, sp) in &[(0.4, -0.3, 0.1, 0.8), (-1.2, 1.1, 0.0, 0.05), (2.0, -4.0, 0.5, 1.5)] {
                let (_, dm, dl) = term(kind, m, lv, mp, sp);
                let h = 1e-6;
                let nm = (term(kind, m + h, lv, mp, sp).0 - term(kind, m - h, lv, mp, sp).0) / (2.0 * h);
                let nl = (term(kind, m, lv + h, mp, sp).0 - term(kind, m, lv - h, mp, sp).0) / (2.0 * h);
                assert!((dm - nm).abs() <= 1e-5 * nm.abs().max(1.0), "{kind:?} dmu {dm} vs {nm}");
                assert!((dl - nl).abs() <= 1e-5 * nl.abs().max(1.0), "{kind:?} dlv {dl} vs {nl}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = lat(0.0, 1.0, 2);
        assert!(kl_diag(&q, &PriorSpec::standard(3)).is_err());
        let bad = PriorSpec {
            mu: vec![0.0; 2],
            sigma: 0.0,
        };
        assert!(w2_diag(&q, &bad).is_err());
        assert!(GaussianLatent::new(vec![0.0], vec![f64::NAN]).is_err());
    }
}
