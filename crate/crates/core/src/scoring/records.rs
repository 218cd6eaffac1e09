use std::io::Write;

use serde::{Deserialize, Serialize};

use super::entropy::{compensated_score, image_entropy, Compensation, EntropyBaseline, DEFAULT_WINDOW};
use super::{latent_score, recon_score, selected_score, Subspace};
use crate::error::{Error, Result};
use crate::eval::data::LabeledSample;
use crate::flow::PriorSpec;
use crate::videoio::FrameLabel;
use crate::vae::{Divergence, Encoded, ModelBundle, Sample, Variant};

pub const SCORE_CSV_HEADER: &str = "sample_id,label,total,score_h,score_v,raw_mse,entropy,compensated";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Latent divergence from the prior.
    Latent,
    /// Reconstruction MSE.
    Recon,
}

/// How samples are scored. Unset fields follow the model's variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub kind: Option<ScoreKind>,
    pub divergence: Option<Divergence>,
    pub subspace: Subspace,
    /// Latent dimensions to sum over (indices into `[h, v]`).
    pub selected: Option<Vec<usize>>,
    pub baseline: Option<EntropyBaseline>,
    pub compensation: Compensation,
    pub entropy_window: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            kind: None,
            divergence: None,
            subspace: Subspace::Both,
            selected: None,
            baseline: None,
            compensation: Compensation::Boost,
            entropy_window: DEFAULT_WINDOW,
        }
    }
}

impl ScoreConfig {
    pub fn kind_for(&self, model: &ModelBundle) -> ScoreKind {
        self.kind.unwrap_or(match model.variant {
            Variant::ImageReconBaseline => ScoreKind::Recon,
            _ => ScoreKind::Latent,
        })
    }

    pub fn divergence_for(&self, model: &ModelBundle) -> Divergence {
        self.divergence.unwrap_or(model.objective.divergence)
    }

    /// Latent score of one posterior under this configuration.
    pub fn latent_total(&self, model: &ModelBundle, e: &Encoded) -> Result<(f64, f64, f64)> {
        self.latent_total_with(e, model.priors(), model.objective.divergence)
    }

    /// As [`latent_total`](Self::latent_total) with explicit priors; `fallback`
    /// applies when no divergence is configured.
    pub fn latent_total_with(&self, e: &Encoded, priors: [&PriorSpec; 2], fallback: Divergence) -> Result<(f64, f64, f64)> {
        let s = latent_score(e, priors, self.divergence.unwrap_or(fallback), self.subspace)?;
        let total = match &self.selected {
            Some(dims) => selected_score(&s, dims)?,
            None => s.total,
        };
        Ok((total, s.score_h, s.score_v))
    }
}

/// One row of a score dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub class: String,
    pub label: FrameLabel,
    pub total: f64,
    pub score_h: f64,
    pub score_v: f64,
    pub raw_mse: f64,
    /// Local entropy of frame inputs; absent for flow inputs.
    pub entropy: Option<f64>,
    /// Detection score: entropy-compensated MSE where configured, else `total`.
    pub compensated: f64,
}

fn flatten(s: &Sample) -> Vec<f32> {
    match s {
        Sample::Flow(v) => v.h().iter().chain(v.v()).copied().collect(),
        Sample::Frame(f) => f.data().to_vec(),
    }
}

/// Score every sample with `model`.
pub fn score_samples(model: &ModelBundle, samples: &[LabeledSample], cfg: &ScoreConfig) -> Result<Vec<ScoreRecord>> {
    if cfg.entropy_window < 3 || cfg.entropy_window.is_multiple_of(2) {
        return Err(Error::invalid("entropy window must be odd and >= 3"));
    }
    let kind = cfg.kind_for(model);
    if kind == ScoreKind::Recon && (cfg.subspace != Subspace::Both || cfg.selected.is_some()) {
        return Err(Error::invalid("sub-space and dimension selection apply to latent scores only"));
    }
    let refs: Vec<&Sample> = samples.iter().map(|s| &s.sample).collect();
    let encoded = model.encode_refs(&refs)?;
    let mut out = Vec::with_capacity(samples.len());
    for (s, e) in samples.iter().zip(&encoded) {
        let recon = model.decode(&e.h.mu, e.v.as_ref().map(|v| v.mu.as_slice()))?;
        let raw_mse = recon_score(&flatten(&s.sample), &flatten(&recon))?;
        let (latent, score_h, score_v) = cfg.latent_total(model, e)?;
        let entropy = match &s.sample {
            Sample::Frame(f) => Some(image_entropy(f, cfg.entropy_window)?),
            Sample::Flow(_) => None,
        };
        let total = match kind {
            ScoreKind::Latent => latent,
            ScoreKind::Recon => raw_mse,
        };
        let compensated = match (kind, &cfg.baseline, entropy) {
            (ScoreKind::Recon, Some(b), Some(ent)) => compensated_score(raw_mse, ent, b, cfg.compensation)?,
            _ => total,
        };
        out.push(ScoreRecord {
            sample_id: s.id.clone(),
            class: s.class.clone(),
            label: s.label,
            total,
            score_h,
            score_v,
            raw_mse,
            entropy,
            compensated,
        });
    }
    Ok(out)
}

/// Split detection scores into (in-distribution, out-of-distribution).
pub fn split_scores(records: &[ScoreRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for r in records {
        if r.label.is_ood() {
            ood.push(r.compensated);
        } else {
            id.push(r.compensated);
        }
    }
    (id, ood)
}

/// Write records as comma-separated text with a header row.
pub fn write_scores_csv<W: Write>(records: &[ScoreRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SCORE_CSV_HEADER}")?;
    for r in records {
        let entropy = r.entropy.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.sample_id, r.label, r.total, r.score_h, r.score_v, r.raw_mse, entropy, r.compensated
        )?;
    }
    Ok(())
}
