use std::io::Write;

use serde::{Deserialize, Serialize};

use super::model::{Execution, QuantModel};
use crate::error::{Error, Result};
use crate::eval::data::LabeledSample;
use crate::eval::metrics::{roc, spearman};
use crate::scoring::{ScoreConfig, ScoreKind};
use crate::vae::ModelBundle;

pub const DRIFT_CSV_HEADER: &str = "auroc_float,auroc_int8,delta,score_correlation,max_abs_score_diff,n_id,n_ood";

/// Float-versus-integer comparison on one labelled set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub auroc_float: f64,
    pub auroc_int8: f64,
    /// `auroc_int8 - auroc_float`.
    pub delta: f64,
    /// Spearman rank correlation of the two score sets.
    pub score_correlation: f64,
    pub max_abs_score_diff: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Score `eval` with both models under the same latent configuration.
pub fn drift_report(float: &ModelBundle, qm: &QuantModel, eval: &[LabeledSample], cfg: &ScoreConfig) -> Result<DriftReport> {
    if cfg.kind_for(float) != ScoreKind::Latent {
        return Err(Error::invalid("drift is measured on latent scores"));
    }
    if float.variant != qm.variant || float.latent_dims() != qm.arch.latent_dims {
        return Err(Error::VariantMismatch {
            expected: float.variant.to_string(),
            found: qm.variant.to_string(),
        });
    }
    let n_ood = eval.iter().filter(|s| s.is_ood()).count();
    let n_id = eval.len() - n_ood;
    if n_id == 0 || n_ood == 0 {
        return Err(Error::invalid("drift needs both in-distribution and out-of-distribution samples"));
    }
    let samples: Vec<_> = eval.iter().map(|s| &s.sample).collect();
    let enc_f = float.encode_refs(&samples)?;
    let mut sf = Vec::with_capacity(eval.len());
    let mut sq = Vec::with_capacity(eval.len());
    for (s, e) in samples.iter().zip(&enc_f) {
        sf.push(cfg.latent_total(float, e)?.0);
        let eq = qm.encode_one(s, Execution::Fused)?;
        sq.push(cfg.latent_total_with(&eq, qm.priors(), qm.divergence)?.0);
    }
    let split = |scores: &[f64]| {
        let mut id = Vec::with_capacity(n_id);
        let mut ood = Vec::with_capacity(n_ood);
        for (s, &v) in eval.iter().zip(scores) {
            if s.is_ood() {
                ood.push(v);
            } else {
                id.push(v);
            }
        }
        (id, ood)
    };
    let (fi, fo) = split(&sf);
    let (qi, qo) = split(&sq);
    let auroc_float = roc(&fi, &fo)?.auroc;
    let auroc_int8 = roc(&qi, &qo)?.auroc;
    Ok(DriftReport {
        auroc_float,
        auroc_int8,
        delta: auroc_int8 - auroc_float,
        score_correlation: spearman(&sf, &sq)?,
        max_abs_score_diff: sf.iter().zip(&sq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        n_id,
        n_ood,
    })
}

pub fn write_drift_csv<W: Write>(r: &DriftReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{DRIFT_CSV_HEADER}")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        r.auroc_float, r.auroc_int8, r.delta, r.score_correlation, r.max_abs_score_diff, r.n_id, r.n_ood
    )
}
