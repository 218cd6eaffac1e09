use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::records::ScoreConfig;
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowParams, FlowVolume};
use crate::vae::{ModelBundle, Sample};
use crate::videoio::FrameSequence;

/// Per-frame outcome of [`stream_detect`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StreamDecision {
    /// Not enough history for a full window yet.
    WarmUp { frame: usize },
    Scored { frame: usize, score: f64, ood: bool },
}

impl StreamDecision {
    pub fn is_ood(&self) -> bool {
        matches!(self, StreamDecision::Scored { ood: true, .. })
    }
}

/// Slide a depth-`depth` flow window over the sequence, keeping only the
/// last `depth` flow fields. Frame `t >= depth` is scored on the flows
/// ending at `t` and flagged when its latent score exceeds `threshold`.
pub fn stream_detect(
    seq: &FrameSequence,
    model: &ModelBundle,
    threshold: f64,
    depth: usize,
    cfg: &ScoreConfig,
    flow: &FlowParams,
) -> Result<Vec<StreamDecision>> {
    if !model.variant.is_flow() {
        return Err(Error::invalid(format!("{} does not take flow windows", model.variant)));
    }
    if depth == 0 || depth != model.arch.depth {
        return Err(Error::invalid(format!(
            "window depth {depth} does not match model depth {}",
            model.arch.depth
        )));
    }
    if seq.len() < depth + 1 {
        return Err(Error::invalid(format!(
            "sequence of {} frames is shorter than depth + 1 = {}",
            seq.len(),
            depth + 1
        )));
    }
    let mut cache = VecDeque::with_capacity(depth + 1);
    let mut out = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        if t > 0 {
            cache.push_back(estimate_flow(seq.frame(t - 1), seq.frame(t), flow)?);
            if cache.len() > depth {
                cache.pop_front();
            }
        }
        if t < depth {
            out.push(StreamDecision::WarmUp { frame: t });
            continue;
        }
        let fields: Vec<_> = cache.iter().cloned().collect();
        let vol = FlowVolume::from_fields(&fields)?;
        let enc = model.encode(&[Sample::Flow(vol)])?;
        let (score, _, _) = cfg.latent_total(model, &enc[0])?;
        out.push(StreamDecision::Scored {
            frame: t,
            score,
            ood: score > threshold,
        });
    }
    Ok(out)
}
