use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::divergence::{term, GaussianLatent, LOGVAR_MAX, LOGVAR_MIN};
use super::model::{split_head, Encoded, ModelBundle, ObjectiveConfig, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::PriorSpec;
use crate::nn::{adam_step, Grads, Mode, Tensor};

/// Objective value split into its parts (all per-sample averages).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub div_h: f64,
    pub div_v: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        [self.recon, self.div_h, self.div_v, self.total].iter().all(|x| x.is_finite())
    }
}

/// Objective of a batch: `½·SSE / N + weight·(div_h + div_v)` with the
/// divergences summed over dimensions and averaged over the batch.
pub fn loss(
    target: &Tensor<f32>,
    recon: &Tensor<f32>,
    latents: &[Encoded],
    priors: [&PriorSpec; 2],
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    if target.shape() != recon.shape() {
        return Err(Error::shape(format!(
            "reconstruction {:?} does not match input {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let n = latents.len();
    if n == 0 || target.batch() != n {
        return Err(Error::invalid("batch size disagrees with latent count"));
    }
    let sse: f64 = target
        .data()
        .iter()
        .zip(recon.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let mut div = [0.0; 2];
    for e in latents {
        for (b, lat) in e.branches().into_iter().enumerate() {
            div[b] += divergence_sum(cfg, lat, priors[b])?;
        }
    }
    let recon = 0.5 * sse / n as f64;
    let (div_h, div_v) = (div[0] / n as f64, div[1] / n as f64);
    let out = LossBreakdown {
        recon,
        div_h,
        div_v,
        total: recon + cfg.weight() * (div_h + div_v),
    };
    if !out.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(out)
}

fn divergence_sum(cfg: &ObjectiveConfig, lat: &GaussianLatent, p: &PriorSpec) -> Result<f64> {
    Ok(super::divergence::divergence_diag(cfg.divergence, lat, p)?.iter().sum())
}

/// Train with Adam on shuffled mini-batches. Returns the mean loss of every epoch.
pub fn train(model: &mut ModelBundle, data: &[Sample], hyper: &TrainConfig) -> Result<Vec<LossBreakdown>> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let adam = hyper.adam();
    adam.validate()?;
    for s in data {
        model.check_sample(s)?;
    }
    model.hyper = *hyper;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for idx in order.chunks(hyper.batch) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
            let l = train_step(model, &batch, &mut rng, &adam).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged {
                    epoch,
                    reason: format!("non-finite {what}"),
                },
                other => other,
            })?;
            let w = batch.len() as f64 / data.len() as f64;
            acc.recon += w * l.recon;
            acc.div_h += w * l.div_h;
            acc.div_v += w * l.div_v;
            acc.total += w * l.total;
        }
        history.push(acc);
    }
    Ok(history)
}

fn train_step(
    model: &mut ModelBundle,
    batch: &[&Sample],
    rng: &mut ChaCha8Rng,
    adam: &crate::nn::AdamConfig,
) -> Result<LossBreakdown> {
    let n = batch.len();
    let dims = model.latent_dims();
    let branches = model.branches();
    let inputs = model.branch_inputs(batch)?;
    let mut heads = Vec::with_capacity(branches);
    let mut tapes = Vec::with_capacity(branches);
    for (net, x) in model.encoders.iter().zip(&inputs) {
        let (h, t) = net.forward(&model.params, x, Mode::Train)?;
        heads.push(h);
        tapes.push(t);
    }

    // Sample z and keep ε for the backward pass.
    let width = branches * dims;
    let mut z = vec![0f32; n * width];
    let mut eps = vec![0f64; n * width];
    let mut latents = Vec::with_capacity(n);
    for s in 0..n {
        let mut lats = Vec::with_capacity(branches);
        for (b, h) in heads.iter().enumerate() {
            let lat = split_head(h.sample(s))?;
            for i in 0..dims {
                let e: f64 = StandardNormal.sample(rng);
                let k = s * width + b * dims + i;
                eps[k] = e;
                z[k] = (lat.mu[i] + lat.sigma(i) * e) as f32;
            }
            lats.push(lat);
        }
        let mut it = lats.into_iter();
        latents.push(Encoded {
            h: it.next().expect("branch"),
            v: it.next(),
        });
    }

    let z = Tensor::new(vec![n, width], z)?;
    let (recon, dec_tape) = model.decoder.forward(&model.params, &z, Mode::Train)?;
    let target = model.target(batch)?;
    let breakdown = loss(&target, &recon, &latents, model.priors(), &model.objective)?;

    let inv_n = 1.0 / n as f32;
    let drecon_data = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * inv_n)
        .collect();
    let drecon = Tensor::new(recon.shape().to_vec(), drecon_data)?;
    let (mut grads, dz) = model.decoder.backward(&model.params, &dec_tape, &drecon)?;

    let weight = model.objective.weight();
    let kind = model.objective.divergence;
    for (b, net) in model.encoders.iter().enumerate() {
        let prior = model.priors()[b];
        let mut dhead = Tensor::zeros(heads[b].shape());
        for (s, enc) in latents.iter().enumerate().take(n) {
            let lat = &enc.branches()[b];
            let raw = heads[b].sample(s);
            let row = &mut dhead.data_mut()[s * 2 * dims..(s + 1) * 2 * dims];
            for i in 0..dims {
                let k = s * width + b * dims + i;
                let gz = dz.data()[k] as f64;
                let (_, gmu, glv) = term(kind, lat.mu[i], lat.logvar[i], prior.mu[i], prior.sigma);
                let sigma = lat.sigma(i);
                row[i] = (gz + weight * gmu / n as f64) as f32;
                let clamped = !((LOGVAR_MIN..=LOGVAR_MAX).contains(&(raw[dims + i] as f64)));
                row[dims + i] = if clamped {
                    0.0
                } else {
                    (gz * eps[k] * 0.5 * sigma + weight * glv / n as f64) as f32
                };
            }
        }
        let g = net.backward_params(&model.params, &tapes[b], &dhead)?;
        merge(&mut grads, g);
    }
    adam_step(&mut model.params, &grads, adam)?;
    for t in tapes.iter().chain(std::iter::once(&dec_tape)) {
        model.params.commit_running_stats(t)?;
    }
    Ok(breakdown)
}

fn merge(into: &mut Grads<f32>, from: Grads<f32>) {
    for (k, v) in from {
        into.insert(k, v);
    }
}
