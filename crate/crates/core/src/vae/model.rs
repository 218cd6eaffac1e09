use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::divergence::{Divergence, GaussianLatent, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{Error, Result};
use crate::flow::{FlowVolume, PriorSpec};
use crate::nn::{AdamConfig, Network, ParamStore, Tensor};
use crate::videoio::Frame;

/// Model families. Variants differ only in configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Bi3dof,
    Bi3dofOptprior,
    Bi3dofWs,
    Bi2dof,
    ImageReconBaseline,
    BetaVaeBaseline,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Bi3dof,
        Variant::Bi3dofOptprior,
        Variant::Bi3dofWs,
        Variant::Bi2dof,
        Variant::ImageReconBaseline,
        Variant::BetaVaeBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bi3dof => "bi3dof",
            Variant::Bi3dofOptprior => "bi3dof-optprior",
            Variant::Bi3dofWs => "bi3dof-ws",
            Variant::Bi2dof => "bi2dof",
            Variant::ImageReconBaseline => "image-recon-baseline",
            Variant::BetaVaeBaseline => "beta-vae-baseline",
        }
    }

    /// Twin flow encoders (true) or a single frame encoder.
    pub fn is_flow(self) -> bool {
        !matches!(self, Variant::ImageReconBaseline | Variant::BetaVaeBaseline)
    }

    pub fn default_depth(self) -> usize {
        match self {
            Variant::Bi3dof | Variant::Bi3dofOptprior | Variant::Bi3dofWs => 6,
            _ => 1,
        }
    }

    /// Latent dimensions per sub-space.
    pub fn default_latent_dims(self) -> usize {
        match self {
            Variant::ImageReconBaseline => 1024,
            Variant::BetaVaeBaseline => 30,
            _ => 12,
        }
    }

    pub fn default_objective(self) -> ObjectiveConfig {
        match self {
            Variant::Bi3dofOptprior | Variant::Bi3dofWs => ObjectiveConfig::w2(),
            Variant::BetaVaeBaseline => ObjectiveConfig::kl(1.4),
            _ => ObjectiveConfig::kl(1.0),
        }
    }

    /// Whether the prior is estimated from training flow statistics.
    pub fn estimates_prior(self) -> bool {
        self == Variant::Bi3dofOptprior
    }

    pub fn desk_arch(self) -> ArchConfig {
        ArchConfig::desk(self.default_depth(), self.default_latent_dims())
    }

    pub fn paper_arch(self) -> ArchConfig {
        ArchConfig::paper(self.default_depth(), self.default_latent_dims())
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

/// Divergence term of the objective and its weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub divergence: Divergence,
    /// KL weight.
    pub beta: f64,
    /// W2 weight.
    pub lambda: f64,
}

impl ObjectiveConfig {
    pub fn kl(beta: f64) -> Self {
        Self {
            divergence: Divergence::Kl,
            beta,
            lambda: 1.0,
        }
    }

    pub fn w2() -> Self {
        Self {
            divergence: Divergence::W2,
            beta: 1.0,
            lambda: 1.0,
        }
    }

    pub fn weight(&self) -> f64 {
        match self.divergence {
            Divergence::Kl => self.beta,
            Divergence::W2 => self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be >= 0"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be > 0"));
        }
        Ok(())
    }
}

/// Optimisation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 100,
            batch: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// One model input: a flow volume for flow variants, a frame for the image baselines.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Flow(FlowVolume),
    Frame(Frame),
}

impl From<FlowVolume> for Sample {
    fn from(v: FlowVolume) -> Self {
        Sample::Flow(v)
    }
}

impl From<Frame> for Sample {
    fn from(f: Frame) -> Self {
        Sample::Frame(f)
    }
}

/// Posterior of one input: one latent per encoder branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoded {
    pub h: GaussianLatent,
    pub v: Option<GaussianLatent>,
}

impl Encoded {
    pub fn branches(&self) -> Vec<&GaussianLatent> {
        std::iter::once(&self.h).chain(self.v.as_ref()).collect()
    }
}

/// A trained (or freshly initialised) model with everything needed to score.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub variant: Variant,
    pub arch: ArchConfig,
    pub encoders: Vec<Network>,
    pub decoder: Network,
    pub params: ParamStore<f32>,
    pub prior_h: PriorSpec,
    pub prior_v: PriorSpec,
    pub objective: ObjectiveConfig,
    pub hyper: TrainConfig,
}

pub(crate) const ENCODER_NAMES: [&str; 2] = ["enc_h", "enc_v"];
pub(crate) const DECODER_NAME: &str = "dec";

/// Rows evaluated per forward pass during inference.
const INFER_CHUNK: usize = 32;

impl ModelBundle {
    /// Fresh model with seeded parameters and unit priors.
    pub fn new(variant: Variant, arch: ArchConfig, seed: u64) -> Result<Self> {
        Self::with_objective(variant, arch, variant.default_objective(), seed)
    }

    pub fn with_objective(variant: Variant, arch: ArchConfig, objective: ObjectiveConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        objective.validate()?;
        if !variant.is_flow() && arch.depth != 1 {
            return Err(Error::invalid(format!("{variant} encodes single frames; depth must be 1")));
        }
        let branches = if variant.is_flow() { 2 } else { 1 };
        let encoders = ENCODER_NAMES[..branches]
            .iter()
            .map(|n| arch.encoder(n))
            .collect::<Result<Vec<_>>>()?;
        let decoder = arch.decoder(DECODER_NAME, branches * arch.latent_dims, branches)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for net in encoders.iter().chain(std::iter::once(&decoder)) {
            params.extend(net.init_params(&mut rng))?;
        }
        let n = arch.latent_dims;
        Ok(Self {
            variant,
            arch,
            encoders,
            decoder,
            params,
            prior_h: PriorSpec::standard(n),
            prior_v: PriorSpec::standard(n),
            objective,
            hyper: TrainConfig::default(),
        })
    }

    pub fn latent_dims(&self) -> usize {
        self.arch.latent_dims
    }

    pub fn branches(&self) -> usize {
        self.encoders.len()
    }

    /// Install priors (1-dim templates are broadcast to the latent size).
    pub fn set_priors(&mut self, h: &PriorSpec, v: &PriorSpec) -> Result<()> {
        let n = self.latent_dims();
        for p in [h, v] {
            if p.dims() != 1 && p.dims() != n {
                return Err(Error::DimensionMismatch {
                    expected: vec![n],
                    found: vec![p.dims()],
                });
            }
        }
        self.prior_h = h.resized(n);
        self.prior_v = v.resized(n);
        Ok(())
    }

    pub fn priors(&self) -> [&PriorSpec; 2] {
        [&self.prior_h, &self.prior_v]
    }

    /// Check one sample against the input contract.
    pub fn check_sample(&self, s: &Sample) -> Result<()> {
        let a = &self.arch;
        match (s, self.variant.is_flow()) {
            (Sample::Flow(v), true) => {
                if v.shape() != [a.depth, a.height, a.width] {
                    return Err(Error::DimensionMismatch {
                        expected: vec![a.depth, a.height, a.width],
                        found: v.shape().to_vec(),
                    });
                }
            }
            (Sample::Frame(f), false) => {
                if f.dims() != (a.height, a.width) {
                    return Err(Error::DimensionMismatch {
                        expected: vec![a.height, a.width],
                        found: vec![f.height(), f.width()],
                    });
                }
            }
            (Sample::Flow(_), false) => return Err(Error::invalid(format!("{} expects frames", self.variant))),
            (Sample::Frame(_), true) => return Err(Error::invalid(format!("{} expects flow volumes", self.variant))),
        }
        Ok(())
    }

    /// Per-branch encoder inputs `[N, 1, D, H, W]` for a batch.
    pub fn branch_inputs(&self, batch: &[&Sample]) -> Result<Vec<Tensor<f32>>> {
        for s in batch {
            self.check_sample(s)?;
        }
        let shape = self.arch.input_shape();
        let mut out = Vec::with_capacity(self.branches());
        for b in 0..self.branches() {
            let slices: Vec<&[f32]> = batch
                .iter()
                .map(|s| match s {
                    Sample::Flow(v) if b == 0 => v.h(),
                    Sample::Flow(v) => v.v(),
                    Sample::Frame(f) => f.data(),
                })
                .collect();
            out.push(Tensor::stack(&slices, &shape)?);
        }
        Ok(out)
    }

    /// Reconstruction target `[N, branches, D, H, W]`.
    pub fn target(&self, batch: &[&Sample]) -> Result<Tensor<f32>> {
        let inputs = self.branch_inputs(batch)?;
        let per = inputs[0].sample_len();
        let mut data = Vec::with_capacity(per * inputs.len() * batch.len());
        for n in 0..batch.len() {
            for t in &inputs {
                data.extend_from_slice(t.sample(n));
            }
        }
        let a = &self.arch;
        Tensor::new(vec![batch.len(), self.branches(), a.depth, a.height, a.width], data)
    }

    /// Eval-mode posteriors of each sample.
    pub fn encode(&self, samples: &[Sample]) -> Result<Vec<Encoded>> {
        let refs: Vec<&Sample> = samples.iter().collect();
        self.encode_refs(&refs)
    }

    pub fn encode_refs(&self, samples: &[&Sample]) -> Result<Vec<Encoded>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(INFER_CHUNK) {
            let inputs = self.branch_inputs(chunk)?;
            let mut heads = Vec::with_capacity(self.branches());
            for (net, x) in self.encoders.iter().zip(&inputs) {
                heads.push(net.infer(&self.params, x)?);
            }
            for n in 0..chunk.len() {
                let mut lat = heads.iter().map(|h| split_head(h.sample(n)));
                let h = lat.next().expect("one branch")?;
                let v = lat.next().transpose()?;
                out.push(Encoded { h, v });
            }
        }
        Ok(out)
    }

    /// Decode concatenated latent codes into a sample shaped like the input.
    pub fn decode(&self, z_h: &[f64], z_v: Option<&[f64]>) -> Result<Sample> {
        let n = self.latent_dims();
        let expect = n * self.branches();
        let mut z: Vec<f32> = z_h.iter().map(|&x| x as f32).collect();
        if let Some(v) = z_v {
            z.extend(v.iter().map(|&x| x as f32));
        }
        if z_h.len() != n || z.len() != expect {
            return Err(Error::DimensionMismatch {
                expected: vec![expect],
                found: vec![z.len()],
            });
        }
        let y = self.decoder.infer(&self.params, &Tensor::new(vec![1, expect], z)?)?;
        self.output_to_sample(y.data())
    }

    /// Reconstruct inputs through the posterior means.
    pub fn reconstruct(&self, samples: &[&Sample]) -> Result<Vec<Sample>> {
        let enc = self.encode_refs(samples)?;
        enc.iter()
            .map(|e| self.decode(&e.h.mu, e.v.as_ref().map(|v| v.mu.as_slice())))
            .collect()
    }

    fn output_to_sample(&self, y: &[f32]) -> Result<Sample> {
        let a = &self.arch;
        let plane = a.depth * a.height * a.width;
        if self.variant.is_flow() {
            FlowVolume::from_parts(a.depth, a.height, a.width, y[..plane].to_vec(), y[plane..2 * plane].to_vec())
                .map(Sample::Flow)
        } else {
            Frame::new(a.height, a.width, y[..plane].to_vec()).map(Sample::Frame)
        }
    }
}

/// Split an encoder head row into (mu, clamped logvar).
pub(crate) fn split_head(row: &[f32]) -> Result<GaussianLatent> {
    let n = row.len() / 2;
    let mu = row[..n].iter().map(|&x| x as f64).collect();
    let logvar = row[n..].iter().map(|&x| (x as f64).clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    GaussianLatent::new(mu, logvar)
}

/// Draw `z = mu + exp(logvar/2)·ε` with seeded standard-normal `ε`.
pub fn reparameterize(lat: &GaussianLatent, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lat.mu
        .iter()
        .zip(&lat.logvar)
        .map(|(&m, &lv)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e
        })
        .collect()
}
