use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::ArchConfig;
use super::model::{ModelBundle, ObjectiveConfig, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::flow::PriorSpec;
use crate::nn::{LayerSpec, Network, ParamStore, TensorEntry};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "flowood-model";
const MANIFEST: &str = "model.json";
const BLOB: &str = "params.nnp";

#[derive(Serialize, Deserialize)]
struct NetSpec {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl NetSpec {
    fn of(net: &Network) -> Self {
        Self {
            name: net.name().to_string(),
            input_shape: net.input_shape().to_vec(),
            layers: net.layers().to_vec(),
        }
    }

    fn build(self) -> Result<Network> {
        Network::new(self.name, self.input_shape, self.layers)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    variant: Variant,
    arch: ArchConfig,
    latent_dims: usize,
    encoders: Vec<NetSpec>,
    decoder: NetSpec,
    prior_h: PriorSpec,
    prior_v: PriorSpec,
    objective: ObjectiveConfig,
    hyper: TrainConfig,
    tensors: Vec<TensorEntry>,
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `model.json` and `params.nnp` into `dir` (created if needed).
pub fn save(model: &ModelBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (tensors, blob) = model.params.to_blob();
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: MODEL_FORMAT_VERSION,
        variant: model.variant,
        arch: model.arch.clone(),
        latent_dims: model.latent_dims(),
        encoders: model.encoders.iter().map(NetSpec::of).collect(),
        decoder: NetSpec::of(&model.decoder),
        prior_h: model.prior_h.clone(),
        prior_v: model.prior_v.clone(),
        objective: model.objective,
        hyper: model.hyper,
        tensors,
        checksum: sha256_hex(&blob),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let blob_path = dir.join(BLOB);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let man_path = dir.join(MANIFEST);
    fs::write(&man_path, json + "\n").map_err(|e| Error::io(&man_path, e))
}

/// Load a model directory written by [`save`].
pub fn load(dir: &Path) -> Result<ModelBundle> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let man_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&man_path, e.to_string()))?;
    if m.format != FORMAT_NAME {
        return Err(Error::format(&man_path, format!("not a model manifest ({})", m.format)));
    }
    if m.version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            expected: MODEL_FORMAT_VERSION.to_string(),
            found: m.version.to_string(),
        });
    }
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if sha256_hex(&blob) != m.checksum {
        return Err(Error::Checksum(blob_path));
    }
    let params = ParamStore::from_blob(&m.tensors, &blob, &blob_path)?;
    let encoders = m.encoders.into_iter().map(NetSpec::build).collect::<Result<Vec<_>>>()?;
    let decoder = m.decoder.build()?;
    if m.latent_dims != m.arch.latent_dims || encoders.len() != if m.variant.is_flow() { 2 } else { 1 } {
        return Err(Error::format(&man_path, "inconsistent model topology"));
    }
    Ok(ModelBundle {
        variant: m.variant,
        arch: m.arch,
        encoders,
        decoder,
        params,
        prior_h: m.prior_h,
        prior_v: m.prior_v,
        objective: m.objective,
        hyper: m.hyper,
    })
}

/// [`load`] and require a specific variant.
pub fn load_expecting(dir: &Path, variant: Variant) -> Result<ModelBundle> {
    let m = load(dir)?;
    if m.variant != variant {
        return Err(Error::VariantMismatch {
            expected: variant.to_string(),
            found: m.variant.to_string(),
        });
    }
    Ok(m)
}
