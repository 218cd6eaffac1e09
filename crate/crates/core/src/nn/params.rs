use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"NNP1";

/// A named parameter with its Adam state.
#[derive(Clone, Debug)]
pub struct Param<T: Real = f32> {
    pub value: Tensor<T>,
    pub trainable: bool,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>, trainable: bool) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self {
            value,
            trainable,
            m,
            v,
            step: 0,
        }
    }
}

/// Gradients keyed by parameter name.
pub type Grads<T = f32> = BTreeMap<String, Tensor<T>>;

/// Named parameter tensors with per-parameter optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    params: BTreeMap<String, Param<T>>,
}

/// One row of the serialized parameter manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub trainable: bool,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) {
        self.params.insert(name.into(), Param::new(value, trainable));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Merge another store; names must not collide.
    pub fn extend(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, v) in other.params {
            if self.params.contains_key(&k) {
                return Err(Error::invalid(format!("duplicate parameter {k}")));
            }
            self.params.insert(k, v);
        }
        Ok(())
    }

    /// Same values in another precision; optimizer state is reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param::new(p.value.cast(), p.trainable)))
                .collect(),
        }
    }

    /// Zero-filled gradient map for every trainable parameter.
    pub fn zero_grads(&self) -> Grads<T> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.value.shape())))
            .collect()
    }

    /// Serialize values as a manifest plus an `NNP1` little-endian f32 blob.
    pub fn to_blob(&self) -> (Vec<TensorEntry>, Vec<u8>) {
        let mut blob = PARAM_MAGIC.to_vec();
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, p) in &self.params {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
                dtype: "f32".into(),
                offset: blob.len(),
                trainable: p.trainable,
            });
            for &x in p.value.data() {
                blob.extend_from_slice(&(x.f64() as f32).to_le_bytes());
            }
        }
        (entries, blob)
    }

    pub fn from_blob(entries: &[TensorEntry], blob: &[u8], path: &Path) -> Result<Self> {
        if blob.len() < 4 || &blob[..4] != PARAM_MAGIC {
            return Err(Error::format(path, "missing NNP1 magic"));
        }
        let mut store = Self::new();
        for e in entries {
            if e.dtype != "f32" {
                return Err(Error::format(path, format!("unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(n * 4).filter(|&end| end <= blob.len());
            let end = end.ok_or_else(|| Error::format(path, format!("tensor {} out of range", e.name)))?;
            let data = blob[e.offset..end]
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?, e.trainable);
        }
        Ok(store)
    }
}

/// Uniform initialiser: weights in ±sqrt(3 / fan_in) (unit-variance
/// preserving), biases in ±1/sqrt(fan_in).
pub fn init_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, is_weight: bool, rng: &mut R) -> Tensor<T> {
    let fan = fan_in.max(1) as f64;
    let bound = if is_weight { (3.0 / fan).sqrt() } else { 1.0 / fan.sqrt() };
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}
