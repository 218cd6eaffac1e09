use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::engine::{QNet, QOp};
use super::model::QuantModel;
use super::Precision;
use crate::error::{Error, Result};

pub const QUANT_MAGIC: &[u8; 4] = b"NNQ1";
const FORMAT_VERSION: u32 = 1;

/// One row of the tensor table. Activation specs carry no data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QTensorEntry {
    name: String,
    scale: f64,
    zero_point: i32,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: QuantModel,
    tensors: Vec<QTensorEntry>,
    sha256: String,
}

fn linear_names(net: &QNet) -> impl Iterator<Item = (usize, String)> + '_ {
    net.ops.iter().enumerate().filter_map(|(k, op)| match op {
        QOp::Linear(_) => Some((k, format!("{}.{k}", net.name))),
        QOp::Reshape { .. } => None,
    })
}

fn nets(qm: &QuantModel) -> impl Iterator<Item = &QNet> {
    qm.encoders.iter().chain(qm.decoder.as_ref())
}

/// Write `NNQ1`, a length-prefixed structured-text header with the tensor
/// table, and the raw little-endian integer blobs.
pub fn save_quant(qm: &QuantModel, path: &Path) -> Result<()> {
    let (wt, bt, wsize, bsize) = match qm.precision {
        Precision::Int8 => ("i8", "i32", 1, 4),
        Precision::Int16 => ("i16", "i64", 2, 8),
    };
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for net in nets(qm) {
        tensors.push(QTensorEntry {
            name: format!("{}.input", net.name),
            scale: net.input.scale,
            zero_point: net.input.zero_point,
            dtype: "activation".into(),
            offset: blob.len(),
            len: 0,
        });
        for (k, name) in linear_names(net) {
            let QOp::Linear(l) = &net.ops[k] else { unreachable!() };
            tensors.push(QTensorEntry {
                name: format!("{name}.weight"),
                scale: l.weight_scale,
                zero_point: 0,
                dtype: wt.into(),
                offset: blob.len(),
                len: l.weight.len(),
            });
            for &w in &l.weight {
                blob.extend_from_slice(&w.to_le_bytes()[..wsize]);
            }
            tensors.push(QTensorEntry {
                name: format!("{name}.bias"),
                scale: l.input.scale * l.weight_scale,
                zero_point: 0,
                dtype: bt.into(),
                offset: blob.len(),
                len: l.bias.len(),
            });
            for &b in &l.bias {
                blob.extend_from_slice(&b.to_le_bytes()[..bsize]);
            }
            tensors.push(QTensorEntry {
                name: format!("{name}.output"),
                scale: l.output.scale,
                zero_point: l.output.zero_point,
                dtype: "activation".into(),
                offset: blob.len(),
                len: 0,
            });
        }
    }
    let header = Header {
        version: FORMAT_VERSION,
        model: qm.clone(),
        tensors,
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    let text = serde_json::to_vec_pretty(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::with_capacity(8 + text.len() + blob.len());
    out.extend_from_slice(QUANT_MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&blob);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_quant(path: &Path) -> Result<QuantModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != QUANT_MAGIC {
        return Err(Error::format(path, "missing NNQ1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let text = bytes.get(8..8 + n).ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(text).map_err(|e| Error::format(path, e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION.to_string(),
            found: header.version.to_string(),
        });
    }
    let blob = &bytes[8 + n..];
    if hex::encode(Sha256::digest(blob)) != header.sha256 {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let mut qm = header.model;
    let (wsize, bsize) = match qm.precision {
        Precision::Int8 => (1, 4),
        Precision::Int16 => (2, 8),
    };
    let table: std::collections::HashMap<&str, &QTensorEntry> =
        header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let lookup = |name: &str| -> Result<&QTensorEntry> {
        table
            .get(name)
            .copied()
            .ok_or_else(|| Error::format(path, format!("tensor {name} missing from table")))
    };
    let slice = |t: &QTensorEntry, size: usize| -> Result<&[u8]> {
        blob.get(t.offset..t.offset + t.len * size)
            .ok_or_else(|| Error::format(path, format!("tensor {} out of bounds", t.name)))
    };
    let mut all: Vec<&mut QNet> = qm.encoders.iter_mut().collect();
    if let Some(d) = qm.decoder.as_mut() {
        all.push(d);
    }
    for net in all {
        let prefix = net.name.clone();
        for (k, op) in net.ops.iter_mut().enumerate() {
            let QOp::Linear(l) = op else { continue };
            let w = lookup(&format!("{prefix}.{k}.weight"))?;
            let b = lookup(&format!("{prefix}.{k}.bias"))?;
            l.weight = slice(w, wsize)?
                .chunks(wsize)
                .map(|c| if wsize == 1 { c[0] as i8 as i16 } else { i16::from_le_bytes([c[0], c[1]]) })
                .collect();
            l.bias = slice(b, bsize)?
                .chunks(bsize)
                .map(|c| {
                    if bsize == 4 {
                        i32::from_le_bytes(c.try_into().expect("4 bytes")) as i64
                    } else {
                        i64::from_le_bytes(c.try_into().expect("8 bytes"))
                    }
                })
                .collect();
            if w.scale != l.weight_scale {
                return Err(Error::format(path, format!("scale table disagrees for {}", w.name)));
            }
        }
    }
    Ok(qm)
}
