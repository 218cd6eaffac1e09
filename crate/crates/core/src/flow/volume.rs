use std::io::{Read, Write};

use super::{estimate_flow, FlowField, FlowParams};
use crate::error::{Error, Result};
use crate::videoio::FrameSequence;

/// Magic bytes opening a serialized volume.
pub const VOLUME_MAGIC: &[u8; 4] = b"OFV1";

/// `depth` consecutive flow fields stacked into horizontal and vertical
/// `D×H×W` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowVolume {
    depth: usize,
    height: usize,
    width: usize,
    h: Vec<f32>,
    v: Vec<f32>,
}

impl FlowVolume {
    pub fn zeros(depth: usize, height: usize, width: usize) -> Self {
        let n = depth * height * width;
        Self {
            depth,
            height,
            width,
            h: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn from_parts(depth: usize, height: usize, width: usize, h: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = depth * height * width;
        if h.len() != n || v.len() != n {
            return Err(Error::shape(format!(
                "volume {depth}x{height}x{width} needs {n} values per direction"
            )));
        }
        Ok(Self {
            depth,
            height,
            width,
            h,
            v,
        })
    }

    /// Stack flow fields in order.
    pub fn from_fields(fields: &[FlowField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Empty("no flow fields to stack".into()))?;
        let (height, width) = (first.height(), first.width());
        let mut h = Vec::with_capacity(fields.len() * height * width);
        let mut v = Vec::with_capacity(h.capacity());
        for f in fields {
            if (f.height(), f.width()) != (height, width) {
                return Err(Error::DimensionMismatch {
                    expected: vec![height, width],
                    found: vec![f.height(), f.width()],
                });
            }
            h.extend_from_slice(f.u());
            v.extend_from_slice(f.v());
        }
        Ok(Self {
            depth: fields.len(),
            height,
            width,
            h,
            v,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[depth, height, width]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn h(&self) -> &[f32] {
        &self.h
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(VOLUME_MAGIC)?;
        for dim in [self.depth, self.height, self.width] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for x in self.h.iter().chain(&self.v) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.h.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("<volume>", "truncated header"))?;
        if &header[..4] != VOLUME_MAGIC {
            return Err(Error::Version {
                expected: "OFV1".into(),
                found: String::from_utf8_lossy(&header[..4]).into_owned(),
            });
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (depth, height, width) = (dim(0), dim(1), dim(2));
        let n = depth
            .checked_mul(height)
            .and_then(|x| x.checked_mul(width))
            .ok_or_else(|| Error::format("<volume>", "dimensions overflow"))?;
        let mut raw = vec![0u8; 8 * n];
        r.read_exact(&mut raw)
            .map_err(|_| Error::format("<volume>", "truncated payload"))?;
        let floats: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (h, v) = floats.split_at(n);
        Self::from_parts(depth, height, width, h.to_vec(), v.to_vec())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

/// Flow between every consecutive frame pair of a sequence.
pub fn sequence_flows(seq: &FrameSequence, params: &FlowParams) -> Result<Vec<FlowField>> {
    seq.frames()
        .windows(2)
        .map(|pair| estimate_flow(&pair[0], &pair[1], params))
        .collect()
}

/// Volume whose slice `d` is the flow from frame `t + d` to frame `t + d + 1`.
pub fn build_volume(seq: &FrameSequence, t: usize, depth: usize, params: &FlowParams) -> Result<FlowVolume> {
    if depth == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if t + depth >= seq.len() {
        return Err(Error::invalid(format!(
            "window [{t}, {}] exceeds sequence of {} frames",
            t + depth,
            seq.len()
        )));
    }
    let fields = (t..t + depth)
        .map(|i| estimate_flow(seq.frame(i), seq.frame(i + 1), params))
        .collect::<Result<Vec<_>>>()?;
    FlowVolume::from_fields(&fields)
}
