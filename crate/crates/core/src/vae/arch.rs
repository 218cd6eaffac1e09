use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

impl Activation {
    fn layer(self) -> LayerSpec {
        match self {
            Activation::Elu => LayerSpec::Elu,
            Activation::Relu => LayerSpec::Relu,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation {other:?} (elu or relu)"))),
        }
    }
}

/// Encoder/decoder geometry shared by every variant.
///
/// Each encoder stacks one strided 3D conv block per entry of `filters`
/// (spatial stride 2; temporal stride 2 after the first block while depth
/// remains), then a dense head emitting `2·latent_dims` values. The decoder
/// mirrors it with transposed convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub filters: Vec<usize>,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub latent_dims: usize,
    pub activation: Activation,
    pub batchnorm: bool,
}

impl ArchConfig {
    /// Full-size geometry: 120×160 inputs, 32/64/128/256 filters of 5×5.
    pub fn paper(depth: usize, latent_dims: usize) -> Self {
        Self {
            height: 120,
            width: 160,
            depth,
            filters: vec![32, 64, 128, 256],
            spatial_kernel: 5,
            temporal_kernel: 3,
            latent_dims,
            activation: Activation::Elu,
            batchnorm: true,
        }
    }

    /// Reduced geometry for single-core runs: 60×80 inputs, 4/8/16/32 filters.
    pub fn desk(depth: usize, latent_dims: usize) -> Self {
        Self {
            height: 60,
            width: 80,
            filters: vec![4, 8, 16, 32],
            ..Self::paper(depth, latent_dims)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.latent_dims == 0 || self.filters.is_empty() {
            return Err(Error::invalid("depth, latent_dims and filters must be non-zero"));
        }
        if self.spatial_kernel.is_multiple_of(2) || self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::invalid("kernels must have odd size"));
        }
        if self.filters.contains(&0) {
            return Err(Error::invalid("filter counts must be positive"));
        }
        Ok(())
    }

    /// Per-sample encoder input `[1, D, H, W]`.
    pub fn input_shape(&self) -> Vec<usize> {
        vec![1, self.depth, self.height, self.width]
    }

    fn conv_stack(&self) -> Result<Vec<(LayerSpec, [usize; 4])>> {
        let mut shape = self.input_shape();
        let mut out = Vec::new();
        let k = self.spatial_kernel;
        for (i, &f) in self.filters.iter().enumerate() {
            let d = shape[1];
            let kd = if d > 1 { self.temporal_kernel.min(2 * d - 1) } else { 1 };
            let sd = if i > 0 && d > 1 { 2 } else { 1 };
            let conv = LayerSpec::conv3d(shape[0], f, [kd, k, k], [sd, 2, 2], [kd / 2, k / 2, k / 2]);
            let input = [shape[0], shape[1], shape[2], shape[3]];
            shape = conv.output_shape(&shape)?;
            out.push((conv, input));
        }
        Ok(out)
    }

    /// One encoder branch.
    pub fn encoder(&self, name: &str) -> Result<Network> {
        self.validate()?;
        let mut layers = Vec::new();
        for (conv, _) in self.conv_stack()? {
            let f = match conv {
                LayerSpec::Conv3d { filters, .. } => filters,
                _ => unreachable!(),
            };
            layers.push(conv);
            if self.batchnorm {
                layers.push(LayerSpec::Batchnorm { channels: f });
            }
            layers.push(self.activation.layer());
        }
        let flat: usize = self.bottleneck_shape()?.iter().product();
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(flat, 2 * self.latent_dims));
        Network::new(name, self.input_shape(), layers)
    }

    /// Shape `[C, D, H, W]` after the last conv block.
    pub fn bottleneck_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape();
        for (conv, _) in self.conv_stack()? {
            shape = conv.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Decoder from `latent_in` concatenated latent values to
    /// `[out_channels, D, H, W]`.
    pub fn decoder(&self, name: &str, latent_in: usize, out_channels: usize) -> Result<Network> {
        self.validate()?;
        let bottleneck = self.bottleneck_shape()?;
        let flat: usize = bottleneck.iter().product();
        let mut layers = vec![
            LayerSpec::dense(latent_in, flat),
            self.activation.layer(),
            LayerSpec::Reshape {
                shape: bottleneck.clone(),
            },
        ];
        let stack = self.conv_stack()?;
        let mut shape = bottleneck;
        for (i, (conv, target)) in stack.iter().enumerate().rev() {
            let (kernel, stride, padding) = match conv {
                LayerSpec::Conv3d {
                    kernel, stride, padding, ..
                } => (*kernel, *stride, *padding),
                _ => unreachable!(),
            };
            let filters = if i == 0 { out_channels } else { target[0] };
            let mut op = [0; 3];
            for a in 0..3 {
                let base = (shape[a + 1] - 1) * stride[a] + kernel[a];
                let want = target[a + 1] + 2 * padding[a];
                op[a] = want.checked_sub(base).ok_or_else(|| Error::shape("decoder cannot mirror encoder"))?;
            }
            let t = LayerSpec::transposed(shape[0], filters, kernel, stride, padding, op);
            shape = t.output_shape(&shape)?;
            layers.push(t);
            if i > 0 {
                if self.batchnorm {
                    layers.push(LayerSpec::Batchnorm { channels: filters });
                }
                layers.push(self.activation.layer());
            }
        }
        Network::new(name, vec![latent_in], layers)
    }
}
