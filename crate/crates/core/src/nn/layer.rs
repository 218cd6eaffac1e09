use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a sequential network. Shapes are per sample (no batch axis):
/// conv3d and transposed-conv take `[C, D, H, W]`, conv2d takes `[C, H, W]`,
/// dense takes `[F]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        filters: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
    /// Transposed 3D convolution. `output_padding` adds extra trailing rows so
    /// that the output can exactly mirror a strided convolution.
    TransposedConv {
        in_channels: usize,
        filters: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        output_padding: [usize; 3],
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Elu,
    Relu,
    Batchnorm {
        channels: usize,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

/// Geometry of a direct convolution from `input` to `output` spatial dims.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_volume(&self) -> usize {
        self.output.iter().product()
    }
}

fn check_hyper(kernel: &[usize; 3], stride: &[usize; 3]) -> Result<()> {
    if stride.contains(&0) {
        return Err(Error::invalid("conv stride must be >= 1"));
    }
    if kernel.contains(&0) {
        return Err(Error::invalid("conv kernel must be >= 1"));
    }
    Ok(())
}

/// Geometry of a forward convolution over `input` dims.
pub fn conv_geometry(
    in_channels: usize,
    out_channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<ConvGeom> {
    check_hyper(&kernel, &stride)?;
    let mut output = [0; 3];
    for i in 0..3 {
        let padded = input[i] + 2 * padding[i];
        if padded < kernel[i] {
            return Err(Error::shape(format!(
                "kernel {kernel:?} does not fit padded input {input:?} (padding {padding:?})"
            )));
        }
        output[i] = (padded - kernel[i]) / stride[i] + 1;
    }
    Ok(ConvGeom {
        in_channels,
        out_channels,
        input,
        output,
        kernel,
        stride,
        padding,
    })
}

/// Geometry of a transposed convolution, expressed as the direct
/// convolution it is the adjoint of: that convolution maps the transposed
/// conv's output (`filters` channels) back to its input.
pub fn transposed_geometry(
    in_channels: usize,
    filters: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    output_padding: [usize; 3],
) -> Result<ConvGeom> {
    check_hyper(&kernel, &stride)?;
    let mut output = [0; 3];
    for i in 0..3 {
        if output_padding[i] >= stride[i] {
            return Err(Error::invalid("output padding must be smaller than stride"));
        }
        let full = (input[i] - 1) * stride[i] + kernel[i] + output_padding[i];
        if input[i] == 0 || full <= 2 * padding[i] {
            return Err(Error::shape(format!(
                "transposed conv on {input:?} with padding {padding:?} yields an empty output"
            )));
        }
        output[i] = full - 2 * padding[i];
    }
    let g = conv_geometry(filters, in_channels, output, kernel, stride, padding)?;
    if g.output != input {
        return Err(Error::shape("transposed conv geometry is not invertible"));
    }
    Ok(g)
}

fn expect_rank(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(format!(
            "{what} expects a rank-{rank} sample, got {shape:?}"
        )));
    }
    Ok(())
}

fn expect_channels(found: usize, expected: usize, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::shape(format!(
            "{what} expects {expected} channels, got {found}"
        )));
    }
    Ok(())
}

impl LayerSpec {
    pub fn conv3d(in_channels: usize, filters: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self::Conv3d {
            in_channels,
            filters,
            kernel,
            stride,
            padding,
        }
    }

    pub fn transposed(
        in_channels: usize,
        filters: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        output_padding: [usize; 3],
    ) -> Self {
        Self::TransposedConv {
            in_channels,
            filters,
            kernel,
            stride,
            padding,
            output_padding,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        Self::Dense {
            in_features,
            out_features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Conv3d { .. } => "conv3d",
            Self::Conv2d { .. } => "conv2d",
            Self::TransposedConv { .. } => "transposed-conv",
            Self::Dense { .. } => "dense",
            Self::Elu => "elu",
            Self::Relu => "relu",
            Self::Batchnorm { .. } => "batchnorm",
            Self::Flatten => "flatten",
            Self::Reshape { .. } => "reshape",
        }
    }

    /// Convolution geometry for conv-like layers given the per-sample input shape.
    pub fn geometry(&self, input: &[usize]) -> Result<Option<ConvGeom>> {
        match *self {
            Self::Conv3d {
                in_channels,
                filters,
                kernel,
                stride,
                padding,
            } => {
                expect_rank(input, 4, "conv3d")?;
                expect_channels(input[0], in_channels, "conv3d")?;
                conv_geometry(
                    in_channels,
                    filters,
                    [input[1], input[2], input[3]],
                    kernel,
                    stride,
                    padding,
                )
                .map(Some)
            }
            Self::Conv2d {
                in_channels,
                filters,
                kernel,
                stride,
                padding,
            } => {
                expect_rank(input, 3, "conv2d")?;
                expect_channels(input[0], in_channels, "conv2d")?;
                conv_geometry(
                    in_channels,
                    filters,
                    [1, input[1], input[2]],
                    [1, kernel[0], kernel[1]],
                    [1, stride[0], stride[1]],
                    [0, padding[0], padding[1]],
                )
                .map(Some)
            }
            Self::TransposedConv {
                in_channels,
                filters,
                kernel,
                stride,
                padding,
                output_padding,
            } => {
                expect_rank(input, 4, "transposed-conv")?;
                expect_channels(input[0], in_channels, "transposed-conv")?;
                transposed_geometry(
                    in_channels,
                    filters,
                    [input[1], input[2], input[3]],
                    kernel,
                    stride,
                    padding,
                    output_padding,
                )
                .map(Some)
            }
            _ => Ok(None),
        }
    }

    /// Per-sample output shape, rejecting incompatible inputs.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.is_empty() || input.contains(&0) {
            return Err(Error::shape(format!("degenerate input shape {input:?}")));
        }
        match self {
            Self::Conv3d { filters, .. } => {
                let g = self.geometry(input)?.expect("conv geometry");
                Ok(vec![*filters, g.output[0], g.output[1], g.output[2]])
            }
            Self::Conv2d { filters, .. } => {
                let g = self.geometry(input)?.expect("conv geometry");
                Ok(vec![*filters, g.output[1], g.output[2]])
            }
            Self::TransposedConv { filters, .. } => {
                let g = self.geometry(input)?.expect("conv geometry");
                Ok(vec![*filters, g.input[0], g.input[1], g.input[2]])
            }
            Self::Dense {
                in_features,
                out_features,
            } => {
                expect_rank(input, 1, "dense")?;
                if input[0] != *in_features {
                    return Err(Error::shape(format!(
                        "dense expects {in_features} features, got {}",
                        input[0]
                    )));
                }
                Ok(vec![*out_features])
            }
            Self::Elu | Self::Relu => Ok(input.to_vec()),
            Self::Batchnorm { channels } => {
                expect_channels(input[0], *channels, "batchnorm")?;
                Ok(input.to_vec())
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Reshape { shape } => {
                let n: usize = shape.iter().product();
                if n != input.iter().product::<usize>() || shape.contains(&0) {
                    return Err(Error::shape(format!(
                        "cannot reshape {input:?} into {shape:?}"
                    )));
                }
                Ok(shape.clone())
            }
        }
    }

    /// Names and shapes of the parameters this layer owns, plus whether each
    /// is trainable (running statistics are not).
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>, bool)> {
        match *self {
            Self::Conv3d {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("weight", vec![filters, in_channels, kernel[0], kernel[1], kernel[2]], true),
                ("bias", vec![filters], true),
            ],
            Self::Conv2d {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("weight", vec![filters, in_channels, kernel[0], kernel[1]], true),
                ("bias", vec![filters], true),
            ],
            Self::TransposedConv {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("weight", vec![in_channels, filters, kernel[0], kernel[1], kernel[2]], true),
                ("bias", vec![filters], true),
            ],
            Self::Dense {
                in_features,
                out_features,
            } => vec![
                ("weight", vec![out_features, in_features], true),
                ("bias", vec![out_features], true),
            ],
            Self::Batchnorm { channels } => vec![
                ("gamma", vec![channels], true),
                ("beta", vec![channels], true),
                ("running_mean", vec![channels], false),
                ("running_var", vec![channels], false),
            ],
            _ => Vec::new(),
        }
    }

    /// Number of inputs feeding each weight, used for initialisation bounds.
    pub fn fan_in(&self) -> usize {
        match *self {
            Self::Conv3d {
                in_channels, kernel, ..
            } => in_channels * kernel.iter().product::<usize>(),
            Self::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel.iter().product::<usize>(),
            Self::TransposedConv {
                in_channels,
                kernel,
                stride,
                ..
            } => {
                let k: usize = kernel.iter().product();
                let s: usize = stride.iter().product();
                (in_channels * k / s).max(1)
            }
            Self::Dense { in_features, .. } => in_features,
            _ => 1,
        }
    }

    /// Multiply-accumulate count per sample, for reporting.
    pub fn macs(&self, input: &[usize]) -> usize {
        match self.geometry(input) {
            Ok(Some(g)) => g.in_channels * g.out_channels * g.kernel_volume() * g.output_volume(),
            _ => match *self {
                Self::Dense {
                    in_features,
                    out_features,
                } => in_features * out_features,
                _ => 0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv3d_shapes() {
        let l = LayerSpec::conv3d(1, 4, [3, 5, 5], [1, 2, 2], [1, 2, 2]);
        assert_eq!(l.output_shape(&[1, 6, 60, 80]).unwrap(), vec![4, 6, 30, 40]);
        let l = LayerSpec::conv3d(4, 8, [3, 5, 5], [2, 2, 2], [1, 2, 2]);
        assert_eq!(l.output_shape(&[4, 6, 30, 40]).unwrap(), vec![8, 3, 15, 20]);
    }

    #[test]
    fn transposed_mirrors_conv() {
        let conv = LayerSpec::conv3d(4, 8, [3, 5, 5], [2, 2, 2], [1, 2, 2]);
        let out = conv.output_shape(&[4, 6, 30, 40]).unwrap();
        let t = LayerSpec::transposed(8, 4, [3, 5, 5], [2, 2, 2], [1, 2, 2], [1, 1, 1]);
        assert_eq!(t.output_shape(&out).unwrap(), vec![4, 6, 30, 40]);
    }

    #[test]
    fn rejects_bad_compositions() {
        let l = LayerSpec::conv3d(2, 4, [3, 3, 3], [1, 1, 1], [0, 0, 0]);
        assert!(l.output_shape(&[1, 4, 4, 4]).is_err());
        assert!(l.output_shape(&[2, 2, 4, 4]).is_err());
        assert!(l.output_shape(&[2, 4, 4]).is_err());
        let z = LayerSpec::conv3d(2, 4, [3, 3, 3], [0, 1, 1], [0, 0, 0]);
        assert!(z.output_shape(&[2, 4, 4, 4]).is_err());
        assert!(LayerSpec::dense(3, 2).output_shape(&[4]).is_err());
        assert!(LayerSpec::Reshape { shape: vec![2, 3] }.output_shape(&[5]).is_err());
        assert!(LayerSpec::Batchnorm { channels: 3 }.output_shape(&[2, 5]).is_err());
    }

    #[test]
    fn serde_uses_kind_tags() {
        let l = LayerSpec::dense(3, 2);
        let s = serde_json::to_string(&l).unwrap();
        assert!(s.contains("\"kind\":\"dense\""));
        let back: LayerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        let t: LayerSpec = serde_json::from_str(r#"{"kind":"transposed-conv","in_channels":2,"filters":1,"kernel":[1,3,3],"stride":[1,2,2],"padding":[0,1,1],"output_padding":[0,1,1]}"#).unwrap();
        assert_eq!(t.kind(), "transposed-conv");
    }
}
