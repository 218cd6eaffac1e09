use serde::{Deserialize, Serialize};

use super::engine::{Multiplier, QLinear, QNet, QOp};
use super::{round_half_away, Precision, QuantSpec};
use crate::error::{Error, Result};
use crate::flow::{FlowVolume, PriorSpec};
use crate::nn::{LayerSpec, Network, ParamStore, Tensor, BN_EPS};
use crate::vae::{split_head, Activation, ArchConfig, Divergence, Encoded, ModelBundle, Sample, Variant};
use crate::videoio::Frame;

/// Rows per calibration forward pass.
const CALIB_CHUNK: usize = 32;

/// How twin encoder branches are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    /// Both branches advance layer by layer inside one invocation.
    #[default]
    Fused,
    /// One complete invocation per branch.
    Split,
}

impl std::str::FromStr for Execution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Execution::Fused),
            "split" => Ok(Execution::Split),
            other => Err(Error::invalid(format!("unknown execution mode {other:?} (fused or split)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub precision: Precision,
    /// Also quantize the decoder. Latent scoring does not need it.
    pub include_decoder: bool,
}

/// Integer-only counterpart of a trained [`ModelBundle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantModel {
    pub variant: Variant,
    pub arch: ArchConfig,
    pub precision: Precision,
    pub encoders: Vec<QNet>,
    pub decoder: Option<QNet>,
    pub prior_h: PriorSpec,
    pub prior_v: PriorSpec,
    pub divergence: Divergence,
}

impl QuantModel {
    pub fn priors(&self) -> [&PriorSpec; 2] {
        [&self.prior_h, &self.prior_v]
    }

    fn branch_input<'a>(&self, s: &'a Sample, b: usize) -> &'a [f32] {
        match s {
            Sample::Flow(v) if b == 0 => v.h(),
            Sample::Flow(v) => v.v(),
            Sample::Frame(f) => f.data(),
        }
    }

    fn check(&self, s: &Sample) -> Result<()> {
        let a = &self.arch;
        let ok = match s {
            Sample::Flow(v) => self.variant.is_flow() && v.shape() == [a.depth, a.height, a.width],
            Sample::Frame(f) => !self.variant.is_flow() && f.dims() == (a.height, a.width),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("sample does not match the {} input contract", self.variant)))
        }
    }

    pub fn encode(&self, samples: &[Sample], exec: Execution) -> Result<Vec<Encoded>> {
        samples.iter().map(|s| self.encode_one(s, exec)).collect()
    }

    pub fn encode_one(&self, s: &Sample, exec: Execution) -> Result<Encoded> {
        self.check(s)?;
        let outputs: Vec<Vec<f32>> = match exec {
            Execution::Split => self
                .encoders
                .iter()
                .enumerate()
                .map(|(b, net)| net.run(self.branch_input(s, b), self.precision))
                .collect::<Result<_>>()?,
            Execution::Fused => {
                let mut state = self
                    .encoders
                    .iter()
                    .enumerate()
                    .map(|(b, net)| Ok((net.quantize_input(self.branch_input(s, b), self.precision)?, net.input)))
                    .collect::<Result<Vec<_>>>()?;
                let depth = self.encoders[0].ops.len();
                for i in 0..depth {
                    for (net, st) in self.encoders.iter().zip(state.iter_mut()) {
                        let spec = st.1;
                        let q = std::mem::take(&mut st.0);
                        *st = net.step(i, q, spec, self.precision)?;
                    }
                }
                state
                    .into_iter()
                    .map(|(q, spec)| q.iter().map(|&v| spec.dequantize(v) as f32).collect())
                    .collect()
            }
        };
        let h = split_head(&outputs[0])?;
        let v = outputs.get(1).map(|o| split_head(o)).transpose()?;
        Ok(Encoded { h, v })
    }

    /// Integer decoder pass; only available when calibrated with the decoder.
    pub fn decode(&self, z_h: &[f64], z_v: Option<&[f64]>) -> Result<Sample> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::invalid("model was quantized without its decoder"))?;
        let mut z: Vec<f32> = z_h.iter().map(|&x| x as f32).collect();
        if let Some(v) = z_v {
            z.extend(v.iter().map(|&x| x as f32));
        }
        let y = dec.run(&z, self.precision)?;
        let a = &self.arch;
        let plane = a.depth * a.height * a.width;
        if self.variant.is_flow() {
            FlowVolume::from_parts(a.depth, a.height, a.width, y[..plane].to_vec(), y[plane..].to_vec()).map(Sample::Flow)
        } else {
            Frame::new(a.height, a.width, y).map(Sample::Frame)
        }
    }
}

/// Fold eval-mode batchnorm into the preceding linear layer.
pub(crate) fn fold_batchnorm(net: &Network, params: &ParamStore<f32>) -> Result<(Network, ParamStore<f32>)> {
    let layers = net.layers();
    let mut out_layers = Vec::with_capacity(layers.len());
    let mut out_params = ParamStore::new();
    let mut i = 0;
    while i < layers.len() {
        let layer = &layers[i];
        match layer {
            LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::TransposedConv { .. } | LayerSpec::Dense { .. } => {
                let mut w = params.get(&net.param_name(i, "weight"))?.clone();
                let mut b = params.get(&net.param_name(i, "bias"))?.clone();
                if let Some(LayerSpec::Batchnorm { channels }) = layers.get(i + 1) {
                    let get = |f: &str| params.get(&net.param_name(i + 1, f)).map(|t| t.data().to_vec());
                    let (gamma, beta, mean, var) = (get("gamma")?, get("beta")?, get("running_mean")?, get("running_var")?);
                    let s: Vec<f64> = (0..*channels)
                        .map(|c| gamma[c] as f64 / (var[c] as f64 + BN_EPS).sqrt())
                        .collect();
                    let transposed = matches!(layer, LayerSpec::TransposedConv { .. });
                    let wd = w.data_mut();
                    if transposed {
                        let per_in = wd.len() / w_in_channels(layer);
                        let k = per_in / channels;
                        for row in wd.chunks_mut(per_in) {
                            for (c, taps) in row.chunks_mut(k).enumerate() {
                                taps.iter_mut().for_each(|x| *x = (*x as f64 * s[c]) as f32);
                            }
                        }
                    } else {
                        let per_out = wd.len() / channels;
                        for (c, row) in wd.chunks_mut(per_out).enumerate() {
                            row.iter_mut().for_each(|x| *x = (*x as f64 * s[c]) as f32);
                        }
                    }
                    for (c, x) in b.data_mut().iter_mut().enumerate() {
                        *x = ((*x as f64 - mean[c] as f64) * s[c] + beta[c] as f64) as f32;
                    }
                    i += 1;
                }
                let j = out_layers.len();
                out_params.insert(format!("{}.{j}.weight", net.name()), w, false);
                out_params.insert(format!("{}.{j}.bias", net.name()), b, false);
                out_layers.push(layer.clone());
            }
            LayerSpec::Batchnorm { .. } => {
                return Err(Error::invalid(format!("{}: batchnorm at layer {i} has no layer to fold into", net.name())));
            }
            other => out_layers.push(other.clone()),
        }
        i += 1;
    }
    Ok((Network::new(net.name(), net.input_shape().to_vec(), out_layers)?, out_params))
}

fn w_in_channels(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::TransposedConv { in_channels, .. } => *in_channels,
        _ => 1,
    }
}

/// Running min/max of every layer output plus the network input.
struct Ranges {
    input: (f64, f64),
    layers: Vec<(f64, f64)>,
}

fn extend(r: &mut (f64, f64), data: &[f32]) {
    for &x in data {
        let x = x as f64;
        r.0 = r.0.min(x);
        r.1 = r.1.max(x);
    }
}

fn observe_ranges(net: &Network, params: &ParamStore<f32>, batches: &[Tensor<f32>]) -> Result<Ranges> {
    let empty = (f64::INFINITY, f64::NEG_INFINITY);
    let mut r = Ranges {
        input: empty,
        layers: vec![empty; net.layers().len()],
    };
    for x in batches {
        extend(&mut r.input, x.data());
        net.trace(params, x, |i, y| extend(&mut r.layers[i], y.data()))?;
    }
    if !r.input.0.is_finite() || r.layers.iter().any(|l| !l.0.is_finite() || !l.1.is_finite()) {
        return Err(Error::NonFinite(format!("{}: calibration activations", net.name())));
    }
    Ok(r)
}

/// Quantize one BN-folded network from observed activation ranges.
pub(crate) fn quantize_network(
    net: &Network,
    params: &ParamStore<f32>,
    batches: &[Tensor<f32>],
    precision: Precision,
) -> Result<QNet> {
    let ranges = observe_ranges(net, params, batches)?;
    let layers = net.layers();
    let input = QuantSpec::from_range(ranges.input.0, ranges.input.1, precision)?;
    let mut spec = input;
    let mut ops = Vec::new();
    let mut i = 0;
    while i < layers.len() {
        match &layers[i] {
            LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::TransposedConv { .. } | LayerSpec::Dense { .. } => {
                let relu = matches!(layers.get(i + 1), Some(LayerSpec::Relu));
                let obs = if relu { i + 1 } else { i };
                let out = QuantSpec::from_range(ranges.layers[obs].0, ranges.layers[obs].1, precision)?;
                let w = params.get(&net.param_name(i, "weight"))?.data();
                let b = params.get(&net.param_name(i, "bias"))?.data();
                let max_abs = w.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
                let ws = QuantSpec::symmetric(max_abs, precision)?;
                let weight = w.iter().map(|&x| ws.quantize_with(x as f64, precision) as i16).collect();
                let bias_scale = spec.scale * ws.scale;
                let bias: Vec<i64> = b.iter().map(|&x| round_half_away(x as f64 / bias_scale) as i64).collect();
                let name = net.param_name(i, "bias");
                if precision == Precision::Int8 && bias.iter().any(|v| i32::try_from(*v).is_err()) {
                    return Err(Error::AccumulatorOverflow {
                        layer: name,
                        bound: bias.iter().map(|v| v.abs()).max().unwrap_or(0),
                    });
                }
                let lin = QLinear {
                    layer: layers[i].clone(),
                    in_shape: net.shape_at(i).to_vec(),
                    out_shape: net.shape_at(i + 1).to_vec(),
                    input: spec,
                    weight_scale: ws.scale,
                    output: out,
                    multiplier: Multiplier::from_real(bias_scale / out.scale)?,
                    relu,
                    weight,
                    bias,
                };
                check_accumulator(&lin, precision, &name)?;
                ops.push(QOp::Linear(lin));
                spec = out;
                if relu {
                    i += 1;
                }
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => ops.push(QOp::Reshape {
                shape: net.shape_at(i + 1).to_vec(),
            }),
            LayerSpec::Relu => {
                return Err(Error::invalid(format!("{}: relu at layer {i} does not follow a linear layer", net.name())));
            }
            LayerSpec::Elu => {
                return Err(Error::invalid(
                    "ELU has no integer kernel; quantize a model trained with the relu activation",
                ))
            }
            LayerSpec::Batchnorm { .. } => return Err(Error::invalid("batchnorm must be folded before quantization")),
        }
        i += 1;
    }
    Ok(QNet {
        name: net.name().to_string(),
        input_shape: net.input_shape().to_vec(),
        input,
        ops,
    })
}

pub(crate) fn check_accumulator(l: &QLinear, precision: Precision, name: &str) -> Result<()> {
    let bound = l.accumulator_bound(precision);
    let limit = match precision {
        Precision::Int8 => i32::MAX as i64,
        Precision::Int16 => i64::MAX / 2,
    };
    if bound > limit {
        return Err(Error::AccumulatorOverflow {
            layer: name.to_string(),
            bound,
        });
    }
    Ok(())
}

/// Calibrate activation ranges on `typical` and build the integer model.
pub fn calibrate(model: &ModelBundle, typical: &[Sample], cfg: &CalibrationConfig) -> Result<QuantModel> {
    if typical.is_empty() {
        return Err(Error::Empty("calibration set".into()));
    }
    if model.arch.activation == Activation::Elu {
        return Err(Error::invalid(
            "ELU has no integer kernel; quantize a model trained with the relu activation",
        ));
    }
    let refs: Vec<&Sample> = typical.iter().collect();
    let mut per_branch: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); model.branches()];
    for chunk in refs.chunks(CALIB_CHUNK) {
        for (b, t) in model.branch_inputs(chunk)?.into_iter().enumerate() {
            per_branch[b].push(t);
        }
    }
    let mut encoders = Vec::with_capacity(model.branches());
    for (net, batches) in model.encoders.iter().zip(&per_branch) {
        let (folded, params) = fold_batchnorm(net, &model.params)?;
        encoders.push(quantize_network(&folded, &params, batches, cfg.precision)?);
    }
    let decoder = if cfg.include_decoder {
        let enc = model.encode_refs(&refs)?;
        let width = model.latent_dims() * model.branches();
        let rows: Vec<f32> = enc
            .iter()
            .flat_map(|e| e.branches().into_iter().flat_map(|l| l.mu.iter().map(|&x| x as f32)))
            .collect();
        let z = Tensor::new(vec![enc.len(), width], rows)?;
        let (folded, params) = fold_batchnorm(&model.decoder, &model.params)?;
        Some(quantize_network(&folded, &params, &[z], cfg.precision)?)
    } else {
        None
    };
    Ok(QuantModel {
        variant: model.variant,
        arch: model.arch.clone(),
        precision: cfg.precision,
        encoders,
        decoder,
        prior_h: model.prior_h.clone(),
        prior_v: model.prior_v.clone(),
        divergence: model.objective.divergence,
    })
}
