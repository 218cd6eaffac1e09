use rand::Rng;

use super::conv;
use super::layer::{ConvGeom, LayerSpec};
use super::params::{init_uniform, Grads, ParamStore};
use super::real::{matmul, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A sequential stack of layers with a fixed per-sample input shape.
///
/// Parameters live in a [`ParamStore`] under `"{name}.{layer}.{field}"`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
}

enum Cache<T: Real> {
    None,
    Input(Tensor<T>),
    Norm { xhat: Vec<T>, inv_std: Vec<T> },
}

/// Batch statistics to fold into the running averages after a training step.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Real> {
    pub mean_name: String,
    pub var_name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Everything backward needs from a forward pass.
pub struct Tape<T: Real = f32> {
    net: String,
    batch: usize,
    mode: Mode,
    caches: Vec<Cache<T>>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Real> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }
}

impl<T: Real> ParamStore<T> {
    /// Fold a training tape's batch statistics into the running averages.
    pub fn commit_running_stats(&mut self, tape: &Tape<T>) -> Result<()> {
        let m = T::of(BN_MOMENTUM);
        for u in &tape.bn_updates {
            for (name, stats) in [(&u.mean_name, &u.mean), (&u.var_name, &u.var)] {
                let t = self.get_mut(name)?;
                for (r, &s) in t.data_mut().iter_mut().zip(stats) {
                    *r = (T::one() - m) * *r + m * s;
                }
            }
        }
        Ok(())
    }
}

impl Network {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains('.') {
            return Err(Error::invalid("network name must be non-empty and dot-free"));
        }
        let mut shapes = vec![input_shape];
        for (i, l) in layers.iter().enumerate() {
            let next = l
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::shape(format!("{name} layer {i} ({}): {e}", l.kind())))?;
            shapes.push(next);
        }
        Ok(Self {
            name,
            layers,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Per-sample input shape of layer `i` (`i == len` gives the output).
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn param_name(&self, layer: usize, field: &str) -> String {
        format!("{}.{layer}.{field}", self.name)
    }

    /// Multiply-accumulates per sample.
    pub fn macs(&self) -> usize {
        self.layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, s)| l.macs(s))
            .sum()
    }

    /// Fresh seeded parameters: fan-in uniform weights, unit BatchNorm.
    pub fn init_params<T: Real, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (field, shape, trainable) in l.param_shapes() {
                let value = match field {
                    "weight" | "bias" => init_uniform(&shape, l.fan_in(), field == "weight", rng),
                    "gamma" | "running_var" => Tensor::full(&shape, T::one()),
                    _ => Tensor::zeros(&shape),
                };
                store.insert(self.param_name(i, field), value, trainable);
            }
        }
        store
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != self.shapes[0].len() + 1 || shape[1..] != self.shapes[0][..] || shape[0] == 0 {
            return Err(Error::shape(format!(
                "{} expects [N, {:?}], got {shape:?}",
                self.name, self.shapes[0]
            )));
        }
        Ok(shape[0])
    }

    fn param<'a, T: Real>(&self, params: &'a ParamStore<T>, i: usize, field: &str, shape: &[usize]) -> Result<&'a Tensor<T>> {
        let name = self.param_name(i, field);
        let t = params.get(&name)?;
        if t.shape() != shape {
            return Err(Error::shape(format!(
                "parameter {name} has shape {:?}, layer expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    fn batched(&self, n: usize, i: usize) -> Vec<usize> {
        let mut s = vec![n];
        s.extend_from_slice(&self.shapes[i]);
        s
    }

    pub fn forward<T: Real>(&self, params: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tape<T>)> {
        self.run(params, x, mode, true, &mut |_, _| {})
    }

    /// Forward pass without recording a tape.
    pub fn infer<T: Real>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(params, x, Mode::Eval, false, &mut |_, _| {}).map(|(y, _)| y)
    }

    /// Eval-mode forward that hands every layer's output to `observe`.
    pub fn trace<T: Real>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        mut observe: impl FnMut(usize, &Tensor<T>),
    ) -> Result<Tensor<T>> {
        self.run(params, x, Mode::Eval, false, &mut observe).map(|(y, _)| y)
    }

    fn run<T: Real>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
        record: bool,
        observe: &mut dyn FnMut(usize, &Tensor<T>),
    ) -> Result<(Tensor<T>, Tape<T>)> {
        let n = self.check_input(x)?;
        let mut tape = Tape {
            net: self.name.clone(),
            batch: n,
            mode,
            caches: Vec::with_capacity(self.layers.len()),
            bn_updates: Vec::new(),
        };
        let mut cur = x.clone();
        let mut cols = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_shape = self.batched(n, i + 1);
            let (next, cache) = match layer {
                LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::TransposedConv { .. } => {
                    let g = layer.geometry(&self.shapes[i])?.expect("conv geometry");
                    let shapes = layer.param_shapes();
                    let w = self.param(params, i, "weight", &shapes[0].1)?;
                    let b = self.param(params, i, "bias", &shapes[1].1)?;
                    let mut y = Tensor::zeros(&out_shape);
                    let out_len = y.sample_len();
                    let transposed = matches!(layer, LayerSpec::TransposedConv { .. });
                    for s in 0..n {
                        let ys = &mut y.data_mut()[s * out_len..(s + 1) * out_len];
                        if transposed {
                            conv::transposed_forward(cur.sample(s), w.data(), b.data(), &g, &mut cols, ys);
                        } else {
                            conv::conv_forward(cur.sample(s), w.data(), b.data(), &g, &mut cols, ys);
                        }
                    }
                    (y, Cache::Input(cur))
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let w = self.param(params, i, "weight", &[*out_features, *in_features])?;
                    let b = self.param(params, i, "bias", &[*out_features])?;
                    let mut y = Tensor::zeros(&out_shape);
                    matmul(cur.data(), false, w.data(), true, y.data_mut(), n, *in_features, *out_features, false);
                    for row in y.data_mut().chunks_mut(*out_features) {
                        for (v, &bb) in row.iter_mut().zip(b.data()) {
                            *v = *v + bb;
                        }
                    }
                    (y, Cache::Input(cur))
                }
                LayerSpec::Elu => {
                    let y = cur.map(|v| if v > T::zero() { v } else { v.exp() - T::one() });
                    (y, Cache::Input(cur))
                }
                LayerSpec::Relu => {
                    let y = cur.map(|v| if v > T::zero() { v } else { T::zero() });
                    (y, Cache::Input(cur))
                }
                LayerSpec::Batchnorm { channels } => {
                    let c = *channels;
                    let gamma = self.param(params, i, "gamma", &[c])?;
                    let beta = self.param(params, i, "beta", &[c])?;
                    let plane = cur.sample_len() / c;
                    let count = n * plane;
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let (mean, var) = channel_moments(&cur, c, plane);
                            let unbiased = if count > 1 {
                                let k = T::of(count as f64 / (count - 1) as f64);
                                var.iter().map(|&v| v * k).collect()
                            } else {
                                var.clone()
                            };
                            tape.bn_updates.push(BnUpdate {
                                mean_name: self.param_name(i, "running_mean"),
                                var_name: self.param_name(i, "running_var"),
                                mean: mean.clone(),
                                var: unbiased,
                            });
                            (mean, var)
                        }
                        Mode::Eval => (
                            self.param(params, i, "running_mean", &[c])?.data().to_vec(),
                            self.param(params, i, "running_var", &[c])?.data().to_vec(),
                        ),
                    };
                    let eps = T::of(BN_EPS);
                    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                    let mut xhat = cur.into_data();
                    let mut y = Vec::with_capacity(xhat.len());
                    for (j, chunk) in xhat.chunks_mut(plane).enumerate() {
                        let ch = j % c;
                        for v in chunk.iter_mut() {
                            *v = (*v - mean[ch]) * inv_std[ch];
                            y.push(gamma.data()[ch] * *v + beta.data()[ch]);
                        }
                    }
                    (Tensor::new(out_shape, y)?, Cache::Norm { xhat, inv_std })
                }
                LayerSpec::Flatten | LayerSpec::Reshape { .. } => (cur.reshape(out_shape)?, Cache::None),
            };
            if record {
                tape.caches.push(cache);
            }
            observe(i, &next);
            cur = next;
        }
        Ok((cur, tape))
    }

    /// Gradients of all trainable parameters and of the input.
    pub fn backward<T: Real>(&self, params: &ParamStore<T>, tape: &Tape<T>, dy: &Tensor<T>) -> Result<(Grads<T>, Tensor<T>)> {
        let (g, dx) = self.backprop(params, tape, dy, true)?;
        Ok((g, dx.expect("input gradient requested")))
    }

    /// Like [`Network::backward`] but skips the input gradient of the first layer.
    pub fn backward_params<T: Real>(&self, params: &ParamStore<T>, tape: &Tape<T>, dy: &Tensor<T>) -> Result<Grads<T>> {
        self.backprop(params, tape, dy, false).map(|(g, _)| g)
    }

    fn backprop<T: Real>(
        &self,
        params: &ParamStore<T>,
        tape: &Tape<T>,
        dy: &Tensor<T>,
        want_dx: bool,
    ) -> Result<(Grads<T>, Option<Tensor<T>>)> {
        if tape.net != self.name || tape.caches.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "tape from {} does not match network {}",
                tape.net, self.name
            )));
        }
        let n = tape.batch;
        if dy.shape() != self.batched(n, self.layers.len()).as_slice() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match network output [N={n}, {:?}]",
                dy.shape(),
                self.output_shape()
            )));
        }
        let mut grads = Grads::new();
        let mut cur = dy.clone();
        let mut cols = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let in_shape = self.batched(n, i);
            let need_dx = want_dx || i > 0;
            let cache = &tape.caches[i];
            let next = match (layer, cache) {
                (LayerSpec::Conv3d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::TransposedConv { .. }, Cache::Input(x)) => {
                    let g: ConvGeom = layer.geometry(&self.shapes[i])?.expect("conv geometry");
                    let shapes = layer.param_shapes();
                    let w = self.param(params, i, "weight", &shapes[0].1)?;
                    let mut dw = Tensor::zeros(&shapes[0].1);
                    let mut db = Tensor::zeros(&shapes[1].1);
                    let mut dx = Tensor::zeros(&in_shape);
                    let in_len = dx.sample_len();
                    let transposed = matches!(layer, LayerSpec::TransposedConv { .. });
                    for s in 0..n {
                        let dxs = need_dx.then(|| &mut dx.data_mut()[s * in_len..(s + 1) * in_len]);
                        let f = if transposed {
                            conv::transposed_backward::<T>
                        } else {
                            conv::conv_backward::<T>
                        };
                        f(x.sample(s), w.data(), cur.sample(s), &g, &mut cols, dw.data_mut(), db.data_mut(), dxs);
                    }
                    grads.insert(self.param_name(i, "weight"), dw);
                    grads.insert(self.param_name(i, "bias"), db);
                    dx
                }
                (LayerSpec::Dense { in_features, out_features }, Cache::Input(x)) => {
                    let (fi, fo) = (*in_features, *out_features);
                    let w = self.param(params, i, "weight", &[fo, fi])?;
                    let mut dw = Tensor::zeros(&[fo, fi]);
                    matmul(cur.data(), true, x.data(), false, dw.data_mut(), fo, n, fi, false);
                    let mut db = Tensor::zeros(&[fo]);
                    for row in cur.data().chunks(fo) {
                        for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    let mut dx = Tensor::zeros(&in_shape);
                    if need_dx {
                        matmul(cur.data(), false, w.data(), false, dx.data_mut(), n, fo, fi, false);
                    }
                    grads.insert(self.param_name(i, "weight"), dw);
                    grads.insert(self.param_name(i, "bias"), db);
                    dx
                }
                (LayerSpec::Elu, Cache::Input(x)) => {
                    let data = x
                        .data()
                        .iter()
                        .zip(cur.data())
                        .map(|(&v, &g)| if v >= T::zero() { g } else { g * v.exp() })
                        .collect();
                    Tensor::new(in_shape, data)?
                }
                (LayerSpec::Relu, Cache::Input(x)) => {
                    let data = x
                        .data()
                        .iter()
                        .zip(cur.data())
                        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    Tensor::new(in_shape, data)?
                }
                (LayerSpec::Batchnorm { channels }, Cache::Norm { xhat, inv_std }) => {
                    let c = *channels;
                    let gamma = self.param(params, i, "gamma", &[c])?;
                    let plane = cur.sample_len() / c;
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    let mut sum_dxhat = vec![T::zero(); c];
                    let mut sum_dxhat_xhat = vec![T::zero(); c];
                    for (j, (gy, xh)) in cur.data().chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                        let ch = j % c;
                        for (&g, &h) in gy.iter().zip(xh) {
                            dgamma[ch] = dgamma[ch] + g * h;
                            dbeta[ch] = dbeta[ch] + g;
                        }
                    }
                    for ch in 0..c {
                        sum_dxhat[ch] = dbeta[ch] * gamma.data()[ch];
                        sum_dxhat_xhat[ch] = dgamma[ch] * gamma.data()[ch];
                    }
                    let count = T::of((n * plane) as f64);
                    let mut dx = Vec::with_capacity(cur.len());
                    for (j, (gy, xh)) in cur.data().chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                        let ch = j % c;
                        let gm = gamma.data()[ch];
                        for (&g, &h) in gy.iter().zip(xh) {
                            let dxhat = g * gm;
                            let v = match tape.mode {
                                Mode::Train => {
                                    inv_std[ch] / count * (count * dxhat - sum_dxhat[ch] - h * sum_dxhat_xhat[ch])
                                }
                                Mode::Eval => dxhat * inv_std[ch],
                            };
                            dx.push(v);
                        }
                    }
                    grads.insert(self.param_name(i, "gamma"), Tensor::new(vec![c], dgamma)?);
                    grads.insert(self.param_name(i, "beta"), Tensor::new(vec![c], dbeta)?);
                    Tensor::new(in_shape, dx)?
                }
                (LayerSpec::Flatten | LayerSpec::Reshape { .. }, Cache::None) => cur.reshape(in_shape)?,
                _ => return Err(Error::invalid(format!("tape entry {i} does not match layer kind"))),
            };
            cur = next;
        }
        Ok((grads, want_dx.then_some(cur)))
    }
}

/// Per-channel mean and biased variance over batch and spatial positions.
fn channel_moments<T: Real>(x: &Tensor<T>, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let mut sum = vec![0.0f64; c];
    for (j, chunk) in x.data().chunks(plane).enumerate() {
        sum[j % c] += chunk.iter().map(|v| v.f64()).sum::<f64>();
    }
    let count = (x.len() / c) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; c];
    for (j, chunk) in x.data().chunks(plane).enumerate() {
        let m = mean[j % c];
        sq[j % c] += chunk.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>();
    }
    (
        mean.iter().map(|&m| T::of(m)).collect(),
        sq.iter().map(|&s| T::of(s / count)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{grad_check, half_sse};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn check(net: &Network, batch: usize, mode: Mode) -> f64 {
        check_with(net, batch, mode, 1e-6)
    }

    fn check_with(net: &Network, batch: usize, mode: Mode, eps: f64) -> f64 {
        let params: ParamStore<f64> = net.init_params(&mut rng());
        let mut shape = vec![batch];
        shape.extend_from_slice(net.input_shape());
        let x = random_input(&shape, 1);
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(net.output_shape());
        let loss = half_sse(random_input(&out_shape, 2));
        grad_check(net, &params, &x, mode, &loss, eps, 64, 3).unwrap()
    }

    #[test]
    fn dense_identity_is_identity() {
        let net = Network::new("d", vec![3], vec![LayerSpec::dense(3, 3)]).unwrap();
        let mut p = ParamStore::<f32>::new();
        p.insert("d.0.weight", Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(), true);
        p.insert("d.0.bias", Tensor::zeros(&[3]), true);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let (y, _) = net.forward(&p, &x, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn elu_limits() {
        let net = Network::new("e", vec![2], vec![LayerSpec::Elu]).unwrap();
        let p = ParamStore::<f64>::new();
        let x = Tensor::new(vec![1, 2], vec![0.0, -30.0]).unwrap();
        let (y, tape) = net.forward(&p, &x, Mode::Eval).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] + 1.0).abs() < 1e-12);
        let (_, dx) = net.backward(&p, &tape, &Tensor::full(&[1, 2], 1.0)).unwrap();
        assert_eq!(dx.data()[0], 1.0);
    }

    #[test]
    fn unit_conv2d_is_identity() {
        let net = Network::new(
            "c",
            vec![1, 4, 5],
            vec![LayerSpec::Conv2d {
                in_channels: 1,
                filters: 1,
                kernel: [1, 1],
                stride: [1, 1],
                padding: [0, 0],
            }],
        )
        .unwrap();
        let mut p = ParamStore::<f64>::new();
        p.insert("c.0.weight", Tensor::full(&[1, 1, 1, 1], 1.0), true);
        p.insert("c.0.bias", Tensor::zeros(&[1]), true);
        let x = random_input(&[2, 1, 4, 5], 9);
        let (y, _) = net.forward(&p, &x, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dense_sum_gradient_is_outer_product() {
        let net = Network::new("d", vec![3], vec![LayerSpec::dense(3, 2)]).unwrap();
        let p: ParamStore<f64> = net.init_params(&mut rng());
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let (_, tape) = net.forward(&p, &x, Mode::Train).unwrap();
        let (g, _) = net.backward(&p, &tape, &Tensor::full(&[1, 2], 1.0)).unwrap();
        assert_eq!(g["d.0.weight"].data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(g["d.0.bias"].data(), &[1.0, 1.0]);
    }

    #[test]
    fn linear_quadratic_check_is_exact() {
        let net = Network::new("l", vec![6], vec![LayerSpec::dense(6, 4), LayerSpec::dense(4, 3)]).unwrap();
        // Central differences are exact on a quadratic, so a wide step only
        // leaves rounding error.
        assert!(check_with(&net, 3, Mode::Train, 1e-2) <= 1e-9);
    }

    #[test]
    fn conv3d_elu_stack_gradients() {
        let net = Network::new(
            "c",
            vec![1, 4, 6, 6],
            vec![
                LayerSpec::conv3d(1, 3, [3, 3, 3], [1, 2, 2], [1, 1, 1]),
                LayerSpec::Elu,
                LayerSpec::conv3d(3, 2, [3, 3, 3], [2, 1, 1], [1, 1, 1]),
                LayerSpec::Elu,
                LayerSpec::Flatten,
                LayerSpec::dense(2 * 2 * 3 * 3, 4),
            ],
        )
        .unwrap();
        assert!(check(&net, 2, Mode::Train) <= 1e-4);
    }

    #[test]
    fn conv2d_relu_gradients() {
        let net = Network::new(
            "c",
            vec![2, 7, 5],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    filters: 3,
                    kernel: [3, 3],
                    stride: [2, 1],
                    padding: [1, 1],
                },
                LayerSpec::Relu,
            ],
        )
        .unwrap();
        assert!(check(&net, 2, Mode::Train) <= 1e-4);
    }

    #[test]
    fn transposed_conv_gradients() {
        let net = Network::new(
            "t",
            vec![6],
            vec![
                LayerSpec::dense(6, 2 * 2 * 3 * 3),
                LayerSpec::Reshape { shape: vec![2, 2, 3, 3] },
                LayerSpec::transposed(2, 3, [3, 3, 3], [2, 2, 2], [1, 1, 1], [1, 1, 0]),
                LayerSpec::Elu,
                LayerSpec::transposed(3, 1, [3, 3, 3], [1, 1, 1], [1, 1, 1], [0, 0, 0]),
            ],
        )
        .unwrap();
        assert_eq!(net.output_shape(), &[1, 4, 6, 5]);
        assert!(check(&net, 2, Mode::Train) <= 1e-4);
    }

    #[test]
    fn batchnorm_train_gradients() {
        let net = Network::new(
            "b",
            vec![2, 3, 4, 4],
            vec![
                LayerSpec::conv3d(2, 3, [1, 3, 3], [1, 1, 1], [0, 1, 1]),
                LayerSpec::Batchnorm { channels: 3 },
                LayerSpec::Elu,
                LayerSpec::Flatten,
                LayerSpec::dense(3 * 3 * 4 * 4, 2),
            ],
        )
        .unwrap();
        assert!(check(&net, 3, Mode::Train) <= 1e-3);
        assert!(check(&net, 3, Mode::Eval) <= 1e-4);
    }

    #[test]
    fn batchnorm_running_stats_follow_momentum() {
        let net = Network::new("b", vec![1], vec![LayerSpec::Batchnorm { channels: 1 }]).unwrap();
        let mut p: ParamStore<f64> = net.init_params(&mut rng());
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let (y, tape) = net.forward(&p, &x, Mode::Train).unwrap();
        assert!(y.sum().abs() < 1e-12);
        p.commit_running_stats(&tape).unwrap();
        assert!((p.get("b.0.running_mean").unwrap().data()[0] - 0.3).abs() < 1e-12);
        // unbiased variance 14/3, blended from 1.0
        let rv = p.get("b.0.running_var").unwrap().data()[0];
        assert!((rv - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn ill_shaped_compositions_are_rejected() {
        assert!(Network::new("x", vec![1, 4, 4], vec![LayerSpec::dense(16, 2)]).is_err());
        let net = Network::new("x", vec![4], vec![LayerSpec::dense(4, 2)]).unwrap();
        let p: ParamStore<f32> = net.init_params(&mut rng());
        assert!(net.forward(&p, &Tensor::zeros(&[2, 5]), Mode::Eval).is_err());
        let (_, tape) = net.forward(&p, &Tensor::zeros(&[2, 4]), Mode::Eval).unwrap();
        assert!(net.backward(&p, &tape, &Tensor::zeros(&[2, 3])).is_err());
        let other = Network::new("y", vec![4], vec![LayerSpec::dense(4, 2)]).unwrap();
        assert!(other.backward(&p, &tape, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn forward_backward_are_deterministic() {
        let net = Network::new(
            "c",
            vec![1, 2, 6, 6],
            vec![LayerSpec::conv3d(1, 2, [1, 3, 3], [1, 2, 2], [0, 1, 1]), LayerSpec::Elu],
        )
        .unwrap();
        let p: ParamStore<f32> = net.init_params(&mut rng());
        let x = random_input(&[2, 1, 2, 6, 6], 4).cast::<f32>();
        let run = || {
            let (y, t) = net.forward(&p, &x, Mode::Train).unwrap();
            let (g, dx) = net.backward(&p, &t, &y).unwrap();
            (y, g, dx)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}
