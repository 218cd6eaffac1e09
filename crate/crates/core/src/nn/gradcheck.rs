use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Mode, Network};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Minimum number of parameter coordinates probed by [`grad_check`].
pub const MIN_PROBES: usize = 64;

/// Loss returning its value and the gradient with respect to the network output.
pub type LossFn<'a> = dyn Fn(&Tensor<f64>) -> (f64, Tensor<f64>) + 'a;

/// Worst relative error between analytic and central-difference gradients
/// over a seeded sample of `max(MIN_PROBES, probes)` trainable coordinates
/// (all of them if fewer exist).
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    net: &Network,
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    loss_fn: &LossFn<'_>,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let (y, tape) = net.forward(params, x, mode)?;
    let (_, dy) = loss_fn(&y);
    let grads = net.backward_params(params, &tape, &dy)?;

    let coords: Vec<(String, usize)> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(name, p)| (0..p.value.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let want = probes.max(MIN_PROBES).min(coords.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, coords.len(), want).into_vec();
    picks.sort_unstable();

    let mut work = params.clone();
    let mut worst = 0.0f64;
    for k in picks {
        let (name, i) = &coords[k];
        let orig = work.get(name)?.data()[*i];
        work.get_mut(name)?.data_mut()[*i] = orig + eps;
        let plus = loss_fn(&net.forward(&work, x, mode)?.0).0;
        work.get_mut(name)?.data_mut()[*i] = orig - eps;
        let minus = loss_fn(&net.forward(&work, x, mode)?.0).0;
        work.get_mut(name)?.data_mut()[*i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(name).map(|g| g.data()[*i]).unwrap_or(0.0);
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    Ok(worst)
}

/// `0.5·Σ(y − target)²` with its gradient.
pub fn half_sse(target: Tensor<f64>) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
    move |y| {
        let diff: Vec<f64> = y.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        (loss, Tensor::new(y.shape().to_vec(), diff).expect("same shape"))
    }
}
