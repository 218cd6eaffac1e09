use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad Adam hyper-parameters {self:?}")))
        }
    }
}

/// One Adam update with bias correction. Fails before touching any
/// parameter if a gradient is non-finite or names an unknown parameter.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, grads: &Grads<T>, hyper: &AdamConfig) -> Result<()> {
    hyper.validate()?;
    for (name, g) in grads {
        let p = params
            .param(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if !p.trainable {
            return Err(Error::invalid(format!("gradient for frozen parameter {name}")));
        }
        if p.value.shape() != g.shape() {
            return Err(Error::shape(format!("gradient for {name} has shape {:?}", g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let (lr, eps) = (T::of(hyper.lr), T::of(hyper.eps));
    for (name, g) in grads {
        let p = params.param_mut(name).expect("checked above");
        p.step += 1;
        let c1 = T::one() - T::of(hyper.beta1.powi(p.step as i32));
        let c2 = T::one() - T::of(hyper.beta2.powi(p.step as i32));
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
