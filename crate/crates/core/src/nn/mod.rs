//! Tensors, a sequential layer stack with reverse-mode gradients, Adam and a
//! finite-difference gradient checker.

mod adam;
pub mod conv;
mod gradcheck;
mod layer;
mod network;
mod params;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, half_sse, LossFn, MIN_PROBES};
pub use layer::{conv_geometry, transposed_geometry, ConvGeom, LayerSpec};
pub use network::{BnUpdate, Mode, Network, Tape, BN_EPS, BN_MOMENTUM};
pub use params::{init_uniform, Grads, Param, ParamStore, TensorEntry, PARAM_MAGIC};
pub use real::{matmul, Real};
pub use tensor::Tensor;
