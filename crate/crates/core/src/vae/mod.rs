//! Twin-encoder flow VAE and single-encoder image baselines.

mod arch;
mod divergence;
mod model;
mod persist;
mod train;

pub use arch::{Activation, ArchConfig};
pub use divergence::{divergence_diag, kl_diag, w2_diag, Divergence, GaussianLatent, LOGVAR_MAX, LOGVAR_MIN};
pub(crate) use model::split_head;
pub use model::{reparameterize, Encoded, ModelBundle, ObjectiveConfig, Sample, TrainConfig, Variant};
pub use persist::{load, load_expecting, save, MODEL_FORMAT_VERSION};
pub use train::{loss, train, LossBreakdown};
