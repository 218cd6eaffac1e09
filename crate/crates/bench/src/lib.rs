//! Benchmark fixtures shared by the criterion benches.

use flowood::eval::data::{build_scenes, SceneSetSpec};
use flowood::flow::{build_volume, FlowParams};
use flowood::quant::{calibrate, CalibrationConfig, QuantModel};
use flowood::vae::{Activation, ModelBundle, Sample, Variant};
use flowood::videoio::FrameSequence;
use flowood::Result;

/// An untrained model and its int8 counterpart; weights do not affect timing.
pub struct Fixture {
    pub scene: FrameSequence,
    pub flow: FlowParams,
    pub float: ModelBundle,
    pub quant: QuantModel,
    /// The single full-depth window of `scene`.
    pub sample: Sample,
}

impl Fixture {
    pub fn new(variant: Variant, depth: usize) -> Result<Self> {
        let mut spec = SceneSetSpec::new("urban", "id", 1, 7);
        spec.frames = depth + 1;
        let scene = build_scenes(&spec)?.remove(0);
        let flow = FlowParams::default();
        let mut arch = variant.desk_arch();
        arch.depth = depth;
        arch.activation = Activation::Relu;
        let float = ModelBundle::new(variant, arch, 1)?;
        let sample = Sample::Flow(build_volume(&scene, 0, depth, &flow)?);
        let quant = calibrate(&float, std::slice::from_ref(&sample), &CalibrationConfig::default())?;
        Ok(Self {
            scene,
            flow,
            float,
            quant,
            sample,
        })
    }
}
