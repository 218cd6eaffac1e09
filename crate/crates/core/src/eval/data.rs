//! Labelled sample sets drawn from the scene generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{sequence_flows, FlowField, FlowParams, FlowVolume};
use crate::vae::Sample;
use crate::videoio::{gen_scene, perturb, FrameLabel, FrameSequence, SceneClass, SceneProfile};

/// Recipe for a set of generated scenes of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSetSpec {
    pub profile: String,
    pub class: String,
    pub scenes: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    /// Perturbation strength range for visibility classes.
    #[serde(default = "default_intensity")]
    pub intensity: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_frames() -> usize {
    16
}
fn default_height() -> usize {
    60
}
fn default_width() -> usize {
    80
}
fn default_intensity() -> (f64, f64) {
    (0.5, 1.0)
}

impl SceneSetSpec {
    pub fn new(profile: &str, class: &str, scenes: usize, seed: u64) -> Self {
        Self {
            profile: profile.into(),
            class: class.into(),
            scenes,
            frames: default_frames(),
            height: default_height(),
            width: default_width(),
            intensity: default_intensity(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        SceneProfile::by_name(&self.profile)?;
        SceneClass::parse(&self.class)?;
        if self.scenes == 0 {
            return Err(Error::Empty(format!("scene set {}/{}", self.profile, self.class)));
        }
        let (lo, hi) = self.intensity;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::invalid(format!("intensity range {:?} outside [0, 1]", self.intensity)));
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a, used to give each class its own seed stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Generate the scenes of a set. Each class draws from its own seed stream,
/// so adding a class never changes another class's scenes.
pub fn build_scenes(spec: &SceneSetSpec) -> Result<Vec<FrameSequence>> {
    spec.validate()?;
    let profile = SceneProfile::by_name(&spec.profile)?;
    let class = SceneClass::parse(&spec.class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a(&spec.profile) ^ fnv1a(&spec.class).rotate_left(17));
    let mut out = Vec::with_capacity(spec.scenes);
    for _ in 0..spec.scenes {
        let event = match class {
            SceneClass::Motion(e) => Some(e),
            _ => None,
        };
        let cfg = profile.sample_config(event, spec.height, spec.width, spec.frames, &mut rng);
        let scene_seed: u64 = rng.random();
        let seq = gen_scene(&cfg, scene_seed)?;
        let seq = match class {
            SceneClass::Visibility(p) => {
                let (lo, hi) = spec.intensity;
                let i = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                perturb(&seq, p, i)?
            }
            _ => seq,
        };
        out.push(seq);
    }
    Ok(out)
}

/// A scored unit: one model input with ground truth and provenance.
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub id: String,
    pub class: String,
    pub label: FrameLabel,
    pub sample: Sample,
}

impl LabeledSample {
    pub fn is_ood(&self) -> bool {
        self.label.is_ood()
    }
}

/// How windows are cut from sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Flow pairs per volume (1 for frame inputs is ignored).
    pub depth: usize,
    /// Flow pairs a window must cover to be eligible. Using the same span
    /// for models of different depth makes them score identical anchors.
    pub span: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(depth: usize, span: usize, stride: usize) -> Self {
        Self { depth, span, stride }
    }

    /// Anchors (index of the last flow pair) whose whole span carries one label.
    pub fn anchors(&self, labels: &[FrameLabel], want_ood: bool) -> Vec<usize> {
        let span = self.span.max(self.depth);
        if labels.len() < span + 1 || self.stride == 0 {
            return Vec::new();
        }
        (span - 1..labels.len() - 1)
            .step_by(self.stride)
            .filter(|&a| labels[a + 1 - span..=a + 1].iter().all(|l| l.is_ood() == want_ood))
            .collect()
    }
}

/// Which scene frames a set contributes: ID sets give ID windows, OoD sets
/// give windows lying fully inside the OoD event.
fn wants_ood(class: &str) -> Result<bool> {
    Ok(SceneClass::parse(class)? != SceneClass::Id)
}

/// Flow volumes of every eligible window of the given scenes.
pub fn flow_samples(
    scenes: &[FrameSequence],
    class: &str,
    window: &WindowSpec,
    params: &FlowParams,
) -> Result<Vec<LabeledSample>> {
    let want_ood = wants_ood(class)?;
    let mut out = Vec::new();
    for (s, seq) in scenes.iter().enumerate() {
        let anchors = window.anchors(seq.labels(), want_ood);
        if anchors.is_empty() {
            continue;
        }
        let flows: Vec<FlowField> = sequence_flows(seq, params)?;
        for a in anchors {
            let vol = FlowVolume::from_fields(&flows[a + 1 - window.depth..=a])?;
            out.push(LabeledSample {
                id: format!("{class}-{s:03}-{a:03}"),
                class: class.to_string(),
                label: seq.labels()[a + 1],
                sample: Sample::Flow(vol),
            });
        }
    }
    Ok(out)
}

/// The latest frame of every eligible window.
pub fn frame_samples(scenes: &[FrameSequence], class: &str, window: &WindowSpec) -> Result<Vec<LabeledSample>> {
    let want_ood = wants_ood(class)?;
    let mut out = Vec::new();
    for (s, seq) in scenes.iter().enumerate() {
        for a in window.anchors(seq.labels(), want_ood) {
            out.push(LabeledSample {
                id: format!("{class}-{s:03}-{a:03}"),
                class: class.to_string(),
                label: seq.labels()[a + 1],
                sample: Sample::Frame(seq.frame(a + 1).clone()),
            });
        }
    }
    Ok(out)
}

/// Model inputs of a labelled set, in order.
pub fn inputs(samples: &[LabeledSample]) -> Vec<Sample> {
    samples.iter().map(|s| s.sample.clone()).collect()
}
