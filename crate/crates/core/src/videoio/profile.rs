use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{ActorSpec, Jolt, MotionEvent, OodEvent, SceneConfig, Swerve, Tap};
use super::Perturbation;
use crate::error::{Error, Result};

/// What kind of scene to draw from a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneClass {
    Id,
    Motion(MotionEvent),
    Visibility(Perturbation),
}

impl SceneClass {
    pub fn name(&self) -> String {
        match self {
            SceneClass::Id => "id".to_string(),
            SceneClass::Motion(e) => e.as_str().to_string(),
            SceneClass::Visibility(p) => p.as_str().to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "id" {
            return Ok(SceneClass::Id);
        }
        if let Ok(e) = s.parse::<MotionEvent>() {
            return Ok(SceneClass::Motion(e));
        }
        s.parse::<Perturbation>()
            .map(SceneClass::Visibility)
            .map_err(|_| Error::invalid(format!("unknown scene class {s:?}")))
    }
}

/// Distribution over in-distribution traffic used to draw scene configs.
///
/// Two presets stand in for two driving environments so that cross-set
/// generalization can be exercised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneProfile {
    pub name: String,
    pub ego_speed: (f64, f64),
    pub n_actors: (usize, usize),
    pub actor_speed: (f64, f64),
    /// Largest amplitude of the vertical camera bob, pixels.
    pub camera_bob: f64,
    /// Probability that a lead vehicle is held ahead in the ego lane.
    pub lead_prob: f64,
    /// Largest amplitude of the lead vehicle's log-size wobble.
    pub lead_wobble: f64,
    /// Largest amplitude of each actor's lateral wobble, pixels.
    pub actor_wobble: f64,
    /// Range of wobble periods, frames.
    pub wobble_period: (f64, f64),
    pub noise_std: f64,
}

impl SceneProfile {
    /// Slow city traffic with several nearby actors.
    pub fn urban() -> Self {
        Self {
            name: "urban".into(),
            ego_speed: (0.3, 0.8),
            n_actors: (1, 3),
            actor_speed: (0.2, 0.8),
            camera_bob: 0.4,
            lead_prob: 0.5,
            lead_wobble: 0.03,
            actor_wobble: 1.0,
            wobble_period: (8.0, 16.0),
            noise_std: 0.004,
        }
    }

    /// Faster, emptier roads.
    pub fn highway() -> Self {
        Self {
            name: "highway".into(),
            ego_speed: (0.8, 1.4),
            n_actors: (0, 2),
            actor_speed: (0.1, 0.5),
            camera_bob: 0.3,
            lead_prob: 0.6,
            lead_wobble: 0.03,
            actor_wobble: 0.8,
            wobble_period: (10.0, 20.0),
            noise_std: 0.006,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "urban" | "a" | "A" => Ok(Self::urban()),
            "highway" | "b" | "B" => Ok(Self::highway()),
            other => Err(Error::invalid(format!("unknown scene profile {other:?}"))),
        }
    }

    /// Draw an in-distribution scene, optionally with one motion event.
    ///
    /// Events start after a short lead-in and last until near the end so that
    /// full depth windows fit inside them.
    pub fn sample_config<R: Rng>(
        &self,
        event: Option<MotionEvent>,
        height: usize,
        width: usize,
        n_frames: usize,
        rng: &mut R,
    ) -> SceneConfig {
        let (h, w) = (height as f64, width as f64);
        let ego_speed = rng.random_range(self.ego_speed.0..=self.ego_speed.1);
        let n_actors = rng.random_range(self.n_actors.0..=self.n_actors.1);
        let actors = (0..n_actors)
            .map(|_| {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                ActorSpec {
                    size: rng.random_range(0.05..0.1) * w,
                    start: [rng.random_range(0.15..0.85) * w, rng.random_range(0.45..0.8) * h],
                    heading: [angle.cos(), 0.3 * angle.sin()],
                    speed: rng.random_range(self.actor_speed.0..=self.actor_speed.1),
                    brightness: if rng.random_bool(0.5) { 0.2 } else { 0.8 },
                }
            })
            .collect();
        let period = self.wobble_period;
        let wobble = |rng: &mut R, max_amp: f64| -> Vec<f64> {
            let amp = max_amp * rng.random_range(0.0..=1.0);
            let p = rng.random_range(period.0..=period.1);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..n_frames)
                .map(|t| amp * (std::f64::consts::TAU * t as f64 / p + phase).sin())
                .collect()
        };
        let jolts = wobble(rng, self.camera_bob)
            .into_iter()
            .enumerate()
            .map(|(frame, amplitude)| Jolt { frame, amplitude })
            .collect();
        let lead = rng
            .random_bool(self.lead_prob)
            .then(|| if rng.random_bool(0.5) { 0.2 } else { 0.8 });
        let taps = match lead {
            Some(_) => wobble(rng, self.lead_wobble)
                .into_iter()
                .enumerate()
                .map(|(frame, log_size)| Tap {
                    frame,
                    factor: log_size.exp(),
                })
                .collect(),
            None => Vec::new(),
        };
        let mut swerves = Vec::new();
        for actor in 0..n_actors {
            for (frame, offset) in wobble(rng, self.actor_wobble).into_iter().enumerate() {
                swerves.push(Swerve { actor, frame, offset });
            }
        }
        let ood_events = event
            .map(|kind| {
                let lead = 1.min(n_frames.saturating_sub(2));
                let duration = n_frames.saturating_sub(lead + 1).max(1);
                vec![OodEvent {
                    kind,
                    start_frame: lead,
                    duration,
                    intensity: rng.random_range(0.3..=1.0),
                }]
            })
            .unwrap_or_default();
        SceneConfig {
            height,
            width,
            n_frames,
            fps: 25.0,
            ego_speed,
            actors,
            ood_events,
            jolts,
            lead,
            taps,
            swerves,
            noise_std: self.noise_std,
        }
    }
}
