use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, FrameLabel, FrameSequence};
use crate::error::{Error, Result};

/// Smallest accepted frame side, in pixels.
pub const MIN_FRAME_SIDE: usize = 16;

/// Hazardous motion situations the generator can inject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionEvent {
    /// A vehicle cuts across the lane at high lateral speed.
    LaneCut,
    /// The vehicle in front is thrown upwards and slides sideways.
    FrontCrash,
    /// The gap to the vehicle in front collapses (emergency braking).
    GapDrop,
    /// Recurring bursts of vertical shaking of the ego camera.
    Vibration,
    /// Sharp turn: the background sweeps against the usual direction.
    Turning,
}

impl MotionEvent {
    pub const ALL: [MotionEvent; 5] = [
        MotionEvent::LaneCut,
        MotionEvent::FrontCrash,
        MotionEvent::GapDrop,
        MotionEvent::Vibration,
        MotionEvent::Turning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionEvent::LaneCut => "lane-cut",
            MotionEvent::FrontCrash => "front-crash",
            MotionEvent::GapDrop => "gap-drop",
            MotionEvent::Vibration => "vibration",
            MotionEvent::Turning => "turning",
        }
    }
}

impl std::str::FromStr for MotionEvent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionEvent::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown motion event {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodEvent {
    pub kind: MotionEvent,
    pub start_frame: usize,
    pub duration: usize,
    /// Severity knob in `(0, 1]`.
    pub intensity: f64,
}

impl OodEvent {
    fn active(&self, t: usize) -> bool {
        t >= self.start_frame && t < self.start_frame + self.duration
    }

    /// Frames elapsed since the event started, clamped to its duration.
    fn progress(&self, t: usize) -> f64 {
        t.saturating_sub(self.start_frame).min(self.duration) as f64
    }
}

/// A rectangular textured sprite moving on a straight line in screen space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    /// Half-width in pixels; the half-height is 0.7 of it.
    pub size: f64,
    /// Centre at frame 0, `[x, y]` in pixels.
    pub start: [f64; 2],
    /// Direction of travel; normalised internally.
    pub heading: [f64; 2],
    /// Pixels per frame.
    pub speed: f64,
    /// Base intensity in `[0, 1]`.
    pub brightness: f64,
}

/// Vertical camera displacement at one frame (camera bob). In-distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jolt {
    pub frame: usize,
    pub amplitude: f64,
}

/// Size factor of the lead vehicle at one frame (following-distance wobble). In-distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub frame: usize,
    pub factor: f64,
}

/// Lateral offset of one actor at one frame (lane-keeping wobble). In-distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Swerve {
    pub actor: usize,
    pub frame: usize,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub fps: f64,
    /// Horizontal background translation, pixels per frame.
    pub ego_speed: f64,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub ood_events: Vec<OodEvent>,
    #[serde(default)]
    pub jolts: Vec<Jolt>,
    /// Brightness of a vehicle held ahead in the ego lane, if any.
    #[serde(default)]
    pub lead: Option<f64>,
    #[serde(default)]
    pub taps: Vec<Tap>,
    #[serde(default)]
    pub swerves: Vec<Swerve>,
    /// Standard deviation of additive per-pixel sensor noise.
    #[serde(default)]
    pub noise_std: f64,
}

impl SceneConfig {
    /// Static-camera scene with nothing in it.
    pub fn empty(height: usize, width: usize, n_frames: usize) -> Self {
        Self {
            height,
            width,
            n_frames,
            fps: 25.0,
            ego_speed: 0.0,
            actors: Vec::new(),
            ood_events: Vec::new(),
            jolts: Vec::new(),
            lead: None,
            taps: Vec::new(),
            swerves: Vec::new(),
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_FRAME_SIDE || self.width < MIN_FRAME_SIDE {
            return Err(Error::invalid(format!(
                "scene {}x{} below minimum side {MIN_FRAME_SIDE}",
                self.height, self.width
            )));
        }
        if self.n_frames < 2 {
            return Err(Error::invalid("scene needs at least 2 frames"));
        }
        if !self.ego_speed.is_finite() {
            return Err(Error::invalid("ego_speed must be finite"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        for ev in &self.ood_events {
            if ev.duration == 0 || ev.start_frame + ev.duration > self.n_frames {
                return Err(Error::invalid(format!(
                    "event {:?} [{}, +{}) outside [0, {})",
                    ev.kind, ev.start_frame, ev.duration, self.n_frames
                )));
            }
            if !(ev.intensity > 0.0 && ev.intensity <= 1.0) {
                return Err(Error::invalid("event intensity must be in (0, 1]"));
            }
        }
        for j in &self.jolts {
            if j.frame >= self.n_frames || !j.amplitude.is_finite() {
                return Err(Error::invalid(format!("jolt at frame {} out of range", j.frame)));
            }
        }
        for tap in &self.taps {
            if tap.frame >= self.n_frames || !(tap.factor.is_finite() && tap.factor > 0.0) {
                return Err(Error::invalid(format!("lead wobble at frame {} is invalid", tap.frame)));
            }
        }
        for sw in &self.swerves {
            if sw.frame >= self.n_frames || sw.actor >= self.actors.len() || !sw.offset.is_finite() {
                return Err(Error::invalid(format!("swerve at frame {} is invalid", sw.frame)));
            }
        }
        if let Some(b) = self.lead {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid("lead brightness must be in [0, 1]"));
            }
        }
        for a in &self.actors {
            let finite = a.size.is_finite()
                && a.speed.is_finite()
                && a.start.iter().chain(&a.heading).all(|v| v.is_finite());
            if !finite || a.size <= 0.0 {
                return Err(Error::invalid("actor parameters must be finite, size > 0"));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<FrameLabel> {
        (0..self.n_frames)
            .map(|t| {
                if self.ood_events.iter().any(|e| e.active(t)) {
                    FrameLabel::OodMotion
                } else {
                    FrameLabel::Id
                }
            })
            .collect()
    }
}

/// Sum of a few oriented sinusoids: a smooth, band-limited texture that can be
/// sampled at sub-pixel offsets, so translations are exact.
#[derive(Clone, Debug)]
struct Texture {
    base: f64,
    waves: Vec<[f64; 4]>, // fx, fy, phase, amplitude
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, base: f64, n: usize, amp: (f64, f64), freq: (f64, f64)) -> Self {
        let waves = (0..n)
            .map(|_| {
                let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let sy = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [
                    sx * rng.random_range(freq.0..freq.1),
                    sy * rng.random_range(freq.0..freq.1),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(amp.0..amp.1),
                ]
            })
            .collect();
        Self { base, waves }
    }

    #[inline]
    fn sample(&self, x: f64, y: f64) -> f64 {
        let mut v = self.base;
        for w in &self.waves {
            v += w[3] * (std::f64::consts::TAU * (w[0] * x + w[1] * y) + w[2]).sin();
        }
        v
    }
}

struct Sprite {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    /// Texture coordinates are divided by this so the pattern scales with the sprite.
    zoom: f64,
    texture: usize,
}

/// Render a scene. Pure in `(config, seed)`.
pub fn gen_scene(config: &SceneConfig, seed: u64) -> Result<FrameSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Texture::random(&mut rng, 0.5, 6, (0.05, 0.09), (0.02, 0.12));
    let mut textures: Vec<Texture> = config
        .actors
        .iter()
        .map(|a| Texture::random(&mut rng, a.brightness, 3, (0.04, 0.08), (0.05, 0.15)))
        .collect();

    // Event-owned sprites get their own textures and spawn sides.
    let lane_cuts: Vec<(usize, f64, usize)> = config
        .ood_events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == MotionEvent::LaneCut)
        .map(|(i, _)| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let bright = if rng.random_bool(0.5) { 0.15 } else { 0.85 };
            textures.push(Texture::random(&mut rng, bright, 3, (0.04, 0.08), (0.05, 0.15)));
            (i, side, textures.len() - 1)
        })
        .collect();
    let has_front = config
        .ood_events
        .iter()
        .any(|e| matches!(e.kind, MotionEvent::GapDrop | MotionEvent::FrontCrash));
    let front_texture = if has_front || config.lead.is_some() {
        let coin = rng.random_bool(0.5);
        let bright = config.lead.unwrap_or(if coin { 0.2 } else { 0.8 });
        textures.push(Texture::random(&mut rng, bright, 3, (0.04, 0.08), (0.05, 0.15)));
        Some(textures.len() - 1)
    } else {
        None
    };

    let (h, w) = (config.height as f64, config.width as f64);
    let pan_speed = |t: usize| -> f64 {
        let mut s = config.ego_speed;
        for e in &config.ood_events {
            if e.kind == MotionEvent::Turning && e.active(t) {
                let dir = if config.ego_speed < 0.0 { 1.0 } else { -1.0 };
                s += dir * (2.0 + 3.0 * e.intensity);
            }
        }
        s
    };
    let camera_dy = |t: usize| -> f64 {
        let mut dy = 0.0;
        for e in &config.ood_events {
            if e.kind == MotionEvent::Vibration && e.active(t) {
                // Two shaken frames out of every six.
                let k = t - e.start_frame;
                let peak_to_peak = 2.0 + 3.0 * e.intensity;
                let sign = match k % 6 {
                    0 => -0.5,
                    1 => 0.5,
                    _ => 0.0,
                };
                dy += sign * peak_to_peak;
            }
        }
        for j in &config.jolts {
            if j.frame == t {
                dy += j.amplitude;
            }
        }
        dy
    };

    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let mut frames = Vec::with_capacity(config.n_frames);
    let mut cam_x = 0.0;
    for t in 0..config.n_frames {
        let cam_y = camera_dy(t);
        let tf = t as f64;
        let mut sprites = Vec::new();
        for (i, a) in config.actors.iter().enumerate() {
            let norm = (a.heading[0].hypot(a.heading[1])).max(1e-12);
            let swerve: f64 = config
                .swerves
                .iter()
                .filter(|s| s.actor == i && s.frame == t)
                .map(|s| s.offset)
                .sum();
            sprites.push(Sprite {
                cx: a.start[0] + a.heading[0] / norm * a.speed * tf + swerve,
                cy: a.start[1] + a.heading[1] / norm * a.speed * tf - cam_y,
                half_w: a.size,
                half_h: 0.7 * a.size,
                zoom: 1.0,
                texture: i,
            });
        }
        if let Some(tex) = front_texture {
            let base = 0.08 * w;
            let (mut cx, mut cy, mut size) = (0.5 * w, 0.58 * h, base);
            for tap in config.taps.iter().filter(|tap| tap.frame == t) {
                size *= tap.factor;
            }
            for e in &config.ood_events {
                let k = e.progress(t);
                match e.kind {
                    MotionEvent::GapDrop => {
                        size *= (1.08 + 0.08 * e.intensity).powf(k);
                    }
                    MotionEvent::FrontCrash => {
                        let lift = 3.0 + 4.0 * e.intensity;
                        cy -= lift * (std::f64::consts::PI * k / 5.0).sin().abs() * 2.0;
                        cx += (1.0 + 1.5 * e.intensity) * k;
                    }
                    _ => {}
                }
            }
            sprites.push(Sprite {
                cx,
                cy: cy - cam_y,
                half_w: size,
                half_h: 0.7 * size,
                zoom: size / base,
                texture: tex,
            });
        }
        for &(ev_index, side, tex) in &lane_cuts {
            let e = &config.ood_events[ev_index];
            if !e.active(t) {
                continue;
            }
            let size = 0.1 * w;
            let speed = 2.0 + 2.0 * e.intensity;
            let k = (t - e.start_frame) as f64;
            let x0 = if side > 0.0 { -size } else { w + size };
            sprites.push(Sprite {
                cx: x0 + side * speed * k,
                cy: 0.62 * h - cam_y,
                half_w: size,
                half_h: 0.7 * size,
                zoom: 1.0,
                texture: tex,
            });
        }

        let mut frame = Frame::from_fn(config.height, config.width, |y, x| {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = background.sample(xf + cam_x, yf + cam_y);
            for s in &sprites {
                let cover_x = (s.half_w + 0.5 - (xf - s.cx).abs()).clamp(0.0, 1.0);
                let cover_y = (s.half_h + 0.5 - (yf - s.cy).abs()).clamp(0.0, 1.0);
                let cover = cover_x * cover_y;
                if cover > 0.0 {
                    let sv = textures[s.texture].sample((xf - s.cx) / s.zoom, (yf - s.cy) / s.zoom);
                    v = v * (1.0 - cover) + sv * cover;
                }
            }
            v.clamp(0.0, 1.0) as f32
        });
        if let Some(noise) = &noise {
            for v in frame.data_mut() {
                *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        frames.push(frame);
        cam_x += pan_speed(t);
    }
    FrameSequence::new(frames, config.fps, config.labels(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn busy_config() -> SceneConfig {
        SceneConfig {
            ego_speed: 0.7,
            actors: vec![ActorSpec {
                size: 6.0,
                start: [20.0, 30.0],
                heading: [1.0, 0.2],
                speed: 0.5,
                brightness: 0.8,
            }],
            noise_std: 0.01,
            ..SceneConfig::empty(32, 48, 20)
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let seq = gen_scene(&SceneConfig::empty(24, 32, 6), 3).unwrap();
        assert!(seq.frames().windows(2).all(|p| p[0] == p[1]));
        assert!(seq.labels().iter().all(|&l| l == FrameLabel::Id));
    }

    #[test]
    fn vibration_labels_cover_event_window() {
        let cfg = SceneConfig {
            ood_events: vec![OodEvent {
                kind: MotionEvent::Vibration,
                start_frame: 10,
                duration: 6,
                intensity: 0.5,
            }],
            ..SceneConfig::empty(24, 32, 20)
        };
        let seq = gen_scene(&cfg, 1).unwrap();
        for (t, l) in seq.labels().iter().enumerate() {
            let expect_ood = (10..=15).contains(&t);
            assert_eq!(l.is_ood(), expect_ood, "frame {t}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_scene(&busy_config(), 42).unwrap();
        let b = gen_scene(&busy_config(), 42).unwrap();
        assert_eq!(a, b);
        let c = gen_scene(&busy_config(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pixel_range_is_preserved() {
        let mut cfg = busy_config();
        cfg.noise_std = 0.3;
        let seq = gen_scene(&cfg, 9).unwrap();
        for f in seq.frames() {
            assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        assert!(gen_scene(&SceneConfig::empty(15, 32, 4), 0).is_err());
        assert!(gen_scene(&SceneConfig::empty(32, 32, 1), 0).is_err());
    }

    #[test]
    fn rejects_events_outside_sequence() {
        let cfg = SceneConfig {
            ood_events: vec![OodEvent {
                kind: MotionEvent::LaneCut,
                start_frame: 18,
                duration: 5,
                intensity: 0.5,
            }],
            ..SceneConfig::empty(24, 32, 20)
        };
        assert!(gen_scene(&cfg, 0).is_err());
    }

    #[test]
    fn background_translates_at_ego_speed() {
        // With ego_speed = 1 and no noise, frame t+1 is frame t shifted one pixel left.
        let cfg = SceneConfig {
            ego_speed: 1.0,
            ..SceneConfig::empty(20, 30, 3)
        };
        let seq = gen_scene(&cfg, 5).unwrap();
        let (f0, f1) = (seq.frame(0), seq.frame(1));
        for y in 0..20 {
            for x in 0..29 {
                assert!((f0.get(y, x + 1) - f1.get(y, x)).abs() < 1e-5);
            }
        }
    }
}
