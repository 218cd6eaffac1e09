use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Frame, FrameLabel, FrameSequence};
use crate::error::{Error, Result};

/// Sidecar file written next to the frame images.
pub const MANIFEST_FILE: &str = "manifest.json";

const DEFAULT_FPS: f64 = 25.0;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    fps: f64,
    labels: Vec<FrameLabel>,
    seed: u64,
}

/// Write `frame_%06d.pgm` files (binary 8-bit graymap) plus the manifest.
pub fn save_frame_dir(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.pgm"));
        fs::write(&path, encode_pgm(frame)).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = Manifest {
        fps: seq.fps(),
        labels: seq.labels().to_vec(),
        seed: seq.seed(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Load a lexicographically ordered directory of 8-bit graymaps.
///
/// Without a manifest the sequence defaults to 25 fps, seed 0 and all-ID labels.
pub fn load_frame_dir(dir: &Path) -> Result<FrameSequence> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "pgm"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Error::Empty(format!(
            "{} holds {} frames, need at least 2",
            dir.display(),
            paths.len()
        )));
    }
    let frames = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            decode_pgm(&bytes).map_err(|reason| Error::format(p, reason))
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        FrameSequence::new(frames, m.fps, m.labels, m.seed)
    } else {
        FrameSequence::unlabelled(frames, DEFAULT_FPS, 0)
    }
}

fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut pos = 0;
    let mut next_token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token()? != "P5" {
        return Err("not a binary graymap (P5)".into());
    }
    let parse = |s: String| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}"));
    let width = parse(next_token()?)?;
    let height = parse(next_token()?)?;
    let maxval = parse(next_token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let raster = &bytes[pos + 1..];
    if raster.len() < width * height {
        return Err(format!("raster holds {} bytes, need {}", raster.len(), width * height));
    }
    let scale = maxval as f32;
    let data = raster[..width * height].iter().map(|&b| b as f32 / scale).collect();
    Frame::new(height, width, data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videoio::{gen_scene, SceneConfig};

    #[test]
    fn constant_frames_load_identically() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::unlabelled(vec![Frame::filled(120, 160, 0.5); 7], 25.0, 0).unwrap();
        save_frame_dir(&seq, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        let loaded = load_frame_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 7);
        let v0 = loaded.frame(0).data()[0];
        assert!(loaded.frames().iter().all(|f| f.data().iter().all(|&v| v == v0)));
        assert!(loaded.labels().iter().all(|&l| l == FrameLabel::Id));
    }

    #[test]
    fn mixed_sizes_fail() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("frame_000000.pgm"), encode_pgm(&Frame::filled(16, 16, 0.1))).unwrap();
        fs::write(dir.path().join("frame_000001.pgm"), encode_pgm(&Frame::filled(20, 16, 0.1))).unwrap();
        assert!(matches!(
            load_frame_dir(dir.path()).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn missing_dir_and_too_few_frames() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_frame_dir(&dir.path().join("nope")).unwrap_err(),
            Error::MissingDirectory(_)
        ));
        fs::write(dir.path().join("frame_000000.pgm"), encode_pgm(&Frame::filled(16, 16, 0.1))).unwrap();
        assert!(matches!(load_frame_dir(dir.path()).unwrap_err(), Error::Empty(_)));
    }

    #[test]
    fn generator_export_round_trips() {
        let cfg = SceneConfig {
            ego_speed: 0.8,
            ..SceneConfig::empty(24, 32, 48)
        };
        let seq = gen_scene(&cfg, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_frame_dir(&seq, dir.path()).unwrap();
        let loaded = load_frame_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 48);
        assert_eq!(loaded.fps(), 25.0);
        assert_eq!(loaded.seed(), 77);
        assert!(loaded.labels().iter().all(|&l| l == FrameLabel::Id));
        for (a, b) in seq.frames().iter().zip(loaded.frames()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 51, 102]);
        let f = decode_pgm(&bytes).unwrap();
        assert_eq!(f.dims(), (2, 2));
        assert_eq!(f.data(), &[0.0, 1.0, 0.2, 0.4]);
    }
}
