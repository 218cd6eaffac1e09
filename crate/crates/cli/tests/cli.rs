use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowood(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowood"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL: [&str; 6] = ["--height", "24", "--width", "32", "--frames", "8"];

fn gen(dir: &Path, class: &str) -> Output {
    let mut args = vec!["--seed", "3", "gen", "--class", class, "--scenes", "2", "--out", "scenes"];
    args.extend(SMALL);
    flowood(&args, dir)
}

#[test]
fn gen_writes_one_directory_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), "vibration");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("scenes"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["vibration-000", "vibration-001"]);
}

#[test]
fn unknown_class_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), "snow");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("snow"));
}

#[test]
fn bad_flag_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&flowood(&["gen", "--frobnicate"], dir.path())), 2);
}

#[test]
fn missing_model_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowood(&["score", "--model", "nope", "--out", "s.csv"], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_eval_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[[scenario]]\nname = 1\n").unwrap();
    let out = flowood(&["eval", "--config", "bad.toml", "--out", "o"], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flow_volumes_follow_the_requested_depth() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(dir.path(), "id")), 0);
    let out = flowood(
        &["flow", "--input", "scenes", "--depth", "3", "--stride", "2", "--iters", "20", "--out", "vols"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("vols/stats.json")).unwrap()).unwrap();
    assert!(stats.is_object());
    let volumes = walk(&dir.path().join("vols"))
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ofv"))
        .count();
    // 8 frames give windows starting at 0, 2 and 4 per scene.
    assert_eq!(volumes, 6);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for p in walk(&dir) {
        let cfg = flowood::eval::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap();
        n += 1;
    }
    assert!(n >= 2);
}
