use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flowood::eval::data::{build_scenes, inputs, LabeledSample, SceneSetSpec, WindowSpec};
use flowood::eval::{emit_plots, fit_model, model_samples, run_experiment, write_plots, ExperimentConfig, ExperimentReport, ModelSpec};
use flowood::flow::{flow_stats, sequence_flows, FlowParams, FlowVolume};
use flowood::quant::{
    bench, calibrate, drift_report, load_quant, save_quant, write_bench_csv, write_drift_csv, CalibrationConfig, Execution,
    Precision,
};
use flowood::scoring::{select_latents, score_samples, write_scores_csv, Compensation, ScoreConfig, Subspace};
use flowood::vae::{self, Activation, Divergence, ModelBundle, Sample, TrainConfig, Variant};
use flowood::videoio::{load_frame_dir, save_frame_dir, FrameSequence};

/// Offset separating evaluation scenes from training scenes drawn with the same seed.
const TEST_SEED_OFFSET: u64 = 1_000;

#[derive(Parser)]
#[command(name = "flowood", version, about = "Optical-flow VAE out-of-distribution detection")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes as directories of PGM frames.
    Gen(GenArgs),
    /// Compute flow volumes from saved scenes.
    Flow(FlowArgs),
    /// Train a model on generated in-distribution scenes.
    Train(TrainArgs),
    /// Score generated test classes and write a score dump.
    Score(ScoreArgs),
    /// Rank latent dimensions by inter-frame KL change.
    SelectLatents(SelectArgs),
    /// Calibrate and save an integer model.
    Quantize(QuantizeArgs),
    /// Compare float and integer detection quality.
    Drift(DriftArgs),
    /// Time the detection pipeline.
    Bench(BenchArgs),
    /// Run an experiment config.
    Eval(EvalArgs),
    /// Render plots from an experiment report.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct SceneArgs {
    #[arg(long, default_value = "urban")]
    profile: String,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 60)]
    height: usize,
    #[arg(long, default_value_t = 80)]
    width: usize,
}

impl SceneArgs {
    fn spec(&self, class: &str, scenes: usize, seed: u64) -> SceneSetSpec {
        SceneSetSpec {
            frames: self.frames,
            height: self.height,
            width: self.width,
            ..SceneSetSpec::new(&self.profile, class, scenes, seed)
        }
    }
}

#[derive(Args, Clone)]
struct WindowArgs {
    /// Flow pairs each scored window spans.
    #[arg(long, default_value_t = 6)]
    span: usize,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long, default_value_t = 1.0)]
    flow_alpha: f32,
    #[arg(long, default_value_t = 100)]
    flow_iters: usize,
}

impl WindowArgs {
    fn flow(&self) -> FlowParams {
        FlowParams {
            alpha: self.flow_alpha,
            iters: self.flow_iters,
        }
    }
}

#[derive(Args, Clone)]
struct TestArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Comma-separated classes; `id` supplies the negatives.
    #[arg(long, value_delimiter = ',', default_value = "id,lane-cut,vibration,gap-drop")]
    classes: Vec<String>,
    /// Scenes per class.
    #[arg(long, default_value_t = 10)]
    test_scenes: usize,
    #[command(flatten)]
    window: WindowArgs,
}

impl TestArgs {
    fn samples(&self, model: &ModelBundle, seed: u64) -> Result<Vec<LabeledSample>> {
        let mut out = Vec::new();
        for class in &self.classes {
            let spec = self.scene.spec(class, self.test_scenes, seed.wrapping_add(TEST_SEED_OFFSET));
            let scenes = build_scenes(&spec)?;
            let w = &self.window;
            out.extend(model_samples(model, &scenes, class, w.span, w.stride, &w.flow())?);
        }
        if out.is_empty() {
            bail!(flowood::Error::Empty("test classes produced no scoreable windows".into()));
        }
        Ok(out)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value = "id")]
    class: String,
    #[arg(long, default_value_t = 4)]
    scenes: usize,
    /// Perturbation strength range for visibility classes.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.5, 1.0])]
    intensity: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlowArgs {
    /// Scene directory, or a directory of scene directories.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f32,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "bi3dof")]
    variant: Variant,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    latent_dims: Option<usize>,
    /// Hidden activation; quantization needs `relu`.
    #[arg(long)]
    activation: Option<Activation>,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 60)]
    scenes: usize,
    /// Saved scene directories to train on instead of generating.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreOpts {
    #[arg(long)]
    divergence: Option<Divergence>,
    #[arg(long, default_value = "both")]
    subspace: Subspace,
    #[arg(long, default_value = "boost")]
    compensation: Compensation,
}

impl ScoreOpts {
    fn config(&self) -> ScoreConfig {
        ScoreConfig {
            divergence: self.divergence,
            subspace: self.subspace,
            compensation: self.compensation,
            ..ScoreConfig::default()
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    test: TestArgs,
    #[command(flatten)]
    opts: ScoreOpts,
    /// Entropy baseline source for reconstruction scores: ID scenes to draw.
    #[arg(long, default_value_t = 20)]
    baseline_scenes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value = "id")]
    class: String,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    /// Dimensions to keep.
    #[arg(long, short)]
    n: usize,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "int8")]
    precision: Precision,
    #[arg(long)]
    include_decoder: bool,
    #[command(flatten)]
    scene: SceneArgs,
    /// ID scenes forming the calibration set.
    #[arg(long, default_value_t = 10)]
    calib_scenes: usize,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    quant: PathBuf,
    #[command(flatten)]
    test: TestArgs,
    #[command(flatten)]
    opts: ScoreOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Also time this integer model (fused and split execution).
    #[arg(long)]
    quant: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// `report.json` written by `eval`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| flowood::Error::io(path, e).into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    Ok(vae::load(path)?)
}

/// A scene directory, or every scene directory inside it, in name order.
fn load_scenes(path: &Path) -> Result<Vec<(String, FrameSequence)>> {
    if path.join(flowood::videoio::MANIFEST_FILE).exists() {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, load_frame_dir(path)?)]);
    }
    if !path.is_dir() {
        bail!(flowood::Error::MissingDirectory(path.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((name, load_frame_dir(&d)?));
    }
    if out.is_empty() {
        bail!(flowood::Error::Empty(format!("no scenes under {}", path.display())));
    }
    Ok(out)
}

fn cmd_gen(a: &GenArgs, seed: u64) -> Result<()> {
    let spec = SceneSetSpec {
        intensity: (a.intensity[0], a.intensity[1]),
        ..a.scene.spec(&a.class, a.scenes, seed)
    };
    let scenes = build_scenes(&spec)?;
    for (i, s) in scenes.iter().enumerate() {
        save_frame_dir(s, &a.out.join(format!("{}-{i:03}", a.class)))?;
    }
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn cmd_flow(a: &FlowArgs) -> Result<()> {
    if a.depth == 0 || a.stride == 0 {
        bail!(flowood::Error::invalid("depth and stride must be >= 1"));
    }
    let params = FlowParams {
        alpha: a.alpha,
        iters: a.iters,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut vols = Vec::new();
    for (name, seq) in load_scenes(&a.input)? {
        let flows = sequence_flows(&seq, &params)?;
        for end in (a.depth..=flows.len()).step_by(a.stride) {
            let vol = FlowVolume::from_fields(&flows[end - a.depth..end])?;
            let path = a.out.join(format!("{name}-{:03}.ofv", end));
            write_file(&path, &vol.to_bytes())?;
            vols.push(vol);
        }
    }
    if vols.is_empty() {
        bail!(flowood::Error::Empty(format!("scenes are shorter than depth {} + 1", a.depth)));
    }
    let stats = flow_stats(&vols)?;
    write_json(&a.out.join("stats.json"), &stats)?;
    println!("wrote {} volumes to {}", vols.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64) -> Result<()> {
    let spec = ModelSpec {
        depth: a.depth,
        latent_dims: a.latent_dims,
        activation: a.activation,
        height: Some(a.scene.height),
        width: Some(a.scene.width),
        seed,
        ..ModelSpec::new(a.variant)
    };
    let probe = spec.build()?;
    let scenes: Vec<FrameSequence> = match &a.data {
        Some(dir) => load_scenes(dir)?.into_iter().map(|(_, s)| s).collect(),
        None => build_scenes(&a.scene.spec("id", a.scenes, seed))?,
    };
    let w = &a.window;
    let data = model_samples(&probe, &scenes, "id", w.span, w.stride, &w.flow())?;
    if data.is_empty() {
        bail!(flowood::Error::Empty("no in-distribution training windows".into()));
    }
    let hyper = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        seed,
    };
    let model = fit_model(&spec, &inputs(&data), &hyper)?;
    vae::save(&model, &a.out)?;
    println!("trained {} on {} samples; saved to {}", model.variant, data.len(), a.out.display());
    Ok(())
}

fn score_config(model: &ModelBundle, opts: &ScoreOpts, test: &TestArgs, n_scenes: usize, seed: u64) -> Result<ScoreConfig> {
    let mut cfg = opts.config();
    if !model.variant.is_flow() && n_scenes > 0 {
        let scenes = build_scenes(&test.scene.spec("id", n_scenes, seed))?;
        let w = WindowSpec::new(1, test.window.span, test.window.stride);
        let frames: Vec<_> = flowood::eval::data::frame_samples(&scenes, "id", &w)?
            .into_iter()
            .filter_map(|s| match s.sample {
                Sample::Frame(f) => Some(f),
                Sample::Flow(_) => None,
            })
            .collect();
        cfg.baseline = Some(flowood::scoring::entropy_baseline(&frames, cfg.entropy_window)?);
    }
    Ok(cfg)
}

fn cmd_score(a: &ScoreArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = score_config(&model, &a.opts, &a.test, a.baseline_scenes, seed)?;
    let samples = a.test.samples(&model, seed)?;
    let records = score_samples(&model, &samples, &cfg)?;
    let mut buf = Vec::new();
    write_scores_csv(&records, &mut buf)?;
    write_file(&a.out, &buf)?;
    println!("scored {} samples into {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_select(a: &SelectArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let scenes = build_scenes(&a.scene.spec(&a.class, a.scenes, seed))?;
    let w = &a.window;
    // One ordered run of windows per scene.
    let mut calib = Vec::new();
    for seq in &scenes {
        let s = model_samples(&model, std::slice::from_ref(seq), &a.class, w.span, w.stride, &w.flow())?;
        if s.len() >= 2 {
            calib.push(inputs(&s));
        }
    }
    if calib.is_empty() {
        bail!(flowood::Error::Empty("no scene yields two or more windows".into()));
    }
    let report = select_latents(&calib, &model, a.n)?;
    write_json(&a.out, &report)?;
    println!("selected {:?}", report.ranked_indices);
    Ok(())
}

fn cmd_quantize(a: &QuantizeArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let scenes = build_scenes(&a.scene.spec("id", a.calib_scenes, seed))?;
    let w = &a.window;
    let typical = inputs(&model_samples(&model, &scenes, "id", w.span, w.stride, &w.flow())?);
    let cfg = CalibrationConfig {
        precision: a.precision,
        include_decoder: a.include_decoder,
    };
    let qm = calibrate(&model, &typical, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_quant(&qm, &a.out)?;
    println!("calibrated on {} samples; saved to {}", typical.len(), a.out.display());
    Ok(())
}

fn cmd_drift(a: &DriftArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let qm = load_quant(&a.quant)?;
    let samples = a.test.samples(&model, seed)?;
    let report = drift_report(&model, &qm, &samples, &a.opts.config())?;
    let mut buf = Vec::new();
    write_drift_csv(&report, &mut buf)?;
    write_file(&a.out, &buf)?;
    println!(
        "auroc float {:.4} int {:.4} delta {:+.4} rank corr {:.4}",
        report.auroc_float, report.auroc_int8, report.delta, report.score_correlation
    );
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let scene = build_scenes(&a.scene.spec("id", 1, seed))?.remove(0);
    let frames = scene.frames();
    let flow = a.window.flow();
    let mut reports = vec![bench(&model, frames, &flow, a.runs)?];
    if let Some(q) = &a.quant {
        let qm = load_quant(q)?;
        for exec in [Execution::Fused, Execution::Split] {
            reports.push(bench(&(&qm, exec), frames, &flow, a.runs)?);
        }
    }
    let mut buf = Vec::new();
    write_bench_csv(&reports, &mut buf)?;
    write_file(&a.out, &buf)?;
    for r in &reports {
        println!(
            "{:28} preprocess {:8.3} ms  inference {:8.3} ms  total {:8.3} ms",
            r.label, r.preprocess_ms.mean_ms, r.inference_ms.mean_ms, r.total_ms.mean_ms
        );
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.seed = cfg.seed.wrapping_add(seed);
    let out = a.out.clone().or_else(|| cfg.output.clone());
    let report = run_experiment(&cfg, out.as_deref())?;
    if let Some(dir) = &out {
        write_plots(&emit_plots(&report).unwrap_or_default(), &dir.join("plots"))?;
    }
    let mut stdout = std::io::stdout().lock();
    report.write_summary_csv(&mut stdout)?;
    stdout.flush()?;
    let failed: Vec<_> = report.scenarios.iter().filter(|s| s.error.is_some()).collect();
    if !failed.is_empty() {
        bail!("{} of {} scenarios failed", failed.len(), report.scenarios.len());
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(|e| flowood::Error::io(&a.report, e))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| flowood::Error::format(&a.report, e.to_string()))?;
    let paths = write_plots(&emit_plots(&report)?, &a.out)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(a, seed),
        Cmd::Flow(a) => cmd_flow(a),
        Cmd::Train(a) => cmd_train(a, seed),
        Cmd::Score(a) => cmd_score(a, seed),
        Cmd::SelectLatents(a) => cmd_select(a, seed),
        Cmd::Quantize(a) => cmd_quantize(a, seed),
        Cmd::Drift(a) => cmd_drift(a, seed),
        Cmd::Bench(a) => cmd_bench(a, seed),
        Cmd::Eval(a) => cmd_eval(a, seed),
        Cmd::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .find_map(|c| c.downcast_ref::<flowood::Error>())
                .is_some_and(flowood::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
