//! Config-driven experiments: train (or load) a model per scenario, score
//! every test class and collect ROC and operating-point reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{build_scenes, flow_samples, frame_samples, inputs, LabeledSample, SceneSetSpec, WindowSpec};
use super::metrics::{micro_average, point_metrics, roc, PointMetrics, RocReport};
use crate::error::{Error, Result};
use crate::flow::{estimate_prior, FlowParams, FlowVolume};
use crate::scoring::{entropy_baseline, score_samples, split_scores, write_scores_csv, ScoreConfig, ScoreKind, ScoreRecord};
use crate::vae::{self, Activation, ArchConfig, ModelBundle, ObjectiveConfig, Sample, TrainConfig, Variant};
use crate::videoio::{FrameSequence, SceneClass};

pub const SUMMARY_CSV_HEADER: &str = "scenario,variant,profile,class,n_id,n_ood,auroc,threshold,tpr,precision,f1,mean_id,mean_ood,status";

/// Geometry preset a model starts from before overrides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchPreset {
    #[default]
    Desk,
    Paper,
}

/// How to build a model: a variant preset plus optional overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    #[serde(default)]
    pub preset: ArchPreset,
    pub depth: Option<usize>,
    pub latent_dims: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub filters: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub objective: Option<ObjectiveConfig>,
    /// Fraction of training volumes used to estimate a data-driven prior.
    #[serde(default = "default_fraction")]
    pub prior_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fraction() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            preset: ArchPreset::Desk,
            depth: None,
            latent_dims: None,
            height: None,
            width: None,
            filters: None,
            activation: None,
            objective: None,
            prior_fraction: default_fraction(),
            seed: 0,
        }
    }

    pub fn arch(&self) -> Result<ArchConfig> {
        let mut a = match self.preset {
            ArchPreset::Desk => self.variant.desk_arch(),
            ArchPreset::Paper => self.variant.paper_arch(),
        };
        if let Some(d) = self.depth {
            a.depth = d;
        }
        if let Some(n) = self.latent_dims {
            a.latent_dims = n;
        }
        if let Some(h) = self.height {
            a.height = h;
        }
        if let Some(w) = self.width {
            a.width = w;
        }
        if let Some(f) = &self.filters {
            a.filters = f.clone();
        }
        if let Some(act) = self.activation {
            a.activation = act;
        }
        if !self.variant.is_flow() && a.depth != 1 {
            return Err(Error::invalid(format!("{} takes single frames; depth must be 1", self.variant)));
        }
        a.validate()?;
        Ok(a)
    }

    pub fn build(&self) -> Result<ModelBundle> {
        let objective = self.objective.unwrap_or_else(|| self.variant.default_objective());
        ModelBundle::with_objective(self.variant, self.arch()?, objective, self.seed)
    }
}

/// Build a model from `spec`, estimate its prior when the variant asks for
/// one, then train it on `data`.
pub fn fit_model(spec: &ModelSpec, data: &[Sample], hyper: &TrainConfig) -> Result<ModelBundle> {
    let mut model = spec.build()?;
    if spec.variant.estimates_prior() {
        let vols: Vec<FlowVolume> = data
            .iter()
            .filter_map(|s| match s {
                Sample::Flow(v) => Some(v.clone()),
                Sample::Frame(_) => None,
            })
            .collect();
        let (h, v) = estimate_prior(&vols, spec.prior_fraction, spec.seed)?;
        model.set_priors(&h, &v)?;
    }
    vae::train(&mut model, data, hyper)?;
    Ok(model)
}

/// Labelled model inputs of the right kind (flow volumes or frames).
pub fn model_samples(
    model: &ModelBundle,
    scenes: &[FrameSequence],
    class: &str,
    span: usize,
    stride: usize,
    flow: &FlowParams,
) -> Result<Vec<LabeledSample>> {
    let w = WindowSpec::new(model.arch.depth, span, stride);
    if model.variant.is_flow() {
        flow_samples(scenes, class, &w, flow)
    } else {
        frame_samples(scenes, class, &w)
    }
}

/// One train/test run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    /// In-distribution training scenes; required unless `load` is given.
    pub train: Option<SceneSetSpec>,
    #[serde(default)]
    pub hyper: TrainConfig,
    /// Previously saved model to evaluate instead of training.
    pub load: Option<PathBuf>,
    /// Flow pairs every scored window spans, shared across depths.
    #[serde(default = "default_span")]
    pub span: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub score: ScoreConfig,
    /// Test sets; each profile needs an `id` set to compare against.
    pub tests: Vec<SceneSetSpec>,
}

fn default_span() -> usize {
    6
}
fn default_stride() -> usize {
    2
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let ctx = |e: Error| Error::Config(format!("scenario {:?}: {e}", self.name));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("scenario name {:?} is not a plain identifier", self.name)));
        }
        self.model.arch().map_err(ctx)?;
        match (&self.train, &self.load) {
            (None, None) => return Err(ctx(Error::invalid("needs either `train` or `load`"))),
            (Some(t), _) => {
                t.validate().map_err(ctx)?;
                if SceneClass::parse(&t.class).map_err(ctx)? != SceneClass::Id {
                    return Err(ctx(Error::invalid("training scenes must be class `id`")));
                }
            }
            _ => {}
        }
        if self.stride == 0 || self.span == 0 {
            return Err(ctx(Error::invalid("span and stride must be >= 1")));
        }
        if self.tests.is_empty() {
            return Err(ctx(Error::Empty("no test classes".into())));
        }
        for t in &self.tests {
            t.validate().map_err(ctx)?;
        }
        for (profile, classes) in self.test_groups() {
            if !classes.iter().any(|t| t.class == "id") {
                return Err(ctx(Error::invalid(format!("profile {profile:?} has OoD tests but no `id` set"))));
            }
            if !classes.iter().any(|t| t.class != "id") {
                return Err(ctx(Error::invalid(format!("profile {profile:?} has no OoD test class"))));
            }
        }
        Ok(())
    }

    fn test_groups(&self) -> BTreeMap<&str, Vec<&SceneSetSpec>> {
        let mut g: BTreeMap<&str, Vec<&SceneSetSpec>> = BTreeMap::new();
        for t in &self.tests {
            g.entry(t.profile.as_str()).or_default().push(t);
        }
        g
    }
}

/// A set of scenarios sharing flow settings and a base seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Added to every scene, model and training seed.
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default = "default_tpr")]
    pub target_tpr: f64,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

fn default_tpr() -> f64 {
    0.95
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios".into()));
        }
        if !(self.target_tpr > 0.0 && self.target_tpr <= 1.0) {
            return Err(Error::Config(format!("target_tpr {} outside (0, 1]", self.target_tpr)));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !names.insert(&s.name) {
                return Err(Error::Config(format!("duplicate scenario name {:?}", s.name)));
            }
        }
        Ok(())
    }

    /// Copy of a scenario with the base seed folded into every seed.
    fn seeded(&self, s: &Scenario) -> Scenario {
        let mut s = s.clone();
        let add = |x: &mut u64| *x = x.wrapping_add(self.seed);
        add(&mut s.model.seed);
        add(&mut s.hyper.seed);
        if let Some(t) = s.train.as_mut() {
            add(&mut t.seed);
        }
        for t in &mut s.tests {
            add(&mut t.seed);
        }
        s
    }
}

/// Metrics of one OoD class against the ID set of its profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub scenario: String,
    pub variant: Variant,
    pub profile: String,
    pub class: String,
    pub roc: RocReport,
    pub point: PointMetrics,
    pub mean_id: f64,
    pub mean_ood: f64,
    pub box_id: BoxStats,
    pub box_ood: BoxStats,
}

/// Five-number summary of a score distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to summarise".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (i, f) = (x.floor() as usize, x.fract());
            if i + 1 < v.len() {
                v[i] + f * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Ok(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Everything one scenario produced, or the error that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub variant: Variant,
    pub error: Option<String>,
    pub classes: Vec<ClassReport>,
    /// Pooled decisions over all OoD classes of the scenario.
    pub micro: Option<PointMetrics>,
    #[serde(skip)]
    pub records: Vec<ScoreRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenarios: Vec<ScenarioOutcome>,
}

impl ExperimentReport {
    pub fn class_reports(&self) -> impl Iterator<Item = &ClassReport> {
        self.scenarios.iter().flat_map(|s| &s.classes)
    }

    pub fn find(&self, scenario: &str, class: &str) -> Option<&ClassReport> {
        self.class_reports().find(|c| c.scenario == scenario && c.class == class)
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SUMMARY_CSV_HEADER}")?;
        for s in &self.scenarios {
            if let Some(e) = &s.error {
                let msg = e.replace([',', '\n'], ";");
                writeln!(w, "{},{},,,,,,,,,,,,error: {msg}", s.name, s.variant)?;
                continue;
            }
            for c in &s.classes {
                let p = &c.point;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},ok",
                    c.scenario,
                    c.variant,
                    c.profile,
                    c.class,
                    c.roc.n_id,
                    c.roc.n_ood,
                    c.roc.auroc,
                    p.threshold.map_or(String::new(), |t| t.to_string()),
                    p.tpr,
                    p.precision,
                    p.f1,
                    c.mean_id,
                    c.mean_ood
                )?;
            }
            if let Some(p) = &s.micro {
                writeln!(
                    w,
                    "{},{},all,micro-average,{},{},,,{},{},{},,,ok",
                    s.name,
                    s.variant,
                    p.tn + p.fp,
                    p.tp + p.fn_,
                    p.tpr,
                    p.precision,
                    p.f1
                )?;
            }
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    scenario: Scenario,
    dir: Option<PathBuf>,
}

impl Run<'_> {
    fn model(&self) -> Result<(ModelBundle, Vec<FrameSequence>)> {
        let s = &self.scenario;
        let train_scenes = match &s.train {
            Some(t) => build_scenes(t)?,
            None => Vec::new(),
        };
        let model = match &s.load {
            Some(path) => vae::load_expecting(path, s.model.variant)?,
            None => {
                let probe = s.model.build()?;
                let data = model_samples(&probe, &train_scenes, "id", s.span, s.stride, &self.cfg.flow)?;
                if data.is_empty() {
                    return Err(Error::Empty(format!("scenario {:?} produced no training windows", s.name)));
                }
                fit_model(&s.model, &inputs(&data), &s.hyper)?
            }
        };
        if let Some(dir) = &self.dir {
            vae::save(&model, &dir.join("model"))?;
        }
        Ok((model, train_scenes))
    }

    fn score_config(&self, model: &ModelBundle, train_scenes: &[FrameSequence]) -> Result<ScoreConfig> {
        let mut sc = self.scenario.score.clone();
        if sc.kind_for(model) == ScoreKind::Recon && sc.baseline.is_none() && !model.variant.is_flow() {
            let w = WindowSpec::new(1, self.scenario.span, self.scenario.stride);
            let frames: Vec<_> = frame_samples(train_scenes, "id", &w)?
                .into_iter()
                .filter_map(|s| match s.sample {
                    Sample::Frame(f) => Some(f),
                    Sample::Flow(_) => None,
                })
                .collect();
            if !frames.is_empty() {
                sc.baseline = Some(entropy_baseline(&frames, sc.entropy_window)?);
            }
        }
        Ok(sc)
    }

    fn execute(&self) -> Result<(Vec<ClassReport>, Option<PointMetrics>, Vec<ScoreRecord>)> {
        let s = &self.scenario;
        let (model, train_scenes) = self.model()?;
        let sc = self.score_config(&model, &train_scenes)?;
        let mut reports = Vec::new();
        let mut points = Vec::new();
        let mut all = Vec::new();
        for (profile, tests) in s.test_groups() {
            let mut by_class: Vec<(String, Vec<ScoreRecord>)> = Vec::new();
            for t in tests {
                let scenes = build_scenes(t)?;
                let samples = model_samples(&model, &scenes, &t.class, s.span, s.stride, &self.cfg.flow)?;
                if samples.is_empty() {
                    return Err(Error::Empty(format!("{profile}/{} produced no scoreable windows", t.class)));
                }
                let mut recs = score_samples(&model, &samples, &sc)?;
                for r in &mut recs {
                    r.sample_id = format!("{profile}-{}", r.sample_id);
                }
                match by_class.iter_mut().find(|(c, _)| *c == t.class) {
                    Some((_, v)) => v.extend(recs),
                    None => by_class.push((t.class.clone(), recs)),
                }
            }
            let id: Vec<f64> = by_class
                .iter()
                .filter(|(c, _)| c == "id")
                .flat_map(|(_, r)| split_scores(r).0)
                .collect();
            for (class, recs) in &by_class {
                all.extend(recs.iter().cloned());
                if class == "id" {
                    continue;
                }
                let ood = split_scores(recs).1;
                let point = point_metrics(&id, &ood, self.cfg.target_tpr)?;
                points.push(point);
                reports.push(ClassReport {
                    scenario: s.name.clone(),
                    variant: model.variant,
                    profile: profile.to_string(),
                    class: class.clone(),
                    roc: roc(&id, &ood)?,
                    point,
                    mean_id: mean(&id),
                    mean_ood: mean(&ood),
                    box_id: BoxStats::of(&id)?,
                    box_ood: BoxStats::of(&ood)?,
                });
            }
        }
        let micro = micro_average(&points).ok();
        Ok((reports, micro, all))
    }
}

/// Run every scenario. A failing scenario is recorded in the report and
/// does not stop the others; configuration errors abort before any work.
pub fn run_experiment(cfg: &ExperimentConfig, output: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let output = output.map(Path::to_path_buf).or_else(|| cfg.output.clone());
    if let Some(dir) = &output {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut outcomes = Vec::new();
    for s in &cfg.scenarios {
        let dir = output.as_ref().map(|d| d.join(&s.name));
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let run = Run {
            cfg,
            scenario: cfg.seeded(s),
            dir: dir.clone(),
        };
        let outcome = match run.execute() {
            Ok((classes, micro, records)) => ScenarioOutcome {
                name: s.name.clone(),
                variant: s.model.variant,
                error: None,
                classes,
                micro,
                records,
            },
            Err(e) => ScenarioOutcome {
                name: s.name.clone(),
                variant: s.model.variant,
                error: Some(e.to_string()),
                classes: Vec::new(),
                micro: None,
                records: Vec::new(),
            },
        };
        if let Some(d) = &dir {
            write_scenario(d, &run.scenario, &outcome)?;
        }
        outcomes.push(outcome);
    }
    let report = ExperimentReport { scenarios: outcomes };
    if let Some(dir) = &output {
        let path = dir.join("summary.csv");
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a Scenario,
    outcome: &'a ScenarioOutcome,
}

fn write_scenario(dir: &Path, scenario: &Scenario, outcome: &ScenarioOutcome) -> Result<()> {
    let path = dir.join("scores.csv");
    let mut buf = Vec::new();
    write_scores_csv(&outcome.records, &mut buf).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join("manifest.json"), &Manifest { scenario, outcome })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
