//! Command-line front end: synthetic generation, training, detection,
//! evaluation, transfer, ablation sweeps and multi-seed reports.
//!
//! Everything here runs on `f64`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bagdata::{
    generate_synthetic, load_dataset, planted_separators, sample_synthetic, write_dataset, Dataset,
    PlantedTruth, SyntheticConfig,
};
use crate::baselines::{train_baseline, BaselineConfig, BaselineKind};
use crate::detector::{detect_dataset, write_detections_jsonl, DetectConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, render_table, transfer_evaluate, ApMethod, EvalConfig, EvalReport};
use crate::milmodels::{LossKind, VariantSpec};
use crate::trainer::{read_models, train_multiclass, write_models, ModelSet, TrainConfig};

const DEFAULT_HYPERPLANES: usize = 2;
const DEFAULT_HIDDEN_WIDTH: usize = 256;

#[derive(Parser, Debug)]
#[command(name = "mimax", version, about = "Multiple-instance perceptrons for weakly supervised detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted synthetic dataset (FBAG v1).
    GenSynthetic(GenArgs),
    /// Train one model per class and write a MIMX model file.
    Train(TrainArgs),
    /// Run detection and write JSON-lines detections.
    Detect(DetectArgs),
    /// Evaluate a model file on a dataset.
    Eval(EvalArgs),
    /// Evaluate source models on a target dataset over their common classes.
    Transfer(EvalArgs),
    /// Sweep one hyperparameter, one multi-seed experiment per value.
    Ablate(AblateArgs),
    /// Multi-seed train -> detect -> evaluate with per-seed and aggregate reports.
    Report(ExperimentArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw the planted separators from this seed instead of `--seed`;
    /// datasets generated with equal truth seeds share their planted truth.
    #[arg(long = "truth-seed")]
    pub truth_seed: Option<u64>,
    /// Also write the planted separators and instance labels as JSON.
    #[arg(long = "truth-out")]
    pub truth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub classes: usize,
    #[arg(long = "pos", default_value_t = 100)]
    pub positive_bags: usize,
    #[arg(long = "neg", default_value_t = 100)]
    pub negative_bags: usize,
    #[arg(long = "min-regions", default_value_t = 30)]
    pub min_regions: usize,
    #[arg(long = "max-regions", default_value_t = 30)]
    pub max_regions: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 3.0)]
    pub depth: f64,
    #[arg(long = "planted-hyperplanes", default_value_t = 1)]
    pub planted_hyperplanes: usize,
    #[arg(long = "witness-rate", default_value_t = 0.1)]
    pub witness_rate: f64,
    #[arg(long = "objectness-corr", default_value_t = 0.8)]
    pub objectness_correlation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
}

impl GenArgs {
    fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            dim: self.dim,
            num_classes: self.classes,
            positive_bags: self.positive_bags,
            negative_bags: self.negative_bags,
            min_regions: self.min_regions,
            max_regions: self.max_regions,
            margin: self.margin,
            spread: self.spread,
            depth: self.depth,
            hyperplanes: self.planted_hyperplanes,
            witness_rate: self.witness_rate,
            objectness_correlation: self.objectness_correlation,
            noise_std: self.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Linear,
    Polyhedral,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Tanh,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Max,
    Maxa,
}

/// Training hyperparameters. A JSON `--config` file is applied first; flags win.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Number of hyperplanes J of the polyhedral model.
    #[arg(long)]
    pub hyperplanes: Option<usize>,
    /// Hidden-layer width L.
    #[arg(long = "hidden-width")]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long = "C")]
    pub c: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Train and detect without objectness weighting.
    #[arg(long = "no-score")]
    pub no_score: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train the MAX or MAX-A baseline instead of a multiple-instance model.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let file: Option<Value> = match &self.config {
            Some(path) => Some(serde_json::from_slice(&fs::read(path)?)?),
            None => None,
        };
        let file_variant: Option<VariantSpec> = file
            .as_ref()
            .and_then(|v| v.get("variant"))
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()?;
        let variant = match (self.variant, file_variant) {
            (Some(VariantArg::Linear), _) | (None, None | Some(VariantSpec::Linear)) => VariantSpec::Linear,
            (Some(VariantArg::Polyhedral), _) | (None, Some(VariantSpec::Polyhedral { .. })) => {
                let from_file = match file_variant {
                    Some(VariantSpec::Polyhedral { hyperplanes }) => Some(hyperplanes),
                    _ => None,
                };
                VariantSpec::Polyhedral {
                    hyperplanes: self.hyperplanes.or(from_file).unwrap_or(DEFAULT_HYPERPLANES),
                }
            }
            (Some(VariantArg::Hidden), _) | (None, Some(VariantSpec::Hidden { .. })) => {
                let from_file = match file_variant {
                    Some(VariantSpec::Hidden { width }) => Some(width),
                    _ => None,
                };
                VariantSpec::Hidden {
                    width: self.hidden_width.or(from_file).unwrap_or(DEFAULT_HIDDEN_WIDTH),
                }
            }
        };

        let mut merged = serde_json::to_value(TrainConfig::for_variant(variant))?;
        if let Some(Value::Object(fields)) = file {
            for (k, v) in fields {
                if k != "variant" {
                    merged[k.as_str()] = v;
                }
            }
        }
        let mut config: TrainConfig = serde_json::from_value(merged)?;
        config.variant = variant;
        if let Some(v) = self.lr {
            config.learning_rate = v;
        }
        if let Some(v) = self.iters {
            config.iterations = v;
        }
        if let Some(v) = self.batch {
            config.batch_bags = v;
        }
        if let Some(v) = self.restarts {
            config.restarts = v;
        }
        if let Some(v) = self.c {
            config.c = v;
        }
        if let Some(v) = self.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = self.loss {
            config.loss = match v {
                LossArg::Tanh => LossKind::Tanh,
                LossArg::Hinge => LossKind::Hinge,
            };
        }
        if self.no_score {
            config.use_score = false;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn baseline_config(&self) -> Option<BaselineConfig> {
        self.baseline.map(|b| BaselineConfig {
            kind: match b {
                BaselineArg::Max => BaselineKind::Max,
                BaselineArg::Maxa => BaselineKind::MaxA,
            },
            ..BaselineConfig::default()
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct DetectFlags {
    #[arg(long = "iou-nms", default_value_t = 0.3)]
    pub iou_nms: f64,
    #[arg(long = "conf-thresh", default_value_t = 0.05)]
    pub conf_thresh: f64,
}

impl DetectFlags {
    pub fn config(&self) -> DetectConfig {
        DetectConfig {
            confidence_threshold: self.conf_thresh,
            nms_iou: self.iou_nms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApMethodArg {
    AllPoint,
    ElevenPoint,
}

#[derive(Args, Debug, Clone)]
pub struct EvalFlags {
    #[arg(long = "iou-eval", default_value_t = 0.5)]
    pub iou_eval: f64,
    #[arg(long = "ap-method", value_enum, default_value = "all-point")]
    pub ap_method: ApMethodArg,
}

impl EvalFlags {
    pub fn config(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.iou_eval,
            ap_method: match self.ap_method {
                ApMethodArg::AllPoint => ApMethod::AllPoint,
                ApMethodArg::ElevenPoint => ApMethod::ElevenPoint,
            },
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long = "model-out")]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DetectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// JSON report path; the text table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    /// Training dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluation dataset; defaults to the training dataset.
    #[arg(long = "test-dataset")]
    pub test_dataset: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub detect: DetectFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

impl ExperimentArgs {
    pub fn spec(&self) -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            train_dataset: self.dataset.clone(),
            test_dataset: self.test_dataset.clone(),
            train: self.train.resolve()?,
            baseline: self.train.baseline_config(),
            detect: self.detect.config(),
            eval: self.eval.config(),
            runs: self.runs,
            jobs: self.jobs,
            out_dir: self.out_dir.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum AblationAxis {
    #[value(name = "use_score")]
    UseScore,
    #[value(name = "loss_kind")]
    LossKind,
    #[value(name = "restarts")]
    Restarts,
    #[value(name = "batch")]
    Batch,
    #[value(name = "C")]
    C,
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::UseScore => "use_score",
            AblationAxis::LossKind => "loss_kind",
            AblationAxis::Restarts => "restarts",
            AblationAxis::Batch => "batch",
            AblationAxis::C => "C",
        }
    }

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(&self, config: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let bad = || Error::Config(format!("invalid value {value:?} for axis {}", self.name()));
        let mut out = config.clone();
        match self {
            AblationAxis::UseScore => out.use_score = value.parse().map_err(|_| bad())?,
            AblationAxis::LossKind => {
                out.loss = match value {
                    "tanh" => LossKind::Tanh,
                    "hinge" => LossKind::Hinge,
                    _ => return Err(bad()),
                }
            }
            AblationAxis::Restarts => out.restarts = value.parse().map_err(|_| bad())?,
            AblationAxis::Batch => out.batch_bags = value.parse().map_err(|_| bad())?,
            AblationAxis::C => out.c = value.parse().map_err(|_| bad())?,
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_enum)]
    pub axis: AblationAxis,
    /// Comma-separated values of the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

/// One multi-seed experiment, fully resolved.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub train_dataset: PathBuf,
    pub test_dataset: Option<PathBuf>,
    pub train: TrainConfig,
    pub baseline: Option<BaselineConfig>,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub runs: usize,
    /// Worker threads; never recorded in reports, which must not depend on it.
    pub jobs: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub class: String,
    pub ap: Option<Stat>,
    pub classification_ap: Option<Stat>,
    pub proposal_recall: Option<Stat>,
    pub training_loss: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentAggregate {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub train_dataset: String,
    pub test_dataset: String,
    pub config: TrainConfig,
    pub baseline: Option<BaselineConfig>,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub classes: Vec<ClassAggregate>,
    pub map: Option<Stat>,
    /// Per class, one message per seed whose training failed.
    pub failures: BTreeMap<String, Vec<String>>,
}

impl ExperimentAggregate {
    pub fn from_reports(spec: &ExperimentSpec, train_name: &str, test_name: &str, reports: &[EvalReport]) -> Self {
        let mut names: Vec<String> = Vec::new();
        for r in reports {
            for c in &r.classes {
                if !names.contains(&c.class) {
                    names.push(c.class.clone());
                }
            }
        }
        let collect = |class: &str, f: fn(&crate::evaluator::ClassReport) -> Option<f64>| {
            let vals: Vec<f64> = reports
                .iter()
                .flat_map(|r| r.classes.iter().filter(|c| c.class == class).filter_map(f))
                .collect();
            Stat::of(&vals)
        };
        let classes = names
            .iter()
            .map(|class| ClassAggregate {
                class: class.clone(),
                ap: collect(class, |c| c.ap),
                classification_ap: collect(class, |c| c.classification_ap),
                proposal_recall: collect(class, |c| c.proposal_recall),
                training_loss: collect(class, |c| c.training_loss),
            })
            .collect();
        let maps: Vec<f64> = reports.iter().filter_map(|r| r.map).collect();
        let mut failures: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in reports {
            if let Some(Value::Object(f)) = r.provenance.get("failures") {
                for (class, msg) in f {
                    failures
                        .entry(class.clone())
                        .or_default()
                        .push(msg.as_str().unwrap_or_default().to_string());
                }
            }
        }
        Self {
            runs: spec.runs,
            seeds: (0..spec.runs).map(|r| run_seed(spec.train.seed, r)).collect(),
            train_dataset: train_name.to_string(),
            test_dataset: test_name.to_string(),
            config: spec.train.clone(),
            baseline: spec.baseline.clone(),
            detect: spec.detect,
            eval: spec.eval,
            classes,
            map: Stat::of(&maps),
            failures,
        }
    }

    pub fn to_text_table(&self) -> String {
        let fmt = |s: &Option<Stat>| {
            s.map_or("-".to_string(), |s| format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std))
        };
        let mut header = vec!["metric".to_string()];
        header.extend(self.classes.iter().map(|c| c.class.clone()));
        header.push("mean".into());
        let mut ap_row = vec!["AP (%)".to_string()];
        ap_row.extend(self.classes.iter().map(|c| fmt(&c.ap)));
        ap_row.push(fmt(&self.map));
        let mut cls_row = vec!["Classif AP (%)".to_string()];
        cls_row.extend(self.classes.iter().map(|c| fmt(&c.classification_ap)));
        cls_row.push("".into());
        render_table(&header, &[ap_row, cls_row])
    }
}

pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )));
    }
    Ok(())
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Trains every class with either the multiple-instance trainer or a baseline.
pub fn train_models(
    dataset: &Dataset<f64>,
    config: &TrainConfig,
    baseline: Option<&BaselineConfig>,
) -> (ModelSet<f64>, BTreeMap<String, Error>) {
    match baseline {
        None => {
            let out = train_multiclass(dataset, config);
            (out.models, out.failures)
        }
        Some(b) => {
            let results: Vec<_> = dataset
                .class_names
                .par_iter()
                .map(|c| (c.clone(), train_baseline(dataset, c, b, config.seed)))
                .collect();
            let mut models = ModelSet::new();
            let mut failures = BTreeMap::new();
            for (c, r) in results {
                match r {
                    Ok(m) => {
                        models.insert(c, m);
                    }
                    Err(e) => {
                        failures.insert(c, e);
                    }
                }
            }
            (models, failures)
        }
    }
}

fn run_once(spec: &ExperimentSpec, train: &Dataset<f64>, test: &Dataset<f64>, run: usize) -> Result<EvalReport> {
    let seed = run_seed(spec.train.seed, run);
    let config = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let (models, failures) = train_models(train, &config, spec.baseline.as_ref());
    if models.is_empty() {
        let detail: Vec<String> = failures.iter().map(|(c, e)| format!("{c}: {e}")).collect();
        return Err(Error::Training(format!("no class could be trained ({})", detail.join("; "))));
    }
    let mut report = evaluate(&models, test, &spec.detect, &spec.eval)?;
    let provenance = report.provenance.as_object_mut().expect("provenance is an object");
    provenance.insert("run".into(), json!(run));
    provenance.insert("seed".into(), json!(seed));
    provenance.insert("train_dataset".into(), json!(train.name));
    provenance.insert("baseline".into(), json!(spec.baseline));
    provenance.insert(
        "failures".into(),
        Value::Object(failures.iter().map(|(c, e)| (c.clone(), json!(e.to_string()))).collect()),
    );
    Ok(report)
}

/// Runs train -> detect -> evaluate once per seed, writes `run_NNN.json`
/// per seed plus `aggregate.json` and `aggregate.txt` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentAggregate> {
    if spec.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    require_exists(&spec.train_dataset)?;
    if let Some(p) = &spec.test_dataset {
        require_exists(p)?;
    }
    spec.train.validate()?;
    let train: Dataset<f64> = load_dataset(&spec.train_dataset)?;
    let test: Dataset<f64> = match &spec.test_dataset {
        Some(p) => load_dataset(p)?,
        None => train.clone(),
    };

    let reports: Vec<EvalReport> = thread_pool(spec.jobs)?.install(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|run| run_once(spec, &train, &test, run))
            .collect::<Result<_>>()
    })?;

    let aggregate = ExperimentAggregate::from_reports(spec, &train.name, &test.name, &reports);
    fs::create_dir_all(&spec.out_dir)?;
    for (run, report) in reports.iter().enumerate() {
        write_atomic(&spec.out_dir.join(format!("run_{run:03}.json")), report.to_json()?.as_bytes())?;
    }
    write_atomic(
        &spec.out_dir.join("aggregate.json"),
        (serde_json::to_string_pretty(&aggregate)? + "\n").as_bytes(),
    )?;
    write_atomic(&spec.out_dir.join("aggregate.txt"), aggregate.to_text_table().as_bytes())?;
    Ok(aggregate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub map: Option<Stat>,
    /// Mean over classes of each class's mean selected training loss.
    pub training_loss: Option<f64>,
    pub class_ap: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let classes: Vec<&String> = self.rows.first().map(|r| r.class_ap.keys().collect()).unwrap_or_default();
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = format!("{},map_mean,map_std,training_loss", self.axis.name());
        for c in &classes {
            out.push_str(&format!(",{c}_ap"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                r.value,
                opt(r.map.map(|s| s.mean)),
                opt(r.map.map(|s| s.std)),
                opt(r.training_loss)
            ));
            for c in &classes {
                out.push_str(&format!(",{}", opt(r.class_ap.get(*c).copied().flatten())));
            }
            out.push('\n');
        }
        out
    }
}

/// One [`run_experiment`] per value in `out_dir/<axis>=<value>/`, with
/// everything else fixed; the summary goes to `ablation.csv` and `ablation.json`.
pub fn run_ablation(spec: &ExperimentSpec, axis: AblationAxis, values: &[String]) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(&spec.train, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, config) in values.iter().zip(configs) {
        let sub = ExperimentSpec {
            train: config,
            out_dir: spec.out_dir.join(format!("{}={value}", axis.name())),
            ..spec.clone()
        };
        let aggregate = run_experiment(&sub)?;
        let losses: Vec<f64> = aggregate
            .classes
            .iter()
            .filter_map(|c| c.training_loss.map(|s| s.mean))
            .collect();
        rows.push(AblationRow {
            value: value.clone(),
            map: aggregate.map,
            training_loss: Stat::of(&losses).map(|s| s.mean),
            class_ap: aggregate
                .classes
                .iter()
                .map(|c| (c.class.clone(), c.ap.map(|s| s.mean)))
                .collect(),
        });
    }
    let table = AblationTable { axis, rows };
    fs::create_dir_all(&spec.out_dir)?;
    write_atomic(&spec.out_dir.join("ablation.csv"), table.to_csv().as_bytes())?;
    write_atomic(
        &spec.out_dir.join("ablation.json"),
        (serde_json::to_string_pretty(&table)? + "\n").as_bytes(),
    )?;
    Ok(table)
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    separators: Vec<Vec<Value>>,
    instance_labels: &'a [Vec<Vec<crate::bagdata::Label>>],
}

fn write_truth(truth: &PlantedTruth<f64>, path: &Path) -> Result<()> {
    let record = TruthRecord {
        separators: truth
            .separators
            .iter()
            .map(|planes| {
                planes
                    .iter()
                    .map(|p| json!({"weights": p.weights, "bias": p.bias}))
                    .collect()
            })
            .collect(),
        instance_labels: &truth.instance_labels,
    };
    fs::write(path, serde_json::to_vec(&record)?)?;
    Ok(())
}

fn load_inputs(dataset: &Path, model: &Path) -> Result<(Dataset<f64>, ModelSet<f64>)> {
    require_exists(dataset)?;
    require_exists(model)?;
    Ok((load_dataset(dataset)?, read_models(model)?))
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        write_atomic(path, report.to_json()?.as_bytes())?;
    }
    print!("{}", report.to_text_table());
    if let Some(map) = report.map {
        println!("mAP: {:.2}%", 100.0 * map);
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(args) => {
            let config = args.synthetic_config();
            let (dataset, truth) = match args.truth_seed {
                Some(ts) => {
                    let separators = planted_separators::<f64>(&config, ts)?;
                    sample_synthetic(&config, &separators, args.seed)?
                }
                None => generate_synthetic::<f64>(&config, args.seed)?,
            };
            write_dataset(&dataset, &args.out)?;
            if let Some(path) = &args.truth_out {
                write_truth(&truth, path)?;
            }
            let gt = dataset.ground_truth.as_ref().map_or(0, Vec::len);
            println!(
                "wrote {} images, {} classes, {} ground-truth boxes to {}",
                dataset.bags.len(),
                dataset.num_classes(),
                gt,
                args.out.display()
            );
            Ok(())
        }
        Command::Train(args) => {
            require_exists(&args.dataset)?;
            let config = args.train.resolve()?;
            let dataset: Dataset<f64> = load_dataset(&args.dataset)?;
            let baseline = args.train.baseline_config();
            let (models, failures) =
                thread_pool(args.jobs)?.install(|| train_models(&dataset, &config, baseline.as_ref()));
            for (class, e) in &failures {
                eprintln!("class {class}: {e}");
            }
            if models.is_empty() {
                return Err(Error::Training("no class could be trained".into()));
            }
            write_models(&models, &args.model_out)?;
            for m in models.values() {
                println!(
                    "{}: restart {} of {}, training loss {:.6}",
                    m.class_name,
                    m.selected_restart,
                    m.restart_losses.len(),
                    m.selected_loss()
                );
            }
            Ok(())
        }
        Command::Detect(args) => {
            let (dataset, models) = load_inputs(&args.dataset, &args.model)?;
            let dets = detect_dataset(&models, &dataset, &args.detect.config())?;
            match &args.out {
                Some(path) => {
                    let mut w = BufWriter::new(fs::File::create(path)?);
                    write_detections_jsonl(&mut w, &dets)?;
                    w.flush()?;
                }
                None => write_detections_jsonl(io::stdout().lock(), &dets)?,
            }
            Ok(())
        }
        Command::Eval(args) => {
            let (dataset, models) = load_inputs(&args.dataset, &args.model)?;
            let report = evaluate(&models, &dataset, &args.detect.config(), &args.eval.config())?;
            emit_report(&report, args.out.as_deref())
        }
        Command::Transfer(args) => {
            let (dataset, models) = load_inputs(&args.dataset, &args.model)?;
            let report = transfer_evaluate(&models, &dataset, &args.detect.config(), &args.eval.config())?;
            emit_report(&report, args.out.as_deref())
        }
        Command::Ablate(args) => {
            let spec = args.experiment.spec()?;
            let table = run_ablation(&spec, args.axis, &args.values)?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Report(args) => {
            let aggregate = run_experiment(&args.spec()?)?;
            print!("{}", aggregate.to_text_table());
            Ok(())
        }
    }
}

/// Parses `args` and runs; errors are printed and mapped to exit code 1.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
