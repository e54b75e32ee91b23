//! Transfer scenarios: config, seed repetition, evaluation and reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{format_cell, mean_auc, mean_std, per_subject_auc, SubjectAuc};
use super::split::{split_semi_supervised, AccessLog, LabeledSubjects, SplitSpec, TrackedLabels};
use super::train::{train, EpochRecord, Method, MethodSpec, ModelOptions, OptimizerConfig, TrainConfig, TrainData};
use super::train::{TrainStatus, TrainedModel};
use crate::alignment::{align_per_subject, ReferenceTrials};
use crate::data::io::read_dataset;
use crate::data::{Species, TrialSet};
use crate::error::{Error, Result};
use crate::losses::{KernelSpec, LossWeights};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Target domain only, trained on its first l% labeled trials.
    Within,
    /// Labeled source, unlabeled target.
    Unsupervised,
    /// Labeled source plus the first l% labeled target trials.
    SemiSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Ictal vs interictal, 1 s or 4 s windows.
    #[default]
    Detection,
    /// Preictal vs interictal, 10 s windows.
    Prediction,
}

impl TaskKind {
    pub fn default_window_s(self) -> f64 {
        match self {
            TaskKind::Detection => 1.0,
            TaskKind::Prediction => 10.0,
        }
    }
}

/// Experiment configuration as read from a task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Source dataset directory (unused by the within scenario).
    #[serde(default)]
    pub source: Option<PathBuf>,
    pub target: PathBuf,
    pub scenario: Scenario,
    /// Labeled percentage `l` of each target class.
    #[serde(default)]
    pub label_fraction: f64,
    /// Defaults: `within` for the within scenario, `msa` otherwise.
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub task_kind: TaskKind,
    #[serde(default)]
    pub labeled_subjects: LabeledSubjects,
    #[serde(default = "yes")]
    pub balanced_sampling: bool,
    #[serde(default = "yes")]
    pub exclude_boundary: bool,
    #[serde(default)]
    pub ea_reference: ReferenceTrials,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub stop_gradient_teacher: bool,
    #[serde(default = "yes")]
    pub share_weights: bool,
    #[serde(default = "yes")]
    pub ce_on_selection: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, label_fraction: f64, method: Method) -> Self {
        ExperimentConfig {
            source: None,
            target: PathBuf::new(),
            scenario,
            label_fraction,
            method: Some(method),
            weights: LossWeights::default(),
            seeds: default_seeds(),
            optimizer: OptimizerConfig::default(),
            task_kind: TaskKind::Detection,
            labeled_subjects: LabeledSubjects::All,
            balanced_sampling: true,
            exclude_boundary: true,
            ea_reference: ReferenceTrials::All,
            kernel: KernelSpec::default(),
            model: ModelOptions::default(),
            stop_gradient_teacher: false,
            share_weights: true,
            ce_on_selection: true,
        }
    }

    pub fn method(&self) -> Method {
        self.method.unwrap_or(match self.scenario {
            Scenario::Within => Method::Within,
            _ => Method::Msa,
        })
    }

    pub fn method_spec(&self) -> MethodSpec {
        let mut spec = self.method().spec(self.weights, self.kernel.clone());
        spec.stop_gradient_teacher = self.stop_gradient_teacher;
        spec.share_weights = self.share_weights;
        spec.ce_on_selection = self.ce_on_selection;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.label_fraction;
        if !(0.0..=100.0).contains(&l) {
            return Err(Error::Config(format!("label_fraction {l} outside [0, 100]")));
        }
        if (l == 0.0) != (self.scenario == Scenario::Unsupervised) {
            return Err(Error::Config("label_fraction must be 0 exactly for the unsupervised scenario".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let m = self.method();
        let ok = match self.scenario {
            Scenario::Within => m == Method::Within,
            Scenario::Unsupervised => matches!(m, Method::SourceOnly | Method::Msa),
            Scenario::SemiSupervised => m != Method::SourceOnly,
        };
        if !ok {
            return Err(Error::Config(format!("method {} does not fit the {:?} scenario", m.name(), self.scenario)));
        }
        self.weights.validate()?;
        self.kernel.validate()
    }
}

/// Description of the transfer being run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTask {
    pub source_dataset: Option<String>,
    pub target_dataset: String,
    /// e.g. `canine-to-human`.
    pub direction: String,
    pub scenario: Scenario,
    pub label_fraction_pct: f64,
    pub task_kind: TaskKind,
}

fn species_tag(s: Species) -> &'static str {
    match s {
        Species::Canine => "canine",
        Species::Human => "human",
    }
}

/// Order-sensitive FNV-1a fingerprint of trial data, labels and subjects.
pub fn dataset_fingerprint<T: Scalar>(t: &TrialSet<T>) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
    };
    for &s in t.data.shape() {
        eat(&(s as u64).to_le_bytes());
    }
    for &v in t.data.data() {
        eat(&(v.as_f64() as f32).to_le_bytes());
    }
    eat(&t.labels);
    for s in &t.subject_ids {
        eat(s.as_bytes());
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub dataset_id: String,
    pub fingerprint: String,
    pub n_trials: usize,
    pub n_channels: usize,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub task: TransferTask,
    pub config: ExperimentConfig,
    pub method: MethodSpec,
    pub source: Option<DatasetRef>,
    pub target: DatasetRef,
    pub n_labeled: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub per_subject: Vec<SubjectAuc>,
    pub mean_auc: f64,
    pub status: TrainStatus,
    pub label_access: AccessLog,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub scenario: Scenario,
    pub label_fraction_pct: f64,
    pub direction: String,
    pub seeds: Vec<SeedResult>,
    pub mean: f64,
    pub std: f64,
    /// `mean$_{\pm std}$` in percent.
    pub cell: String,
    pub manifest: RunManifest,
}

/// One seed's trained model, kept in memory for saving or inspection.
pub struct SeedRun<T> {
    pub model: TrainedModel<T>,
    pub result: SeedResult,
}

/// Per-subject AUC of `model` on the listed target trials.
pub fn evaluate_auc<T: Scalar>(model: &TrainedModel<T>, target: &TrialSet<T>, test: &[usize]) -> Result<Vec<SubjectAuc>> {
    let part = target.select(test);
    let scores = model.predict_scores(&part.data)?;
    per_subject_auc(&scores, &part.labels, &part.subject_ids)
}

/// Applies the method's input alignment to a trial set.
pub fn prepare_inputs<T: Scalar>(spec: &MethodSpec, trials: &TrialSet<T>, reference: ReferenceTrials) -> Result<TrialSet<T>> {
    if spec.use_ea {
        Ok(align_per_subject(trials, reference)?.0)
    } else {
        Ok(trials.clone())
    }
}

/// Runs every seed of an experiment on in-memory datasets.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    source: Option<(&str, &TrialSet<T>)>,
    target: (&str, &TrialSet<T>),
) -> Result<(EvalReport, Vec<SeedRun<T>>)> {
    cfg.validate()?;
    let spec = cfg.method_spec();
    let (target_id, target_raw) = target;
    target_raw.validate()?;
    if spec.use_source && source.is_none() {
        return Err(Error::Config(format!("{} needs a source dataset", spec.name)));
    }
    let source = if spec.use_source { source } else { None };
    if let Some((_, s)) = source {
        s.validate()?;
        if s.n_samples() != target_raw.n_samples() {
            return Err(Error::shape(
                format!("source trials of {} samples", target_raw.n_samples()),
                s.n_samples(),
            ));
        }
    }

    let split: SplitSpec =
        split_semi_supervised(target_raw, cfg.label_fraction, cfg.labeled_subjects, cfg.exclude_boundary)?;
    let labeled = split.labeled();
    let test = split.test();
    if test.is_empty() {
        return Err(Error::Empty("no target test trials".into()));
    }
    let src = source.map(|(_, s)| prepare_inputs(&spec, s, ReferenceTrials::All)).transpose()?;
    let tgt = prepare_inputs(&spec, target_raw, cfg.ea_reference)?;

    let direction = match source {
        Some((_, s)) => format!("{}-to-{}", species_tag(s.species), species_tag(target_raw.species)),
        None => format!("{}-within", species_tag(target_raw.species)),
    };
    let dref = |id: &str, t: &TrialSet<T>| DatasetRef {
        dataset_id: id.into(),
        fingerprint: dataset_fingerprint(t),
        n_trials: t.n_trials(),
        n_channels: t.n_channels(),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        task: TransferTask {
            source_dataset: source.map(|(id, _)| id.to_string()),
            target_dataset: target_id.into(),
            direction: direction.clone(),
            scenario: cfg.scenario,
            label_fraction_pct: cfg.label_fraction,
            task_kind: cfg.task_kind,
        },
        config: cfg.clone(),
        method: spec.clone(),
        source: source.map(|(id, s)| dref(id, s)),
        target: dref(target_id, target_raw),
        n_labeled: labeled.len(),
        n_test: test.len(),
    };

    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let tracker = TrackedLabels::new(target_raw, &split);
        let data = TrainData {
            source: src.as_ref().map(|s| (&s.data, s.labels.as_slice())),
            target_x: &tgt.data,
            target_labels: &tracker,
            labeled: &labeled,
            sampling_rate_hz: target_raw.sampling_rate_hz,
        };
        let mut tcfg = TrainConfig::new(cfg.optimizer, seed);
        tcfg.balanced_sampling = cfg.balanced_sampling;
        tcfg.model = cfg.model.clone();
        let out = train(&spec, &data, &tcfg)?;
        let label_access = tracker.log();
        let per_subject = evaluate_auc(&out.model, &tgt, &test)?;
        let mean = mean_auc(&per_subject)?;
        log::info!("{} seed {seed}: mean AUC {mean:.4}", spec.name);
        runs.push(SeedRun {
            model: out.model,
            result: SeedResult { seed, per_subject, mean_auc: mean, status: out.status, label_access, history: out.history },
        });
    }
    let means: Vec<f64> = runs.iter().map(|r| r.result.mean_auc).collect();
    let (mean, std) = mean_std(&means);
    let report = EvalReport {
        method: spec.name.clone(),
        scenario: cfg.scenario,
        label_fraction_pct: cfg.label_fraction,
        direction,
        seeds: runs.iter().map(|r| r.result.clone()).collect(),
        mean,
        std,
        cell: format_cell(mean, std),
        manifest,
    };
    Ok((report, runs))
}

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "model.xsackpt";
pub const RUN_MANIFEST_FILE: &str = "manifest.json";

/// Loads the configured datasets, runs the experiment and, when `out` is
/// given, writes one checkpoint plus run manifest per seed and the report.
pub fn run_scenario(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let (tm, target) = read_dataset::<f32>(&cfg.target)?;
    let needs_source = cfg.method().spec(cfg.weights, cfg.kernel.clone()).use_source;
    let source = match (&cfg.source, needs_source) {
        (Some(p), true) => Some(read_dataset::<f32>(p)?),
        (None, true) => return Err(Error::Config("this scenario needs `source`".into())),
        _ => None,
    };
    let (report, runs) = run_experiment(
        cfg,
        source.as_ref().map(|(m, s)| (m.dataset_id.as_str(), s)),
        (tm.dataset_id.as_str(), &target),
    )?;
    if let Some(dir) = out {
        write_runs(dir, &report, &runs)?;
    }
    for r in &report.seeds {
        if let TrainStatus::Diverged { epoch, step } = r.status {
            return Err(Error::Diverged { epoch, step });
        }
    }
    Ok(report)
}

/// Writes `seed-<s>/model.xsackpt`, `seed-<s>/manifest.json` and `report.json`.
pub fn write_runs<T: Scalar>(dir: &Path, report: &EvalReport, runs: &[SeedRun<T>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for run in runs {
        let sd = dir.join(format!("seed-{}", run.result.seed));
        fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        run.model.save(&sd.join(CHECKPOINT_FILE))?;
        let manifest = serde_json::json!({
            "run": report.manifest,
            "seed": run.result,
            "checkpoint": CHECKPOINT_FILE,
            "model": run.model.meta(),
        });
        let p = sd.join(RUN_MANIFEST_FILE);
        fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(REPORT_FILE);
    fs::write(&p, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&p, e))
}

/// Collects every `report.json` under `dir` (recursively), sorted by path.
pub fn collect_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    fn walk(d: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let rd = fs::read_dir(d).map_err(|e| Error::io(d, e))?;
        for entry in rd {
            let p = entry.map_err(|e| Error::io(d, e))?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
                out.push(p);
            }
        }
        Ok(())
    }
    if !dir.is_dir() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

/// Table-style rows `method | scenario | l% | direction | mean±std`.
pub fn format_reports(reports: &[EvalReport], csv: bool) -> String {
    let mut out = String::new();
    if csv {
        out.push_str("method,scenario,label_fraction,direction,mean_auc,std_auc,n_seeds\n");
        for r in reports {
            out.push_str(&format!(
                "{},{:?},{},{},{:.6},{:.6},{}\n",
                r.method,
                r.scenario,
                r.label_fraction_pct,
                r.direction,
                r.mean,
                r.std,
                r.seeds.len()
            ));
        }
    } else {
        out.push_str(&format!("{:<16} {:<16} {:>5} {:<20} {}\n", "method", "scenario", "l%", "direction", "AUC"));
        for r in reports {
            out.push_str(&format!(
                "{:<16} {:<16} {:>5} {:<20} {}\n",
                r.method,
                format!("{:?}", r.scenario),
                r.label_fraction_pct,
                r.direction,
                r.cell
            ));
        }
    }
    out
}
