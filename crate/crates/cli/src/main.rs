use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use xsa_core::alignment::{align_per_subject, ReferenceTrials};
use xsa_core::analysis::apen::{channel_mean_apen, ApEnParams};
use xsa_core::analysis::export::export_features;
use xsa_core::analysis::{channel_importance, ImportanceConfig, ImportanceReport};
use xsa_core::data::io::{preprocess_manifest, read_dataset, write_dataset, RecordingManifest};
use xsa_core::data::synth::{synth_generate, SynthConfig};
use xsa_core::data::{LabelScheme, PreprocessConfig, TrialSet};
use xsa_core::harness::metrics::{mean_auc, per_subject_auc};
use xsa_core::harness::scenario::{
    collect_reports, format_reports, run_scenario, ExperimentConfig, RunManifest, RUN_MANIFEST_FILE,
};
use xsa_core::harness::split::split_semi_supervised;
use xsa_core::harness::train::{Domain, TrainedModel};
use xsa_core::harness::scenario::dataset_fingerprint;

#[derive(Parser)]
#[command(name = "xsa", version, about = "Cross-species seizure transfer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Apen,
    Importance,
    Features,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, resample and segment raw recordings into a trial dataset.
    Preprocess {
        /// Recording manifest (JSON); relative file paths resolve against its directory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "window-s")]
        window_s: f64,
        /// Output sampling rate in Hz.
        #[arg(long)]
        rate: f64,
        /// Notch frequency in Hz; 0 disables the notch.
        #[arg(long, default_value_t = 50.0)]
        notch: f64,
        #[arg(long, default_value_t = 0.5)]
        lowcut: f64,
        /// Bandpass upper edge; defaults to min(50 Hz, 0.45 × rate).
        #[arg(long)]
        highcut: Option<f64>,
    },
    /// Generate a synthetic source/target dataset pair.
    Synth {
        /// Generator settings (TOML or JSON); missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every seed of an experiment and write checkpoints and reports.
    Train {
        /// Experiment config (TOML or JSON).
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-subject AUC of a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score every trial even when the run manifest defines a test split.
        #[arg(long)]
        all_trials: bool,
        #[arg(long)]
        json: bool,
    },
    /// Summarize every report found under a runs directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
    /// Entropy profiles, channel importance or feature export.
    Analyze {
        #[arg(long, value_enum)]
        what: Analysis,
        /// Trial dataset to analyze (the target domain for feature export).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint; adds the post-ResizeNet view, required for features.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Source-domain dataset to include in the feature export.
        #[arg(long)]
        source_data: Option<PathBuf>,
        /// Output file (features) or JSON report (apen, importance).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        permutations: usize,
    },
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let parsed = if is_toml {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_task(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_config(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.target = resolve(base, &cfg.target);
    cfg.source = cfg.source.map(|s| resolve(base, &s));
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_preprocess(
    manifest: &Path,
    out: &Path,
    window_s: f64,
    rate: f64,
    notch: f64,
    lowcut: f64,
    highcut: Option<f64>,
) -> Result<()> {
    let m = RecordingManifest::load(manifest)?;
    let cfg = PreprocessConfig {
        notch_hz: (notch > 0.0).then_some(notch),
        bandpass_lo_hz: lowcut,
        bandpass_hi_hz: highcut.unwrap_or(50.0f64.min(0.45 * rate)),
        window_s,
        target_rate_hz: rate,
    };
    cfg.validate()?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let trials = preprocess_manifest::<f32>(&m, base, &cfg)?;
    let written = write_dataset(out, &m.dataset_id, m.label_scheme, &trials)?;
    println!(
        "{}: {} trials, {} channels × {} samples at {} Hz -> {}",
        written.dataset_id,
        trials.n_trials(),
        written.n_channels,
        written.n_samples,
        written.sampling_rate_hz,
        out.display()
    );
    Ok(())
}

fn cmd_synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => read_config(p)?,
        None => SynthConfig::default(),
    };
    let (src, tgt) = synth_generate::<f32>(&cfg)?;
    for (name, ts) in [("source", &src), ("target", &tgt)] {
        let dir = out.join(name);
        write_dataset(&dir, &format!("synth-{name}"), LabelScheme::IctalInterictal, ts)?;
        println!("{name}: {} trials × {} channels -> {}", ts.n_trials(), ts.n_channels(), dir.display());
    }
    fs::write(out.join("synth.json"), serde_json::to_string_pretty(&cfg)?)?;
    Ok(())
}

fn cmd_train(task: &Path, out: &Path) -> Result<()> {
    let cfg = load_task(task)?;
    let report = run_scenario(&cfg, Some(out))?;
    for s in &report.seeds {
        println!("seed {}: mean AUC {:.4} over {} subjects", s.seed, s.mean_auc, s.per_subject.len());
    }
    println!("{} {:?} l={}%: {}", report.method, report.scenario, report.label_fraction_pct, report.cell);
    Ok(())
}

/// Run manifest stored beside a checkpoint, if any.
fn sibling_manifest(checkpoint: &Path) -> Result<Option<RunManifest>> {
    let p = checkpoint.with_file_name(RUN_MANIFEST_FILE);
    if !p.is_file() {
        return Ok(None);
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p)?)?;
    Ok(Some(serde_json::from_value(v["run"].clone()).with_context(|| format!("parsing {}", p.display()))?))
}

/// Applies the checkpoint's input alignment.
fn model_view(model: &TrainedModel<f32>, trials: &TrialSet<f32>, reference: ReferenceTrials) -> Result<TrialSet<f32>> {
    Ok(if model.method.use_ea { align_per_subject(trials, reference)?.0 } else { trials.clone() })
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, all_trials: bool, json: bool) -> Result<()> {
    let model = TrainedModel::<f32>::load(checkpoint)?;
    let (_, trials) = read_dataset::<f32>(data)?;
    let run = sibling_manifest(checkpoint)?;
    let reference = run.as_ref().map_or(ReferenceTrials::All, |r| r.config.ea_reference);
    let aligned = model_view(&model, &trials, reference)?;

    // reuse the run's test split when the data is the run's target
    let split_from = run.as_ref().filter(|r| !all_trials && r.target.fingerprint == dataset_fingerprint(&trials));
    let idx: Vec<usize> = match split_from {
        Some(r) => {
            let c = &r.config;
            split_semi_supervised(&trials, c.label_fraction, c.labeled_subjects, c.exclude_boundary)?.test()
        }
        None => (0..trials.n_trials()).filter(|&i| !trials.boundary[i]).collect(),
    };
    let part = aligned.select(&idx);
    let scores = model.predict_scores(&part.data)?;
    let per_subject = per_subject_auc(&scores, &part.labels, &part.subject_ids)?;
    let mean = mean_auc(&per_subject)?;
    if json {
        let v = serde_json::json!({
            "checkpoint": checkpoint,
            "data": data,
            "trials": if split_from.is_some() { "test_split" } else { "all" },
            "per_subject": per_subject,
            "mean_auc": mean,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        let which = if split_from.is_some() { "run test split" } else { "all non-boundary trials" };
        println!("{} on {} ({which}, {} trials)", model.method.name, data.display(), idx.len());
        for s in &per_subject {
            println!("  {:<20} AUC {:.4} ({} trials)", s.subject_id, s.auc, s.n_trials);
        }
        println!("mean AUC {mean:.4}");
    }
    Ok(())
}

fn cmd_report(runs: &Path, format: ReportFormat) -> Result<()> {
    let reports = collect_reports(runs)?;
    if reports.is_empty() {
        bail!("no reports under {}", runs.display());
    }
    print!("{}", format_reports(&reports, matches!(format, ReportFormat::Csv)));
    Ok(())
}

/// The data as the checkpoint's ResizeNet sees it, when the channel counts fit.
fn resized_view(model: &TrainedModel<f32>, trials: &TrialSet<f32>) -> Result<Option<TrialSet<f32>>> {
    let Some(r) = &model.resize else {
        return Ok(None);
    };
    if r.cfg.c_in != trials.n_channels() {
        log::warn!(
            "checkpoint projects {} channels, data has {}; skipping the resized view",
            r.cfg.c_in,
            trials.n_channels()
        );
        return Ok(None);
    }
    let aligned = model_view(model, trials, ReferenceTrials::All)?;
    let mut out = aligned.with_data(model.resize_trials(&aligned.data)?)?;
    out.channel_names = (0..r.cfg.c_out).map(|i| format!("r{i}")).collect();
    Ok(Some(out))
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn print_importance(title: &str, r: &ImportanceReport) {
    let eff = r.shapley.pooled_efficiency();
    println!("{title}: efficiency residual {:.2e} (σ {:.2e})", eff.residual, eff.sigma);
    for (rank, c) in r.ranking.iter().enumerate() {
        println!("  {:>2}. {:<10} {:.5}", rank + 1, c.name, c.mean_abs);
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    what: Analysis,
    data: &Path,
    checkpoint: Option<&Path>,
    source_data: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
    permutations: usize,
) -> Result<()> {
    let (_, trials) = read_dataset::<f32>(data)?;
    let model = checkpoint.map(TrainedModel::<f32>::load).transpose()?;
    let resized = match &model {
        Some(m) if !matches!(what, Analysis::Features) => resized_view(m, &trials)?,
        _ => None,
    };
    match what {
        Analysis::Apen => {
            let p = ApEnParams::default();
            let raw = channel_mean_apen(&trials, p)?;
            println!("mean approximate entropy (m={}, r={}·std)", p.m, p.r_factor);
            for (name, v) in trials.channel_names.iter().zip(&raw) {
                println!("  {name:<10} {v:.4}");
            }
            println!("  all        {:.4}", raw.iter().sum::<f64>() / raw.len() as f64);
            let after = resized.as_ref().map(|r| channel_mean_apen(r, p)).transpose()?;
            if let Some(a) = &after {
                println!("after ResizeNet");
                for (i, v) in a.iter().enumerate() {
                    println!("  r{i:<9} {v:.4}");
                }
                println!("  all        {:.4}", a.iter().sum::<f64>() / a.len() as f64);
            }
            write_json(out, &serde_json::json!({ "channels": trials.channel_names, "raw": raw, "resized": after }))
        }
        Analysis::Importance => {
            let mut cfg = ImportanceConfig::default().seeded(seed);
            cfg.shapley.n_permutations = permutations;
            let raw = channel_importance(&trials, &cfg)?;
            print_importance("channel importance", &raw);
            let after = resized.as_ref().map(|r| channel_importance(r, &cfg)).transpose()?;
            if let Some(a) = &after {
                print_importance("after ResizeNet", a);
            }
            write_json(out, &serde_json::json!({ "raw": raw, "resized": after }))
        }
        Analysis::Features => {
            let model = model.context("feature export needs --checkpoint")?;
            let out = out.context("feature export needs --out")?;
            let target = model_view(&model, &trials, ReferenceTrials::All)?;
            let source = source_data
                .map(|p| -> Result<_> { model_view(&model, &read_dataset::<f32>(p)?.1, ReferenceTrials::All) })
                .transpose()?;
            let mut parts = Vec::new();
            if let Some(s) = &source {
                parts.push((Domain::Source, s));
            }
            parts.push((Domain::Target, &target));
            let n = export_features(&model, &parts, out)?;
            println!("{n} feature rows -> {}", out.display());
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Preprocess { manifest, out, window_s, rate, notch, lowcut, highcut } => {
            cmd_preprocess(&manifest, &out, window_s, rate, notch, lowcut, highcut)
        }
        Command::Synth { config, out } => cmd_synth(config.as_deref(), &out),
        Command::Train { task, out } => cmd_train(&task, &out),
        Command::Evaluate { checkpoint, data, all_trials, json } => cmd_evaluate(&checkpoint, &data, all_trials, json),
        Command::Report { runs, format } => cmd_report(&runs, format),
        Command::Analyze { what, data, checkpoint, source_data, out, seed, permutations } => {
            cmd_analyze(what, &data, checkpoint.as_deref(), source_data.as_deref(), out.as_deref(), seed, permutations)
        }
    }
}
