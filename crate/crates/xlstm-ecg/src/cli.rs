//! Command-line front end: `synth`, `preprocess`, `train`, `evaluate` and
//! `report`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xlstm_ecg_core::data::EcgRecord;
use xlstm_ecg_core::dsp::stft::stft_spectrogram;
use xlstm_ecg_core::metrics::evaluate;
use xlstm_ecg_core::training::{fit_prepared, predict_all, Clock, EpochLog, FitInputs, TrainLog};
use xlstm_ecg_core::{FusionMode, Spectrogram, StftConfig};

use crate::checkpoint::{cache_file_name, load_checkpoint, load_spectrogram, save_checkpoint, save_spectrogram};
use crate::config::{DatasetKind, RunConfig};
use crate::datasets::{self, Loaded};
use crate::error::{read_file, write_file, AppError, Result};
use crate::report::ReportFile;

pub const VERSION: &str = concat!("xlstm-ecg ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "xlstm-ecg", version, about = "Multi-label ECG classification with fused sLSTM/mLSTM stacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset in WFDB format.
    Synth(RunArgs),
    /// Compute spectrograms for every record and store them in the cache.
    Preprocess {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a network and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a checkpoint on one split and write the report files.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Regenerate the tables and CSV files from a saved report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Validation,
    Test,
}

impl SplitName {
    fn as_str(self) -> &'static str {
        match self {
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// Configuration flags shared by every run command. Flags are applied after
/// the config file and the `--override` list, in that order.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// `key = value` configuration file, applied before overrides and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// layer, sequential, slstm or mlstm.
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<FusionMode>,
    /// Decision threshold on predicted probabilities.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory for outputs, the manifest and the config snapshot.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// ptbxl, generic or synth.
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetKind>,
    /// Layers per block.
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Fraction of frames masked when a batch is augmented.
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Probability that a batch is augmented.
    #[arg(long)]
    pub mask_prob: Option<f64>,
    /// FFT length (zero-padded window).
    #[arg(long)]
    pub n_fft: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Spectrogram cache; read when entries match, filled otherwise.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// PTB-XL `code,superclass` CSV. Defaults to `<data-dir>/superclass_map.csv`.
    #[arg(long)]
    pub superclass_map: Option<PathBuf>,
}

fn parse_fusion(s: &str) -> std::result::Result<FusionMode, String> {
    s.parse::<FusionMode>().map_err(|e| e.to_string())
}

fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    s.parse()
}

impl RunArgs {
    /// Defaults, then the config file, then overrides, then explicit flags.
    pub fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(base)) => base,
            (None, None) => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        let flags: [(&str, Option<String>); 8] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("fusion", self.fusion.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("dataset", self.dataset.map(|v| v.to_string())),
            ("n_layers", self.n_layers.map(|v| v.to_string())),
            ("mask_ratio", self.mask_ratio.map(|v| v.to_string())),
            ("mask_prob", self.mask_prob.map(|v| v.to_string())),
            ("n_fft", self.n_fft.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(run) => cmd_synth(&run, out),
        Command::Preprocess { run, data } => cmd_preprocess(&run, &data, out, err),
        Command::Train { run, data } => cmd_train(&run, &data, out, err),
        Command::Evaluate {
            run,
            data,
            checkpoint,
            split,
        } => cmd_evaluate(&run, &data, &checkpoint, split, out, err),
        Command::Report { report, out_dir } => cmd_report(&report, out_dir.as_deref(), out),
    }
}

/// Console output is best-effort: a closed stdout must not abort a run
/// whose real outputs are files.
fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    let _ = writeln!(out, "{}", line.as_ref());
    Ok(())
}

/// Prints the run header: version, command and the effective configuration.
fn header(out: &mut dyn Write, command: &str, cfg: &RunConfig) -> Result<()> {
    say(out, format!("{VERSION} {command}"))?;
    for (k, v) in cfg.pairs() {
        say(out, format!("  {k} = {v}"))?;
    }
    Ok(())
}

/// Writes `config.cfg` and `manifest.json` into `dir`.
fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, outputs: &[&str]) -> Result<()> {
    write_file(&dir.join("config.cfg"), cfg.to_text())?;
    let config: BTreeMap<&str, String> = cfg.pairs_with_derived();
    let manifest = serde_json::json!({
        "command": command,
        "version": VERSION,
        "seed": cfg.train.seed,
        "config": config,
        "outputs": outputs,
    });
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| AppError::data(e.to_string()))?;
    text.push('\n');
    write_file(&dir.join("manifest.json"), text)
}

fn load_data(cfg: &RunConfig, data: &DataArgs, err: &mut dyn Write) -> Result<Loaded> {
    let dir = &data.data_dir;
    let loaded = match cfg.dataset {
        DatasetKind::Synth => datasets::load_synthetic(dir)?,
        DatasetKind::Ptbxl => {
            let map = data.superclass_map.clone().unwrap_or_else(|| dir.join("superclass_map.csv"));
            datasets::load_ptbxl(&dir.join("ptbxl_database.csv"), dir, &map)?
        }
        DatasetKind::Generic => {
            datasets::load_multilabel_generic(&dir.join("metadata.csv"), dir, &cfg.classes, cfg.holdout_group)?
        }
    };
    for w in loaded.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    Ok(loaded)
}

/// Spectrograms for `records`, served from the cache when present.
fn spectrograms(records: &[EcgRecord], stft: &StftConfig, cache: Option<&Path>) -> Result<Vec<Spectrogram>> {
    records
        .iter()
        .map(|r| {
            let Some(dir) = cache else {
                return Ok(stft_spectrogram(r, stft)?);
            };
            let path = dir.join(cache_file_name(&r.record_id));
            if path.exists() {
                if let Some(spec) = load_spectrogram(&path, &r.record_id, stft)? {
                    return Ok(spec);
                }
            }
            let spec = stft_spectrogram(r, stft)?;
            save_spectrogram(&path, &r.record_id, stft, &spec)?;
            Ok(spec)
        })
        .collect()
}

/// Fills in the data-derived network sizes.
fn bind_data_shape(cfg: &mut RunConfig, loaded: &Loaded) -> Result<()> {
    let first = loaded
        .split
        .all()
        .next()
        .ok_or_else(|| AppError::data("dataset contains no records"))?;
    cfg.stft.validate(first.sample_rate)?;
    cfg.network.n_classes = loaded.class_names.len();
    cfg.network.n_leads = first.n_leads();
    cfg.network.n_bins = cfg.stft.retained_bins(first.sample_rate);
    Ok(())
}

fn cmd_synth(run: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = run.resolve(None)?;
    header(out, "synth", &cfg)?;
    let n = datasets::write_synthetic(
        &run.out_dir,
        cfg.synth_records,
        cfg.synth_samples,
        cfg.synth_classes,
        cfg.train.seed,
    )?;
    write_manifest(&run.out_dir, "synth", &cfg, &["metadata.csv", "classes.txt", "records"])?;
    say(out, format!("wrote {n} records to {}", run.out_dir.display()))
}

fn cmd_preprocess(run: &RunArgs, data: &DataArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = run.resolve(None)?;
    header(out, "preprocess", &cfg)?;
    let loaded = load_data(&cfg, data, err)?;
    let cache = data.cache_dir.clone().unwrap_or_else(|| run.out_dir.join("cache"));
    let records: Vec<EcgRecord> = loaded.split.all().cloned().collect();
    spectrograms(&records, &cfg.stft, Some(&cache))?;
    write_manifest(&run.out_dir, "preprocess", &cfg, &["cache"])?;
    say(out, format!("cached {} spectrograms in {}", records.len(), cache.display()))
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn now_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn train_log_csv(log: &TrainLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| AppError::data(e.to_string());
    w.write_record([
        "epoch", "train_loss", "val_accuracy", "val_auc", "lr", "batches", "masked_batches", "wall_secs",
    ])
    .map_err(e)?;
    for r in &log.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_accuracy.to_string(),
            r.val_auc.to_string(),
            r.lr.to_string(),
            r.batches.to_string(),
            r.masked_batches.to_string(),
            format!("{:.3}", r.wall_secs),
        ])
        .map_err(e)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AppError::data(e.to_string()))
}

fn cmd_train(run: &RunArgs, data: &DataArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut cfg = run.resolve(None)?;
    header(out, "train", &cfg)?;
    let loaded = load_data(&cfg, data, err)?;
    bind_data_shape(&mut cfg, &loaded)?;
    let split = &loaded.split;
    say(
        out,
        format!(
            "data: {} train, {} validation, {} test records; {} classes",
            split.train.len(),
            split.validation.len(),
            split.test.len(),
            loaded.class_names.len()
        ),
    )?;
    let cache = data.cache_dir.as_deref();
    let train_specs = spectrograms(&split.train, &cfg.stft, cache)?;
    let val_specs = spectrograms(&split.validation, &cfg.stft, cache)?;
    let val_labels: Vec<Vec<u8>> = split.validation.iter().map(|r| r.labels.clone()).collect();
    let inputs = FitInputs {
        train: &split.train,
        train_specs: &train_specs,
        val_specs: &val_specs,
        val_labels: &val_labels,
    };
    let mut progress = |e: &EpochLog| {
        let _ = writeln!(
            out,
            "epoch {:3}  loss {:.5}  val acc {:.4}  val auc {:.4}  lr {:.3e}  masked {}/{}  {:.1}s",
            e.epoch, e.train_loss, e.val_accuracy, e.val_auc, e.lr, e.masked_batches, e.batches, e.wall_secs
        );
    };
    let (net, log) = fit_prepared(
        &inputs,
        &cfg.network,
        &cfg.train,
        &cfg.stft,
        &WallClock(Instant::now()),
        &mut progress,
    )?;
    save_checkpoint(&run.out_dir.join("model.xlec"), &cfg, &loaded.class_names, &net)?;
    write_file(&run.out_dir.join("train_log.csv"), train_log_csv(&log)?)?;
    write_manifest(&run.out_dir, "train", &cfg, &["model.xlec", "train_log.csv"])?;
    match log.best() {
        Some(b) => say(
            out,
            format!(
                "best epoch {} (val auc {:.4}){}",
                b.epoch,
                b.val_auc,
                if log.stopped_early { ", stopped early" } else { "" }
            ),
        ),
        None => say(out, "no epoch produced a finite validation AUC"),
    }
}

fn cmd_evaluate(
    run: &RunArgs,
    data: &DataArgs,
    checkpoint: &Path,
    split_name: SplitName,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut cfg = run.resolve(Some(ckpt.config.clone()))?;
    // the network shape is fixed by the checkpoint
    cfg.network = ckpt.config.network.clone();
    cfg.stft = ckpt.config.stft.clone();
    header(out, "evaluate", &cfg)?;
    let loaded = load_data(&cfg, data, err)?;
    if loaded.class_names.len() != ckpt.class_names.len() {
        return Err(AppError::data(format!(
            "class-count mismatch: checkpoint has {} classes, dataset has {}",
            ckpt.class_names.len(),
            loaded.class_names.len()
        )));
    }
    if loaded.class_names != ckpt.class_names {
        return Err(AppError::data(format!(
            "class names differ: checkpoint [{}], dataset [{}]",
            ckpt.class_names.join(", "),
            loaded.class_names.join(", ")
        )));
    }
    let records = match split_name {
        SplitName::Validation => &loaded.split.validation,
        SplitName::Test => &loaded.split.test,
    };
    if records.is_empty() {
        return Err(AppError::data(format!("the {} split is empty", split_name.as_str())));
    }
    if let Some(r) = records.iter().find(|r| r.n_leads() != cfg.network.n_leads) {
        return Err(AppError::data(format!(
            "record {} has {} leads, the checkpoint expects {}",
            r.record_id,
            r.n_leads(),
            cfg.network.n_leads
        )));
    }
    let specs = spectrograms(records, &cfg.stft, data.cache_dir.as_deref())?;
    let probs = predict_all(&ckpt.net, &specs)?;
    let labels: Vec<Vec<u8>> = records.iter().map(|r| r.labels.clone()).collect();
    let eval = evaluate(&probs, &labels, cfg.threshold)?;
    let report = ReportFile::from_eval(split_name.as_str(), &eval, &ckpt.class_names)?;
    report.write_all(&run.out_dir)?;
    write_manifest(
        &run.out_dir,
        "evaluate",
        &cfg,
        &["report.json", "per_class.csv", "confusion.csv", "cooc_true_true.csv", "cooc_true_pred.csv"],
    )?;
    say(out, report.table())
}

fn cmd_report(path: &Path, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| AppError::data(format!("{} is not UTF-8", path.display())))?;
    let report = ReportFile::from_json(&text)?;
    if let Some(dir) = out_dir {
        report.write_all(dir)?;
    }
    say(out, report.table())
}
