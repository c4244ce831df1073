//! Run configuration: `key = value` files, command-line overrides and a
//! canonical text snapshot.
//!
//! Every hyperparameter lives in one flat namespace. Unknown keys, repeated
//! keys within a file and unparsable values are usage errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use xlstm_ecg_core::network::{FusionMode, NetworkConfig};
use xlstm_ecg_core::training::{LossReduction, TrainConfig};
use xlstm_ecg_core::StftConfig;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetKind {
    Ptbxl,
    Generic,
    #[default]
    Synth,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Ptbxl => "ptbxl",
            DatasetKind::Generic => "generic",
            DatasetKind::Synth => "synth",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "ptbxl" => Ok(DatasetKind::Ptbxl),
            "generic" => Ok(DatasetKind::Generic),
            "synth" => Ok(DatasetKind::Synth),
            other => Err(format!("unknown dataset '{other}' (expected ptbxl, generic or synth)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `n_classes`, `n_leads` and `n_bins` are filled in from the data.
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub stft: StftConfig,
    pub threshold: f64,
    pub dataset: DatasetKind,
    pub synth_records: usize,
    pub synth_samples: usize,
    pub synth_classes: usize,
    pub holdout_group: u32,
    /// Class names for the generic loader.
    pub classes: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            stft: StftConfig::default(),
            threshold: 0.5,
            dataset: DatasetKind::default(),
            synth_records: 200,
            synth_samples: 1000,
            synth_classes: 3,
            holdout_group: 1,
            classes: Vec::new(),
        }
    }
}

/// Every accepted key, in snapshot order.
pub const KEYS: [&str; 33] = [
    "batch_size",
    "band_high_hz",
    "band_low_hz",
    "classes",
    "dataset",
    "decay_every",
    "dropout",
    "fusion",
    "hidden_dim",
    "holdout_group",
    "hop",
    "lead_attention",
    "log_epsilon",
    "loss_reduction",
    "lr",
    "lr_decay",
    "mask_prob",
    "mask_ratio",
    "mask_segments",
    "max_epochs",
    "n_blocks",
    "n_fft",
    "n_layers",
    "patience",
    "seed",
    "synth_classes",
    "synth_records",
    "synth_samples",
    "threshold",
    "window",
    "n_classes",
    "n_leads",
    "n_bins",
];

/// Keys derived from the data rather than set by the user; they appear in
/// checkpoints but are rejected in configuration files.
const DERIVED: [&str; 3] = ["n_classes", "n_leads", "n_bins"];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("invalid value '{value}' for {key}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid value '{value}' for {key} (expected true or false)")),
    }
}

fn reduction_str(r: LossReduction) -> &'static str {
    match r {
        LossReduction::PerSample => "per_sample",
        LossReduction::PerLabel => "per_label",
    }
}

impl RunConfig {
    /// Sets one key. Derived keys are only accepted when `allow_derived`.
    fn set_inner(&mut self, key: &str, value: &str, allow_derived: bool) -> std::result::Result<(), String> {
        if DERIVED.contains(&key) && !allow_derived {
            return Err(format!("{key} is derived from the data and cannot be set"));
        }
        let (n, t, s) = (&mut self.network, &mut self.train, &mut self.stft);
        match key {
            "hidden_dim" => n.hidden_dim = parse(key, value)?,
            "n_layers" => n.n_layers = parse(key, value)?,
            "n_blocks" => n.n_blocks = parse(key, value)?,
            "fusion" => n.fusion_mode = value.trim().parse().map_err(|e: xlstm_ecg_core::Error| e.to_string())?,
            "dropout" => n.dropout_p = parse(key, value)?,
            "lead_attention" => n.use_lead_attention = parse_bool(key, value)?,
            "n_classes" => n.n_classes = parse(key, value)?,
            "n_leads" => n.n_leads = parse(key, value)?,
            "n_bins" => n.n_bins = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr0 = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "decay_every" => t.decay_every = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "mask_ratio" => t.mask_ratio = parse(key, value)?,
            "mask_prob" => t.mask_prob = parse(key, value)?,
            "mask_segments" => t.mask_segments = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "loss_reduction" => {
                t.loss_reduction = match value.trim() {
                    "per_sample" => LossReduction::PerSample,
                    "per_label" => LossReduction::PerLabel,
                    other => return Err(format!("invalid loss_reduction '{other}' (expected per_sample or per_label)")),
                }
            }
            "window" => s.window_size = parse(key, value)?,
            "hop" => s.hop = parse(key, value)?,
            "n_fft" => s.n_fft = parse(key, value)?,
            "band_low_hz" => s.band_low_hz = parse(key, value)?,
            "band_high_hz" => s.band_high_hz = parse(key, value)?,
            "log_epsilon" => s.log_epsilon = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "dataset" => self.dataset = value.parse()?,
            "synth_records" => self.synth_records = parse(key, value)?,
            "synth_samples" => self.synth_samples = parse(key, value)?,
            "synth_classes" => self.synth_classes = parse(key, value)?,
            "holdout_group" => self.holdout_group = parse(key, value)?,
            "classes" => {
                self.classes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(String::from)
                    .collect()
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_inner(key.trim(), value, false).map_err(AppError::Usage)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| AppError::usage(format!("override '{o}' is not of the form key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::usage(format!("config line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(AppError::usage(format!(
                    "config line {}: {k} already set on line {prev}",
                    i + 1
                )));
            }
            cfg.set_inner(k, v, false)
                .map_err(|e| AppError::usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::error::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| AppError::usage(format!("{} is not UTF-8", path.display())))?;
        Self::parse_text(&text).map_err(|e| match e {
            AppError::Usage(m) => AppError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuilds a configuration from snapshot pairs, derived keys included.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set_inner(k, v, true).map_err(AppError::Data)?;
        }
        Ok(cfg)
    }

    /// All user-settable keys with their current values, sorted by key.
    pub fn pairs(&self) -> BTreeMap<&'static str, String> {
        let (n, t, s) = (&self.network, &self.train, &self.stft);
        let v: [(&'static str, String); 30] = [
            ("hidden_dim", n.hidden_dim.to_string()),
            ("n_layers", n.n_layers.to_string()),
            ("n_blocks", n.n_blocks.to_string()),
            ("fusion", n.fusion_mode.to_string()),
            ("dropout", n.dropout_p.to_string()),
            ("lead_attention", n.use_lead_attention.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr0.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("decay_every", t.decay_every.to_string()),
            ("patience", t.patience.to_string()),
            ("mask_ratio", t.mask_ratio.to_string()),
            ("mask_prob", t.mask_prob.to_string()),
            ("mask_segments", t.mask_segments.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("loss_reduction", reduction_str(t.loss_reduction).to_string()),
            ("window", s.window_size.to_string()),
            ("hop", s.hop.to_string()),
            ("n_fft", s.n_fft.to_string()),
            ("band_low_hz", s.band_low_hz.to_string()),
            ("band_high_hz", s.band_high_hz.to_string()),
            ("log_epsilon", s.log_epsilon.to_string()),
            ("threshold", self.threshold.to_string()),
            ("dataset", self.dataset.to_string()),
            ("synth_records", self.synth_records.to_string()),
            ("synth_samples", self.synth_samples.to_string()),
            ("synth_classes", self.synth_classes.to_string()),
            ("holdout_group", self.holdout_group.to_string()),
            ("classes", self.classes.join(",")),
        ];
        v.into_iter().collect()
    }

    /// Settable pairs plus the data-derived network sizes.
    pub fn pairs_with_derived(&self) -> BTreeMap<&'static str, String> {
        let mut p = self.pairs();
        p.insert("n_classes", self.network.n_classes.to_string());
        p.insert("n_leads", self.network.n_leads.to_string());
        p.insert("n_bins", self.network.n_bins.to_string());
        p
    }

    /// Canonical `key = value` text; parsing it gives back this config.
    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks every value range that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| AppError::Usage(e.to_string()))?;
        let mut net = self.network.clone();
        net.n_classes = net.n_classes.max(1);
        net.validate().map_err(|e| AppError::Usage(e.to_string()))?;
        self.stft.validate(xlstm_ecg_core::synth::SAMPLE_RATE).map_err(|e| AppError::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(AppError::usage(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        if self.synth_records < 10 || self.synth_samples < 128 || self.synth_classes == 0 {
            return Err(AppError::usage(
                "synthetic data needs synth_records ≥ 10, synth_samples ≥ 128 and synth_classes ≥ 1",
            ));
        }
        Ok(())
    }
}

/// The fusion-mode names accepted on the command line.
pub fn fusion_names() -> Vec<&'static str> {
    FusionMode::ALL.iter().map(|m| m.as_str()).collect()
}
