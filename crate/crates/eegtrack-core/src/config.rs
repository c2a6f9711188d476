//! Run configuration: one JSON document drives every pipeline stage.
//!
//! Validation never stops at the first problem; every error carries the key
//! path it refers to. Missing optional sections fall back to the documented
//! defaults (integration window 400 ms, 5 s decision windows with 80% overlap
//! and a 1 s mismatch gap, 30 epochs with patience 5, and so on).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::Scheme;
use crate::mm::SegmentationConfig;
use crate::net::TrainConfig;
use crate::synth::{MixingSpec, NoiseModel, NoiseSpec, SynthConfig};
use crate::trf::{default_lambda_grid, DEFAULT_EVAL_CHANNELS, DEFAULT_WINDOW_MS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSettings {
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub target_fs: f64,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings { highpass_hz: 0.5, highpass_order: 4, target_fs: 64.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrfSettings {
    pub window_ms: f64,
    pub lambda_grid: Vec<f64>,
    pub eval_channels: Vec<String>,
}

impl Default for TrfSettings {
    fn default() -> Self {
        TrfSettings {
            window_ms: DEFAULT_WINDOW_MS,
            lambda_grid: default_lambda_grid(),
            eval_channels: DEFAULT_EVAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Architecture knobs; channel/dimension counts come from the data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NetSettings {
    pub time_kernel: usize,
    pub time_stride: usize,
    pub eeg_filters: usize,
    pub lstm_units: usize,
    pub head_hidden: usize,
}

impl Default for NetSettings {
    fn default() -> Self {
        NetSettings { time_kernel: 9, time_stride: 3, eeg_filters: 72, lstm_units: 72, head_hidden: 72 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmSettings {
    pub segmentation: SegmentationConfig,
    pub net: NetSettings,
    pub train: TrainConfig,
    /// Fine-tuning overrides; defaults to the training settings with a
    /// reduced learning rate.
    pub finetune_learning_rate: f64,
}

impl Default for MmSettings {
    fn default() -> Self {
        MmSettings {
            segmentation: SegmentationConfig::default(),
            net: NetSettings::default(),
            train: TrainConfig::default(),
            finetune_learning_rate: 2e-4,
        }
    }
}

/// Synthetic-corpus stage settings (a thin, file-friendly face of SynthConfig).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSettings {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub scheme: Scheme,
    pub n_channels: usize,
    /// Omit for noise-free subjects.
    pub snr_db: Option<f64>,
    pub noise_model: NoiseModel,
    pub subject_mixing_jitter: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            n_subjects: 2,
            duration_s: 120.0,
            fs: 64.0,
            scheme: Scheme::Vc,
            n_channels: 64,
            snr_db: Some(0.0),
            noise_model: NoiseModel::Pink,
            subject_mixing_jitter: 0.15,
        }
    }
}

impl SynthSettings {
    pub fn to_synth_config(&self, window_ms: f64) -> SynthConfig {
        SynthConfig {
            duration_s: self.duration_s,
            fs: self.fs,
            scheme: self.scheme,
            window_ms,
            n_channels: self.n_channels,
            mixing: MixingSpec::Random,
            noise: self.snr_db.map(|snr_db| NoiseSpec { model: self.noise_model, snr_db }),
            subject_mixing_jitter: self.subject_mixing_jitter,
            ..SynthConfig::default()
        }
    }
}

/// The resolved run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Existing corpus directory; omit when the synth stage generates one.
    pub dataset: Option<PathBuf>,
    pub synth: Option<SynthSettings>,
    pub preprocess: PreprocessSettings,
    pub schemes: Vec<Scheme>,
    pub trf: TrfSettings,
    pub mm: MmSettings,
    /// Scheme pairs for the statistics stage.
    pub stats_pairs: Vec<(Scheme, Scheme)>,
    /// Optional phone-inventory JSON path; the shipped 37-class map otherwise.
    pub inventory: Option<PathBuf>,
}

impl RunConfig {
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        crate::io::sha256_bytes(&bytes)
    }
}

/// Raw, all-optional mirror of [`RunConfig`] for lenient parsing.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    dataset: Option<PathBuf>,
    synth: Option<SynthSettings>,
    preprocess: Option<PreprocessSettings>,
    schemes: Option<Vec<Scheme>>,
    trf: Option<TrfSettings>,
    mm: Option<MmSettings>,
    stats_pairs: Option<Vec<(Scheme, Scheme)>>,
    inventory: Option<PathBuf>,
}

/// One validation problem, addressed by key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn push(errors: &mut Vec<ConfigError>, key: &str, message: impl Into<String>) {
    errors.push(ConfigError { key: key.to_string(), message: message.into() });
}

/// Parse and validate a config file, reporting every error at once.
pub fn validate_config(path: &Path) -> std::result::Result<RunConfig, Vec<ConfigError>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![ConfigError { key: "(file)".into(), message: format!("cannot read config: {e}") }]
    })?;
    validate_config_str(&text)
}

pub fn validate_config_str(text: &str) -> std::result::Result<RunConfig, Vec<ConfigError>> {
    let trimmed = text.trim();
    let raw: RawConfig = if trimmed.is_empty() {
        RawConfig::default()
    } else {
        serde_json::from_str(trimmed).map_err(|e| {
            vec![ConfigError { key: "(file)".into(), message: format!("invalid JSON: {e}") }]
        })?
    };

    let mut errors = Vec::new();
    if raw.seed.is_none() {
        push(&mut errors, "seed", "required: every run must pin its random seed");
    }
    if raw.dataset.is_none() && raw.synth.is_none() {
        push(&mut errors, "dataset", "required unless a synth section is present");
    }
    if let Some(dataset) = &raw.dataset {
        if !dataset.join("manifest.json").exists() {
            push(
                &mut errors,
                "dataset",
                format!("{} does not contain manifest.json", dataset.display()),
            );
        }
    }
    if let Some(inv) = &raw.inventory {
        if !inv.exists() {
            push(&mut errors, "inventory", format!("{} does not exist", inv.display()));
        }
    }
    if let Some(synth) = &raw.synth {
        if synth.n_subjects == 0 {
            push(&mut errors, "synth.n_subjects", "must be at least 1");
        }
        if !(synth.duration_s > 0.0) {
            push(&mut errors, "synth.duration_s", "must be positive");
        }
        if !(synth.fs > 0.0) {
            push(&mut errors, "synth.fs", "must be positive");
        }
        if let Some(snr) = synth.snr_db {
            if !snr.is_finite() {
                push(&mut errors, "synth.snr_db", "must be finite; omit to disable noise");
            }
        }
    }

    let preprocess = raw.preprocess.unwrap_or_default();
    if !(preprocess.highpass_hz > 0.0) {
        push(&mut errors, "preprocess.highpass_hz", "must be positive");
    }
    if preprocess.highpass_order == 0 {
        push(&mut errors, "preprocess.highpass_order", "must be at least 1");
    }
    if !(preprocess.target_fs > 0.0) {
        push(&mut errors, "preprocess.target_fs", "must be positive");
    }

    let trf = raw.trf.unwrap_or_default();
    if !(trf.window_ms >= 0.0) {
        push(&mut errors, "trf.window_ms", "must be >= 0");
    }
    if trf.lambda_grid.is_empty() {
        push(&mut errors, "trf.lambda_grid", "must hold at least one value");
    }
    for (i, l) in trf.lambda_grid.iter().enumerate() {
        if !(l.is_finite() && *l >= 0.0) {
            push(&mut errors, &format!("trf.lambda_grid[{i}]"), "must be finite and >= 0");
        }
    }

    let mm = raw.mm.unwrap_or_default();
    let seg = &mm.segmentation;
    if !(seg.window_s > 0.0) {
        push(&mut errors, "mm.segmentation.window_s", "must be > 0");
    }
    if !(0.0..1.0).contains(&seg.overlap_fraction) {
        push(
            &mut errors,
            "mm.segmentation.overlap_fraction",
            "SegmentationConfig requires 0 <= overlap_fraction < 1",
        );
    }
    if !(seg.mismatch_gap_s >= 0.0) {
        push(&mut errors, "mm.segmentation.mismatch_gap_s", "must be >= 0");
    }
    if mm.train.max_epochs > 0 && mm.train.patience >= mm.train.max_epochs {
        push(&mut errors, "mm.train.patience", "must be below max_epochs");
    }
    if !(mm.train.learning_rate > 0.0) {
        push(&mut errors, "mm.train.learning_rate", "must be > 0");
    }
    if mm.train.batch_size == 0 {
        push(&mut errors, "mm.train.batch_size", "must be positive");
    }
    if !(mm.finetune_learning_rate > 0.0) {
        push(&mut errors, "mm.finetune_learning_rate", "must be > 0");
    }
    if mm.net.time_kernel == 0 || mm.net.time_stride == 0 {
        push(&mut errors, "mm.net", "kernel and stride must be positive");
    }
    if mm.net.eeg_filters != mm.net.lstm_units {
        push(&mut errors, "mm.net.eeg_filters", "must equal lstm_units");
    }

    let schemes = raw.schemes.unwrap_or_else(|| vec![Scheme::Vc, Scheme::Phone]);
    if schemes.is_empty() {
        push(&mut errors, "schemes", "must name at least one representation");
    }
    let stats_pairs = raw.stats_pairs.unwrap_or_else(|| {
        if schemes.len() >= 2 {
            vec![(schemes[0], schemes[1])]
        } else {
            Vec::new()
        }
    });
    for (i, (a, b)) in stats_pairs.iter().enumerate() {
        if !schemes.contains(a) || !schemes.contains(b) {
            push(
                &mut errors,
                &format!("stats_pairs[{i}]"),
                "both schemes must appear in the schemes list",
            );
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(RunConfig {
        seed: raw.seed.expect("checked above"),
        dataset: raw.dataset,
        synth: raw.synth,
        preprocess,
        schemes,
        trf,
        mm,
        stats_pairs,
        inventory: raw.inventory,
    })
}

/// Load a config or fold its error list into one printable error.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    validate_config(path).map_err(|errs| {
        let mut msg = String::from("configuration invalid:\n");
        for e in &errs {
            msg.push_str(&format!("  - {e}\n"));
        }
        Error::invalid(msg.trim_end().to_string())
    })
}

/// The two-subject demo configuration shipped with the repository.
pub fn demo_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        dataset: None,
        synth: Some(SynthSettings {
            n_subjects: 2,
            duration_s: 150.0,
            snr_db: Some(6.0),
            ..SynthSettings::default()
        }),
        preprocess: PreprocessSettings::default(),
        schemes: vec![Scheme::Vc, Scheme::Phone],
        trf: TrfSettings::default(),
        mm: MmSettings {
            net: NetSettings {
                eeg_filters: 16,
                lstm_units: 16,
                head_hidden: 16,
                ..NetSettings::default()
            },
            train: TrainConfig { max_epochs: 6, patience: 3, ..TrainConfig::default() },
            ..MmSettings::default()
        },
        stats_pairs: vec![(Scheme::Vc, Scheme::Phone)],
        inventory: None,
    }
}
