//! Match-mismatch example construction and the training/evaluation protocols.
//!
//! A decision window of EEG is paired with its time-aligned speech segment and
//! with a mismatched segment taken from the same recording, starting one gap
//! after the end of the matched window (strictly in the future; windows whose
//! mismatch segment does not fit are dropped). The matched slot alternates
//! A, B, A, B... by emission index so label balance is structural.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::net::{
    forward, train_loop, Example, Label, ModelConfig, Params, TrainConfig, TrainOutcome,
};
use crate::seed::rng_for;
use crate::signal::TimeSeries;

/// Decision-window segmentation parameters (seconds).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub window_s: f64,
    pub overlap_fraction: f64,
    pub mismatch_gap_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { window_s: 5.0, overlap_fraction: 0.8, mismatch_gap_s: 1.0 }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0) {
            return Err(Error::invalid("SegmentationConfig: window_s must be > 0"));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::invalid(
                "SegmentationConfig: overlap_fraction must lie in [0, 1)",
            ));
        }
        if !(self.mismatch_gap_s >= 0.0) {
            return Err(Error::invalid("SegmentationConfig: mismatch_gap_s must be >= 0"));
        }
        Ok(())
    }

    pub fn window_samples(&self, fs: f64) -> usize {
        (self.window_s * fs).round() as usize
    }

    pub fn gap_samples(&self, fs: f64) -> usize {
        (self.mismatch_gap_s * fs).round() as usize
    }

    pub fn hop_samples(&self, fs: f64) -> usize {
        (((1.0 - self.overlap_fraction) * self.window_s * fs).round() as usize).max(1)
    }

    /// Closed-form emission count for a segment of `n` samples.
    pub fn example_count(&self, n: usize, fs: f64) -> usize {
        let w = self.window_samples(fs);
        let g = self.gap_samples(fs);
        let hop = self.hop_samples(fs);
        let need = 2 * w + g;
        if n < need {
            0
        } else {
            (n - need) / hop + 1
        }
    }
}

/// Which split partition a window came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

/// One (EEG, speech, speech) classification example with provenance.
#[derive(Debug, Clone)]
pub struct MatchMismatchExample {
    pub eeg: Array2<f64>,
    pub speech_a: Array2<f64>,
    pub speech_b: Array2<f64>,
    /// Which slot holds the time-aligned segment.
    pub label: Label,
    pub recording: String,
    pub split: SplitName,
    /// Absolute start sample of the matched window in the source recording.
    pub t_start: usize,
    /// Matched and mismatched content coincide (e.g. silence against silence).
    pub same_segments: bool,
}

impl MatchMismatchExample {
    pub fn to_net(&self) -> Example<f64> {
        Example {
            eeg: self.eeg.clone(),
            speech_a: self.speech_a.clone(),
            speech_b: self.speech_b.clone(),
            label: self.label,
        }
    }
}

/// Cut matched/mismatched examples out of one contiguous partition.
/// `offset` is the partition's absolute start sample (provenance only).
pub fn extract_examples(
    eeg: &TimeSeries,
    speech: &FeatureMatrix,
    cfg: &SegmentationConfig,
    recording: &str,
    split: SplitName,
    offset: usize,
) -> Result<Vec<MatchMismatchExample>> {
    cfg.validate()?;
    if eeg.n_samples() != speech.n_samples() {
        return Err(Error::shape(format!(
            "eeg has {} samples, speech {}",
            eeg.n_samples(),
            speech.n_samples()
        )));
    }
    if (eeg.fs() - speech.fs()).abs() > 1e-9 {
        return Err(Error::shape("eeg and speech sampling rates differ"));
    }
    let fs = eeg.fs();
    let w = cfg.window_samples(fs);
    let gap = cfg.gap_samples(fs);
    let hop = cfg.hop_samples(fs);
    let n = eeg.n_samples();
    if n < 2 * w + gap {
        return Err(Error::invalid(format!(
            "partition of {n} samples cannot hold a window plus its mismatch ({} needed)",
            2 * w + gap
        )));
    }

    let mut out = Vec::with_capacity(cfg.example_count(n, fs));
    let mut t = 0usize;
    let mut emission = 0usize;
    while t + 2 * w + gap <= n {
        let eeg_win = eeg.data().slice(ndarray::s![t..t + w, ..]).to_owned();
        let matched = speech.data().slice(ndarray::s![t..t + w, ..]).to_owned();
        let mm_start = t + w + gap;
        let mismatched = speech.data().slice(ndarray::s![mm_start..mm_start + w, ..]).to_owned();
        let same_segments = matched == mismatched;
        let (speech_a, speech_b, label) = if emission % 2 == 0 {
            (matched, mismatched, Label::A)
        } else {
            (mismatched, matched, Label::B)
        };
        out.push(MatchMismatchExample {
            eeg: eeg_win,
            speech_a,
            speech_b,
            label,
            recording: recording.to_string(),
            split,
            t_start: offset + t,
            same_segments,
        });
        emission += 1;
        t += hop;
    }
    Ok(out)
}

/// All examples of one subject, grouped by split partition.
#[derive(Debug, Clone, Default)]
pub struct SubjectExamples {
    pub subject: String,
    pub train: Vec<MatchMismatchExample>,
    pub validation: Vec<MatchMismatchExample>,
    pub test: Vec<MatchMismatchExample>,
}

impl SubjectExamples {
    fn check_provenance(&self) -> Result<()> {
        for (set, name) in [
            (&self.train, SplitName::Train),
            (&self.validation, SplitName::Validation),
            (&self.test, SplitName::Test),
        ] {
            if set.iter().any(|e| e.split != name) {
                return Err(Error::invalid(format!(
                    "subject {}: example provenance does not match its partition",
                    self.subject
                )));
            }
        }
        Ok(())
    }
}

fn to_net_batch(examples: &[MatchMismatchExample]) -> Vec<Example<f32>> {
    examples.iter().map(|e| e.to_net().cast::<f32>()).collect()
}

fn check_window(model_cfg: &ModelConfig, examples: &[MatchMismatchExample]) -> Result<()> {
    if let Some(e) = examples.first() {
        if e.eeg.nrows() != model_cfg.window_samples {
            return Err(Error::shape(format!(
                "examples hold {}-sample windows, model expects {}",
                e.eeg.nrows(),
                model_cfg.window_samples
            )));
        }
    }
    Ok(())
}

/// Subject-independent training: pool every subject's train/validation
/// examples and run the early-stopping regime from a fresh initialization.
pub fn train_subject_independent(
    subjects: &[SubjectExamples],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<f32>> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in subjects {
        s.check_provenance()?;
        train.extend(to_net_batch(&s.train));
        val.extend(to_net_batch(&s.validation));
    }
    if train.is_empty() {
        return Err(Error::invalid("no training examples across subjects"));
    }
    for s in subjects {
        check_window(model_cfg, &s.train)?;
    }
    let mut rng = rng_for(train_cfg.seed, "mm.init", 0);
    let params: Params<f32> = Params::init(model_cfg, &mut rng)?;
    train_loop(params, &train, &val, train_cfg)
}

/// Per-subject fine-tuning from a subject-independent checkpoint; same
/// early-stopping contract, initialized from `params`.
pub fn finetune(
    params: &Params<f32>,
    subject: &SubjectExamples,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<f32>> {
    subject.check_provenance()?;
    check_window(&params.cfg.clone(), &subject.train)?;
    let train = to_net_batch(&subject.train);
    let val = to_net_batch(&subject.validation);
    train_loop(params.clone(), &train, &val, train_cfg)
}

/// Fraction of examples whose predicted matched slot equals the label.
/// Prediction rule: slot A iff p(A) > 0.5; ties go to slot B.
pub fn evaluate_accuracy(
    params: &Params<f32>,
    examples: &[MatchMismatchExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty example set"));
    }
    let mut correct = 0usize;
    for e in examples {
        let p = forward(params, &e.to_net().cast::<f32>())?;
        let predicted = if p > 0.5 { Label::A } else { Label::B };
        if predicted == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// JSON-lines manifest: one object per example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub recording: String,
    pub t_start: usize,
    pub label: Label,
    pub split: SplitName,
}

pub fn write_example_manifest(path: &Path, examples: &[MatchMismatchExample]) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in examples {
        let record = ExampleRecord {
            recording: e.recording.clone(),
            t_start: e.t_start,
            label: e.label,
            split: e.split,
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One accuracy-report row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub subject: String,
    pub scheme: String,
    pub model_stage: String,
    pub window_s: f64,
    pub accuracy: f64,
    pub n_examples: usize,
}

pub fn write_accuracy_csv(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "scheme", "model_stage", "window_s", "accuracy", "n_examples"])?;
    for r in rows {
        w.write_record([
            r.subject.as_str(),
            r.scheme.as_str(),
            r.model_stage.as_str(),
            &format!("{}", r.window_s),
            &format!("{}", r.accuracy),
            &format!("{}", r.n_examples),
        ])?;
    }
    w.flush()?;
    Ok(())
}
