//! Stage orchestration: synth, preprocess, encode, TRF fit/eval/export,
//! match-mismatch build/train/finetune/eval, statistics, and the full run.
//!
//! Every stage reads its inputs from the output directory of the previous
//! stages and persists its own outputs in the declared formats, so stages can
//! be re-run independently. All randomness is derived from the single run
//! seed by stage name, and a full run ends by writing a manifest that
//! checksums every produced file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{load_alignment, FeatureMatrix, PhoneInventory, Scheme};
use crate::io::{self, FileEntry};
use crate::mm::{
    self, extract_examples, AccuracyRow, MatchMismatchExample, SplitName, SubjectExamples,
};
use crate::net::{self, CheckpointMeta, ModelConfig, Params, TrainConfig};
use crate::seed;
use crate::signal::{
    apply_normalization, common_average_reference, fit_normalization, highpass_zero_phase,
    resample, split_recording, ArtifactRemoval, IdentityArtifactRemoval, TimeSeries,
};
use crate::stats::{compare_schemes, export_comparison_csv};
use crate::synth::{self, CorpusManifest};
use crate::trf::{
    build_lagged_matrix, evaluate_prediction, extract_trf, select_lambda, EvaluationReport,
    NormalEquations, Trf, TrfModel,
};

pub const PARTITIONS: [(&str, SplitName); 4] = [
    ("train_head", SplitName::Train),
    ("validation", SplitName::Validation),
    ("test", SplitName::Test),
    ("train_tail", SplitName::Train),
];

/// Per-recording split geometry and normalization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitInfo {
    pub bounds: [usize; 3],
    pub n_samples: usize,
    pub fs: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SplitInfo {
    pub fn offsets(&self) -> [usize; 4] {
        [0, self.bounds[0], self.bounds[1], self.bounds[2]]
    }
}

fn inventory_for(cfg: &RunConfig) -> Result<PhoneInventory> {
    match &cfg.inventory {
        Some(path) => PhoneInventory::load(path),
        None => Ok(PhoneInventory::default_37()),
    }
}

fn corpus_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.dataset.clone().unwrap_or_else(|| out.join("corpus"))
}

fn load_corpus_manifest(cfg: &RunConfig, out: &Path) -> Result<CorpusManifest> {
    let dir = corpus_dir(cfg, out);
    io::read_json(&dir.join("manifest.json")).map_err(|e| {
        Error::invalid(format!(
            "no corpus manifest under {} (run the synth stage or point `dataset` at one): {e}",
            dir.display()
        ))
    })
}

/// Generate the synthetic corpus configured in the run.
pub fn stage_synth(cfg: &RunConfig, out: &Path) -> Result<CorpusManifest> {
    let settings = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::invalid("config has no synth section"))?;
    let inventory = inventory_for(cfg)?;
    let synth_cfg = settings.to_synth_config(cfg.trf.window_ms);
    synth::generate_corpus(
        settings.n_subjects,
        &synth_cfg,
        &inventory,
        cfg.seed,
        &out.join("corpus"),
    )
}

/// High-pass, artifact slot, common-average reference, resample, split,
/// normalize with training statistics; persists the four partitions.
pub fn stage_preprocess(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_corpus_manifest(cfg, out)?;
    let corpus = corpus_dir(cfg, out);
    let artifact_stage = IdentityArtifactRemoval;
    for subject in &manifest.subjects {
        let raw = io::read_timeseries(&corpus.join(&subject.eeg_stem))?;
        let filtered = highpass_zero_phase(
            &raw,
            cfg.preprocess.highpass_hz,
            cfg.preprocess.highpass_order,
        )?;
        let cleaned = artifact_stage.apply(filtered)?;
        let referenced = common_average_reference(&cleaned);
        let resampled = resample(&referenced, cfg.preprocess.target_fs)?;
        let split = split_recording(&resampled)?;
        let stats = fit_normalization(&split.train_concat())?;

        let dir = out.join("preprocessed").join(&subject.id);
        let parts = [
            ("train_head", &split.train_head),
            ("validation", &split.validation),
            ("test", &split.test),
            ("train_tail", &split.train_tail),
        ];
        for (name, part) in parts {
            let normalized = apply_normalization(part, &stats)?;
            io::write_timeseries(&dir.join(name), &normalized)?;
        }
        let info = SplitInfo {
            bounds: [
                split.bounds.head_end,
                split.bounds.validation_end,
                split.bounds.test_end,
            ],
            n_samples: split.bounds.n_samples,
            fs: resampled.fs(),
            mean: stats.mean.clone(),
            std: stats.std.clone(),
        };
        io::write_json(&dir.join("split.json"), &info)?;
    }
    Ok(())
}

fn load_split_info(out: &Path, subject: &str) -> Result<SplitInfo> {
    io::read_json(&out.join("preprocessed").join(subject).join("split.json")).map_err(|e| {
        Error::invalid(format!("no preprocessed data for {subject} (run preprocess first): {e}"))
    })
}

fn load_partition(out: &Path, subject: &str, name: &str) -> Result<TimeSeries> {
    io::read_timeseries(&out.join("preprocessed").join(subject).join(name))
}

/// Encode every configured scheme at the preprocessed rate and length.
pub fn stage_encode(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_corpus_manifest(cfg, out)?;
    let corpus = corpus_dir(cfg, out);
    let inventory = inventory_for(cfg)?;
    for subject in &manifest.subjects {
        let info = load_split_info(out, &subject.id)?;
        let track = load_alignment(&corpus.join(&subject.alignment))?;
        let dir = out.join("features").join(&subject.id);
        for scheme in &cfg.schemes {
            let features = synth::encode_scheme_features(
                &track,
                &inventory,
                *scheme,
                info.fs,
                info.n_samples,
            )?;
            io::write_features(&dir.join(scheme.name()), &features)?;
        }
    }
    Ok(())
}

fn load_features(out: &Path, subject: &str, scheme: Scheme) -> Result<FeatureMatrix> {
    io::read_features(&out.join("features").join(subject).join(scheme.name())).map_err(|e| {
        Error::invalid(format!("no {} features for {subject} (run encode first): {e}", scheme.name()))
    })
}

/// Configured evaluation channels restricted to those the recording has; an
/// empty intersection means "average over all channels".
fn effective_eval_channels(cfg: &RunConfig, recording: &TimeSeries) -> Vec<String> {
    cfg.trf
        .eval_channels
        .iter()
        .filter(|name| recording.channel_index(name).is_some())
        .cloned()
        .collect()
}

/// Persisted TRF model (weights binary + layout sidecar).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrfModelSidecar {
    lambda: f64,
    fs: f64,
    lag_times_ms: Vec<f64>,
    dim_names: Vec<String>,
    channel_names: Vec<String>,
}

fn save_trf_model(stem: &Path, model: &TrfModel) -> Result<()> {
    io::write_f32_bin(&io::bin_path(stem), model.weights.iter().map(|v| *v as f32))?;
    io::write_json(
        &io::sidecar_path(stem),
        &TrfModelSidecar {
            lambda: model.lambda,
            fs: model.fs,
            lag_times_ms: model.lag_times_ms.clone(),
            dim_names: model.dim_names.clone(),
            channel_names: model.channel_names.clone(),
        },
    )
}

fn load_trf_model(stem: &Path) -> Result<TrfModel> {
    let sidecar: TrfModelSidecar = io::read_json(&io::sidecar_path(stem))?;
    let raw = io::read_f32_bin(&io::bin_path(stem))?;
    let rows = sidecar.dim_names.len() * sidecar.lag_times_ms.len();
    let cols = sidecar.channel_names.len();
    if raw.len() != rows * cols {
        return Err(Error::format("TRF weight file does not match its sidecar"));
    }
    let weights = ndarray::Array2::from_shape_vec(
        (rows, cols),
        raw.into_iter().map(f64::from).collect(),
    )
    .expect("shape checked");
    Ok(TrfModel {
        weights,
        lambda: sidecar.lambda,
        lag_times_ms: sidecar.lag_times_ms,
        dim_names: sidecar.dim_names,
        channel_names: sidecar.channel_names,
        fs: sidecar.fs,
    })
}

/// Training design: normal equations accumulated over the two train segments.
fn train_normal_equations(
    out: &Path,
    subject: &str,
    features: &FeatureMatrix,
    info: &SplitInfo,
    window_ms: f64,
) -> Result<NormalEquations> {
    let [b1, b2, b3] = info.bounds;
    let head = load_partition(out, subject, "train_head")?;
    let tail = load_partition(out, subject, "train_tail")?;
    let head_design = build_lagged_matrix(&features.slice_samples(0, b1), window_ms)?;
    let mut ne = NormalEquations::new(&head_design, &head)?;
    let tail_design =
        build_lagged_matrix(&features.slice_samples(b3, info.n_samples), window_ms)?;
    ne.accumulate(&tail_design, &tail)?;
    let _ = b2;
    Ok(ne)
}

/// Fit one TRF per subject and scheme: lambda chosen on the validation
/// partition, final solve on the training normal equations.
pub fn stage_trf_fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_corpus_manifest(cfg, out)?;
    for scheme in &cfg.schemes {
        for subject in &manifest.subjects {
            let info = load_split_info(out, &subject.id)?;
            let features = load_features(out, &subject.id, *scheme)?;
            let ne = train_normal_equations(out, &subject.id, &features, &info, cfg.trf.window_ms)?;
            let [b1, b2, _] = info.bounds;
            let val_design =
                build_lagged_matrix(&features.slice_samples(b1, b2), cfg.trf.window_ms)?;
            let val_eeg = load_partition(out, &subject.id, "validation")?;
            let eval_channels = effective_eval_channels(cfg, &val_eeg);
            let (lambda, _) = select_lambda(
                &ne,
                &val_design,
                &val_eeg,
                &cfg.trf.lambda_grid,
                &eval_channels,
            )?;
            let model = ne.solve(lambda)?;
            save_trf_model(
                &out.join("trf").join(scheme.name()).join(format!("model_{}", subject.id)),
                &model,
            )?;
        }
    }
    Ok(())
}

/// Predict the held-out test partition and report per-channel correlations.
pub fn stage_trf_eval(cfg: &RunConfig, out: &Path) -> Result<Vec<EvaluationReport>> {
    let manifest = load_corpus_manifest(cfg, out)?;
    let mut all_reports = Vec::new();
    for scheme in &cfg.schemes {
        let dir = out.join("trf").join(scheme.name());
        let mut reports = Vec::new();
        for subject in &manifest.subjects {
            let info = load_split_info(out, &subject.id)?;
            let features = load_features(out, &subject.id, *scheme)?;
            let model = load_trf_model(&dir.join(format!("model_{}", subject.id)))
                .map_err(|e| Error::invalid(format!("run `trf fit` first: {e}")))?;
            let [_, b2, b3] = info.bounds;
            let test_design =
                build_lagged_matrix(&features.slice_samples(b2, b3), cfg.trf.window_ms)?;
            let test_eeg = load_partition(out, &subject.id, "test")?;
            let predicted = crate::trf::predict_eeg(&model, &test_design)?;
            let eval_channels = effective_eval_channels(cfg, &test_eeg);
            let report = evaluate_prediction(
                &predicted,
                &test_eeg,
                &eval_channels,
                &subject.id,
                scheme.name(),
                model.lambda,
            )?;
            reports.push(report);
        }
        crate::trf::export_report_csv(&dir.join("report.csv"), &reports)?;
        io::write_json(&dir.join("reports.json"), &reports)?;
        all_reports.extend(reports);
    }
    Ok(all_reports)
}

/// Subject-mean TRF weights, window-averaged topographies and the
/// channel-correlation map.
pub fn stage_trf_export(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_corpus_manifest(cfg, out)?;
    for scheme in &cfg.schemes {
        let dir = out.join("trf").join(scheme.name());
        // mean model across subjects
        let mut mean: Option<TrfModel> = None;
        for subject in &manifest.subjects {
            let model = load_trf_model(&dir.join(format!("model_{}", subject.id)))?;
            match &mut mean {
                None => mean = Some(model),
                Some(m) => m.weights += &model.weights,
            }
        }
        let mut mean = mean.ok_or_else(|| Error::invalid("no fitted models to export"))?;
        mean.weights /= manifest.subjects.len() as f64;
        let trf: Trf = extract_trf(&mean);
        crate::trf::export_trf_csv(&dir.join("weights_mean.csv"), &trf)?;

        // early positive and late negative analysis windows per dimension
        let windows: [(f64, f64); 4] =
            [(80.0, 130.0), (180.0, 230.0), (200.0, 350.0), (350.0, 400.0)];
        for (d, dim_name) in trf.dim_names.clone().iter().enumerate() {
            for (lo, hi) in windows {
                // windows beyond a short lag grid are skipped, not fatal
                let Ok(values) = trf.window_average(d, lo, hi) else { continue };
                let fname = format!("topo_{}_{}-{}ms.csv", dim_name.replace('+', "_"), lo, hi);
                crate::trf::export_topo_csv(&dir.join(fname), &trf.channel_names, &values, (lo, hi))?;
            }
        }

        // per-channel mean correlation across subjects
        let reports: Vec<EvaluationReport> = io::read_json(&dir.join("reports.json"))
            .map_err(|e| Error::invalid(format!("run `trf eval` first: {e}")))?;
        let map = crate::trf::channel_correlation_map(&reports)?;
        let mut w = csv::Writer::from_path(dir.join("channel_corr.csv"))?;
        w.write_record(["channel", "mean_rho"])?;
        for (c, v) in reports[0].channel_names.iter().zip(&map) {
            w.write_record([c.as_str(), &format!("{v}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Split-local match-mismatch examples for one subject and scheme.
pub fn build_subject_examples(
    cfg: &RunConfig,
    out: &Path,
    subject: &str,
    scheme: Scheme,
) -> Result<SubjectExamples> {
    let info = load_split_info(out, subject)?;
    let features = load_features(out, subject, scheme)?;
    let offsets = info.offsets();
    let ends = [info.bounds[0], info.bounds[1], info.bounds[2], info.n_samples];
    let mut result = SubjectExamples { subject: subject.to_string(), ..Default::default() };
    for (i, (name, split)) in PARTITIONS.iter().enumerate() {
        let eeg = load_partition(out, subject, name)?;
        let part_features = features.slice_samples(offsets[i], ends[i]);
        let examples = extract_examples(
            &eeg,
            &part_features,
            &cfg.mm.segmentation,
            subject,
            *split,
            offsets[i],
        )?;
        match split {
            SplitName::Train => result.train.extend(examples),
            SplitName::Validation => result.validation.extend(examples),
            SplitName::Test => result.test.extend(examples),
        }
    }
    Ok(result)
}

fn model_config_for(cfg: &RunConfig, eeg_channels: usize, feature_dims: usize, fs: f64) -> ModelConfig {
    ModelConfig {
        eeg_channels,
        feature_dims,
        time_kernel: cfg.mm.net.time_kernel,
        time_stride: cfg.mm.net.time_stride,
        eeg_filters: cfg.mm.net.eeg_filters,
        lstm_units: cfg.mm.net.lstm_units,
        head_hidden: cfg.mm.net.head_hidden,
        window_samples: cfg.mm.segmentation.window_samples(fs),
    }
}

fn all_subject_examples(
    cfg: &RunConfig,
    out: &Path,
    scheme: Scheme,
) -> Result<Vec<SubjectExamples>> {
    let manifest = load_corpus_manifest(cfg, out)?;
    manifest
        .subjects
        .iter()
        .map(|s| build_subject_examples(cfg, out, &s.id, scheme))
        .collect()
}

/// Write the per-scheme example manifests (JSON lines).
pub fn stage_mm_build(cfg: &RunConfig, out: &Path) -> Result<()> {
    for scheme in &cfg.schemes {
        let subjects = all_subject_examples(cfg, out, *scheme)?;
        let mut all: Vec<MatchMismatchExample> = Vec::new();
        for s in subjects {
            all.extend(s.train);
            all.extend(s.validation);
            all.extend(s.test);
        }
        mm::write_example_manifest(
            &out.join("mm").join(scheme.name()).join("examples.jsonl"),
            &all,
        )?;
    }
    Ok(())
}

fn train_config_for(cfg: &RunConfig, stage: &str, index: u64) -> TrainConfig {
    TrainConfig { seed: seed::derive_u64(cfg.seed, stage, index), ..cfg.mm.train }
}

/// Train the subject-independent model for every scheme.
pub fn stage_mm_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    for (si, scheme) in cfg.schemes.iter().enumerate() {
        let subjects = all_subject_examples(cfg, out, *scheme)?;
        let first = subjects
            .first()
            .and_then(|s| s.train.first())
            .ok_or_else(|| Error::invalid("no training examples"))?;
        let model_cfg = model_config_for(
            cfg,
            first.eeg.ncols(),
            first.speech_a.ncols(),
            cfg.preprocess.target_fs,
        );
        println!(
            "mm train [{}]: {} frames, {} learnable parameters",
            scheme.name(),
            model_cfg.n_frames(),
            model_cfg.param_count()
        );
        let train_cfg = train_config_for(cfg, "mm.train", si as u64);
        let outcome = mm::train_subject_independent(&subjects, &model_cfg, &train_cfg)?;
        let dir = out.join("mm").join(scheme.name());
        net::write_history_csv(&dir.join("si_history.csv"), &outcome.history)?;
        net::save_checkpoint(
            &dir.join("si_model"),
            &outcome.params,
            &CheckpointMeta {
                config: model_cfg,
                epoch: outcome.best_epoch,
                val_loss: outcome.best_val_loss,
                seed: train_cfg.seed,
            },
        )?;
    }
    Ok(())
}

/// Fine-tune the subject-independent checkpoint per subject.
pub fn stage_mm_finetune(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = load_corpus_manifest(cfg, out)?;
    for (si, scheme) in cfg.schemes.iter().enumerate() {
        let dir = out.join("mm").join(scheme.name());
        let (params, _meta): (Params<f32>, CheckpointMeta) =
            net::load_checkpoint(&dir.join("si_model"))
                .map_err(|e| Error::invalid(format!("run `mm train` first: {e}")))?;
        for (subj_idx, subject) in manifest.subjects.iter().enumerate() {
            let examples = build_subject_examples(cfg, out, &subject.id, *scheme)?;
            let mut train_cfg = train_config_for(
                cfg,
                "mm.finetune",
                (si * manifest.subjects.len() + subj_idx) as u64,
            );
            train_cfg.learning_rate = cfg.mm.finetune_learning_rate;
            let outcome = mm::finetune(&params, &examples, &train_cfg)?;
            net::write_history_csv(
                &dir.join(format!("finetune_{}_history.csv", subject.id)),
                &outcome.history,
            )?;
            net::save_checkpoint(
                &dir.join(format!("finetuned_{}", subject.id)),
                &outcome.params,
                &CheckpointMeta {
                    config: params.cfg,
                    epoch: outcome.best_epoch,
                    val_loss: outcome.best_val_loss,
                    seed: train_cfg.seed,
                },
            )?;
        }
    }
    Ok(())
}

/// Evaluate SI and fine-tuned checkpoints on every subject's test partition.
pub fn stage_mm_eval(cfg: &RunConfig, out: &Path) -> Result<Vec<AccuracyRow>> {
    let manifest = load_corpus_manifest(cfg, out)?;
    let mut rows = Vec::new();
    for scheme in &cfg.schemes {
        let dir = out.join("mm").join(scheme.name());
        let (si_params, _): (Params<f32>, CheckpointMeta) =
            net::load_checkpoint(&dir.join("si_model"))
                .map_err(|e| Error::invalid(format!("run `mm train` first: {e}")))?;
        for subject in &manifest.subjects {
            let examples = build_subject_examples(cfg, out, &subject.id, *scheme)?;
            let si_acc = mm::evaluate_accuracy(&si_params, &examples.test)?;
            rows.push(AccuracyRow {
                subject: subject.id.clone(),
                scheme: scheme.name().to_string(),
                model_stage: "SI".to_string(),
                window_s: cfg.mm.segmentation.window_s,
                accuracy: si_acc,
                n_examples: examples.test.len(),
            });
            let ft_stem = dir.join(format!("finetuned_{}", subject.id));
            if io::sidecar_path(&ft_stem).exists() {
                let (ft_params, _): (Params<f32>, CheckpointMeta) =
                    net::load_checkpoint(&ft_stem)?;
                let ft_acc = mm::evaluate_accuracy(&ft_params, &examples.test)?;
                rows.push(AccuracyRow {
                    subject: subject.id.clone(),
                    scheme: scheme.name().to_string(),
                    model_stage: "finetuned".to_string(),
                    window_s: cfg.mm.segmentation.window_s,
                    accuracy: ft_acc,
                    n_examples: examples.test.len(),
                });
            }
        }
    }
    mm::write_accuracy_csv(&out.join("mm").join("accuracy.csv"), &rows)?;
    Ok(rows)
}

/// Scheme comparisons over TRF correlations and match-mismatch accuracies.
pub fn stage_stats(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.stats_pairs.is_empty() {
        return Ok(());
    }
    let pairs: Vec<(String, String)> = cfg
        .stats_pairs
        .iter()
        .map(|(a, b)| (a.name().to_string(), b.name().to_string()))
        .collect();
    let stats_dir = out.join("stats");

    // TRF metric: per-subject mean correlation over the evaluation subset
    let mut trf_metrics: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for scheme in &cfg.schemes {
        let reports: Vec<EvaluationReport> =
            io::read_json(&out.join("trf").join(scheme.name()).join("reports.json"))
                .map_err(|e| Error::invalid(format!("run `trf eval` first: {e}")))?;
        let inner: BTreeMap<String, f64> =
            reports.iter().map(|r| (r.subject.clone(), r.mean_eval_rho)).collect();
        trf_metrics.insert(scheme.name().to_string(), inner);
    }
    let trf_table = compare_schemes(&trf_metrics, &pairs)?;
    export_comparison_csv(&stats_dir.join("trf_compare.csv"), &trf_table)?;

    // match-mismatch metric: fine-tuned accuracy when present, SI otherwise
    let accuracy_path = out.join("mm").join("accuracy.csv");
    if accuracy_path.exists() {
        let mut rdr = csv::Reader::from_path(&accuracy_path)?;
        let mut mm_metrics: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for record in rdr.deserialize() {
            let row: AccuracyRow = record?;
            let entry = mm_metrics.entry(row.scheme.clone()).or_default();
            // finetuned rows come after SI rows and overwrite them
            if row.model_stage == "finetuned" || !entry.contains_key(&row.subject) {
                entry.insert(row.subject.clone(), row.accuracy);
            }
        }
        let mm_table = compare_schemes(&mm_metrics, &pairs)?;
        export_comparison_csv(&stats_dir.join("mm_compare.csv"), &mm_table)?;
    }
    Ok(())
}

fn walk_files(root: &Path, dir: &Path, rel: &str, acc: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        let child_rel = if rel.is_empty() { name.clone() } else { format!("{rel}/{name}") };
        if entry.file_type()?.is_dir() {
            walk_files(root, &entry.path(), &child_rel, acc)?;
        } else {
            acc.push(child_rel);
        }
    }
    Ok(())
}

/// Full-run manifest: config hash, tool version, timestamps and a checksum for
/// every file under the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Checksum of the external dataset's manifest, when one was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_manifest_sha256: Option<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub outputs: Vec<FileEntry>,
}

fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Run every stage in order and write the run manifest.
pub fn pipeline_run(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let started = unix_ms();
    std::fs::create_dir_all(out)?;
    if cfg.synth.is_some() {
        stage_synth(cfg, out)?;
    }
    stage_preprocess(cfg, out)?;
    stage_encode(cfg, out)?;
    stage_trf_fit(cfg, out)?;
    stage_trf_eval(cfg, out)?;
    stage_trf_export(cfg, out)?;
    stage_mm_build(cfg, out)?;
    stage_mm_train(cfg, out)?;
    stage_mm_finetune(cfg, out)?;
    stage_mm_eval(cfg, out)?;
    stage_stats(cfg, out)?;

    let mut rel_files = Vec::new();
    walk_files(out, out, "", &mut rel_files)?;
    rel_files.retain(|f| f != "run_manifest.json");
    let mut outputs = Vec::with_capacity(rel_files.len());
    for rel in &rel_files {
        outputs.push(FileEntry::for_file(out, rel)?);
    }
    let input_manifest_sha256 = match &cfg.dataset {
        Some(dir) => Some(io::sha256_file(&dir.join("manifest.json"))?),
        None => None,
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.config_hash(),
        seed: cfg.seed,
        input_manifest_sha256,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs,
    };
    io::write_json(&out.join("run_manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Verify every checksum of a finished run.
pub fn verify_run(out: &Path) -> Result<RunManifest> {
    let manifest: RunManifest = io::read_json(&out.join("run_manifest.json"))?;
    for entry in &manifest.outputs {
        entry.verify(out)?;
    }
    Ok(manifest)
}
