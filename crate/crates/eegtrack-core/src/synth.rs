//! Synthetic subjects with known ground truth.
//!
//! A subject is a random phone/syllable alignment, its onset features, a
//! per-dimension response kernel (sums of Gaussian bumps on the lag axis),
//! a dims-to-channels spatial mixing and additive white or pink noise scaled
//! to an exact per-channel SNR. Because the generator uses the same lagging
//! convention as the design matrix, the flattened `kernel x mixing` tensor is
//! the exact ridge solution on noise-free data, which makes the generator the
//! oracle for every downstream stage.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    encode_onsets, encode_vad, prepend_vad, AlignmentTrack, FeatureMatrix, Interval,
    PhoneInventory, Scheme, Tier,
};
use crate::io::{self, FileEntry};
use crate::seed::rng_for;
use crate::signal::TimeSeries;
use crate::trf::n_lags_for_window;

/// One Gaussian bump of a response kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBump {
    pub latency_ms: f64,
    pub width_ms: f64,
    pub amplitude: f64,
}

/// Spatial mixing from feature dimensions to channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingSpec {
    /// Each dimension drives exactly its own channel (requires dims == channels).
    Identity,
    /// Dense Gaussian mixing drawn from the corpus seed, with a per-subject
    /// jitter on top.
    Random,
    /// Every channel is driven mainly by one dimension (round-robin, gain near
    /// one) with a small dense crosstalk. Keeps each channel's kernel stack
    /// identifiable, which the weight-recovery oracle checks rely on.
    Dominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    White,
    Pink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub fs: f64,
    /// Scheme whose features drive the EEG (VAD is prepended automatically).
    pub scheme: Scheme,
    /// Lag window bounding the kernels, milliseconds.
    pub window_ms: f64,
    /// Kernel bumps per feature dimension name.
    pub kernels: BTreeMap<String, Vec<KernelBump>>,
    pub n_channels: usize,
    pub mixing: MixingSpec,
    /// `None` disables noise entirely.
    pub noise: Option<NoiseSpec>,
    pub phone_dur_s: (f64, f64),
    pub silence_dur_s: (f64, f64),
    pub phones_per_burst: (usize, usize),
    /// Scale of the per-subject perturbation added to the shared mixing.
    pub subject_mixing_jitter: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration must be finite and >= 0"));
        }
        if !(self.fs > 0.0) {
            return Err(Error::invalid("fs must be positive"));
        }
        if let Some(noise) = &self.noise {
            if !noise.snr_db.is_finite() {
                return Err(Error::invalid("snr_db must be finite; omit noise to disable it"));
            }
        }
        if self.phone_dur_s.0 <= 0.0 || self.phone_dur_s.0 > self.phone_dur_s.1 {
            return Err(Error::invalid("phone duration range is invalid"));
        }
        if self.silence_dur_s.0 <= 0.0 || self.silence_dur_s.0 > self.silence_dur_s.1 {
            return Err(Error::invalid("silence duration range is invalid"));
        }
        for (dim, bumps) in &self.kernels {
            for b in bumps {
                if b.latency_ms < 0.0 || b.latency_ms > self.window_ms {
                    return Err(Error::invalid(format!(
                        "kernel bump for {dim:?} at {} ms lies outside the {} ms lag window",
                        b.latency_ms, self.window_ms
                    )));
                }
                if b.width_ms <= 0.0 {
                    return Err(Error::invalid(format!("kernel bump for {dim:?} has width <= 0")));
                }
            }
        }
        Ok(())
    }
}

/// Kernel shapes echoing slow cortical responses: an early positive peak and,
/// for vowel-like dimensions, a late negative lobe. Vowel and consonant
/// kernels are deliberately distinct.
pub fn default_kernels(inventory: &PhoneInventory) -> BTreeMap<String, Vec<KernelBump>> {
    let mut map = BTreeMap::new();
    let bump = |l: f64, w: f64, a: f64| KernelBump { latency_ms: l, width_ms: w, amplitude: a };
    map.insert(
        "vad".to_string(),
        vec![bump(100.0, 30.0, 1.0), bump(200.0, 40.0, 0.6), bump(380.0, 40.0, -0.5)],
    );
    map.insert("vowel".to_string(), vec![bump(120.0, 35.0, 1.2), bump(360.0, 50.0, -0.6)]);
    map.insert("consonant".to_string(), vec![bump(90.0, 30.0, 0.9), bump(250.0, 60.0, -0.5)]);
    map.insert("phone".to_string(), vec![bump(75.0, 30.0, 1.0)]);
    map.insert("syllable".to_string(), vec![bump(100.0, 40.0, 0.8)]);
    let bpc: [(&str, Vec<KernelBump>); 5] = [
        ("short_vowel", vec![bump(110.0, 30.0, 1.1)]),
        ("long_vowel", vec![bump(130.0, 35.0, 1.0), bump(370.0, 45.0, -0.5)]),
        ("plosive", vec![bump(85.0, 25.0, 0.9)]),
        ("fricative", vec![bump(95.0, 30.0, 0.8)]),
        ("nasal_approximant", vec![bump(100.0, 30.0, 0.85)]),
    ];
    for (name, bumps) in &bpc {
        map.insert((*name).to_string(), bumps.clone());
    }
    // narrow classes inherit the shape of their broad class
    for label in inventory.labels() {
        let class = inventory.lookup(label).expect("own label");
        let parent = class.bpc_class.name();
        let bumps = map.get(parent).expect("bpc kernels present").clone();
        map.insert(label.clone(), bumps);
    }
    // npc dimension names join co-indexed labels; cover those too
    for name in inventory.npc_dim_names() {
        if !map.contains_key(name) {
            if let Some(first) = name.split('+').next() {
                if let Some(b) = map.get(first).cloned() {
                    map.insert(name.clone(), b);
                }
            }
        }
    }
    map
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 120.0,
            fs: 64.0,
            scheme: Scheme::Vc,
            window_ms: crate::trf::DEFAULT_WINDOW_MS,
            kernels: default_kernels(&PhoneInventory::default_37()),
            n_channels: 64,
            mixing: MixingSpec::Random,
            noise: Some(NoiseSpec { model: NoiseModel::Pink, snr_db: 0.0 }),
            phone_dur_s: (0.05, 0.25),
            silence_dur_s: (0.15, 0.5),
            phones_per_burst: (3, 10),
            subject_mixing_jitter: 0.15,
        }
    }
}

/// Everything needed to verify a generated subject.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Flattened kernels-times-mixing, `[(D*L) x C]`, in design-matrix layout.
    pub w_true: Array2<f64>,
    pub dim_names: Vec<String>,
    pub lag_times_ms: Vec<f64>,
    pub channel_names: Vec<String>,
    pub mixing: Array2<f64>,
    pub clean: TimeSeries,
    pub noise: TimeSeries,
}

/// Alternating speech bursts and silences tiling `[0, duration_s]` exactly,
/// with a syllable tier grouping 1-3 phones.
pub fn generate_alignment(
    cfg: &SynthConfig,
    inventory: &PhoneInventory,
    rng: &mut ChaCha8Rng,
) -> Result<AlignmentTrack> {
    cfg.validate()?;
    let labels: Vec<String> = inventory.labels().cloned().collect();
    let mut phones: Vec<Interval> = Vec::new();
    let mut syllables: Vec<Interval> = Vec::new();
    let mut t = 0.0f64;
    let end = cfg.duration_s;
    let eps = 1e-9;

    let push_sil = |from: f64, to: f64, phones: &mut Vec<Interval>, sylls: &mut Vec<Interval>| {
        phones.push(Interval {
            tier: Tier::Phone,
            label: "sil".into(),
            start_s: from,
            end_s: to,
        });
        sylls.push(Interval {
            tier: Tier::Syllable,
            label: "sil".into(),
            start_s: from,
            end_s: to,
        });
    };

    // leading silence keeps onset-free padding at the recording start
    let mut speech_turn = false;
    while t < end - eps {
        if speech_turn {
            let n_phones = rng.random_range(cfg.phones_per_burst.0..=cfg.phones_per_burst.1);
            let mut burst: Vec<Interval> = Vec::with_capacity(n_phones);
            for _ in 0..n_phones {
                if t >= end - eps {
                    break;
                }
                let dur = rng.random_range(cfg.phone_dur_s.0..=cfg.phone_dur_s.1);
                let stop = (t + dur).min(end);
                if stop - t < eps {
                    break;
                }
                let label = labels[rng.random_range(0..labels.len())].clone();
                burst.push(Interval { tier: Tier::Phone, label, start_s: t, end_s: stop });
                t = stop;
            }
            // group this burst into syllables of 1-3 phones
            let mut i = 0;
            while i < burst.len() {
                let take = rng.random_range(1..=3usize).min(burst.len() - i);
                let group = &burst[i..i + take];
                let label: String =
                    group.iter().map(|iv| iv.label.as_str()).collect::<Vec<_>>().join("");
                syllables.push(Interval {
                    tier: Tier::Syllable,
                    label,
                    start_s: group[0].start_s,
                    end_s: group[take - 1].end_s,
                });
                i += take;
            }
            phones.extend(burst);
        } else {
            let dur = rng.random_range(cfg.silence_dur_s.0..=cfg.silence_dur_s.1);
            let stop = (t + dur).min(end);
            if stop - t >= eps {
                push_sil(t, stop, &mut phones, &mut syllables);
            }
            t = stop;
        }
        speech_turn = !speech_turn;
    }
    phones.extend(syllables);
    AlignmentTrack::new(phones, crate::features::default_silence_labels())
}

/// Scheme features with VAD prepended (or VAD alone for [`Scheme::Vad`]).
pub fn encode_scheme_features(
    track: &AlignmentTrack,
    inventory: &PhoneInventory,
    scheme: Scheme,
    fs: f64,
    n_samples: usize,
) -> Result<FeatureMatrix> {
    let vad = encode_vad(track, fs, n_samples)?;
    if scheme == Scheme::Vad {
        return Ok(vad);
    }
    let onsets = encode_onsets(track, inventory, scheme, fs, n_samples)?;
    prepend_vad(&onsets.features, &vad)
}

/// Evaluate a dimension's kernel on the lag grid.
fn kernel_on_lags(bumps: &[KernelBump], lag_times_ms: &[f64]) -> Vec<f64> {
    lag_times_ms
        .iter()
        .map(|t| {
            bumps
                .iter()
                .map(|b| {
                    let z = (t - b.latency_ms) / b.width_ms;
                    b.amplitude * (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect()
}

fn sample_mixing(
    cfg: &SynthConfig,
    n_dims: usize,
    corpus_rng: &mut ChaCha8Rng,
    subject_rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    match cfg.mixing {
        MixingSpec::Identity => {
            if n_dims != cfg.n_channels {
                return Err(Error::invalid(format!(
                    "identity mixing needs dims == channels, got {n_dims} vs {}",
                    cfg.n_channels
                )));
            }
            Ok(Array2::eye(n_dims))
        }
        MixingSpec::Random => {
            let normal = Normal::new(0.0, 1.0).expect("valid normal");
            let mut m = Array2::zeros((n_dims, cfg.n_channels));
            for v in m.iter_mut() {
                *v = normal.sample(corpus_rng);
            }
            if cfg.subject_mixing_jitter > 0.0 {
                for v in m.iter_mut() {
                    *v += cfg.subject_mixing_jitter * normal.sample(subject_rng);
                }
            }
            Ok(m)
        }
        MixingSpec::Dominant => {
            let normal = Normal::new(0.0, 1.0).expect("valid normal");
            let crosstalk = 0.08;
            let mut m = Array2::zeros((n_dims, cfg.n_channels));
            for c in 0..cfg.n_channels {
                let dominant = c % n_dims;
                for d in 0..n_dims {
                    let base = if d == dominant {
                        1.0 + 0.2 * normal.sample(corpus_rng)
                    } else {
                        crosstalk * normal.sample(corpus_rng)
                    };
                    m[[d, c]] = base;
                }
            }
            if cfg.subject_mixing_jitter > 0.0 {
                for v in m.iter_mut() {
                    *v += cfg.subject_mixing_jitter * crosstalk * normal.sample(subject_rng);
                }
            }
            Ok(m)
        }
    }
}

fn white_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Pink noise by spectral shaping of seeded white noise (1/sqrt(f) magnitude
/// weighting, DC removed), normalized to unit variance.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rustfft::num_complex::Complex;
    if n == 0 {
        return Vec::new();
    }
    let white = white_noise(n, rng);
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = white.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fft.process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = (k.min(n - k)) as f64; // bin frequency, symmetric
        *v *= 1.0 / f.sqrt();
    }
    ifft.process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for v in out.iter_mut() {
        *v = (*v - mean) * scale;
    }
    out
}

/// Convolve features with their kernels, mix into channels and add noise at an
/// exact per-channel SNR.
pub fn generate_eeg(
    cfg: &SynthConfig,
    features: &FeatureMatrix,
    mixing: Array2<f64>,
    noise_rng: &mut ChaCha8Rng,
) -> Result<(TimeSeries, GroundTruth)> {
    cfg.validate()?;
    if (features.fs() - cfg.fs).abs() > 1e-9 {
        return Err(Error::invalid("features are not at the configured rate"));
    }
    let n = features.n_samples();
    let d = features.n_dims();
    if mixing.nrows() != d || mixing.ncols() != cfg.n_channels {
        return Err(Error::shape("mixing matrix shape does not match dims x channels"));
    }
    let n_lags = n_lags_for_window(cfg.window_ms, cfg.fs);
    let lag_times_ms: Vec<f64> =
        (0..n_lags).map(|l| l as f64 * 1000.0 / cfg.fs).collect();

    // per-dimension kernels on the lag grid
    let mut kernels = Vec::with_capacity(d);
    for name in features.dim_names() {
        let bumps = cfg.kernels.get(name).ok_or_else(|| {
            Error::invalid(format!("no kernel configured for feature dimension {name:?}"))
        })?;
        kernels.push(kernel_on_lags(bumps, &lag_times_ms));
    }

    // latent response per dimension: causal convolution with zero padding,
    // identical to the design-matrix convention
    let src = features.data();
    let mut latent = Array2::<f64>::zeros((n, d));
    for dim in 0..d {
        let k = &kernels[dim];
        for t in 0..n {
            let mut acc = 0.0;
            let max_lag = n_lags.min(t + 1);
            for (lag, kv) in k.iter().enumerate().take(max_lag) {
                acc += kv * src[[t - lag, dim]];
            }
            latent[[t, dim]] = acc;
        }
    }
    let clean_data = latent.dot(&mixing);

    // flattened ground-truth weights in design-matrix layout
    let mut w_true = Array2::<f64>::zeros((d * n_lags, cfg.n_channels));
    for dim in 0..d {
        for lag in 0..n_lags {
            for ch in 0..cfg.n_channels {
                w_true[[dim * n_lags + lag, ch]] = kernels[dim][lag] * mixing[[dim, ch]];
            }
        }
    }

    let channel_names = crate::signal::biosemi64_names_or_generic(cfg.n_channels);
    let mut noise_data = Array2::<f64>::zeros((n, cfg.n_channels));
    if let Some(spec) = &cfg.noise {
        let snr_linear = 10f64.powf(spec.snr_db / 10.0);
        for c in 0..cfg.n_channels {
            let raw = match spec.model {
                NoiseModel::White => white_noise(n, noise_rng),
                NoiseModel::Pink => pink_noise(n, noise_rng),
            };
            let p_signal =
                clean_data.column(c).iter().map(|v| v * v).sum::<f64>() / n as f64;
            if p_signal <= 0.0 {
                return Err(Error::numeric(format!(
                    "channel {c} carries no signal; cannot scale noise to {} dB SNR",
                    spec.snr_db
                )));
            }
            let p_noise = raw.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let scale = (p_signal / (p_noise * snr_linear)).sqrt();
            for (t, v) in raw.iter().enumerate() {
                noise_data[[t, c]] = v * scale;
            }
        }
    }

    let emitted = &clean_data + &noise_data;
    let eeg = TimeSeries::new(emitted, cfg.fs, channel_names.clone())?;
    let truth = GroundTruth {
        w_true,
        dim_names: features.dim_names().to_vec(),
        lag_times_ms,
        channel_names: channel_names.clone(),
        mixing,
        clean: TimeSeries::new(clean_data, cfg.fs, channel_names.clone())?,
        noise: TimeSeries::from_parts(noise_data, cfg.fs, channel_names),
    };
    Ok((eeg, truth))
}

/// One fully generated subject.
#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub id: String,
    pub track: AlignmentTrack,
    pub features: FeatureMatrix,
    pub eeg: TimeSeries,
    pub truth: GroundTruth,
}

/// Generate subject `index` of a corpus. All randomness derives from
/// `(master_seed, stage, index)`, so subjects are independent and reproducible
/// in isolation.
pub fn generate_subject(
    cfg: &SynthConfig,
    inventory: &PhoneInventory,
    master_seed: u64,
    index: u64,
) -> Result<SynthSubject> {
    let mut align_rng = rng_for(master_seed, "synth.alignment", index);
    let track = generate_alignment(cfg, inventory, &mut align_rng)?;
    let n_samples = (cfg.duration_s * cfg.fs).round() as usize;
    let features = encode_scheme_features(&track, inventory, cfg.scheme, cfg.fs, n_samples)?;
    // shared mixing comes from a corpus-level stream, jitter from the subject
    let mut corpus_rng = rng_for(master_seed, "synth.mixing", 0);
    let mut subject_rng = rng_for(master_seed, "synth.mixing.subject", index);
    let mixing = sample_mixing(cfg, features.n_dims(), &mut corpus_rng, &mut subject_rng)?;
    let mut noise_rng = rng_for(master_seed, "synth.noise", index);
    let (eeg, truth) = generate_eeg(cfg, &features, mixing, &mut noise_rng)?;
    Ok(SynthSubject { id: format!("sub{index:02}"), track, features, eeg, truth })
}

/// Serialized ground truth; weights are `[(D*L) x C]` row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub dim_names: Vec<String>,
    pub lag_times_ms: Vec<f64>,
    pub channel_names: Vec<String>,
    pub w_true: Vec<Vec<f64>>,
    pub mixing: Vec<Vec<f64>>,
}

impl TruthFile {
    pub fn from_truth(t: &GroundTruth) -> Self {
        TruthFile {
            dim_names: t.dim_names.clone(),
            lag_times_ms: t.lag_times_ms.clone(),
            channel_names: t.channel_names.clone(),
            w_true: t.w_true.rows().into_iter().map(|r| r.to_vec()).collect(),
            mixing: t.mixing.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn w_true_array(&self) -> Result<Array2<f64>> {
        let rows = self.w_true.len();
        let cols = self.w_true.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = self.w_true.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::format(format!("truth weights malformed: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectFiles {
    pub id: String,
    pub alignment: String,
    pub eeg_stem: String,
    pub clean_stem: String,
    pub noise_stem: String,
    pub truth: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub fs: f64,
    pub scheme: Scheme,
    pub n_subjects: usize,
    pub config: SynthConfig,
    pub subjects: Vec<SubjectFiles>,
    pub files: Vec<FileEntry>,
}

/// Generate and persist `n_subjects` subjects under `out_dir`; the returned
/// manifest (also written to `manifest.json`) lists every file with a SHA-256.
pub fn generate_corpus(
    n_subjects: usize,
    cfg: &SynthConfig,
    inventory: &PhoneInventory,
    master_seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut subjects = Vec::with_capacity(n_subjects);
    let mut rel_files: Vec<String> = Vec::new();
    for i in 0..n_subjects {
        let subject = generate_subject(cfg, inventory, master_seed, i as u64)?;
        let sub_dir = subject.id.clone();
        let alignment = format!("{sub_dir}/alignment.tsv");
        let eeg_stem = format!("{sub_dir}/eeg");
        let clean_stem = format!("{sub_dir}/clean");
        let noise_stem = format!("{sub_dir}/noise");
        let truth = format!("{sub_dir}/truth.json");
        crate::features::write_alignment(&out_dir.join(&alignment), &subject.track)?;
        io::write_timeseries(&out_dir.join(&eeg_stem), &subject.eeg)?;
        io::write_timeseries(&out_dir.join(&clean_stem), &subject.truth.clean)?;
        io::write_timeseries(&out_dir.join(&noise_stem), &subject.truth.noise)?;
        io::write_json(&out_dir.join(&truth), &TruthFile::from_truth(&subject.truth))?;
        for f in [&alignment, &truth] {
            rel_files.push(f.clone());
        }
        for stem in [&eeg_stem, &clean_stem, &noise_stem] {
            rel_files.push(format!("{stem}.bin"));
            rel_files.push(format!("{stem}.json"));
        }
        subjects.push(SubjectFiles { id: subject.id, alignment, eeg_stem, clean_stem, noise_stem, truth });
    }
    let mut files = Vec::with_capacity(rel_files.len());
    for rel in &rel_files {
        files.push(FileEntry::for_file(out_dir, rel)?);
    }
    let manifest = CorpusManifest {
        seed: master_seed,
        fs: cfg.fs,
        scheme: cfg.scheme,
        n_subjects,
        config: cfg.clone(),
        subjects,
        files,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Verify every checksum in a corpus manifest.
pub fn verify_corpus(out_dir: &Path) -> Result<CorpusManifest> {
    let manifest: CorpusManifest = io::read_json(&out_dir.join("manifest.json"))?;
    for entry in &manifest.files {
        entry.verify(out_dir)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trf::{build_lagged_matrix, ridge_fit};

    fn quiet_cfg() -> SynthConfig {
        SynthConfig { duration_s: 30.0, n_channels: 8, noise: None, ..SynthConfig::default() }
    }

    #[test]
    fn alignment_tiles_duration_exactly() {
        let cfg = SynthConfig { duration_s: 10.0, ..SynthConfig::default() };
        let inv = PhoneInventory::default_37();
        let mut rng = rng_for(1, "t", 0);
        let track = generate_alignment(&cfg, &inv, &mut rng).unwrap();
        // phone tier covers [0, 10] with no gaps
        let phones: Vec<&Interval> = track.tier(Tier::Phone).collect();
        assert_eq!(phones[0].start_s, 0.0);
        assert_eq!(phones.last().unwrap().end_s, 10.0);
        for w in phones.windows(2) {
            assert!((w[0].end_s - w[1].start_s).abs() < 1e-12, "gap in phone tier");
        }
        // syllable tier too
        let sylls: Vec<&Interval> = track.tier(Tier::Syllable).collect();
        assert_eq!(sylls[0].start_s, 0.0);
        assert_eq!(sylls.last().unwrap().end_s, 10.0);
    }

    #[test]
    fn alignment_deterministic_and_zero_duration_empty() {
        let cfg = SynthConfig { duration_s: 5.0, ..SynthConfig::default() };
        let inv = PhoneInventory::default_37();
        let t1 = generate_alignment(&cfg, &inv, &mut rng_for(9, "t", 1)).unwrap();
        let t2 = generate_alignment(&cfg, &inv, &mut rng_for(9, "t", 1)).unwrap();
        assert_eq!(t1.intervals(), t2.intervals());

        let none = SynthConfig { duration_s: 0.0, ..SynthConfig::default() };
        let t = generate_alignment(&none, &inv, &mut rng_for(9, "t", 2)).unwrap();
        assert!(t.intervals().is_empty());
    }

    #[test]
    fn delta_kernel_identity_mixing_copies_feature() {
        // one bump at lag 0 with tiny width approximates a delta; easier to be
        // exact: a single bump evaluated on the grid IS the kernel, so compare
        // against the explicit convolution instead of the raw feature
        let inv = PhoneInventory::default_37();
        let mut cfg = quiet_cfg();
        cfg.duration_s = 20.0;
        cfg.scheme = Scheme::Vad;
        cfg.n_channels = 1;
        cfg.mixing = MixingSpec::Identity;
        cfg.kernels.insert(
            "vad".into(),
            vec![KernelBump { latency_ms: 0.0, width_ms: 1e-6, amplitude: 1.0 }],
        );
        let track = generate_alignment(&cfg, &inv, &mut rng_for(2, "t", 0)).unwrap();
        let n = (cfg.duration_s * cfg.fs).round() as usize;
        let features = encode_scheme_features(&track, &inv, Scheme::Vad, cfg.fs, n).unwrap();
        let mixing = Array2::eye(1);
        let (eeg, truth) =
            generate_eeg(&cfg, &features, mixing, &mut rng_for(2, "t", 1)).unwrap();
        // kernel at lag 0 is 1, all other lags are ~0
        for t in 0..n {
            assert!((eeg.data()[[t, 0]] - features.data()[[t, 0]]).abs() < 1e-12);
        }
        assert_eq!(truth.noise.data().iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn clean_plus_noise_equals_emitted() {
        let inv = PhoneInventory::default_37();
        let mut cfg = quiet_cfg();
        cfg.noise = Some(NoiseSpec { model: NoiseModel::White, snr_db: 3.0 });
        let s = generate_subject(&cfg, &inv, 7, 0).unwrap();
        for ((e, c), n) in s
            .eeg
            .data()
            .iter()
            .zip(s.truth.clean.data().iter())
            .zip(s.truth.noise.data().iter())
        {
            assert_eq!(*e, c + n);
        }
    }

    #[test]
    fn snr_scaling_exact() {
        let inv = PhoneInventory::default_37();
        for (model, snr) in [(NoiseModel::White, 0.0), (NoiseModel::Pink, 0.0), (NoiseModel::Pink, 10.0)] {
            let mut cfg = quiet_cfg();
            cfg.noise = Some(NoiseSpec { model, snr_db: snr });
            let s = generate_subject(&cfg, &inv, 13, 0).unwrap();
            let n = s.eeg.n_samples() as f64;
            for c in 0..s.eeg.n_channels() {
                let p_sig =
                    s.truth.clean.data().column(c).iter().map(|v| v * v).sum::<f64>() / n;
                let p_noise =
                    s.truth.noise.data().column(c).iter().map(|v| v * v).sum::<f64>() / n;
                let measured_db = 10.0 * (p_sig / p_noise).log10();
                assert!(
                    (measured_db - snr).abs() < 0.1,
                    "channel {c}: measured {measured_db} dB, wanted {snr}"
                );
                if snr == 0.0 {
                    assert!((p_sig / p_noise - 1.0).abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn kernel_peak_recovered_by_ridge() {
        // inject a 100 ms peak and recover its latency through the full
        // feature -> design -> ridge path
        let inv = PhoneInventory::default_37();
        let mut cfg = quiet_cfg();
        cfg.duration_s = 120.0;
        cfg.scheme = Scheme::Phone;
        cfg.kernels.insert(
            "phone".into(),
            vec![KernelBump { latency_ms: 100.0, width_ms: 20.0, amplitude: 1.0 }],
        );
        // keep vad flat so the phone kernel dominates its own dimension
        let s = generate_subject(&cfg, &inv, 21, 0).unwrap();
        let design = build_lagged_matrix(&s.features, cfg.window_ms).unwrap();
        let model = ridge_fit(&design, &s.eeg, 1e-6).unwrap();
        let trf = crate::trf::extract_trf(&model);
        // dimension 1 is the phone column (0 is vad)
        let series = trf.dim_series(1);
        // strongest channel for that dimension
        let (mut best_ch, mut best_amp) = (0, 0.0f64);
        for ch in 0..series.ncols() {
            let amp = series.column(ch).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if amp > best_amp {
                best_amp = amp;
                best_ch = ch;
            }
        }
        let col = series.column(best_ch);
        let sign = s.truth.mixing[[1, best_ch]].signum();
        let (argmax, _) = col
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, v)| if v * sign > acc.1 { (i, v * sign) } else { acc });
        let peak_ms = trf.lag_times_ms[argmax];
        assert!(
            (peak_ms - 100.0).abs() <= 1000.0 / 64.0 + 1e-9,
            "peak at {peak_ms} ms, wanted 100 +- one lag"
        );
    }

    #[test]
    fn vc_explains_more_than_phone_noise_free() {
        let inv = PhoneInventory::default_37();
        let mut cfg = quiet_cfg();
        cfg.duration_s = 90.0;
        cfg.n_channels = 6;
        let s = generate_subject(&cfg, &inv, 31, 0).unwrap();
        let n = s.eeg.n_samples();

        let phone_feats = encode_scheme_features(&s.track, &inv, Scheme::Phone, cfg.fs, n).unwrap();
        let vc_design = build_lagged_matrix(&s.features, cfg.window_ms).unwrap();
        let ph_design = build_lagged_matrix(&phone_feats, cfg.window_ms).unwrap();
        let vc_fit = ridge_fit(&vc_design, &s.eeg, 1e-8).unwrap();
        let ph_fit = ridge_fit(&ph_design, &s.eeg, 1e-8).unwrap();
        let vc_pred = crate::trf::predict_eeg(&vc_fit, &vc_design).unwrap();
        let ph_pred = crate::trf::predict_eeg(&ph_fit, &ph_design).unwrap();
        for c in 0..s.eeg.n_channels() {
            let actual: Vec<f64> = s.eeg.data().column(c).to_vec();
            let rho_vc =
                crate::trf::spearman(&vc_pred.data().column(c).to_vec(), &actual).unwrap();
            let rho_ph =
                crate::trf::spearman(&ph_pred.data().column(c).to_vec(), &actual).unwrap();
            assert!(
                rho_vc > rho_ph,
                "channel {c}: vc {rho_vc} not above phone {rho_ph}"
            );
        }
    }

    #[test]
    fn corpus_byte_identical_across_runs() {
        let inv = PhoneInventory::default_37();
        let cfg = SynthConfig {
            duration_s: 15.0,
            n_channels: 4,
            noise: Some(NoiseSpec { model: NoiseModel::Pink, snr_db: 5.0 }),
            ..SynthConfig::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate_corpus(2, &cfg, &inv, 99, d1.path()).unwrap();
        let m2 = generate_corpus(2, &cfg, &inv, 99, d2.path()).unwrap();
        assert_eq!(m1.files, m2.files, "checksums differ between identical runs");
        verify_corpus(d1.path()).unwrap();

        let empty = generate_corpus(0, &cfg, &inv, 99, tempfile::tempdir().unwrap().path()).unwrap();
        assert!(empty.subjects.is_empty());
        assert!(empty.files.is_empty());
    }
}
