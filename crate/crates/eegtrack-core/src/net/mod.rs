//! The dual-path similarity model: an EEG path (one 2-D convolution over
//! channels x time), a shared speech path (time-downsampling convolution
//! followed by an LSTM), per-frame cosine similarity and a shared scoring head
//! whose two scores meet in a softmax. Swapping the candidates flips the
//! probability exactly, by construction.
//!
//! Everything is generic over the float type: training runs in 32-bit,
//! gradient verification in 64-bit. All activations are smooth (tanh, sigmoid),
//! which keeps central finite differences exact to truncation order.

mod adam;
mod gradcheck;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use model::{backward, cosine_per_frame, forward, loss, Example, Grad, Label};
pub use train::{evaluate_loss, train_loop, write_history_csv, EpochStats, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

/// Float type the network can run in.
pub trait Real:
    Float
    + ScalarOperand
    + ndarray::LinalgScalar
    + num_traits::NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Architecture hyperparameters. The defaults give 104 output frames from a
/// 320-sample decision window (kernel 9, stride 3) and roughly 93k parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub eeg_channels: usize,
    pub feature_dims: usize,
    pub time_kernel: usize,
    pub time_stride: usize,
    pub eeg_filters: usize,
    pub lstm_units: usize,
    pub head_hidden: usize,
    pub window_samples: usize,
}

impl ModelConfig {
    pub fn with_dims(eeg_channels: usize, feature_dims: usize) -> Self {
        ModelConfig {
            eeg_channels,
            feature_dims,
            time_kernel: 9,
            time_stride: 3,
            eeg_filters: 72,
            lstm_units: 72,
            head_hidden: 72,
            window_samples: 320,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eeg_channels == 0 || self.feature_dims == 0 {
            return Err(Error::invalid("model needs at least one channel and one dimension"));
        }
        if self.time_stride == 0 || self.time_kernel == 0 {
            return Err(Error::invalid("kernel and stride must be positive"));
        }
        if self.window_samples < self.time_kernel {
            return Err(Error::invalid(format!(
                "window of {} samples is shorter than the {}-sample kernel",
                self.window_samples, self.time_kernel
            )));
        }
        if self.eeg_filters != self.lstm_units {
            return Err(Error::invalid(
                "eeg_filters must equal lstm_units so per-frame cosine is defined",
            ));
        }
        if self.eeg_filters == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    /// Number of frames after the strided convolution.
    pub fn n_frames(&self) -> usize {
        (self.window_samples - self.time_kernel) / self.time_stride + 1
    }

    pub fn param_count(&self) -> usize {
        let (c, d) = (self.eeg_channels, self.feature_dims);
        let (t, f, u, h) = (self.time_kernel, self.eeg_filters, self.lstm_units, self.head_hidden);
        let eeg = t * c * f + f;
        let speech = t * d * f + f;
        let lstm = 4 * (f * u + u * u + u);
        let head = self.n_frames() * h + h + h + 1;
        eeg + speech + lstm + head
    }
}

/// Named parameter groups, used by gradient verification and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    EegConv,
    SpeechConv,
    LstmInputGate,
    LstmForgetGate,
    LstmCellGate,
    LstmOutputGate,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::EegConv,
        ParamGroup::SpeechConv,
        ParamGroup::LstmInputGate,
        ParamGroup::LstmForgetGate,
        ParamGroup::LstmCellGate,
        ParamGroup::LstmOutputGate,
        ParamGroup::Head,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::EegConv => "eeg_conv",
            ParamGroup::SpeechConv => "speech_conv",
            ParamGroup::LstmInputGate => "lstm_input_gate",
            ParamGroup::LstmForgetGate => "lstm_forget_gate",
            ParamGroup::LstmCellGate => "lstm_cell_gate",
            ParamGroup::LstmOutputGate => "lstm_output_gate",
            ParamGroup::Head => "head",
        }
    }
}

/// All learnable weights. The LSTM gate order along the `4U` axis is
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Real> {
    pub cfg: ModelConfig,
    /// `[(time_kernel * channels) x filters]`
    pub eeg_w: Array2<T>,
    pub eeg_b: Array1<T>,
    /// `[(time_kernel * dims) x filters]`
    pub sp_w: Array2<T>,
    pub sp_b: Array1<T>,
    /// `[filters x 4 units]`
    pub wx: Array2<T>,
    /// `[units x 4 units]`
    pub wh: Array2<T>,
    pub b: Array1<T>,
    /// `[frames x head_hidden]`
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    pub b2: T,
}

impl<T: Real> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, d) = (cfg.eeg_channels, cfg.feature_dims);
        let (t, f, u, h) = (cfg.time_kernel, cfg.eeg_filters, cfg.lstm_units, cfg.head_hidden);
        Ok(Params {
            cfg: *cfg,
            eeg_w: Array2::zeros((t * c, f)),
            eeg_b: Array1::zeros(f),
            sp_w: Array2::zeros((t * d, f)),
            sp_b: Array1::zeros(f),
            wx: Array2::zeros((f, 4 * u)),
            wh: Array2::zeros((u, 4 * u)),
            b: Array1::zeros(4 * u),
            w1: Array2::zeros((cfg.n_frames(), h)),
            b1: Array1::zeros(h),
            w2: Array1::zeros(h),
            b2: T::zero(),
        })
    }

    /// Fan-in-scaled uniform initialization. The head output layer starts at
    /// zero so a fresh model scores every pair exactly 0.5.
    pub fn init(cfg: &ModelConfig, seed_rng: &mut rand_chacha::ChaCha8Rng) -> Result<Self> {
        use rand::Rng;
        let mut p = Self::zeros(cfg)?;
        let mut fill = |w: &mut Array2<T>| {
            let bound = 1.0 / (w.nrows() as f64).sqrt();
            for v in w.iter_mut() {
                *v = T::from_f64(seed_rng.random_range(-bound..bound));
            }
        };
        fill(&mut p.eeg_w);
        fill(&mut p.sp_w);
        fill(&mut p.wx);
        fill(&mut p.wh);
        fill(&mut p.w1);
        Ok(p)
    }

    /// Every tensor randomized, including the head output layer. Gradient
    /// verification uses this so no path starts at a flat spot.
    pub fn init_full(cfg: &ModelConfig, seed_rng: &mut rand_chacha::ChaCha8Rng) -> Result<Self> {
        use rand::Rng;
        let mut p = Self::init(cfg, seed_rng)?;
        let bound = 1.0 / (p.w2.len() as f64).sqrt();
        for v in p.w2.iter_mut() {
            *v = T::from_f64(seed_rng.random_range(-bound..bound));
        }
        for arr in [&mut p.eeg_b, &mut p.sp_b, &mut p.b, &mut p.b1] {
            for v in arr.iter_mut() {
                *v = T::from_f64(seed_rng.random_range(-0.1..0.1));
            }
        }
        p.b2 = T::from_f64(seed_rng.random_range(-0.1..0.1));
        Ok(p)
    }

    /// Lossless flat view in a fixed tensor order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.cfg.param_count());
        out.extend(self.eeg_w.iter().copied());
        out.extend(self.eeg_b.iter().copied());
        out.extend(self.sp_w.iter().copied());
        out.extend(self.sp_b.iter().copied());
        out.extend(self.wx.iter().copied());
        out.extend(self.wh.iter().copied());
        out.extend(self.b.iter().copied());
        out.extend(self.w1.iter().copied());
        out.extend(self.b1.iter().copied());
        out.extend(self.w2.iter().copied());
        out.push(self.b2);
        out
    }

    pub fn from_flat(cfg: &ModelConfig, flat: &[T]) -> Result<Self> {
        if flat.len() != cfg.param_count() {
            return Err(Error::shape(format!(
                "flat vector has {} values, config wants {}",
                flat.len(),
                cfg.param_count()
            )));
        }
        let mut p = Self::zeros(cfg)?;
        let mut pos = 0usize;
        fn fill2<T: Real>(target: &mut Array2<T>, flat: &[T], pos: &mut usize) {
            let n = target.len();
            let shape = target.dim();
            *target = Array2::from_shape_vec(shape, flat[*pos..*pos + n].to_vec()).unwrap();
            *pos += n;
        }
        fn fill1<T: Real>(target: &mut Array1<T>, flat: &[T], pos: &mut usize) {
            let n = target.len();
            *target = Array1::from_vec(flat[*pos..*pos + n].to_vec());
            *pos += n;
        }
        fill2(&mut p.eeg_w, flat, &mut pos);
        fill1(&mut p.eeg_b, flat, &mut pos);
        fill2(&mut p.sp_w, flat, &mut pos);
        fill1(&mut p.sp_b, flat, &mut pos);
        fill2(&mut p.wx, flat, &mut pos);
        fill2(&mut p.wh, flat, &mut pos);
        fill1(&mut p.b, flat, &mut pos);
        fill2(&mut p.w1, flat, &mut pos);
        fill1(&mut p.b1, flat, &mut pos);
        fill1(&mut p.w2, flat, &mut pos);
        p.b2 = flat[pos];
        pos += 1;
        debug_assert_eq!(pos, flat.len());
        Ok(p)
    }

    /// Group of the parameter at flat index `i`.
    pub fn group_of(&self, i: usize) -> ParamGroup {
        let u = self.cfg.lstm_units;
        let eeg = self.eeg_w.len() + self.eeg_b.len();
        let speech = self.sp_w.len() + self.sp_b.len();
        if i < eeg {
            return ParamGroup::EegConv;
        }
        let i = i - eeg;
        if i < speech {
            return ParamGroup::SpeechConv;
        }
        let i = i - speech;
        let gate_of_col = |col: usize| match col / u {
            0 => ParamGroup::LstmInputGate,
            1 => ParamGroup::LstmForgetGate,
            2 => ParamGroup::LstmCellGate,
            _ => ParamGroup::LstmOutputGate,
        };
        if i < self.wx.len() {
            return gate_of_col(i % (4 * u));
        }
        let i = i - self.wx.len();
        if i < self.wh.len() {
            return gate_of_col(i % (4 * u));
        }
        let i = i - self.wh.len();
        if i < self.b.len() {
            return gate_of_col(i);
        }
        ParamGroup::Head
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let flat: Vec<U> = self.to_flat().iter().map(|v| U::from_f64(v.as_f64())).collect();
        Params::from_flat(&self.cfg, &flat).expect("same config")
    }
}

/// Checkpoint sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
}

/// Write `<stem>.bin` (flat little-endian f32 parameters) + `<stem>.json`.
pub fn save_checkpoint<T: Real>(
    stem: &Path,
    params: &Params<T>,
    meta: &CheckpointMeta,
) -> Result<()> {
    io::write_f32_bin(&io::bin_path(stem), params.to_flat().iter().map(|v| v.as_f64() as f32))?;
    io::write_json(&io::sidecar_path(stem), meta)
}

pub fn load_checkpoint<T: Real>(stem: &Path) -> Result<(Params<T>, CheckpointMeta)> {
    let meta: CheckpointMeta = io::read_json(&io::sidecar_path(stem))?;
    let raw = io::read_f32_bin(&io::bin_path(stem))?;
    let flat: Vec<T> = raw.iter().map(|v| T::from_f64(f64::from(*v))).collect();
    Ok((Params::from_flat(&meta.config, &flat)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            eeg_channels: 3,
            feature_dims: 2,
            time_kernel: 5,
            time_stride: 3,
            eeg_filters: 4,
            lstm_units: 4,
            head_hidden: 6,
            window_samples: 26,
        }
    }

    #[test]
    fn default_config_frames_and_params() {
        let cfg = ModelConfig::with_dims(64, 3);
        assert_eq!(cfg.n_frames(), 104);
        let count = cfg.param_count();
        let target = 94_000.0;
        let dev = (count as f64 - target).abs() / target;
        assert!(dev <= 0.15, "{count} parameters is {:.1}% from 94k", dev * 100.0);
    }

    #[test]
    fn flat_round_trip_lossless() {
        let cfg = tiny_config();
        let p: Params<f64> = Params::init_full(&cfg, &mut rng_for(1, "t", 0)).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), cfg.param_count());
        let back = Params::from_flat(&cfg, &flat).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::with_dims(4, 2);
        cfg.lstm_units = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::with_dims(4, 2);
        cfg.window_samples = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn group_mapping_covers_everything() {
        let cfg = ModelConfig {
            eeg_channels: 2,
            feature_dims: 2,
            time_kernel: 3,
            time_stride: 2,
            eeg_filters: 3,
            lstm_units: 3,
            head_hidden: 4,
            window_samples: 9,
        };
        let p: Params<f64> = Params::zeros(&cfg).unwrap();
        let mut counts = std::collections::HashMap::new();
        for i in 0..cfg.param_count() {
            *counts.entry(p.group_of(i).name()).or_insert(0usize) += 1;
        }
        assert_eq!(counts["eeg_conv"], 3 * 2 * 3 + 3);
        assert_eq!(counts["speech_conv"], 3 * 2 * 3 + 3);
        let per_gate = 3 * 3 + 3 * 3 + 3;
        for gate in ["lstm_input_gate", "lstm_forget_gate", "lstm_cell_gate", "lstm_output_gate"] {
            assert_eq!(counts[gate], per_gate, "{gate}");
        }
        assert_eq!(counts["head"], cfg.n_frames() * 4 + 4 + 4 + 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny_config();
        let p: Params<f32> = Params::init_full(&cfg, &mut rng_for(2, "t", 0)).unwrap();
        let meta = CheckpointMeta { config: cfg, epoch: 7, val_loss: 0.123, seed: 42 };
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        save_checkpoint(&stem, &p, &meta).unwrap();
        let (back, meta2): (Params<f32>, _) = load_checkpoint(&stem).unwrap();
        assert_eq!(p, back);
        assert_eq!(meta2.epoch, 7);
        assert_eq!(meta2.config, cfg);
    }
}
