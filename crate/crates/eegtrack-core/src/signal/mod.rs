//! Sampled-signal container and the preprocessing chain: zero-phase high-pass
//! filtering, anti-aliased rational resampling, common-average referencing,
//! recording split and train-statistic normalization.

mod filter;
mod resample;

pub use filter::highpass_zero_phase;
pub use resample::resample;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

/// Multichannel sampled signal. Data is `[n_samples x n_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: Array2<f64>,
    fs: f64,
    channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(data: Array2<f64>, fs: f64, channel_names: Vec<String>) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if channel_names.is_empty() {
            return Err(Error::invalid("a time series needs at least one channel"));
        }
        if data.ncols() != channel_names.len() {
            return Err(Error::shape(format!(
                "{} channel names for {} data columns",
                channel_names.len(),
                data.ncols()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate channel name {name:?}")));
            }
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("time series contains non-finite values"));
        }
        Ok(Self { data, fs, channel_names })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    /// Copy of the samples in `range` as a new series at the same rate.
    pub fn slice_samples(&self, start: usize, end: usize) -> TimeSeries {
        assert!(start <= end && end <= self.n_samples(), "slice out of range");
        TimeSeries {
            data: self.data.slice(s![start..end, ..]).to_owned(),
            fs: self.fs,
            channel_names: self.channel_names.clone(),
        }
    }

    /// Concatenate segments that share rate and channel layout.
    pub fn concat(parts: &[&TimeSeries]) -> Result<TimeSeries> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate zero segments"))?;
        for p in parts {
            if p.fs != first.fs || p.channel_names != first.channel_names {
                return Err(Error::shape("concat segments disagree on rate or channels"));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape(format!("concat: {e}")))?;
        Ok(TimeSeries { data, fs: first.fs, channel_names: first.channel_names.clone() })
    }

    /// Internal constructor for outputs whose validity follows from the input's.
    pub(crate) fn from_parts(data: Array2<f64>, fs: f64, channel_names: Vec<String>) -> TimeSeries {
        TimeSeries { data, fs, channel_names }
    }
}

/// Sample-index boundaries of the 40/10/10/40 recording split.
///
/// The first three segment lengths are `floor(p * n)`; the train tail absorbs
/// the remainder, so the four segments always partition `[0, n)` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitBounds {
    pub head_end: usize,
    pub validation_end: usize,
    pub test_end: usize,
    pub n_samples: usize,
}

impl SplitBounds {
    pub fn for_len(n: usize) -> Result<Self> {
        if n < 10 {
            return Err(Error::invalid(format!(
                "recording of {n} samples is too short to split into 40/10/10/40"
            )));
        }
        let head = (n as f64 * 0.4).floor() as usize;
        let val = (n as f64 * 0.1).floor() as usize;
        let test = (n as f64 * 0.1).floor() as usize;
        Ok(SplitBounds {
            head_end: head,
            validation_end: head + val,
            test_end: head + val + test,
            n_samples: n,
        })
    }

    pub fn segments(&self) -> [(usize, usize); 4] {
        [
            (0, self.head_end),
            (self.head_end, self.validation_end),
            (self.validation_end, self.test_end),
            (self.test_end, self.n_samples),
        ]
    }
}

/// Four contiguous views over one recording, ordered along time.
#[derive(Debug, Clone)]
pub struct RecordingSplit {
    pub bounds: SplitBounds,
    pub train_head: TimeSeries,
    pub validation: TimeSeries,
    pub test: TimeSeries,
    pub train_tail: TimeSeries,
}

impl RecordingSplit {
    /// Training data is the head and tail segments joined in time order.
    pub fn train_concat(&self) -> TimeSeries {
        TimeSeries::concat(&[&self.train_head, &self.train_tail])
            .expect("split segments share layout")
    }
}

/// Split a recording into (40%, 10%, 10%, 40%) portions, validation and test
/// taken from the middle.
pub fn split_recording(x: &TimeSeries) -> Result<RecordingSplit> {
    let bounds = SplitBounds::for_len(x.n_samples())?;
    let [h, v, t, tail] = bounds.segments();
    Ok(RecordingSplit {
        bounds,
        train_head: x.slice_samples(h.0, h.1),
        validation: x.slice_samples(v.0, v.1),
        test: x.slice_samples(t.0, t.1),
        train_tail: x.slice_samples(tail.0, tail.1),
    })
}

/// Per-channel mean and standard deviation computed on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean and (population) standard deviation of the training data.
pub fn fit_normalization(train: &TimeSeries) -> Result<NormalizationStats> {
    let n = train.n_samples();
    if n == 0 {
        return Err(Error::invalid("cannot fit normalization on an empty segment"));
    }
    let mut mean = Vec::with_capacity(train.n_channels());
    let mut std = Vec::with_capacity(train.n_channels());
    for (c, col) in train.data().columns().into_iter().enumerate() {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(Error::numeric(format!(
                "channel {} ({}) has zero variance in the training segment",
                c, train.channel_names()[c]
            )));
        }
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(NormalizationStats { mean, std })
}

pub fn apply_normalization(x: &TimeSeries, stats: &NormalizationStats) -> Result<TimeSeries> {
    if stats.mean.len() != x.n_channels() {
        return Err(Error::shape("normalization stats do not match channel count"));
    }
    let mut data = x.data().clone();
    for (c, mut col) in data.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - stats.mean[c]) / stats.std[c]);
    }
    Ok(TimeSeries::from_parts(data, x.fs(), x.channel_names().to_vec()))
}

/// Inverse of [`apply_normalization`].
pub fn invert_normalization(x: &TimeSeries, stats: &NormalizationStats) -> Result<TimeSeries> {
    if stats.mean.len() != x.n_channels() {
        return Err(Error::shape("normalization stats do not match channel count"));
    }
    let mut data = x.data().clone();
    for (c, mut col) in data.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v * stats.std[c] + stats.mean[c]);
    }
    Ok(TimeSeries::from_parts(data, x.fs(), x.channel_names().to_vec()))
}

/// Re-reference every sample to the across-channel average.
pub fn common_average_reference(x: &TimeSeries) -> TimeSeries {
    let mut data = x.data().clone();
    for mut row in data.rows_mut() {
        let mean = row.sum() / row.len() as f64;
        row.mapv_inplace(|v| v - mean);
    }
    TimeSeries::from_parts(data, x.fs(), x.channel_names().to_vec())
}

/// Pluggable artifact-removal stage. The reference pipeline slot ships with an
/// identity implementation only.
pub trait ArtifactRemoval {
    fn apply(&self, x: TimeSeries) -> Result<TimeSeries>;
}

/// Pass-through artifact removal.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityArtifactRemoval;

impl ArtifactRemoval for IdentityArtifactRemoval {
    fn apply(&self, x: TimeSeries) -> Result<TimeSeries> {
        Ok(x)
    }
}

pub(crate) fn default_channel_name(i: usize) -> String {
    format!("ch{i:02}")
}

/// `["ch00", "ch01", ...]`
pub fn generic_channel_names(n: usize) -> Vec<String> {
    (0..n).map(default_channel_name).collect()
}

/// The 64-channel BioSemi cap layout in its standard A1..B32 order.
pub const BIOSEMI64: [&str; 64] = [
    "Fp1", "AF7", "AF3", "F1", "F3", "F5", "F7", "FT7", "FC5", "FC3", "FC1", "C1", "C3", "C5",
    "T7", "TP7", "CP5", "CP3", "CP1", "P1", "P3", "P5", "P7", "P9", "PO7", "PO3", "O1", "Iz",
    "Oz", "POz", "Pz", "CPz", "Fpz", "Fp2", "AF8", "AF4", "AFz", "Fz", "F2", "F4", "F6", "F8",
    "FT8", "FC6", "FC4", "FC2", "FCz", "Cz", "C2", "C4", "C6", "T8", "TP8", "CP6", "CP4", "CP2",
    "P2", "P4", "P6", "P8", "P10", "PO8", "PO4", "O2",
];

/// BioSemi names for exactly 64 channels, generic `chNN` names otherwise.
pub fn biosemi64_names_or_generic(n: usize) -> Vec<String> {
    if n == 64 {
        BIOSEMI64.iter().map(|s| s.to_string()).collect()
    } else {
        generic_channel_names(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ts(data: Array2<f64>, fs: f64) -> TimeSeries {
        let names = generic_channel_names(data.ncols());
        TimeSeries::new(data, fs, names).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        assert!(TimeSeries::new(array![[1.0]], 0.0, vec!["a".into()]).is_err());
        assert!(TimeSeries::new(array![[1.0]], 64.0, vec![]).is_err());
        assert!(TimeSeries::new(array![[1.0, 2.0]], 64.0, vec!["a".into(), "a".into()]).is_err());
        assert!(TimeSeries::new(array![[f64::NAN]], 64.0, vec!["a".into()]).is_err());
    }

    #[test]
    fn car_two_channels() {
        let x = ts(array![[1.0, 3.0]], 64.0);
        let y = common_average_reference(&x);
        assert_eq!(y.data(), &array![[-1.0, 1.0]]);
    }

    #[test]
    fn car_single_channel_zeros() {
        let x = ts(array![[5.0], [2.0]], 64.0);
        let y = common_average_reference(&x);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn car_random_matrix_zero_row_means() {
        let mut rng = crate::seed::rng_for(1, "test.car", 0);
        use rand::Rng;
        let data = Array2::from_shape_fn((200, 64), |_| rng.random_range(-1.0..1.0));
        let x = ts(data, 64.0);
        let y = common_average_reference(&x);
        for row in y.data().rows() {
            let scale = row.iter().map(|v| v.abs()).fold(1.0, f64::max);
            assert!((row.sum() / row.len() as f64).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn car_idempotent() {
        let mut rng = crate::seed::rng_for(1, "test.car", 1);
        use rand::Rng;
        let data = Array2::from_shape_fn((50, 8), |_| rng.random_range(-1.0..1.0));
        let x = ts(data, 64.0);
        let once = common_average_reference(&x);
        let twice = common_average_reference(&once);
        for (a, b) in once.data().iter().zip(twice.data().iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn split_15000() {
        let x = ts(Array2::zeros((15000, 1)), 64.0);
        let split = split_recording(&x).unwrap();
        assert_eq!(split.bounds.segments(), [(0, 6000), (6000, 7500), (7500, 9000), (9000, 15000)]);
    }

    #[test]
    fn split_10() {
        let x = ts(Array2::zeros((10, 1)), 64.0);
        let split = split_recording(&x).unwrap();
        assert_eq!(split.train_head.n_samples(), 4);
        assert_eq!(split.validation.n_samples(), 1);
        assert_eq!(split.test.n_samples(), 1);
        assert_eq!(split.train_tail.n_samples(), 4);
    }

    #[test]
    fn split_9999_contiguous_exhaustive() {
        // floor-then-distribute: 3999/999/999, tail takes the rest
        let bounds = SplitBounds::for_len(9999).unwrap();
        let segs = bounds.segments();
        assert_eq!(segs[0], (0, 3999));
        assert_eq!(segs[1], (3999, 4998));
        assert_eq!(segs[2], (4998, 5997));
        assert_eq!(segs[3], (5997, 9999));
        let total: usize = segs.iter().map(|(a, b)| b - a).sum();
        assert_eq!(total, 9999);
    }

    #[test]
    fn split_too_short_errors() {
        assert!(SplitBounds::for_len(9).is_err());
    }

    #[test]
    fn split_partitions_any_length() {
        for n in 10..600 {
            let b = SplitBounds::for_len(n).unwrap();
            let segs = b.segments();
            assert_eq!(segs[0].0, 0);
            assert_eq!(segs[3].1, n);
            for w in segs.windows(2) {
                assert_eq!(w[0].1, w[1].0);
            }
            assert!(segs.iter().all(|(a, b)| b > a), "empty segment for n={n}");
        }
    }

    #[test]
    fn normalization_two_point_channel() {
        let x = ts(array![[1.0], [3.0]], 64.0);
        let stats = fit_normalization(&x).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        let y = apply_normalization(&x, &stats).unwrap();
        assert_eq!(y.data(), &array![[-1.0], [1.0]]);
        // a held-out value transforms with the same stats
        let test = ts(array![[5.0]], 64.0);
        let z = apply_normalization(&test, &stats).unwrap();
        assert_eq!(z.data()[[0, 0]], 3.0);
    }

    #[test]
    fn normalization_random_matrix_and_inverse() {
        let mut rng = crate::seed::rng_for(2, "test.norm", 0);
        use rand::Rng;
        let data = Array2::from_shape_fn((500, 16), |_| rng.random_range(-3.0..9.0));
        let x = ts(data, 64.0);
        let stats = fit_normalization(&x).unwrap();
        let y = apply_normalization(&x, &stats).unwrap();
        for col in y.data().columns() {
            let m = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() <= 1e-10);
            assert!((var.sqrt() - 1.0).abs() <= 1e-10);
        }
        let back = invert_normalization(&y, &stats).unwrap();
        for (a, b) in back.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn normalization_zero_variance_errors() {
        let x = ts(array![[2.0], [2.0], [2.0]], 64.0);
        assert!(fit_normalization(&x).is_err());
    }
}
