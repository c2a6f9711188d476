//! Linear forward modeling: lagged design matrices, closed-form ridge
//! regression, validation-based regularization choice, Spearman evaluation and
//! TRF exports.
//!
//! The design matrix stacks lagged copies of every speech dimension so that
//! column `d*L + l` at row `t` holds feature `d` at sample `t - l`. The ridge
//! solution solves `(S'S + lambda I) W = S'R` by Cholesky factorization.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::signal::TimeSeries;

/// Default integration window in milliseconds (speech samples up to this far
/// before the EEG sample feed each prediction).
pub const DEFAULT_WINDOW_MS: f64 = 400.0;

/// Default regularization grid: 10 logarithmically spaced values.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi, n) = (1e-3f64, 1e6f64, 10);
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            10f64.powf(lo.log10() + t * (hi.log10() - lo.log10()))
        })
        .collect()
}

/// The 27-channel fronto-temporal evaluation subset used for mean correlation.
pub const DEFAULT_EVAL_CHANNELS: [&str; 27] = [
    "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2",
    "F4", "F6", "F8", "FT7", "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "FT8", "T7", "T8",
];

/// Lagged stimulus matrix `[T x (D*L)]` plus its layout.
#[derive(Debug, Clone)]
pub struct LaggedDesignMatrix {
    data: Array2<f64>,
    n_lags: usize,
    n_dims: usize,
    fs: f64,
    dim_names: Vec<String>,
}

impl LaggedDesignMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_lags(&self) -> usize {
        self.n_lags
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn lag_times_ms(&self) -> Vec<f64> {
        (0..self.n_lags).map(|l| l as f64 * 1000.0 / self.fs).collect()
    }
}

/// Number of lags for an integration window: `floor(window_ms * fs / 1000) + 1`
/// (lag zero included, all lags strictly within the window).
pub fn n_lags_for_window(window_ms: f64, fs: f64) -> usize {
    (window_ms * fs / 1000.0).floor() as usize + 1
}

/// Stack lagged copies of every feature dimension, zero-padded before the
/// recording starts.
pub fn build_lagged_matrix(features: &FeatureMatrix, window_ms: f64) -> Result<LaggedDesignMatrix> {
    if !(window_ms.is_finite() && window_ms >= 0.0) {
        return Err(Error::invalid(format!("integration window must be >= 0, got {window_ms}")));
    }
    let n_lags = n_lags_for_window(window_ms, features.fs());
    let t = features.n_samples();
    let d = features.n_dims();
    let mut data = Array2::zeros((t, d * n_lags));
    let src = features.data();
    for dim in 0..d {
        for lag in 0..n_lags {
            let col = dim * n_lags + lag;
            for row in lag..t {
                data[[row, col]] = src[[row - lag, dim]];
            }
        }
    }
    Ok(LaggedDesignMatrix {
        data,
        n_lags,
        n_dims: d,
        fs: features.fs(),
        dim_names: features.dim_names().to_vec(),
    })
}

/// Fitted lagged linear weights `[(D*L) x C]` with their layout.
#[derive(Debug, Clone)]
pub struct TrfModel {
    pub weights: Array2<f64>,
    pub lambda: f64,
    pub lag_times_ms: Vec<f64>,
    pub dim_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub fs: f64,
}

/// Accumulated normal equations `S'S` and `S'R`, so several contiguous
/// segments (or several lambdas) can share one pass over the data.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: Array2<f64>,
    xty: Array2<f64>,
    n_lags: usize,
    dim_names: Vec<String>,
    channel_names: Vec<String>,
    fs: f64,
    n_rows: usize,
}

impl NormalEquations {
    pub fn new(s: &LaggedDesignMatrix, r: &TimeSeries) -> Result<Self> {
        if s.n_samples() != r.n_samples() {
            return Err(Error::shape(format!(
                "design has {} rows, response has {}",
                s.n_samples(),
                r.n_samples()
            )));
        }
        if (s.fs() - r.fs()).abs() > 1e-9 {
            return Err(Error::shape("design and response sampling rates differ"));
        }
        Ok(NormalEquations {
            gram: s.data().t().dot(s.data()),
            xty: s.data().t().dot(r.data()),
            n_lags: s.n_lags(),
            dim_names: s.dim_names().to_vec(),
            channel_names: r.channel_names().to_vec(),
            fs: s.fs(),
            n_rows: s.n_samples(),
        })
    }

    /// Add another contiguous segment's contribution.
    pub fn accumulate(&mut self, s: &LaggedDesignMatrix, r: &TimeSeries) -> Result<()> {
        let other = NormalEquations::new(s, r)?;
        if other.gram.dim() != self.gram.dim() || other.channel_names != self.channel_names {
            return Err(Error::shape("segments disagree on design or channel layout"));
        }
        self.gram += &other.gram;
        self.xty += &other.xty;
        self.n_rows += other.n_rows;
        Ok(())
    }

    pub fn solve(&self, lambda: f64) -> Result<TrfModel> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        let p = self.gram.nrows();
        let mut a = self.gram.clone();
        for i in 0..p {
            a[[i, i]] += lambda;
        }
        let weights = cholesky_solve(&a, &self.xty).map_err(|e| {
            Error::numeric(format!("ridge system singular at lambda={lambda}: {e}"))
        })?;

        // verify (S'S + lambda I) W = S'R to the contracted residual
        let residual = (&a.dot(&weights) - &self.xty).mapv(f64::abs).sum();
        let scale = self.xty.mapv(f64::abs).sum().max(f64::MIN_POSITIVE);
        if residual / scale > 1e-8 {
            return Err(Error::numeric(format!(
                "ridge solve residual {:e} exceeds 1e-8",
                residual / scale
            )));
        }

        let lag_times_ms = (0..self.n_lags).map(|l| l as f64 * 1000.0 / self.fs).collect();
        Ok(TrfModel {
            weights,
            lambda,
            lag_times_ms,
            dim_names: self.dim_names.clone(),
            channel_names: self.channel_names.clone(),
            fs: self.fs,
        })
    }
}

/// Closed-form ridge regression `W = (S'S + lambda I)^-1 S'R` via Cholesky.
pub fn ridge_fit(s: &LaggedDesignMatrix, r: &TimeSeries, lambda: f64) -> Result<TrfModel> {
    NormalEquations::new(s, r)?.solve(lambda)
}

/// Solve `A X = B` for symmetric positive-definite `A`.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> std::result::Result<Array2<f64>, String> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(format!("non-positive pivot {sum:e} at row {i}"));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut x = b.clone();
    let ncols = b.ncols();
    for c in 0..ncols {
        // forward: L y = b
        for i in 0..n {
            let mut v = x[[i, c]];
            for k in 0..i {
                v -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
        // backward: L' x = y
        for i in (0..n).rev() {
            let mut v = x[[i, c]];
            for k in i + 1..n {
                v -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
    }
    Ok(x)
}

/// Predict EEG as `S * W`.
pub fn predict_eeg(model: &TrfModel, s: &LaggedDesignMatrix) -> Result<TimeSeries> {
    if s.data().ncols() != model.weights.nrows() {
        return Err(Error::shape(format!(
            "design has {} columns, model expects {}",
            s.data().ncols(),
            model.weights.nrows()
        )));
    }
    let data = s.data().dot(&model.weights);
    TimeSeries::new(data, s.fs(), model.channel_names.clone())
}

/// Fractional (mid) ranks, ties averaged.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::numeric("correlation of a constant vector is undefined"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Spearman correlation: Pearson correlation of fractional ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two samples"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman inputs must be finite"));
    }
    pearson(&midranks(a), &midranks(b))
}

/// Per-channel Spearman correlations plus the mean over a named subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub subject: String,
    pub scheme: String,
    pub lambda: f64,
    pub channel_names: Vec<String>,
    pub rhos: Vec<f64>,
    pub eval_channels: Vec<String>,
    pub mean_eval_rho: f64,
}

impl EvaluationReport {
    pub fn rho_for(&self, channel: &str) -> Option<f64> {
        self.channel_names.iter().position(|c| c == channel).map(|i| self.rhos[i])
    }
}

/// Correlate prediction and recording per channel. A channel whose prediction
/// is constant (heavily regularized models produce these) scores 0.
pub fn evaluate_prediction(
    predicted: &TimeSeries,
    actual: &TimeSeries,
    eval_channels: &[String],
    subject: &str,
    scheme: &str,
    lambda: f64,
) -> Result<EvaluationReport> {
    if predicted.n_samples() != actual.n_samples()
        || predicted.channel_names() != actual.channel_names()
    {
        return Err(Error::shape("prediction and recording disagree on layout"));
    }
    let mut rhos = Vec::with_capacity(actual.n_channels());
    for c in 0..actual.n_channels() {
        let p: Vec<f64> = predicted.data().column(c).to_vec();
        let a: Vec<f64> = actual.data().column(c).to_vec();
        let rho = spearman(&p, &a).unwrap_or(0.0);
        rhos.push(rho);
    }
    let mut subset_rhos = Vec::new();
    for name in eval_channels {
        match actual.channel_index(name) {
            Some(i) => subset_rhos.push(rhos[i]),
            None => {
                return Err(Error::invalid(format!(
                    "evaluation channel {name:?} is not in the recording"
                )))
            }
        }
    }
    let mean_eval_rho = if subset_rhos.is_empty() {
        rhos.iter().sum::<f64>() / rhos.len() as f64
    } else {
        subset_rhos.iter().sum::<f64>() / subset_rhos.len() as f64
    };
    Ok(EvaluationReport {
        subject: subject.to_string(),
        scheme: scheme.to_string(),
        lambda,
        channel_names: actual.channel_names().to_vec(),
        rhos,
        eval_channels: eval_channels.to_vec(),
        mean_eval_rho,
    })
}

/// Pick the grid value maximizing mean validation correlation over the
/// evaluation subset; ties go to the smallest lambda.
pub fn select_lambda(
    train: &NormalEquations,
    validation_design: &LaggedDesignMatrix,
    validation_eeg: &TimeSeries,
    grid: &[f64],
    eval_channels: &[String],
) -> Result<(f64, EvaluationReport)> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite lambdas"));
    let mut best: Option<(f64, EvaluationReport)> = None;
    for &lambda in &sorted {
        let model = train.solve(lambda)?;
        let pred = predict_eeg(&model, validation_design)?;
        let report =
            evaluate_prediction(&pred, validation_eeg, eval_channels, "", "", lambda)?;
        let better = match &best {
            None => true,
            Some((_, b)) => report.mean_eval_rho > b.mean_eval_rho,
        };
        if better {
            best = Some((lambda, report));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// TRF weights reshaped to `[D x L x C]` with the lag axis in milliseconds.
#[derive(Debug, Clone)]
pub struct Trf {
    pub values: Array3<f64>,
    pub lag_times_ms: Vec<f64>,
    pub dim_names: Vec<String>,
    pub channel_names: Vec<String>,
}

/// Reshape a model's weights into per-dimension, per-channel lag series.
pub fn extract_trf(model: &TrfModel) -> Trf {
    let l = model.lag_times_ms.len();
    let d = model.dim_names.len();
    let c = model.channel_names.len();
    let mut values = Array3::zeros((d, l, c));
    for dim in 0..d {
        for lag in 0..l {
            for ch in 0..c {
                values[[dim, lag, ch]] = model.weights[[dim * l + lag, ch]];
            }
        }
    }
    Trf {
        values,
        lag_times_ms: model.lag_times_ms.clone(),
        dim_names: model.dim_names.clone(),
        channel_names: model.channel_names.clone(),
    }
}

impl Trf {
    pub fn dim_series(&self, dim: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), dim)
    }

    /// Mean TRF value over lags whose time lies in `[lo_ms, hi_ms]`, per channel.
    pub fn window_average(&self, dim: usize, lo_ms: f64, hi_ms: f64) -> Result<Vec<f64>> {
        let lags: Vec<usize> = self
            .lag_times_ms
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= lo_ms && **t <= hi_ms)
            .map(|(i, _)| i)
            .collect();
        if lags.is_empty() {
            return Err(Error::invalid(format!(
                "no lags fall inside the [{lo_ms}, {hi_ms}] ms window"
            )));
        }
        let series = self.dim_series(dim);
        let mut out = vec![0.0; self.channel_names.len()];
        for (ch, v) in out.iter_mut().enumerate() {
            *v = lags.iter().map(|&l| series[[l, ch]]).sum::<f64>() / lags.len() as f64;
        }
        Ok(out)
    }
}

/// Arithmetic mean correlation per channel across subjects.
pub fn channel_correlation_map(reports: &[EvaluationReport]) -> Result<Vec<f64>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("need at least one report"))?;
    let mut mean = vec![0.0; first.rhos.len()];
    for r in reports {
        if r.channel_names != first.channel_names {
            return Err(Error::invalid("reports disagree on the channel set"));
        }
        for (m, rho) in mean.iter_mut().zip(&r.rhos) {
            *m += rho;
        }
    }
    for m in mean.iter_mut() {
        *m /= reports.len() as f64;
    }
    Ok(mean)
}

/// CSV export: one row per (dim, lag, channel) weight.
pub fn export_trf_csv(path: &Path, trf: &Trf) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dim_name", "lag_ms", "channel", "weight"])?;
    for (d, dim_name) in trf.dim_names.iter().enumerate() {
        for (l, lag_ms) in trf.lag_times_ms.iter().enumerate() {
            for (c, channel) in trf.channel_names.iter().enumerate() {
                w.write_record([
                    dim_name.as_str(),
                    &format!("{lag_ms}"),
                    channel.as_str(),
                    &format!("{}", trf.values[[d, l, c]]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV export: one row per (subject, scheme, channel) correlation.
pub fn export_report_csv(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "scheme", "channel", "rho", "lambda"])?;
    for r in reports {
        for (c, channel) in r.channel_names.iter().enumerate() {
            w.write_record([
                r.subject.as_str(),
                r.scheme.as_str(),
                channel.as_str(),
                &format!("{}", r.rhos[c]),
                &format!("{}", r.lambda),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV export of a per-channel scalar map (window-averaged TRF or mean rho).
pub fn export_topo_csv(
    path: &Path,
    channels: &[String],
    values: &[f64],
    window_ms: (f64, f64),
) -> Result<()> {
    if channels.len() != values.len() {
        return Err(Error::shape("channel/value length mismatch"));
    }
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["channel", "value", "window_lo_ms", "window_hi_ms"])?;
    for (c, v) in channels.iter().zip(values) {
        w.write_record([
            c.as_str(),
            &format!("{v}"),
            &format!("{}", window_ms.0),
            &format!("{}", window_ms.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
