//! Anti-aliased rational resampling.
//!
//! The rate change `target_fs / fs` is reduced to a rational `up / down` and
//! the signal is passed through a Kaiser-windowed-sinc lowpass evaluated in
//! polyphase form, so only the requested output samples are computed. The
//! filter is centered, which cancels its group delay, and its stopband starts
//! at the narrower of the two Nyquist limits with at least 70 dB attenuation.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

const STOPBAND_DB: f64 = 70.0;
const MAX_DENOMINATOR: u64 = 1024;
const RATIO_TOLERANCE: f64 = 1e-9;

/// Best rational approximation of `x` with denominator <= `max_den`
/// (continued-fraction convergents).
fn rational_approx(x: f64, max_den: u64) -> (u64, u64) {
    let mut a = x.floor();
    let mut frac = x - a;
    let (mut h0, mut h1) = (1u64, a as u64);
    let (mut k0, mut k1) = (0u64, 1u64);
    for _ in 0..64 {
        if frac < 1e-15 {
            break;
        }
        let inv = 1.0 / frac;
        a = inv.floor();
        frac = inv - a;
        let a_u = a as u64;
        let h2 = match a_u.checked_mul(h1).and_then(|v| v.checked_add(h0)) {
            Some(v) => v,
            None => break,
        };
        let k2 = match a_u.checked_mul(k1).and_then(|v| v.checked_add(k0)) {
            Some(v) => v,
            None => break,
        };
        if k2 > max_den {
            break;
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
    (h1, k1)
}

/// Zeroth-order modified Bessel function of the first kind (series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x2 = (x / 2.0) * (x / 2.0);
    for k in 1..64 {
        term *= half_x2 / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc lowpass at the upsampled rate. `nu` is the stopband
/// edge in radians; returns odd-length taps with overall DC gain `up`.
fn design_kaiser_lowpass(nu: f64, up: u64) -> Vec<f64> {
    let beta = 0.1102 * (STOPBAND_DB - 8.7);
    let trans = 0.15 * nu;
    let cutoff = nu - trans / 2.0;
    let mut n = ((STOPBAND_DB - 7.95) / (2.285 * trans)).ceil() as usize + 1;
    if n % 2 == 0 {
        n += 1;
    }
    let m = (n - 1) as f64 / 2.0;
    let i0b = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 {
                cutoff / std::f64::consts::PI
            } else {
                (cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let w = bessel_i0(beta * (1.0 - (t / m) * (t / m)).max(0.0).sqrt()) / i0b;
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    let gain = up as f64 / sum;
    for t in taps.iter_mut() {
        *t *= gain;
    }
    taps
}

/// Resample to `target_fs`. Output length is `round(n * target_fs / fs)`.
pub fn resample(x: &TimeSeries, target_fs: f64) -> Result<TimeSeries> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_fs}")));
    }
    let ratio = target_fs / x.fs();
    let (up, down) = rational_approx(ratio, MAX_DENOMINATOR);
    if up == 0 {
        return Err(Error::invalid(format!(
            "rate change {} -> {} is too extreme to resample",
            x.fs(),
            target_fs
        )));
    }
    let achieved = up as f64 / down as f64;
    if ((achieved - ratio) / ratio).abs() > RATIO_TOLERANCE {
        return Err(Error::invalid(format!(
            "rate ratio {ratio} is not rational within tolerance (best {up}/{down})"
        )));
    }
    if up == down {
        return Ok(TimeSeries::from_parts(
            x.data().clone(),
            target_fs,
            x.channel_names().to_vec(),
        ));
    }

    let n_in = x.n_samples();
    let n_out = (n_in as f64 * up as f64 / down as f64).round() as usize;
    let nu = std::f64::consts::PI / up.max(down) as f64;
    let taps = design_kaiser_lowpass(nu, up);
    let n_taps = taps.len() as i64;
    let center = (n_taps - 1) / 2;

    let (up_i, down_i) = (up as i64, down as i64);
    let mut out = Array2::zeros((n_out, x.n_channels()));
    for (c, col) in x.data().columns().into_iter().enumerate() {
        let chan: Vec<f64> = col.to_vec();
        for m in 0..n_out as i64 {
            // upsampled-grid index of this output sample, delay compensated
            let u = m * down_i + center;
            // input samples n contribute at tap k = u - n*up
            let n_lo = ((u - n_taps + 1).div_euclid(up_i) + i64::from((u - n_taps + 1).rem_euclid(up_i) != 0)).max(0);
            let n_hi = (u.div_euclid(up_i)).min(n_in as i64 - 1);
            let mut acc = 0.0;
            for n in n_lo..=n_hi {
                let k = u - n * up_i;
                acc += taps[k as usize] * chan[n as usize];
            }
            out[[m as usize, c]] = acc;
        }
    }
    Ok(TimeSeries::from_parts(out, target_fs, x.channel_names().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::generic_channel_names;
    use std::f64::consts::PI;

    fn series_1ch(samples: Vec<f64>, fs: f64) -> TimeSeries {
        let n = samples.len();
        let data = Array2::from_shape_vec((n, 1), samples).unwrap();
        TimeSeries::new(data, fs, generic_channel_names(1)).unwrap()
    }

    #[test]
    fn rational_approx_basic() {
        assert_eq!(rational_approx(64.0 / 1024.0, 1024), (1, 16));
        assert_eq!(rational_approx(3.0 / 2.0, 1024), (3, 2));
        assert_eq!(rational_approx(1.0, 1024), (1, 1));
    }

    #[test]
    fn output_length_rounds() {
        let x = series_1ch(vec![0.0; 1000], 1024.0);
        let y = resample(&x, 64.0).unwrap();
        assert_eq!(y.n_samples(), 63); // round(1000 * 64 / 1024)
        assert_eq!(y.fs(), 64.0);
    }

    #[test]
    fn constant_passes_through() {
        let x = series_1ch(vec![3.0; 4096], 1024.0);
        let y = resample(&x, 64.0).unwrap();
        let n = y.n_samples();
        for v in y.data().column(0).iter().skip(n / 4).take(n / 2) {
            assert!((v - 3.0).abs() < 1e-3, "constant drifted to {v}");
        }
    }

    #[test]
    fn sine_resampled_matches_analytic() {
        // 5 Hz sine sampled at 1024 Hz, resampled to 64 Hz, compared against
        // the analytically sampled 5 Hz sine on the target grid
        let fs_in = 1024.0;
        let fs_out = 64.0;
        let n = 8192;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 5.0 * i as f64 / fs_in).sin()).collect();
        let y = resample(&series_1ch(x, fs_in), fs_out).unwrap();
        let n_out = y.n_samples();
        let margin = n_out / 8;
        let mut max_err = 0.0f64;
        for m in margin..n_out - margin {
            let want = (2.0 * PI * 5.0 * m as f64 / fs_out).sin();
            let got = y.data()[[m, 0]];
            max_err = max_err.max((got - want).abs());
        }
        assert!(max_err < 0.01, "max deviation {max_err}");
    }

    #[test]
    fn band_limited_correlation_with_analytic() {
        // multi-tone signal below the target Nyquist survives resampling
        let fs_in = 1024.0;
        let fs_out = 64.0;
        let n = 8192;
        let tone = |t: f64| (2.0 * PI * 3.0 * t).sin() + 0.5 * (2.0 * PI * 11.0 * t + 0.7).cos();
        let x: Vec<f64> = (0..n).map(|i| tone(i as f64 / fs_in)).collect();
        let y = resample(&series_1ch(x, fs_in), fs_out).unwrap();
        let n_out = y.n_samples();
        let margin = n_out / 8;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for m in margin..n_out - margin {
            let a = tone(m as f64 / fs_out);
            let b = y.data()[[m, 0]];
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr > 0.999, "correlation {corr}");
    }

    #[test]
    fn aliasing_band_attenuated() {
        // a 100 Hz tone lies far above the 32 Hz target Nyquist and must be
        // suppressed by at least 60 dB
        let fs_in = 1024.0;
        let n = 8192;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 100.0 * i as f64 / fs_in).sin()).collect();
        let y = resample(&series_1ch(x, fs_in), 64.0).unwrap();
        let n_out = y.n_samples();
        let mid = &y.data().column(0).to_vec()[n_out / 4..3 * n_out / 4];
        let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
        let amp_in = std::f64::consts::FRAC_1_SQRT_2;
        let atten_db = 20.0 * (rms / amp_in).log10();
        assert!(atten_db < -60.0, "only {atten_db} dB attenuation");
    }

    #[test]
    fn upsampling_works() {
        let fs_in = 64.0;
        let n = 512;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 5.0 * i as f64 / fs_in).sin()).collect();
        let y = resample(&series_1ch(x, fs_in), 128.0).unwrap();
        assert_eq!(y.n_samples(), 1024);
        let margin = 128;
        let mut max_err = 0.0f64;
        for m in margin..y.n_samples() - margin {
            let want = (2.0 * PI * 5.0 * m as f64 / 128.0).sin();
            max_err = max_err.max((y.data()[[m, 0]] - want).abs());
        }
        assert!(max_err < 0.01, "max deviation {max_err}");
    }

    #[test]
    fn same_rate_is_identity() {
        let x = series_1ch((0..100).map(|i| i as f64).collect(), 64.0);
        let y = resample(&x, 64.0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn irrational_ratio_rejected() {
        let x = series_1ch(vec![0.0; 100], 64.0);
        assert!(resample(&x, 64.0 * std::f64::consts::SQRT_2).is_err());
    }
}
