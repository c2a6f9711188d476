//! Zero-phase Butterworth high-pass filtering.
//!
//! The filter is designed with the bilinear transform (prewarped cutoff) and
//! realized as a cascade of second-order sections, then applied forward and
//! backward over an odd-reflected extension of the signal so the composite
//! response has exactly zero phase. Per-section initial conditions are set to
//! the step-response steady state scaled by the first extended sample, which
//! suppresses the startup transient.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

/// One direct-form-II-transposed section: b = [b0,b1,b2], a = [1,a1,a2].
#[derive(Debug, Clone, Copy)]
struct Sos {
    b: [f64; 3],
    a: [f64; 2],
}

impl Sos {
    /// Steady-state internal state for a unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        [dc - self.b[0], self.b[2] - self.a[1] * dc]
    }

    fn filter_in_place(&self, x: &mut [f64], zi_scale: f64) {
        let zi = self.step_state();
        let mut s1 = zi[0] * zi_scale;
        let mut s2 = zi[1] * zi_scale;
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let xn = *v;
            let y = b0 * xn + s1;
            s1 = b1 * xn - a1 * y + s2;
            s2 = b2 * xn - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth high-pass as second-order sections, unity gain at Nyquist.
fn butter_highpass_sos(order: usize, cutoff_hz: f64, fs: f64) -> Vec<Sos> {
    // prewarped analog cutoff
    let warped = 2.0 * fs * (std::f64::consts::PI * cutoff_hz / fs).tan();
    let n = order as f64;
    let mut sections = Vec::with_capacity(order.div_ceil(2));

    // complex-conjugate analog prototype pole pairs, mapped lowpass->highpass
    // then through the bilinear transform; all zeros land on z = 1
    let n_pairs = order / 2;
    for k in 0..n_pairs {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
        let (proto_re, proto_im) = (theta.cos(), theta.sin());
        // highpass pole = warped / prototype_pole (prototype lies on the unit circle)
        let hp_re = warped * proto_re;
        let hp_im = -warped * proto_im;
        // bilinear: z = (2 fs + s) / (2 fs - s)
        let c = 2.0 * fs;
        let num_re = c + hp_re;
        let num_im = hp_im;
        let den_re = c - hp_re;
        let den_im = -hp_im;
        let den_mag2 = den_re * den_re + den_im * den_im;
        let zp_re = (num_re * den_re + num_im * den_im) / den_mag2;
        let zp_im = (num_im * den_re - num_re * den_im) / den_mag2;

        let a1 = -2.0 * zp_re;
        let a2 = zp_re * zp_re + zp_im * zp_im;
        // unity gain at z = -1
        let g = (1.0 - a1 + a2) / 4.0;
        sections.push(Sos { b: [g, -2.0 * g, g], a: [a1, a2] });
    }

    if order % 2 == 1 {
        // single real prototype pole at -1
        let hp = -warped;
        let c = 2.0 * fs;
        let zp = (c + hp) / (c - hp);
        let a1 = -zp;
        let g = (1.0 - a1) / 2.0;
        sections.push(Sos { b: [g, -g, 0.0], a: [a1, 0.0] });
    }

    sections
}

/// Odd-reflected extension of length `pad` on both ends.
fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        out.push(2.0 * x[0] - x[pad - i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(2.0 * x[n - 1] - x[n - 2 - i]);
    }
    out
}

/// Forward-backward Butterworth high-pass. The composite magnitude response is
/// the squared single-pass response and the composite phase is zero.
pub fn highpass_zero_phase(x: &TimeSeries, cutoff_hz: f64, order: usize) -> Result<TimeSeries> {
    if order < 1 {
        return Err(Error::invalid("filter order must be >= 1"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < x.fs() / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            x.fs() / 2.0
        )));
    }
    let pad = 3 * order;
    if x.n_samples() <= pad {
        return Err(Error::invalid(format!(
            "need more than {pad} samples to zero-phase filter at order {order}"
        )));
    }

    let sections = butter_highpass_sos(order, cutoff_hz, x.fs());
    let n = x.n_samples();
    let mut out = Array2::zeros((n, x.n_channels()));
    for (c, col) in x.data().columns().into_iter().enumerate() {
        let chan: Vec<f64> = col.to_vec();
        let mut ext = odd_extend(&chan, pad);
        for sos in &sections {
            let scale = ext[0];
            sos.filter_in_place(&mut ext, scale);
        }
        ext.reverse();
        for sos in &sections {
            let scale = ext[0];
            sos.filter_in_place(&mut ext, scale);
        }
        ext.reverse();
        for (i, v) in ext[pad..pad + n].iter().enumerate() {
            out[[i, c]] = *v;
        }
    }
    Ok(TimeSeries::from_parts(out, x.fs(), x.channel_names().to_vec()))
}
