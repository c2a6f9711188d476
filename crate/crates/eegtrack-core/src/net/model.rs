//! Forward and backward passes.
//!
//! One example is (EEG window, speech candidate A, speech candidate B, label).
//! Both candidates run through the same speech-path weights; the two head
//! scores meet in `p(A) = sigmoid(score_a - score_b)`, so swapping candidates
//! yields exactly `1 - p`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params, Real};
use crate::error::{Error, Result};

/// Probability clamp applied inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

/// One classification example, shapes `[window x channels]` / `[window x dims]`.
#[derive(Debug, Clone)]
pub struct Example<T: Real> {
    pub eeg: Array2<T>,
    pub speech_a: Array2<T>,
    pub speech_b: Array2<T>,
    pub label: Label,
}

impl<T: Real> Example<T> {
    pub fn cast<U: Real>(&self) -> Example<U> {
        let conv = |a: &Array2<T>| a.mapv(|v| U::from_f64(v.as_f64()));
        Example {
            eeg: conv(&self.eeg),
            speech_a: conv(&self.speech_a),
            speech_b: conv(&self.speech_b),
            label: self.label,
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Per-frame cosine similarity; frames with a zero vector on either side map
/// to 0 (and propagate no gradient).
pub fn cosine_per_frame<T: Real>(x: &Array2<T>, y: &Array2<T>) -> Result<Vec<T>> {
    if x.dim() != y.dim() {
        return Err(Error::shape("cosine inputs must share their shape"));
    }
    Ok(x.rows()
        .into_iter()
        .zip(y.rows())
        .map(|(a, b)| cosine_row(&a, &b).0)
        .collect())
}

fn cosine_row<T: Real>(a: &ArrayView1<T>, b: &ArrayView1<T>) -> (T, T, T) {
    let dot = a.dot(b);
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == T::zero() || nb == T::zero() {
        (T::zero(), T::zero(), T::zero())
    } else {
        (dot / (na * nb), na, nb)
    }
}

/// `[frames x (kernel * cols)]` patch matrix; row `f` is the flattened window
/// starting at sample `f * stride`.
fn im2col<T: Real>(x: &Array2<T>, kernel: usize, stride: usize, frames: usize) -> Array2<T> {
    let cols = x.ncols();
    let mut out = Array2::zeros((frames, kernel * cols));
    for f in 0..frames {
        for tau in 0..kernel {
            for c in 0..cols {
                out[[f, tau * cols + c]] = x[[f * stride + tau, c]];
            }
        }
    }
    out
}

/// Forward activations retained for the backward pass.
struct SpeechCache<T: Real> {
    patches: Array2<T>,
    emb: Array2<T>,
    gates: Array2<T>,  // [frames x 4U], activated (i, f, g, o)
    cells: Array2<T>,  // [frames x U]
    tanh_c: Array2<T>, // [frames x U]
    hidden_seq: Array2<T>,
    cos: Array1<T>,
    head_hidden: Array1<T>,
    score: T,
}

struct ForwardCache<T: Real> {
    eeg_patches: Array2<T>,
    eeg_emb: Array2<T>,
    a: SpeechCache<T>,
    b: SpeechCache<T>,
    p: T,
}

fn conv_embed<T: Real>(
    x: &Array2<T>,
    w: &Array2<T>,
    b: &Array1<T>,
    cfg: &ModelConfig,
) -> (Array2<T>, Array2<T>) {
    let frames = cfg.n_frames();
    let patches = im2col(x, cfg.time_kernel, cfg.time_stride, frames);
    let mut pre = patches.dot(w);
    pre += b;
    let emb = pre.mapv(|v| v.tanh());
    (patches, emb)
}

fn lstm_forward<T: Real>(
    emb: &Array2<T>,
    params: &Params<T>,
) -> (Array2<T>, Array2<T>, Array2<T>, Array2<T>) {
    let frames = emb.nrows();
    let u = params.cfg.lstm_units;
    let zx = emb.dot(&params.wx); // [frames x 4U]
    let mut gates = Array2::zeros((frames, 4 * u));
    let mut cells = Array2::zeros((frames, u));
    let mut tanh_c = Array2::zeros((frames, u));
    let mut hidden = Array2::zeros((frames, u));
    let mut h_prev: Array1<T> = Array1::zeros(u);
    let mut c_prev: Array1<T> = Array1::zeros(u);
    for t in 0..frames {
        let zh = h_prev.dot(&params.wh); // [4U]
        for j in 0..u {
            let zi = zx[[t, j]] + zh[j] + params.b[j];
            let zf = zx[[t, u + j]] + zh[u + j] + params.b[u + j];
            let zg = zx[[t, 2 * u + j]] + zh[2 * u + j] + params.b[2 * u + j];
            let zo = zx[[t, 3 * u + j]] + zh[3 * u + j] + params.b[3 * u + j];
            let gi = sigmoid(zi);
            let gf = sigmoid(zf);
            let gg = zg.tanh();
            let go = sigmoid(zo);
            let c = gf * c_prev[j] + gi * gg;
            let tc = c.tanh();
            gates[[t, j]] = gi;
            gates[[t, u + j]] = gf;
            gates[[t, 2 * u + j]] = gg;
            gates[[t, 3 * u + j]] = go;
            cells[[t, j]] = c;
            tanh_c[[t, j]] = tc;
            hidden[[t, j]] = go * tc;
        }
        h_prev.assign(&hidden.row(t));
        c_prev.assign(&cells.row(t));
    }
    (gates, cells, tanh_c, hidden)
}

fn speech_path<T: Real>(
    speech: &Array2<T>,
    eeg_emb: &Array2<T>,
    params: &Params<T>,
) -> SpeechCache<T> {
    let cfg = &params.cfg;
    let (patches, emb) = conv_embed(speech, &params.sp_w, &params.sp_b, cfg);
    let (gates, cells, tanh_c, hidden_seq) = lstm_forward(&emb, params);
    let frames = cfg.n_frames();
    let mut cos = Array1::zeros(frames);
    for f in 0..frames {
        cos[f] = cosine_row(&eeg_emb.row(f), &hidden_seq.row(f)).0;
    }
    let mut pre1 = cos.dot(&params.w1);
    pre1 += &params.b1;
    let head_hidden = pre1.mapv(|v| v.tanh());
    let score = head_hidden.dot(&params.w2) + params.b2;
    SpeechCache { patches, emb, gates, cells, tanh_c, hidden_seq, cos, head_hidden, score }
}

fn check_shapes<T: Real>(params: &Params<T>, ex: &Example<T>) -> Result<()> {
    let cfg = &params.cfg;
    let want_eeg = (cfg.window_samples, cfg.eeg_channels);
    let want_sp = (cfg.window_samples, cfg.feature_dims);
    if ex.eeg.dim() != want_eeg {
        return Err(Error::shape(format!(
            "eeg window is {:?}, model expects {:?}",
            ex.eeg.dim(),
            want_eeg
        )));
    }
    if ex.speech_a.dim() != want_sp || ex.speech_b.dim() != want_sp {
        return Err(Error::shape(format!(
            "speech windows are {:?}/{:?}, model expects {:?}",
            ex.speech_a.dim(),
            ex.speech_b.dim(),
            want_sp
        )));
    }
    Ok(())
}

fn forward_cached<T: Real>(params: &Params<T>, ex: &Example<T>) -> Result<ForwardCache<T>> {
    check_shapes(params, ex)?;
    let (eeg_patches, eeg_emb) = conv_embed(&ex.eeg, &params.eeg_w, &params.eeg_b, &params.cfg);
    let a = speech_path(&ex.speech_a, &eeg_emb, params);
    let b = speech_path(&ex.speech_b, &eeg_emb, params);
    let p = sigmoid(a.score - b.score);
    if !p.is_finite() {
        return Err(Error::numeric("non-finite activation in forward pass"));
    }
    Ok(ForwardCache { eeg_patches, eeg_emb, a, b, p })
}

/// Probability that candidate A is the time-aligned one.
pub fn forward<T: Real>(params: &Params<T>, ex: &Example<T>) -> Result<T> {
    Ok(forward_cached(params, ex)?.p)
}

/// Binary cross-entropy against the labelled slot, probability clamped at 1e-7.
pub fn loss<T: Real>(p: T, label: Label) -> T {
    let clamp = T::from_f64(PROB_CLAMP);
    let p_label = match label {
        Label::A => p,
        Label::B => T::one() - p,
    };
    -(p_label.max(clamp).ln())
}

/// Gradients, one tensor per parameter tensor.
#[derive(Debug, Clone)]
pub struct Grad<T: Real> {
    pub eeg_w: Array2<T>,
    pub eeg_b: Array1<T>,
    pub sp_w: Array2<T>,
    pub sp_b: Array1<T>,
    pub wx: Array2<T>,
    pub wh: Array2<T>,
    pub b: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    pub b2: T,
}

impl<T: Real> Grad<T> {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let p = Params::zeros(cfg)?;
        Ok(Grad {
            eeg_w: p.eeg_w,
            eeg_b: p.eeg_b,
            sp_w: p.sp_w,
            sp_b: p.sp_b,
            wx: p.wx,
            wh: p.wh,
            b: p.b,
            w1: p.w1,
            b1: p.b1,
            w2: p.w2,
            b2: p.b2,
        })
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
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

    pub fn add(&mut self, other: &Grad<T>) {
        self.eeg_w += &other.eeg_w;
        self.eeg_b += &other.eeg_b;
        self.sp_w += &other.sp_w;
        self.sp_b += &other.sp_b;
        self.wx += &other.wx;
        self.wh += &other.wh;
        self.b += &other.b;
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += other.b2;
    }

    pub fn scale(&mut self, factor: T) {
        self.eeg_w *= factor;
        self.eeg_b *= factor;
        self.sp_w *= factor;
        self.sp_b *= factor;
        self.wx *= factor;
        self.wh *= factor;
        self.b *= factor;
        self.w1 *= factor;
        self.b1 *= factor;
        self.w2 *= factor;
        self.b2 *= factor;
    }

    fn check_finite(&self) -> Result<()> {
        let tensors: [(&str, bool); 11] = [
            ("eeg_w", self.eeg_w.iter().all(|v| v.is_finite())),
            ("eeg_b", self.eeg_b.iter().all(|v| v.is_finite())),
            ("sp_w", self.sp_w.iter().all(|v| v.is_finite())),
            ("sp_b", self.sp_b.iter().all(|v| v.is_finite())),
            ("wx", self.wx.iter().all(|v| v.is_finite())),
            ("wh", self.wh.iter().all(|v| v.is_finite())),
            ("b", self.b.iter().all(|v| v.is_finite())),
            ("w1", self.w1.iter().all(|v| v.is_finite())),
            ("b1", self.b1.iter().all(|v| v.is_finite())),
            ("w2", self.w2.iter().all(|v| v.is_finite())),
            ("b2", self.b2.is_finite()),
        ];
        for (name, ok) in tensors {
            if !ok {
                return Err(Error::numeric(format!("non-finite gradient in tensor {name}")));
            }
        }
        Ok(())
    }
}

/// Backward through one candidate's head, cosine, LSTM and convolution.
/// `d_eeg_emb` accumulates the EEG-side cosine gradient.
fn speech_backward<T: Real>(
    params: &Params<T>,
    cache: &SpeechCache<T>,
    eeg_emb: &Array2<T>,
    d_score: T,
    d_eeg_emb: &mut Array2<T>,
    grad: &mut Grad<T>,
) {
    let cfg = &params.cfg;
    let frames = cfg.n_frames();
    let u = cfg.lstm_units;

    // head
    let d_hidden =
        cache.head_hidden.mapv(|h| T::one() - h * h) * &params.w2.mapv(|w| w * d_score);
    for (gw2, h) in grad.w2.iter_mut().zip(cache.head_hidden.iter()) {
        *gw2 += *h * d_score;
    }
    grad.b2 += d_score;
    grad.b1 += &d_hidden;
    for f in 0..frames {
        for j in 0..cfg.head_hidden {
            grad.w1[[f, j]] += cache.cos[f] * d_hidden[j];
        }
    }
    let d_cos = params.w1.dot(&d_hidden); // [frames]

    // cosine
    let mut d_h = Array2::<T>::zeros((frames, u));
    for f in 0..frames {
        let x = eeg_emb.row(f);
        let y = cache.hidden_seq.row(f);
        let (cos, nx, ny) = cosine_row(&x, &y);
        if nx == T::zero() || ny == T::zero() {
            continue;
        }
        let dc = d_cos[f];
        for j in 0..u {
            d_eeg_emb[[f, j]] += dc * (y[j] / (nx * ny) - cos * x[j] / (nx * nx));
            d_h[[f, j]] += dc * (x[j] / (nx * ny) - cos * y[j] / (ny * ny));
        }
    }

    // LSTM backward through time
    let mut d_z = Array2::<T>::zeros((frames, 4 * u));
    let mut d_h_next: Array1<T> = Array1::zeros(u);
    let mut d_c_next: Array1<T> = Array1::zeros(u);
    for t in (0..frames).rev() {
        for j in 0..u {
            let gi = cache.gates[[t, j]];
            let gf = cache.gates[[t, u + j]];
            let gg = cache.gates[[t, 2 * u + j]];
            let go = cache.gates[[t, 3 * u + j]];
            let tc = cache.tanh_c[[t, j]];
            let c_prev = if t > 0 { cache.cells[[t - 1, j]] } else { T::zero() };

            let dh = d_h[[t, j]] + d_h_next[j];
            let d_go = dh * tc;
            let mut dc = dh * go * (T::one() - tc * tc) + d_c_next[j];
            let d_gi = dc * gg;
            let d_gg = dc * gi;
            let d_gf = dc * c_prev;
            dc = dc * gf; // flows to c_{t-1}

            d_z[[t, j]] = d_gi * gi * (T::one() - gi);
            d_z[[t, u + j]] = d_gf * gf * (T::one() - gf);
            d_z[[t, 2 * u + j]] = d_gg * (T::one() - gg * gg);
            d_z[[t, 3 * u + j]] = d_go * go * (T::one() - go);
            d_c_next[j] = dc;
        }
        let dz_row = d_z.row(t).to_owned();
        d_h_next = params.wh.dot(&dz_row);
    }

    // batched weight gradients
    grad.wx += &cache.emb.t().dot(&d_z);
    // h_prev rows: zero row then hidden[0..frames-1]
    let mut h_prev_mat = Array2::<T>::zeros((frames, u));
    for t in 1..frames {
        for j in 0..u {
            h_prev_mat[[t, j]] = cache.hidden_seq[[t - 1, j]];
        }
    }
    grad.wh += &h_prev_mat.t().dot(&d_z);
    grad.b += &d_z.sum_axis(Axis(0));

    // speech convolution
    let d_emb = d_z.dot(&params.wx.t());
    let d_pre = d_emb * &cache.emb.mapv(|e| T::one() - e * e);
    grad.sp_w += &cache.patches.t().dot(&d_pre);
    grad.sp_b += &d_pre.sum_axis(Axis(0));
}

/// Gradient of the mean batch loss with respect to every parameter.
/// Returns `(mean loss, gradient)`.
pub fn backward<T: Real>(params: &Params<T>, batch: &[Example<T>]) -> Result<(T, Grad<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("cannot take a gradient over an empty batch"));
    }
    let mut grad = Grad::zeros(&params.cfg)?;
    let mut total_loss = T::zero();
    let clamp = T::from_f64(PROB_CLAMP);
    for ex in batch {
        let cache = forward_cached(params, ex)?;
        total_loss += loss(cache.p, ex.label);

        // d loss / d (score_a - score_b); the clamp zeroes the gradient when
        // the probability has saturated past it
        let y = match ex.label {
            Label::A => T::one(),
            Label::B => T::zero(),
        };
        let p_label = match ex.label {
            Label::A => cache.p,
            Label::B => T::one() - cache.p,
        };
        let d_delta = if p_label <= clamp { T::zero() } else { cache.p - y };

        let mut d_eeg_emb = Array2::<T>::zeros(cache.eeg_emb.dim());
        speech_backward(params, &cache.a, &cache.eeg_emb, d_delta, &mut d_eeg_emb, &mut grad);
        speech_backward(params, &cache.b, &cache.eeg_emb, -d_delta, &mut d_eeg_emb, &mut grad);

        // EEG convolution collects both candidates' cosine gradients
        let d_pre = d_eeg_emb * &cache.eeg_emb.mapv(|e| T::one() - e * e);
        grad.eeg_w += &cache.eeg_patches.t().dot(&d_pre);
        grad.eeg_b += &d_pre.sum_axis(Axis(0));
    }
    let inv = T::one() / T::from_f64(batch.len() as f64);
    grad.scale(inv);
    grad.check_finite()?;
    Ok((total_loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use ndarray::array;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
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

    fn random_example(cfg: &ModelConfig, seed: u64) -> Example<f64> {
        let mut rng = rng_for(seed, "test.net.example", 0);
        let mut mat = |cols: usize| {
            Array2::from_shape_fn((cfg.window_samples, cols), |_| rng.random_range(-1.0f64..1.0))
        };
        Example {
            eeg: mat(cfg.eeg_channels),
            speech_a: mat(cfg.feature_dims),
            speech_b: mat(cfg.feature_dims),
            label: Label::A,
        }
    }

    #[test]
    fn identical_candidates_give_exactly_half() {
        let cfg = tiny_cfg();
        let params: Params<f64> = Params::init_full(&cfg, &mut rng_for(1, "t", 0)).unwrap();
        let mut ex = random_example(&cfg, 2);
        ex.speech_b = ex.speech_a.clone();
        assert_eq!(forward(&params, &ex).unwrap(), 0.5);
    }

    #[test]
    fn candidate_swap_antisymmetry() {
        let cfg = tiny_cfg();
        let params: Params<f64> = Params::init_full(&cfg, &mut rng_for(3, "t", 0)).unwrap();
        for seed in 0..5 {
            let ex = random_example(&cfg, seed);
            let swapped = Example {
                eeg: ex.eeg.clone(),
                speech_a: ex.speech_b.clone(),
                speech_b: ex.speech_a.clone(),
                label: ex.label.flipped(),
            };
            let p = forward(&params, &ex).unwrap();
            let q = forward(&params, &swapped).unwrap();
            assert!((p + q - 1.0).abs() <= 1e-12, "p={p}, q={q}");
            assert!(p > 0.0 && p < 1.0 && p.is_finite());
        }
    }

    #[test]
    fn fresh_model_scores_ln2_on_any_set() {
        let cfg = tiny_cfg();
        // init (not init_full) zeroes the head output layer
        let params: Params<f64> = Params::init(&cfg, &mut rng_for(4, "t", 0)).unwrap();
        let mut total = 0.0;
        let n = 8;
        for seed in 0..n {
            let mut ex = random_example(&cfg, seed);
            ex.label = if seed % 2 == 0 { Label::A } else { Label::B };
            let p = forward(&params, &ex).unwrap();
            assert_eq!(p, 0.5);
            total += loss(p, ex.label);
        }
        assert!((total / n as f64 - std::f64::consts::LN_2).abs() <= 1e-9);
    }

    #[test]
    fn cosine_trivial_values() {
        let x: Array2<f64> = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [0.0, 0.0]];
        let y: Array2<f64> = array![[2.0, 0.0], [3.0, 0.0], [-1.0, -1.0], [1.0, 1.0]];
        let cos = cosine_per_frame(&x, &y).unwrap();
        assert!((cos[0] - 1.0).abs() < 1e-15);
        assert!(cos[1].abs() < 1e-15);
        assert!((cos[2] + 1.0).abs() < 1e-15);
        assert_eq!(cos[3], 0.0); // zero vector rule
        for c in &cos {
            assert!(*c >= -1.0 - 1e-12 && *c <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn loss_closed_forms() {
        assert!((loss(0.5, Label::A) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss(1.0 - 1e-12, Label::A) < 1e-6);
        assert!((loss(0.9, Label::B) - (-(0.1f64).ln())).abs() < 1e-12);
        // clamp keeps the loss finite
        assert!(loss(0.0f64, Label::A).is_finite());
        assert!((loss(0.0, Label::A) - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn lstm_zero_input_zero_bias_outputs_zero() {
        let cfg = tiny_cfg();
        let mut params: Params<f64> = Params::init_full(&cfg, &mut rng_for(5, "t", 0)).unwrap();
        params.b.fill(0.0);
        let emb = Array2::zeros((cfg.n_frames(), cfg.eeg_filters));
        let (_, _, _, hidden) = lstm_forward(&emb, &params);
        assert!(hidden.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_head_zeroes_upstream_gradients() {
        let cfg = tiny_cfg();
        let mut params: Params<f64> = Params::init_full(&cfg, &mut rng_for(6, "t", 0)).unwrap();
        params.w2.fill(0.0); // head output no longer depends on its input
        let batch = vec![random_example(&cfg, 11)];
        let (_, grad) = backward(&params, &batch).unwrap();
        assert!(grad.eeg_w.iter().all(|v| *v == 0.0));
        assert!(grad.sp_w.iter().all(|v| *v == 0.0));
        assert!(grad.wx.iter().all(|v| *v == 0.0));
        assert!(grad.wh.iter().all(|v| *v == 0.0));
        assert!(grad.w1.iter().all(|v| *v == 0.0));
        // b2 cancels between the two scores; w2 still learns
        assert_eq!(grad.b2, 0.0);
        assert!(grad.w2.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let cfg = tiny_cfg();
        let params: Params<f64> = Params::init_full(&cfg, &mut rng_for(7, "t", 0)).unwrap();
        let a = random_example(&cfg, 20);
        let b = {
            let mut e = random_example(&cfg, 21);
            e.label = Label::B;
            e
        };
        let (l1, g1) = backward(&params, &[a.clone(), b.clone()]).unwrap();
        let (l2, g2) = backward(&params, &[a.clone(), b.clone(), a, b]).unwrap();
        assert!((l1 - l2).abs() <= 1e-12);
        for (x, y) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = tiny_cfg();
        let params: Params<f64> = Params::init_full(&cfg, &mut rng_for(8, "t", 0)).unwrap();
        let mut ex = random_example(&cfg, 1);
        ex.eeg = Array2::zeros((cfg.window_samples, cfg.eeg_channels + 1));
        assert!(forward(&params, &ex).is_err());
    }
}
