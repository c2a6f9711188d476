//! Central finite-difference verification of the analytic gradient.
//!
//! Runs in 64-bit. Every activation in the model is smooth, so the analytic
//! gradient and the central difference agree to truncation order; the relative
//! error uses a small denominator guard so that coordinates whose gradient is
//! genuinely negligible do not drown the report in finite-difference noise.

use super::model::{backward, forward, loss, Example};
use super::{ParamGroup, Params};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(group name, max guarded relative error, coordinates checked)`
    pub per_group: Vec<(String, f64, usize)>,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance && self.per_group.iter().all(|(_, _, n)| *n > 0)
    }
}

fn batch_loss(params: &Params<f64>, batch: &[Example<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        total += loss(forward(params, ex)?, ex.label);
    }
    Ok(total / batch.len() as f64)
}

/// Compare the analytic gradient of the mean batch loss against central finite
/// differences, checking every `stride`-th coordinate (stride 1 = exhaustive).
pub fn finite_diff_check(
    params: &Params<f64>,
    batch: &[Example<f64>],
    eps: f64,
    stride: usize,
) -> Result<GradCheckReport> {
    let (_, grad) = backward(params, batch)?;
    let analytic = grad.to_flat();
    let base = params.to_flat();

    let mut group_max: Vec<(f64, usize)> = vec![(0.0, 0); ParamGroup::ALL.len()];
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let stride = stride.max(1);

    for i in (0..base.len()).step_by(stride) {
        let mut plus = base.clone();
        plus[i] += eps;
        let lp = batch_loss(&Params::from_flat(&params.cfg, &plus)?, batch)?;
        let mut minus = base.clone();
        minus[i] -= eps;
        let lm = batch_loss(&Params::from_flat(&params.cfg, &minus)?, batch)?;
        let fd = (lp - lm) / (2.0 * eps);
        let an = analytic[i];
        // guarded relative error: coordinates with |grad| below the guard are
        // compared on an absolute scale instead
        let denom = fd.abs().max(an.abs()).max(1e-4);
        let rel = (fd - an).abs() / denom;

        let gi = ParamGroup::ALL
            .iter()
            .position(|g| *g == params.group_of(i))
            .expect("group known");
        if rel > group_max[gi].0 {
            group_max[gi].0 = rel;
        }
        group_max[gi].1 += 1;
        max_rel = max_rel.max(rel);
        checked += 1;
    }

    Ok(GradCheckReport {
        per_group: ParamGroup::ALL
            .iter()
            .zip(group_max)
            .map(|(g, (e, n))| (g.name().to_string(), e, n))
            .collect(),
        max_rel_error: max_rel,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Label, ModelConfig};
    use crate::seed::rng_for;
    use ndarray::Array2;
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            eeg_channels: 4,
            feature_dims: 3,
            time_kernel: 5,
            time_stride: 3,
            eeg_filters: 6,
            lstm_units: 6,
            head_hidden: 5,
            window_samples: 32,
        }
    }

    fn random_batch(cfg: &ModelConfig, seed: u64) -> Vec<Example<f64>> {
        let mut rng = rng_for(seed, "test.gradcheck", 0);
        (0..2)
            .map(|i| {
                let mut mat = |cols: usize| {
                    Array2::from_shape_fn((cfg.window_samples, cols), |_| {
                        rng.random_range(-1.0f64..1.0)
                    })
                };
                Example {
                    eeg: mat(cfg.eeg_channels),
                    speech_a: mat(cfg.feature_dims),
                    speech_b: mat(cfg.feature_dims),
                    label: if i % 2 == 0 { Label::A } else { Label::B },
                }
            })
            .collect()
    }

    #[test]
    fn exhaustive_check_on_small_model() {
        let cfg = small_cfg();
        let params: Params<f64> = Params::init_full(&cfg, &mut rng_for(40, "t", 0)).unwrap();
        let batch = random_batch(&cfg, 41);
        let report = finite_diff_check(&params, &batch, 1e-4, 1).unwrap();
        assert_eq!(report.checked, cfg.param_count());
        for (name, err, n) in &report.per_group {
            assert!(*n > 0, "group {name} never checked");
            assert!(*err < 1e-5, "group {name}: max rel error {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // sanity check that the checker can actually fail: biasing one
        // parameter's analytic gradient must blow the tolerance
        let cfg = small_cfg();
        let params: Params<f64> = Params::init_full(&cfg, &mut rng_for(42, "t", 0)).unwrap();
        let batch = random_batch(&cfg, 43);
        let report = finite_diff_check(&params, &batch, 1e-4, 1).unwrap();
        assert!(report.max_rel_error < 1e-5);

        // re-run with a perturbed parameter vector mid-difference to emulate a
        // wrong analytic gradient at one coordinate
        let (_, grad) = backward(&params, &batch).unwrap();
        let mut an = grad.to_flat();
        an[7] += 0.05;
        let base = params.to_flat();
        let mut plus = base.clone();
        plus[7] += 1e-4;
        let lp = batch_loss(&Params::from_flat(&cfg, &plus).unwrap(), &batch).unwrap();
        let mut minus = base.clone();
        minus[7] -= 1e-4;
        let lm = batch_loss(&Params::from_flat(&cfg, &minus).unwrap(), &batch).unwrap();
        let fd = (lp - lm) / 2e-4;
        let rel = (fd - an[7]).abs() / fd.abs().max(an[7].abs()).max(1e-4);
        assert!(rel > 1e-2, "corruption invisible to the check: {rel}");
    }
}
