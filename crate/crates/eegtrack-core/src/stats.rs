//! Paired nonparametric comparison: two-sided signed-rank Wilcoxon tests with
//! Holm-Bonferroni correction, aggregated into comparison tables.
//!
//! Zero differences are dropped before ranking and tied absolute differences
//! get mid-ranks. Up to n = 25 the p value comes from the exact sign-flip
//! distribution (dynamic program over doubled ranks, which stay integral under
//! mid-ranking); above that a normal approximation with tie and continuity
//! corrections is used.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest n for which the exact null distribution is enumerated.
pub const EXACT_LIMIT: usize = 25;

/// Per-subject scalar metrics under two conditions, aligned by subject.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub condition_a: Vec<f64>,
    pub condition_b: Vec<f64>,
}

impl PairedSample {
    pub fn new(condition_a: Vec<f64>, condition_b: Vec<f64>) -> Result<Self> {
        if condition_a.len() != condition_b.len() {
            return Err(Error::shape(format!(
                "paired sample lengths differ: {} vs {}",
                condition_a.len(),
                condition_b.len()
            )));
        }
        Ok(PairedSample { condition_a, condition_b })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.condition_a.iter().zip(&self.condition_b).map(|(a, b)| a - b).collect()
    }
}

/// Mid-ranks of absolute differences (zeros already removed).
fn abs_midranks(diffs: &[f64]) -> Vec<f64> {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).expect("finite diffs"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
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

/// Exact two-sided p over all 2^n sign assignments, on the doubled-rank scale
/// where every statistic is an integer.
fn exact_two_sided_p(doubled_ranks: &[u64], w2: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    // counts[s] = number of sign patterns whose positive doubled-rank sum is s
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    let mean2 = total as f64 / 2.0;
    let dev = (w2 as f64 - mean2).abs();
    let mut hits = 0.0;
    for (s, c) in counts.iter().enumerate() {
        if (s as f64 - mean2).abs() >= dev - 1e-9 {
            hits += c;
        }
    }
    hits / 2f64.powi(doubled_ranks.len() as i32)
}

fn normal_two_sided_p(w_plus: f64, ranks: &[f64]) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    let mut sorted: Vec<f64> = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let diff = w_plus - mean;
    let corrected = diff - 0.5 * diff.signum();
    let z = corrected / var.sqrt();
    (erfc(z.abs() / std::f64::consts::SQRT_2)).min(1.0)
}

/// Complementary error function (Numerical-Recipes style rational
/// approximation, fractional error below 1.2e-7; the exact branch never
/// touches this).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Two-sided signed-rank Wilcoxon p value.
pub fn wilcoxon_signed_rank(pairs: &PairedSample) -> Result<f64> {
    let diffs: Vec<f64> = pairs.differences().into_iter().filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("differences must be finite"));
    }
    if diffs.is_empty() {
        return Err(Error::invalid(
            "all paired differences are zero; the signed-rank statistic is undefined",
        ));
    }
    let ranks = abs_midranks(&diffs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();

    if diffs.len() <= EXACT_LIMIT {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        Ok(exact_two_sided_p(&doubled, (2.0 * w_plus).round() as u64))
    } else {
        Ok(normal_two_sided_p(w_plus, &ranks))
    }
}

/// Holm-Bonferroni step-down adjustment, returned in the original order.
pub fn holm_bonferroni(pvals: &[f64]) -> Result<Vec<f64>> {
    for p in pvals {
        if !(*p >= 0.0 && *p <= 1.0) {
            return Err(Error::invalid(format!("p value {p} outside [0, 1]")));
        }
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].partial_cmp(&pvals[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_max = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * pvals[idx]).min(1.0);
        running_max = running_max.max(scaled);
        adjusted[idx] = running_max;
    }
    Ok(adjusted)
}

/// One row of a scheme-comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub pair: String,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub median_diff: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Compare per-subject metrics between schemes. `metrics` maps scheme name ->
/// subject -> scalar; every scheme must cover the same subjects. Identical
/// columns (all differences zero) get p = 1 rather than an error.
pub fn compare_schemes(
    metrics: &BTreeMap<String, BTreeMap<String, f64>>,
    pair_list: &[(String, String)],
) -> Result<ComparisonTable> {
    let mut raw = Vec::with_capacity(pair_list.len());
    let mut rows = Vec::with_capacity(pair_list.len());
    for (a, b) in pair_list {
        let ma = metrics
            .get(a)
            .ok_or_else(|| Error::invalid(format!("no metrics for scheme {a:?}")))?;
        let mb = metrics
            .get(b)
            .ok_or_else(|| Error::invalid(format!("no metrics for scheme {b:?}")))?;
        if ma.len() != mb.len() || ma.keys().zip(mb.keys()).any(|(x, y)| x != y) {
            return Err(Error::invalid(format!(
                "schemes {a:?} and {b:?} do not share the same subject set"
            )));
        }
        let va: Vec<f64> = ma.values().copied().collect();
        let vb: Vec<f64> = mb.values().copied().collect();
        let sample = PairedSample::new(va, vb)?;
        let mut diffs = sample.differences();
        let p = if diffs.iter().all(|d| *d == 0.0) {
            1.0
        } else {
            wilcoxon_signed_rank(&sample)?
        };
        let med = median(&mut diffs);
        raw.push(p);
        rows.push(ComparisonRow {
            pair: format!("{a} vs {b}"),
            raw_p: p,
            adjusted_p: f64::NAN,
            median_diff: med,
            n: sample.condition_a.len(),
        });
    }
    let adjusted = holm_bonferroni(&raw)?;
    for (row, adj) in rows.iter_mut().zip(adjusted) {
        row.adjusted_p = adj;
    }
    Ok(ComparisonTable { rows })
}

/// CSV export: (pair, raw_p, adjusted_p, median_diff, n).
pub fn export_comparison_csv(path: &Path, table: &ComparisonTable) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pair", "raw_p", "adjusted_p", "median_diff", "n"])?;
    for row in &table.rows {
        w.write_record([
            row.pair.as_str(),
            &format!("{}", row.raw_p),
            &format!("{}", row.adjusted_p),
            &format!("{}", row.median_diff),
            &format!("{}", row.n),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn p_of(diffs: &[f64]) -> f64 {
        let b = vec![0.0; diffs.len()];
        wilcoxon_signed_rank(&PairedSample::new(diffs.to_vec(), b).unwrap()).unwrap()
    }

    /// Brute-force oracle: enumerate all 2^n sign patterns on the doubled-rank
    /// scale and count patterns at least as extreme as the observed statistic.
    fn exact_oracle(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let ranks = abs_midranks(&nz);
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let total: u64 = doubled.iter().sum();
        let w2_obs: u64 = doubled
            .iter()
            .zip(&nz)
            .filter(|(_, d)| **d > 0.0)
            .map(|(r, _)| *r)
            .sum();
        let mean2 = total as f64 / 2.0;
        let dev = (w2_obs as f64 - mean2).abs();
        let n = doubled.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w2: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
            if (w2 as f64 - mean2).abs() >= dev - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn exact_one_two_three() {
        // enumeration over 2^3 sign patterns gives 2/8
        assert!((p_of(&[1.0, 2.0, 3.0]) - 0.25).abs() <= 1e-15);
    }

    #[test]
    fn statistic_at_median_gives_one() {
        assert_eq!(p_of(&[1.0, -1.0, 2.0, -2.0]), 1.0);
        assert_eq!(p_of(&[3.0, -3.0]), 1.0);
    }

    #[test]
    fn all_zero_differences_error() {
        let s = PairedSample::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        assert!(wilcoxon_signed_rank(&s).is_err());
    }

    #[test]
    fn zeros_dropped_before_ranking() {
        // the zero pair must not influence the statistic
        assert_eq!(p_of(&[1.0, 2.0, 3.0, 0.0]), p_of(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn exact_matches_enumeration_oracle() {
        let mut rng = crate::seed::rng_for(11, "test.wilcoxon", 0);
        for case in 0..40 {
            let n = rng.random_range(1..=12);
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    // small integer grid provokes ties in |d|
                    let mag = rng.random_range(1..=4) as f64;
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let got = p_of(&diffs);
            let want = exact_oracle(&diffs);
            assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want} for {diffs:?}");
        }
    }

    #[test]
    fn strict_dominance_closed_form() {
        // every difference positive: only the two extreme sign patterns are as
        // extreme as observed, so p = 2 / 2^n
        for n in [5usize, 10, 20] {
            let diffs: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let want = 2.0 / 2f64.powi(n as i32);
            assert!((p_of(&diffs) - want).abs() <= 1e-15 * want.max(1e-10));
        }
    }

    #[test]
    fn invariant_under_monotone_transform_of_magnitudes() {
        let mut rng = crate::seed::rng_for(11, "test.wilcoxon", 1);
        for _ in 0..20 {
            let n = rng.random_range(3..=14);
            let diffs: Vec<f64> =
                (0..n).map(|_| rng.random_range(-5.0f64..5.0)).filter(|d| *d != 0.0).collect();
            if diffs.is_empty() {
                continue;
            }
            // cube preserves sign and the rank order of magnitudes
            let transformed: Vec<f64> = diffs.iter().map(|d| d.powi(3)).collect();
            assert_eq!(p_of(&diffs), p_of(&transformed));
        }
    }

    #[test]
    fn approximate_branch_reasonable() {
        // n = 40 forces the normal approximation; strong positive shift ->
        // tiny p, symmetric data -> large p
        let strong: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        assert!(p_of(&strong) < 1e-6);
        let sym: Vec<f64> = (1..=20).flat_map(|i| [i as f64, -(i as f64)]).collect();
        assert!(p_of(&sym) > 0.9);
    }

    #[test]
    fn holm_worked_examples() {
        assert_eq!(holm_bonferroni(&[0.01, 0.04]).unwrap(), vec![0.02, 0.04]);
        let adj = holm_bonferroni(&[0.01, 0.02, 0.30]).unwrap();
        assert!((adj[0] - 0.03).abs() < 1e-15);
        assert!((adj[1] - 0.04).abs() < 1e-15);
        assert!((adj[2] - 0.30).abs() < 1e-15);
        assert_eq!(holm_bonferroni(&[0.7]).unwrap(), vec![0.7]);
        assert!(holm_bonferroni(&[1.2]).is_err());
        assert!(holm_bonferroni(&[-0.1]).is_err());
    }

    #[test]
    fn holm_monotone_and_dominates_raw() {
        let mut rng = crate::seed::rng_for(11, "test.holm", 0);
        for _ in 0..50 {
            let m = rng.random_range(1..10);
            let ps: Vec<f64> = (0..m).map(|_| rng.random_range(0.0f64..1.0)).collect();
            let adj = holm_bonferroni(&ps).unwrap();
            for (p, a) in ps.iter().zip(&adj) {
                assert!(a >= p);
                assert!(*a <= 1.0);
            }
            // order preserved on the sorted sequence
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&x, &y| ps[x].partial_cmp(&ps[y]).unwrap());
            for w in idx.windows(2) {
                assert!(adj[w[0]] <= adj[w[1]] + 1e-15);
            }
        }
    }

    fn metrics_from(cols: &[(&str, Vec<f64>)]) -> BTreeMap<String, BTreeMap<String, f64>> {
        cols.iter()
            .map(|(name, vals)| {
                let inner: BTreeMap<String, f64> =
                    vals.iter().enumerate().map(|(i, v)| (format!("sub{i:02}"), *v)).collect();
                (name.to_string(), inner)
            })
            .collect()
    }

    #[test]
    fn compare_identical_columns() {
        let m = metrics_from(&[("x", vec![0.5, 0.6, 0.7]), ("y", vec![0.5, 0.6, 0.7])]);
        let table = compare_schemes(&m, &[("x".into(), "y".into())]).unwrap();
        assert_eq!(table.rows[0].median_diff, 0.0);
        assert_eq!(table.rows[0].raw_p, 1.0);
        assert_eq!(table.rows[0].adjusted_p, 1.0);
    }

    #[test]
    fn compare_strict_dominance_significant() {
        let n = 20;
        let x: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| v - 0.02).collect();
        let m = metrics_from(&[("x", x), ("y", y)]);
        let table = compare_schemes(&m, &[("x".into(), "y".into())]).unwrap();
        assert!(table.rows[0].adjusted_p < 0.01);
        assert!((table.rows[0].median_diff - 0.02).abs() < 1e-12);
    }

    #[test]
    fn compare_single_pair_adjusted_equals_raw() {
        let m = metrics_from(&[("x", vec![0.4, 0.6, 0.9]), ("y", vec![0.1, 0.2, 0.3])]);
        let t = compare_schemes(&m, &[("x".into(), "y".into())]).unwrap();
        assert_eq!(t.rows[0].raw_p, t.rows[0].adjusted_p);
    }

    #[test]
    fn compare_swap_negates_median_keeps_p() {
        let m = metrics_from(&[
            ("x", vec![0.4, 0.6, 0.9, 0.2, 0.8]),
            ("y", vec![0.1, 0.7, 0.3, 0.25, 0.5]),
        ]);
        let fwd = compare_schemes(&m, &[("x".into(), "y".into())]).unwrap();
        let rev = compare_schemes(&m, &[("y".into(), "x".into())]).unwrap();
        assert_eq!(fwd.rows[0].raw_p, rev.rows[0].raw_p);
        assert_eq!(fwd.rows[0].median_diff, -rev.rows[0].median_diff);
    }

    #[test]
    fn compare_subject_mismatch_errors() {
        let mut m = metrics_from(&[("x", vec![0.4, 0.6]), ("y", vec![0.1, 0.2])]);
        m.get_mut("y").unwrap().remove("sub01");
        m.get_mut("y").unwrap().insert("sub09".into(), 0.3);
        assert!(compare_schemes(&m, &[("x".into(), "y".into())]).is_err());
    }
}
