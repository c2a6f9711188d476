//! Property tests for the contracts that hold over whole input domains.

use ndarray::Array2;
use proptest::prelude::*;

use eegtrack_core::features::{FeatureMatrix, Scheme};
use eegtrack_core::mm::SegmentationConfig;
use eegtrack_core::signal::{
    apply_normalization, common_average_reference, fit_normalization, generic_channel_names,
    invert_normalization, SplitBounds, TimeSeries,
};
use eegtrack_core::stats::holm_bonferroni;
use eegtrack_core::trf::{build_lagged_matrix, spearman};

proptest! {
    /// The 40/10/10/40 split partitions [0, n) exactly for every length.
    #[test]
    fn split_partitions_exactly(n in 10usize..200_000) {
        let b = SplitBounds::for_len(n).unwrap();
        let segs = b.segments();
        prop_assert_eq!(segs[0].0, 0);
        prop_assert_eq!(segs[3].1, n);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        for (a, z) in segs {
            prop_assert!(z > a);
        }
    }

    /// Common-average referencing zeroes every sample mean and is idempotent.
    #[test]
    fn car_zero_mean_idempotent(rows in 1usize..40, cols in 1usize..12, seed in 0u64..1000) {
        let mut rng = eegtrack_core::seed::rng_for(seed, "prop.car", 0);
        use rand::Rng;
        let data = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0f64..5.0));
        let x = TimeSeries::new(data, 64.0, generic_channel_names(cols)).unwrap();
        let once = common_average_reference(&x);
        for row in once.data().rows() {
            prop_assert!((row.sum() / cols as f64).abs() < 1e-12);
        }
        let twice = common_average_reference(&once);
        for (a, b) in once.data().iter().zip(twice.data().iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// Normalize-then-invert recovers the input.
    #[test]
    fn normalization_round_trip(rows in 2usize..60, cols in 1usize..8, seed in 0u64..1000) {
        let mut rng = eegtrack_core::seed::rng_for(seed, "prop.norm", 0);
        use rand::Rng;
        let data = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-10.0f64..10.0));
        let x = TimeSeries::new(data, 64.0, generic_channel_names(cols)).unwrap();
        let Ok(stats) = fit_normalization(&x) else {
            // degenerate constant channel; nothing to check
            return Ok(());
        };
        let normalized = apply_normalization(&x, &stats).unwrap();
        let back = invert_normalization(&normalized, &stats).unwrap();
        for (a, b) in back.data().iter().zip(x.data().iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    /// Lagged design: column (d*L + l) at row t equals feature d at t - l.
    #[test]
    fn lagged_matrix_definition(
        t in 1usize..40,
        d in 1usize..4,
        l in 1usize..8,
        seed in 0u64..1000,
    ) {
        let mut rng = eegtrack_core::seed::rng_for(seed, "prop.lag", 0);
        use rand::Rng;
        let data = Array2::from_shape_fn((t, d), |_| f64::from(rng.random_bool(0.3)));
        let names = (0..d).map(|i| format!("f{i}")).collect();
        let f = FeatureMatrix::new(data.clone(), 64.0, names, Scheme::Phone).unwrap();
        let window_ms = (l - 1) as f64 * 1000.0 / 64.0 + 0.5;
        let s = build_lagged_matrix(&f, window_ms).unwrap();
        prop_assert_eq!(s.n_lags(), l);
        for row in 0..t {
            for dim in 0..d {
                for lag in 0..l {
                    let want = if row >= lag { data[[row - lag, dim]] } else { 0.0 };
                    prop_assert_eq!(s.data()[[row, dim * l + lag]], want);
                }
            }
        }
    }

    /// Spearman is invariant under strictly monotone transforms of either side.
    #[test]
    fn spearman_monotone_invariance(seed in 0u64..2000, n in 3usize..60) {
        let mut rng = eegtrack_core::seed::rng_for(seed, "prop.spearman", 0);
        use rand::Rng;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0f64..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0f64..3.0)).collect();
        let base = spearman(&a, &b).unwrap();
        let ta: Vec<f64> = a.iter().map(|x| x.exp()).collect();
        let tb: Vec<f64> = b.iter().map(|x| 3.0 * x + 7.0).collect();
        prop_assert!((spearman(&ta, &tb).unwrap() - base).abs() <= 1e-12);
        prop_assert!(base >= -1.0 && base <= 1.0);
    }

    /// Holm adjustment dominates the raw p values, stays in [0, 1] and
    /// preserves the order of the sorted sequence.
    #[test]
    fn holm_dominates_and_orders(ps in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let adj = holm_bonferroni(&ps).unwrap();
        for (p, a) in ps.iter().zip(&adj) {
            prop_assert!(a >= p);
            prop_assert!(*a <= 1.0);
        }
        let mut idx: Vec<usize> = (0..ps.len()).collect();
        idx.sort_by(|&x, &y| ps[x].partial_cmp(&ps[y]).unwrap());
        for w in idx.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]] + 1e-15);
        }
    }

    /// The closed-form example count equals brute-force window enumeration.
    #[test]
    fn example_count_closed_form(
        n in 0usize..6000,
        window_cs in 50usize..600,   // hundredths of a second
        overlap_pct in 0usize..95,
        gap_cs in 0usize..300,
    ) {
        let cfg = SegmentationConfig {
            window_s: window_cs as f64 / 100.0,
            overlap_fraction: overlap_pct as f64 / 100.0,
            mismatch_gap_s: gap_cs as f64 / 100.0,
        };
        let fs = 64.0;
        let w = cfg.window_samples(fs);
        let g = cfg.gap_samples(fs);
        let hop = cfg.hop_samples(fs);
        let mut brute = 0usize;
        let mut t = 0usize;
        while w > 0 && t + 2 * w + g <= n {
            brute += 1;
            t += hop;
        }
        prop_assert_eq!(cfg.example_count(n, fs), brute);
    }
}
