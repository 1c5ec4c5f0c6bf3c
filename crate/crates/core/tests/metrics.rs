use depthadapt_core::dataset::DepthMap;
use depthadapt_core::metrics::{
    compute_metrics, garg_bounds, garg_crop, AccuracyMode, Crop, EvalConfig, MetricsReport,
    SqRelMode,
};
use depthadapt_core::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row(v: &[f32]) -> DepthMap {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

/// Straightforward double loop over all pixels.
fn naive(pred: &DepthMap, gt: &DepthMap, cap: f64, min_depth: f64) -> [f64; 7] {
    let (h, w) = gt.dim();
    let mut acc = [0.0; 7];
    let mut n = 0.0;
    for i in 0..h {
        for j in 0..w {
            if gt[[i, j]] <= 0.0 {
                continue;
            }
            let g = (gt[[i, j]] as f64).clamp(min_depth, cap);
            let p = (pred[[i, j]] as f64).clamp(min_depth, cap);
            n += 1.0;
            acc[0] += (p - g).abs() / g;
            acc[1] += (p - g).powi(2) / g;
            acc[2] += (p - g).powi(2);
            acc[3] += (p.ln() - g.ln()).powi(2);
            let ratio = if p > g { p / g } else { g / p };
            acc[4] += if ratio < 1.25 { 1.0 } else { 0.0 };
            acc[5] += if ratio < 1.5625 { 1.0 } else { 0.0 };
            acc[6] += if ratio < 1.953125 { 1.0 } else { 0.0 };
        }
    }
    let mut out = acc.map(|v| v / n);
    out[2] = out[2].sqrt();
    out[3] = out[3].sqrt();
    out
}

fn random_map(rng: &mut ChaCha8Rng, invalid: f64) -> DepthMap {
    Array2::from_shape_fn((8, 8), |_| {
        if rng.random_bool(invalid) {
            0.0
        } else {
            rng.random_range(0.1..100.0f32)
        }
    })
}

#[test]
fn agrees_with_naive_oracle_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = EvalConfig::default();
    for _ in 0..100 {
        let gt = random_map(&mut rng, 0.1);
        let pred = random_map(&mut rng, 0.0);
        let got = compute_metrics(&pred, &gt, &cfg).unwrap().values();
        let want = naive(&pred, &gt, 80.0, 1e-3);
        for k in 0..7 {
            assert!(
                (got[k] - want[k]).abs() < 1e-12,
                "{k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }
}

#[test]
fn hand_computed_example() {
    let r = compute_metrics(
        &row(&[2.0, 5.0, 6.0]),
        &row(&[2.0, 4.0, 8.0]),
        &EvalConfig::default(),
    )
    .unwrap();
    let want = [0.1667, 0.25, 1.2910, 0.2102, 1.0 / 3.0, 1.0, 1.0];
    for (g, w) in r.values().iter().zip(want) {
        assert!((g - w).abs() < 1e-4, "{g} vs {w}");
    }
}

#[test]
fn perfect_prediction_scores_perfectly() {
    let gt = row(&[1.0, 10.0, 50.0, 0.0]);
    let r = compute_metrics(&gt, &gt, &EvalConfig::default()).unwrap();
    assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(r.valid_pixel_count, 3);
}

#[test]
fn alternative_conventions() {
    let (pred, gt) = (row(&[2.0, 5.0, 6.0]), row(&[2.0, 4.0, 8.0]));
    let cfg = EvalConfig {
        sqrel: SqRelMode::SquaredDenominator,
        accuracy: AccuracyMode::AbsMargin,
        ..Default::default()
    };
    let r = compute_metrics(&pred, &gt, &cfg).unwrap();
    assert!((r.sq_rel - (1.0 / 16.0 + 4.0 / 64.0) / 3.0).abs() < 1e-12);
    assert_eq!(r.a1, 1.0);
}

#[test]
fn errors() {
    let cfg = EvalConfig::default();
    assert!(matches!(
        compute_metrics(&row(&[1.0]), &row(&[0.0]), &cfg),
        Err(Error::Argument(_))
    ));
    assert!(matches!(
        compute_metrics(&row(&[1.0, 2.0]), &row(&[1.0]), &cfg),
        Err(Error::Argument(_))
    ));
    let bad = EvalConfig {
        cap: 0.0,
        ..Default::default()
    };
    assert!(matches!(
        compute_metrics(&row(&[1.0]), &row(&[1.0]), &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn garg_examples() {
    assert_eq!(garg_bounds(375, 1242).unwrap(), ((153, 371), (44, 1197)));
    assert_eq!(garg_bounds(100, 100).unwrap(), ((40, 99), (3, 96)));
    let gt = Array2::from_shape_fn((100, 100), |(y, _)| if y < 40 { 1.0 } else { 2.0 });
    let pred = Array2::from_elem((100, 100), 2.0f32);
    let cfg = EvalConfig {
        crop: Crop::Garg,
        ..Default::default()
    };
    let r = compute_metrics(&pred, &gt, &cfg).unwrap();
    assert_eq!(r.abs_rel, 0.0);
    assert_eq!(r.valid_pixel_count, 59 * 93);
}

#[test]
fn report_mean_is_per_image() {
    let a = compute_metrics(&row(&[2.0]), &row(&[1.0]), &EvalConfig::default()).unwrap();
    let b = compute_metrics(&row(&[1.0, 1.0]), &row(&[1.0, 1.0]), &EvalConfig::default()).unwrap();
    let m = MetricsReport::mean(&[a, b]).unwrap();
    assert_eq!(m.abs_rel, 0.5);
    assert_eq!(m.valid_pixel_count, 3);
    assert_eq!(a.tsv_row().split('\t').count(), 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn accuracies_are_nested(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_map(&mut rng, 0.0);
        let pred = random_map(&mut rng, 0.0);
        let r = compute_metrics(&pred, &gt, &EvalConfig::default()).unwrap();
        prop_assert!(r.a1 <= r.a2 && r.a2 <= r.a3);
        prop_assert!(r.abs_rel >= 0.0 && r.rmse >= 0.0);
    }

    #[test]
    fn scaling_by_one_percent_gives_abs_rel_one_percent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Array2::from_shape_fn((8, 8), |_| rng.random_range(1.0..50.0f32));
        let pred = gt.mapv(|v| v * 1.01);
        let r = compute_metrics(&pred, &gt, &EvalConfig::default()).unwrap();
        prop_assert!((r.abs_rel - 0.01).abs() < 1e-6);
        prop_assert_eq!(r.a1, 1.0);
    }

    #[test]
    fn garg_crop_shrinks_again(h in 20usize..400, w in 20usize..400) {
        let map = Array2::<f32>::zeros((h, w));
        let once = garg_crop(map.view()).unwrap();
        let (h1, w1) = once.dim();
        prop_assert!(h1 < h && w1 < w);
        if let Ok(twice) = garg_crop(once) {
            prop_assert!(twice.dim().0 < h1 || twice.dim().1 < w1);
        }
    }
}
