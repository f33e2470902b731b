use proptest::prelude::*;

use super::*;
use crate::data::{generate_synthetic_city, NetworkKind, SyntheticSpec, TrafficDataset, WindowGeometry};
use crate::error::Error;
use crate::model::{init_params, ModelConfig};
use crate::numerics::Tensor;
use crate::training::{save_checkpoint, AdamState, Checkpoint};

fn flat(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).unwrap()
}

fn hourly_city(regions: usize, days: usize, seed: u64) -> TrafficDataset {
    let mut spec = SyntheticSpec::new("e", regions, days, NetworkKind::Sensor, seed);
    spec.sample_rate_minutes = 60;
    generate_synthetic_city(&spec).unwrap()
}

fn day_checkpoint() -> Checkpoint {
    let geometry = WindowGeometry {
        history: 24,
        horizon: 24,
        patch_len: 4,
        patch_stride: 4,
    };
    let mut config = ModelConfig::custom(8, 2, 1, geometry);
    config.k = 2;
    config.sample_rate_minutes = 60;
    Checkpoint {
        params: init_params(&config, 5).unwrap(),
        config,
        optimizer: AdamState::default(),
        epoch: 0,
        rng: crate::numerics::Rng::seed_from(0).state(),
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let y = flat(&[1.0, 2.0, 3.0]);
    let m = compute_metrics(&y, &y, MapeMask::Floor(1e-3)).unwrap();
    assert_eq!((m.mae, m.rmse, m.mape), (0.0, 0.0, Some(0.0)));
}

#[test]
fn single_entry_closed_form() {
    let m = compute_metrics(&flat(&[110.0]), &flat(&[100.0]), MapeMask::Floor(1e-3)).unwrap();
    assert_eq!((m.mae, m.rmse), (10.0, 10.0));
    assert!((m.mape.unwrap() - 10.0).abs() < 1e-12);
    assert_eq!((m.num_windows, m.num_regions, m.per_horizon_mae.len()), (1, 1, 1));
}

#[test]
fn mape_masks_small_targets() {
    let m = compute_metrics(&flat(&[5.0, 110.0]), &flat(&[0.0, 100.0]), MapeMask::Floor(1.0)).unwrap();
    assert!((m.mape.unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(m.mae, 7.5);
    let all_small = compute_metrics(&flat(&[1.0, 2.0]), &flat(&[0.5, 0.0]), MapeMask::Floor(1.0)).unwrap();
    assert_eq!(all_small.mape, None);
    assert_eq!(all_small.mae, 1.25);
    let unmasked = compute_metrics(&flat(&[1.0, 2.0]), &flat(&[0.5, 0.0]), MapeMask::Unmasked).unwrap();
    assert!((unmasked.mape.unwrap() - 100.0).abs() < 1e-12);
}

#[test]
fn metrics_input_errors() {
    let empty = Tensor::new(&[0], vec![]).unwrap();
    assert!(matches!(compute_metrics(&empty, &empty, MapeMask::Unmasked), Err(Error::Data(_))));
    assert!(matches!(
        compute_metrics(&flat(&[1.0]), &flat(&[1.0, 2.0]), MapeMask::Unmasked),
        Err(Error::Shape(_))
    ));
}

#[test]
fn per_horizon_breakdown_follows_the_last_axis() {
    let pred = Tensor::new(&[2, 1, 3], vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
    let target = Tensor::new(&[2, 1, 3], vec![0.0, 2.0, 5.0, 2.0, 2.0, 3.0]).unwrap();
    let m = compute_metrics(&pred, &target, MapeMask::Floor(0.5)).unwrap();
    assert_eq!(m.per_horizon_mae, vec![1.0, 0.0, 1.0]);
    assert_eq!((m.num_windows, m.num_regions), (2, 1));
}

proptest! {
    #[test]
    fn mae_never_exceeds_rmse(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = compute_metrics(&flat(&p), &flat(&y), MapeMask::Floor(1e-3)).unwrap();
        prop_assert!(m.mae <= m.rmse + 1e-9);
        prop_assert!(m.mae >= 0.0 && m.mape.is_none_or(|v| v >= 0.0));
    }
}

#[test]
fn baselines_match_direct_loops() {
    let ckpt = day_checkpoint();
    let ds = hourly_city(5, 6, 2);
    let report = zero_shot_eval(&ckpt, &ds, &EvalOptions::default()).unwrap();
    // Full span, stride 24 from step 24: forecast days 1..=5.
    assert_eq!(report.model.num_windows, 5);
    assert_eq!(report.model.per_horizon_mae.len(), 24);
    let (mut hm, mut sn, mut n) = (0.0, 0.0, 0.0);
    for day in 1..6 {
        for r in 0..5 {
            let x = ds.series(r);
            let mean: f64 = x[(day - 1) * 24..day * 24].iter().sum::<f64>() / 24.0;
            for f in 0..24 {
                let y = x[day * 24 + f];
                hm += (mean - y).abs();
                sn += (x[(day - 1) * 24 + f] - y).abs();
                n += 1.0;
            }
        }
    }
    assert!((report.history_mean.mae - hm / n).abs() < 1e-9);
    assert!((report.seasonal_naive.mae - sn / n).abs() < 1e-9);
    assert!(report.mape_floor > 0.0);
}

#[test]
fn evaluation_never_writes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ockpt");
    let ckpt = day_checkpoint();
    save_checkpoint(&ckpt, &path).unwrap();
    let before = std::fs::read(&path).unwrap();
    let loaded = crate::training::load_checkpoint(&path).unwrap();
    zero_shot_eval(&loaded, &hourly_city(4, 4, 3), &EvalOptions::default()).unwrap();
    save_checkpoint(&loaded, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn test_span_scores_only_the_test_split() {
    let ckpt = day_checkpoint();
    let ds = hourly_city(4, 20, 4);
    let opts = EvalOptions {
        span: EvalSpan::Test,
        ..Default::default()
    };
    // Test split starts at floor(480·0.8) = 384; forecasts from 384 step 24.
    let starts: Vec<usize> = forecast(&ckpt.params, &ckpt.config, &ds, &opts).unwrap().iter().map(|w| w.start).collect();
    assert_eq!(starts, vec![384, 408, 432, 456]);
}

#[test]
fn mismatched_sample_rate_is_a_config_error() {
    let ckpt = day_checkpoint();
    let mut spec = SyntheticSpec::new("m", 4, 2, NetworkKind::Sensor, 1);
    spec.sample_rate_minutes = 30;
    let ds = generate_synthetic_city(&spec).unwrap();
    let err = zero_shot_eval(&ckpt, &ds, &EvalOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(exit_code(&err), EXIT_DATA);
    assert_eq!(exit_code(&Error::Training("x".into())), EXIT_TRAINING);
}

#[test]
fn exported_rows_round_trip_to_the_same_mae() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let ckpt = day_checkpoint();
    let ds = hourly_city(3, 4, 6);
    let opts = EvalOptions::default();
    let rows = export_predictions(&ckpt, &ds, &path, &opts).unwrap();
    let report = zero_shot_eval(&ckpt, &ds, &opts).unwrap();
    assert_eq!(rows, report.model.num_windows * 3 * 24);

    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["region_index", "timestamp_iso", "predicted_value"]);
    let mut abs = 0.0;
    let mut previous: Option<(usize, chrono::DateTime<chrono::Utc>)> = None;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let region: usize = rec[0].parse().unwrap();
        let t = crate::data::parse_timestamp(&rec[1]).unwrap();
        let value: f64 = rec[2].parse().unwrap();
        let step = (t - ds.start).num_minutes() as usize / 60;
        abs += (value - ds.series(region)[step]).abs();
        if let Some((r, prev)) = previous {
            if r == region && step % 24 != 0 {
                assert_eq!((t - prev).num_minutes(), 60);
            }
        }
        previous = Some((region, t));
    }
    assert!((abs / rows as f64 - report.model.mae).abs() < 1e-6);
}

#[test]
fn latency_is_stable_across_repeat_counts() {
    let ckpt = day_checkpoint();
    let ds = hourly_city(200, 2, 7);
    assert!(matches!(measure_latency(&ckpt, &ds, 0), Err(Error::Config(_))));
    let one = measure_latency(&ckpt, &ds, 1).unwrap();
    let five = measure_latency(&ckpt, &ds, 5).unwrap();
    assert_eq!((one.samples.len(), five.samples.len(), five.regions), (1, 5, 200));
    let ratio = one.median_seconds / five.median_seconds;
    assert!((0.5..=1.5).contains(&ratio), "{one:?} vs {five:?}");
}

#[test]
fn scaling_rejects_fractions_without_windows() {
    let corpus = [hourly_city(4, 4, 8)];
    let held_out = hourly_city(4, 4, 9);
    let setup = ScalingSetup {
        template: day_checkpoint().config,
        presets: vec![crate::model::Preset::Mini],
        fractions: vec![0.1],
        ..Default::default()
    };
    let err = scaling_experiment(&corpus, &held_out, &setup).unwrap_err();
    assert!(matches!(err.root(), Error::InsufficientData(_)), "{err}");
}
