use nalgebra::DMatrix;
use proptest::prelude::*;
use sindy_core::harness::{default_data_dir, load_dataset, ExperimentConfig, ExperimentKind};
use sindy_core::{augment_with_noise, load_csv, save_csv, CsvSchema, NoiseSpec, TimeSeries};

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn series(m: usize, f: impl Fn(usize, usize) -> f64, names: &[&str]) -> TimeSeries {
    let values = DMatrix::from_fn(m, names.len(), f);
    TimeSeries::uniform(0.0, 1.0, values, names.iter().map(|s| s.to_string()).collect()).unwrap()
}

#[test]
fn lynx_hare_gains_two_mirrored_columns() {
    let cfg = ExperimentConfig::new(ExperimentKind::LynxHare).resolve().unwrap();
    let ts = load_dataset(&cfg).unwrap();
    let aug = augment_with_noise(&ts, &NoiseSpec::matched(&["l", "h"], 3)).unwrap();
    assert_eq!(aug.names(), &["h", "l", "x1", "x2"]);
    assert_eq!(aug.values().columns(0, 2), ts.values().columns(0, 2));
}

#[test]
fn standard_normal_column_moments() {
    let m = 10_000;
    let ts = series(m, |i, _| i as f64, &["t"]);
    let aug = augment_with_noise(&ts, &NoiseSpec::standard(1, 42)).unwrap();
    let (mean, std) = mean_std(aug.values().column(1).as_slice());
    assert!(mean.abs() < 3.0 / (m as f64).sqrt(), "mean {mean}");
    assert!((std - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn matched_moments_converge_to_source() {
    let m = 100_000;
    let ts = series(m, |i, _| 50.0 + 20.0 * ((i as f64) * 0.37).sin(), &["a"]);
    let (src_mean, src_std) = mean_std(ts.values().column(0).as_slice());
    let aug = augment_with_noise(&ts, &NoiseSpec::matched(&["a"], 9)).unwrap();
    let (mean, std) = mean_std(aug.values().column(1).as_slice());
    assert!(((mean - src_mean) / src_mean).abs() < 0.02);
    assert!(((std - src_std) / src_std).abs() < 0.02);
}

#[test]
fn noise_is_seed_deterministic() {
    let ts = series(50, |i, j| (i + j) as f64, &["a", "b"]);
    let a = augment_with_noise(&ts, &NoiseSpec::standard(2, 5)).unwrap();
    let b = augment_with_noise(&ts, &NoiseSpec::standard(2, 5)).unwrap();
    let c = augment_with_noise(&ts, &NoiseSpec::standard(2, 6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.values().column(2), c.values().column(2));
}

#[test]
fn unknown_mirror_source_is_an_error() {
    let ts = series(10, |i, _| i as f64, &["a"]);
    assert!(augment_with_noise(&ts, &NoiseSpec::matched(&["zz"], 1)).is_err());
}

#[test]
fn fixtures_load() {
    let dir = default_data_dir();
    let lh = load_csv(dir.join("lynx_hare.csv"), &CsvSchema::new("year", &["h", "l"])).unwrap();
    assert!(lh.n_samples() >= 20);
    let sa = load_csv(dir.join("sardine_anchovy.csv"), &CsvSchema::new("year", &["a", "s"])).unwrap();
    assert!(sa.n_samples() >= 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 3..60), dt in 0.01f64..10.0) {
        let m = values.len() / 3;
        prop_assume!(m >= 2);
        let ts = TimeSeries::uniform(
            1.5,
            dt,
            DMatrix::from_row_slice(m, 3, &values[..3 * m]),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_csv(&ts, &path).unwrap();
        let back = load_csv(&path, &CsvSchema::all_columns("time")).unwrap();
        prop_assert_eq!(back, ts);
    }
}
