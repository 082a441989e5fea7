use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use sindy_core::{finite_diff, seed, smooth_diff, DerivativeMatrix, TimeSeries};

fn series_of(f: impl Fn(f64) -> f64, dt: f64, m: usize) -> TimeSeries {
    let values = DMatrix::from_fn(m, 1, |i, _| f(dt * i as f64));
    TimeSeries::uniform(0.0, dt, values, vec!["x".into()]).unwrap()
}

fn rmse_against_cos(d: &DMatrix<f64>, ts: &TimeSeries) -> f64 {
    let m = ts.n_samples();
    let sq: f64 = (0..m).map(|i| (d[(i, 0)] - ts.times()[i].cos()).powi(2)).sum();
    (sq / m as f64).sqrt()
}

#[test]
fn three_point_window_reduces_to_central_differences() {
    let ts = series_of(|t| t * t, 0.1, 30);
    let a = smooth_diff(&ts, 3).unwrap();
    let b = finite_diff(&ts).unwrap();
    assert!((a.values - b.values).amax() < 1e-10);
}

#[test]
fn five_point_window_is_exact_on_cubics() {
    let dt = 1e-2;
    let ts = series_of(|t| 2.0 * t.powi(3) - t * t + 0.5 * t - 3.0, dt, 200);
    let d = smooth_diff(&ts, 5).unwrap();
    for i in 2..198 {
        let t = ts.times()[i];
        let exact = 6.0 * t * t - 2.0 * t + 0.5;
        assert!((d.values[(i, 0)] - exact).abs() < 1e-8, "row {i}");
    }
}

#[test]
fn smoothing_beats_central_differences_on_noisy_sine() {
    let dt = 0.05;
    let m = 400;
    let mut wins = 0;
    for s in 0..20u64 {
        let mut rng = seed::rng(seed::derive(77, &[s]));
        let noise: Vec<f64> = (0..m).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let ts = series_of(|t| t.sin() + noise[(t / dt).round() as usize], dt, m);
        let smooth = rmse_against_cos(&smooth_diff(&ts, 7).unwrap().values, &ts);
        let central = rmse_against_cos(&finite_diff(&ts).unwrap().values, &ts);
        wins += (smooth < central) as usize;
    }
    assert_eq!(wins, 20);
}

#[test]
fn shape_and_names_follow_the_source() {
    let values = DMatrix::from_fn(25, 3, |i, j| (i * (j + 1)) as f64);
    let ts = TimeSeries::uniform(0.0, 0.5, values, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    for d in [finite_diff(&ts).unwrap(), smooth_diff(&ts, 5).unwrap()] {
        assert_eq!(d.values.shape(), (25, 3));
        assert_eq!(d.names, ts.names());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn both_estimators_are_linear(
        x in prop::collection::vec(-10.0f64..10.0, 12),
        y in prop::collection::vec(-10.0f64..10.0, 12),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let mk = |v: &[f64]| TimeSeries::uniform(0.0, 0.1, DMatrix::from_column_slice(12, 1, v), vec!["u".into()]).unwrap();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let methods: [fn(&TimeSeries) -> sindy_core::Result<DerivativeMatrix>; 2] = [finite_diff, |ts| smooth_diff(ts, 5)];
        for diff in methods {
            let dx = diff(&mk(&x)).unwrap().values;
            let dy = diff(&mk(&y)).unwrap().values;
            let dc = diff(&mk(&combo)).unwrap().values;
            let scale = 1.0 + dx.amax().max(dy.amax()) * (a.abs() + b.abs());
            prop_assert!((dc - (dx * a + dy * b)).amax() <= 1e-12 * scale);
        }
    }
}
