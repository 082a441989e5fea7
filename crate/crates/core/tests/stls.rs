use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use sindy_core::linalg::lstsq_subset;
use sindy_core::seed;
use sindy_core::stls::{fit_column, lasso_solve};
use sindy_core::{fit_sindy, stls_solve, DerivativeMatrix, DiffMethod, FitOptions, FunctionLibrary, Normalization, Term};

fn gaussian(rows: usize, cols: usize, s: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(s);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Sparse vector with `nnz` entries of magnitude in [0.5, 2] at random slots.
fn planted(l: usize, nnz: usize, s: u64) -> DVector<f64> {
    let mut rng = seed::rng(s);
    let mut xi = DVector::zeros(l);
    let mut placed = 0;
    while placed < nnz {
        let j = rng.random_range(0..l);
        if xi[j] == 0.0 {
            let mag: f64 = rng.random_range(0.5..2.0);
            xi[j] = if rng.random::<bool>() { mag } else { -mag };
            placed += 1;
        }
    }
    xi
}

fn support(v: &DVector<f64>) -> Vec<usize> {
    (0..v.len()).filter(|&j| v[j] != 0.0).collect()
}

fn rss(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (y - a * x).norm_squared()
}

/// Smallest residual over every support of the given size.
fn best_subset_rss(a: &DMatrix<f64>, y: &DVector<f64>, size: usize) -> f64 {
    let l = a.ncols();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << l) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let cols: Vec<usize> = (0..l).filter(|j| mask & (1 << j) != 0).collect();
        best = best.min(rss(a, y, &lstsq_subset(a, y, &cols)));
    }
    best
}

#[test]
fn planted_example_is_recovered() {
    let theta = gaussian(80, 6, 1);
    let xi = DVector::from_vec(vec![0.0, 0.5, 0.0, -0.3, 0.0, 0.0]);
    let y = &theta * &xi;
    let sol = stls_solve(&theta, &y, 0.1, 25).unwrap();
    assert_eq!(support(&sol.coef), vec![1, 3]);
    assert!((sol.coef - xi).amax() < 1e-8);
}

#[test]
fn large_lambda_gives_zero_and_zero_lambda_gives_ols() {
    let theta = gaussian(50, 5, 2);
    let y = DVector::from_iterator(50, gaussian(50, 1, 3).iter().copied());
    let ols = lstsq_subset(&theta, &y, &[0, 1, 2, 3, 4]);
    let big = ols.amax() * 1.01;
    assert_eq!(stls_solve(&theta, &y, big, 25).unwrap().coef, DVector::zeros(5));
    let zero = stls_solve(&theta, &y, 0.0, 25).unwrap();
    assert!((zero.coef - ols).amax() < 1e-10);
}

#[test]
fn hundred_planted_systems_recovered_exactly() {
    let mut ok = 0;
    for case in 0..100u64 {
        let mut rng = seed::rng(seed::derive(10, &[case]));
        let l = rng.random_range(3..=15);
        let k = rng.random_range(1..=4);
        let m = 4 * l + 20;
        let theta = gaussian(m, l, seed::derive(11, &[case]));
        let xi = DMatrix::from_columns(
            &(0..k)
                .map(|t| planted(l, rng.random_range(1..=l.min(5)), seed::derive(12, &[case, t as u64])))
                .collect::<Vec<_>>(),
        );
        let y = &theta * &xi;
        let exact = (0..k).all(|t| {
            let sol = stls_solve(&theta, &y.column(t).into_owned(), 0.1, 25).unwrap();
            support(&sol.coef) == support(&xi.column(t).into_owned())
                && (sol.coef - xi.column(t)).amax() < 1e-6
        });
        ok += exact as usize;
    }
    assert_eq!(ok, 100);
}

#[test]
fn residual_close_to_best_subset_on_small_libraries() {
    for case in 0..40u64 {
        let l = 6 + (case % 7) as usize;
        let m = 60;
        let theta = gaussian(m, l, seed::derive(20, &[case]));
        let xi = planted(l, 1 + (case % 4) as usize, seed::derive(21, &[case]));
        let noise = gaussian(m, 1, seed::derive(22, &[case])) * 0.05;
        let y = &theta * &xi + noise.column(0);
        let sol = stls_solve(&theta, &y, 0.2, 25).unwrap();
        let size = support(&sol.coef).len();
        let best = best_subset_rss(&theta, &y, size);
        let got = rss(&theta, &y, &sol.coef);
        assert!(got <= 1.05 * best + 1e-12, "case {case}: {got} vs best {best}");
    }
}

#[test]
fn lambda_monotone_support_on_planted_instances() {
    let lambdas = [0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2];
    for case in 0..30u64 {
        let theta = gaussian(60, 10, seed::derive(30, &[case]));
        let xi = planted(10, 4, seed::derive(31, &[case]));
        let y = &theta * &xi + gaussian(60, 1, seed::derive(32, &[case])).column(0) * 0.1;
        let sizes: Vec<usize> = lambdas
            .iter()
            .map(|&l| support(&stls_solve(&theta, &y, l, 25).unwrap().coef).len())
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]), "case {case}: {sizes:?}");
    }
}

#[test]
fn fit_sindy_recovers_planted_linear_system() {
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let values = gaussian(100, 3, 40);
    let ts = sindy_core::TimeSeries::uniform(0.0, 1.0, values, names.clone()).unwrap();
    let lib = sindy_core::build_polynomial_library(&ts, 1).unwrap();
    let mut truth = DMatrix::zeros(4, 3);
    truth[(1, 0)] = -0.7;
    truth[(2, 0)] = 0.4;
    truth[(3, 1)] = 1.3;
    truth[(0, 2)] = 0.9;
    truth[(1, 2)] = -0.6;
    let xdot = DerivativeMatrix {
        values: &lib.matrix * &truth,
        names,
        method: DiffMethod::Central,
    };
    let model = fit_sindy(&xdot, &lib, &FitOptions::new(0.05).normalization(Normalization::None)).unwrap();
    assert!((model.xi - truth).amax() < 1e-10);
}

#[test]
fn empty_series_is_rejected() {
    let lib = FunctionLibrary {
        matrix: DMatrix::zeros(0, 1),
        terms: vec![Term::constant()],
        source_names: vec!["a".into()],
    };
    let xdot = DerivativeMatrix {
        values: DMatrix::zeros(0, 1),
        names: vec!["a".into()],
        method: DiffMethod::Central,
    };
    assert!(fit_sindy(&xdot, &lib, &FitOptions::new(0.1)).is_err());
}

#[test]
fn lasso_agrees_with_stls_support_on_clean_planted_data() {
    let theta = gaussian(120, 8, 50);
    let xi = planted(8, 3, 51);
    let y = &theta * &xi;
    let l1 = lasso_solve(&theta, &y, 0.5, 20_000, 1e-12).unwrap();
    let thr = stls_solve(&theta, &y, 0.1, 25).unwrap();
    assert_eq!(support(&l1.coef), support(&thr.coef));
}

#[test]
fn column_normalization_makes_threshold_scale_free() {
    let theta = gaussian(60, 5, 60);
    let xi = planted(5, 2, 61);
    let y = &theta * &xi;
    let mut scaled = theta.clone();
    scaled.column_mut(0).scale_mut(1000.0);
    scaled.column_mut(3).scale_mut(1e-3);
    let opts = FitOptions::new(0.05);
    let a = fit_column(&theta, &y, &opts).unwrap();
    let b = fit_column(&scaled, &y, &opts).unwrap();
    assert_eq!(support(&a.coef), support(&b.coef));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn result_is_a_threshold_refit_fixed_point(s in 0u64..10_000, l in 2usize..10, lambda in 0.0f64..1.0) {
        let theta = gaussian(40, l, s);
        let y = gaussian(40, 1, s + 1).column(0).into_owned();
        let sol = stls_solve(&theta, &y, lambda, 50).unwrap();
        prop_assume!(sol.converged);
        for v in sol.coef.iter() {
            prop_assert!(*v == 0.0 || v.abs() >= lambda);
        }
        let kept: Vec<usize> = (0..l).filter(|&j| sol.coef[j].abs() >= lambda).collect();
        let again = lstsq_subset(&theta, &y, &kept);
        prop_assert!((again - &sol.coef).amax() < 1e-9);
    }

    #[test]
    fn active_set_never_grows(s in 0u64..10_000, l in 2usize..10, lambda in 0.0f64..1.0) {
        let theta = gaussian(30, l, s);
        let y = gaussian(30, 1, s + 7).column(0).into_owned();
        let mut prev: Option<Vec<usize>> = None;
        for it in 1..=l + 1 {
            let cur = support(&stls_solve(&theta, &y, lambda, it).unwrap().coef);
            if let Some(p) = &prev {
                prop_assert!(cur.iter().all(|j| p.contains(j)), "{:?} -> {:?}", p, cur);
            }
            prev = Some(cur);
        }
    }
}
