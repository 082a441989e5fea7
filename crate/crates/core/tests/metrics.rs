use nalgebra::DMatrix;
use proptest::prelude::*;
use sindy_core::metrics::fdes_literal;
use sindy_core::{aggregate, fdes, fpiv, select, GroundTruthCausal, LibrarySpec, Metric, SparseModel};

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Linear model over `vars`; `eqs[t]` lists (label, coefficient) pairs.
fn linear_model(vars: &[&str], eqs: &[(&str, &[(&str, f64)])]) -> SparseModel {
    let variables = names(vars);
    let terms = LibrarySpec::polynomial(1).terms(&variables).unwrap();
    let mut xi = DMatrix::zeros(terms.len(), eqs.len());
    for (t, (_, coefs)) in eqs.iter().enumerate() {
        for (label, c) in coefs.iter() {
            let r = terms.iter().position(|term| term.label == *label).unwrap();
            xi[(r, t)] = *c;
        }
    }
    SparseModel {
        xi,
        terms,
        targets: eqs.iter().map(|(t, _)| t.to_string()).collect(),
        variables,
        lambda: 0.09,
        iterations: vec![1; eqs.len()],
    }
}

fn lynx_truth() -> GroundTruthCausal {
    let vars = names(&["h", "l", "x1", "x2"]);
    GroundTruthCausal::with_noise(&vars, &[("h", &["h", "l"]), ("l", &["h", "l"])], &names(&["x1", "x2"])).unwrap()
}

#[test]
fn noisy_lynx_hare_model_scores_ten_twelfths() {
    let model = linear_model(
        &["h", "l", "x1", "x2"],
        &[
            ("h", &[("h", 0.1650), ("l", -0.554), ("x1", 0.077), ("x2", 0.134)]),
            ("l", &[("h", 0.137), ("l", -0.114), ("x1", -0.038), ("x2", -0.034)]),
            ("x1", &[("h", -0.022), ("x1", -0.040), ("x2", 0.134)]),
            ("x2", &[("h", -0.027), ("l", 0.119), ("x1", -0.023)]),
        ],
    );
    assert_eq!(fpiv(&model, &lynx_truth()).unwrap(), 10.0 / 12.0);
}

#[test]
fn screened_lynx_hare_model_scores_zero() {
    let model = linear_model(
        &["h", "l", "x1", "x2"],
        &[
            ("h", &[("h", 0.186), ("l", -0.426)]),
            ("l", &[("h", 0.128), ("l", -0.160)]),
            ("x1", &[]),
            ("x2", &[]),
        ],
    );
    assert_eq!(fpiv(&model, &lynx_truth()).unwrap(), 0.0);
    assert_eq!(model.render(), "h' = 0.186h - 0.426l\nl' = 0.128h - 0.160l\nx1' = 0\nx2' = 0\n");
}

#[test]
fn table_one_first_column_mean() {
    let col = [0.083, 0.083, 0.333, 0.083, 0.250, 0.083, 0.083, 0.083, 0.250, 0.000];
    let grid: Vec<Vec<f64>> = col.iter().map(|&v| vec![v]).collect();
    let r = aggregate(Metric::Fpiv, &[0.09], &grid).unwrap();
    assert_eq!(format!("{:.3}", r.mean[0]), "0.133");
    assert_eq!(format!("{:.3}", r.std[0]), "0.105");
}

#[test]
fn all_zero_grid_aggregates_to_zero() {
    let r = aggregate(Metric::Fpiv, &[0.09, 0.081], &vec![vec![0.0, 0.0]; 10]).unwrap();
    assert_eq!(r.mean, vec![0.0, 0.0]);
    assert_eq!(r.std, vec![0.0, 0.0]);
}

#[test]
fn fdes_extremes_and_literal_form() {
    let truth = linear_model(&["a", "b"], &[("a", &[("a", 1.0)]), ("b", &[("a", 1.0), ("b", 1.0)])]);
    assert_eq!(fdes(&truth, &truth).unwrap(), 1.0);
    let flipped = linear_model(&["a", "b"], &[("a", &[("1", 1.0), ("b", 2.0)]), ("b", &[("1", 3.0)])]);
    assert_eq!(fdes(&flipped, &truth).unwrap(), 0.0);
    assert_eq!(fdes_literal(&flipped, &truth).unwrap(), 3.0);
}

fn model_from_bits(bits: &[bool], coef: &[f64]) -> SparseModel {
    let variables = names(&["a", "b", "c"]);
    let terms = LibrarySpec::polynomial(2).terms(&variables).unwrap();
    let l = terms.len();
    let xi = DMatrix::from_fn(l, 3, |r, t| if bits[t * l + r] { coef[t * l + r] } else { 0.0 });
    SparseModel {
        xi,
        terms,
        targets: variables.clone(),
        variables,
        lambda: 0.1,
        iterations: vec![1; 3],
    }
}

fn causal_truth() -> GroundTruthCausal {
    GroundTruthCausal::from_allowed(&names(&["a", "b", "c"]), &[("a", &["a"]), ("b", &["a", "b"]), ("c", &[])]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scores_stay_in_unit_interval(
        bits in prop::collection::vec(any::<bool>(), 30),
        other in prop::collection::vec(any::<bool>(), 30),
        coef in prop::collection::vec(0.1f64..5.0, 30),
    ) {
        let a = model_from_bits(&bits, &coef);
        let b = model_from_bits(&other, &coef);
        let f = fpiv(&a, &causal_truth()).unwrap();
        let d = fdes(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d == 1.0, bits == other);
    }

    #[test]
    fn extra_incorrect_term_never_lowers_fpiv(
        bits in prop::collection::vec(any::<bool>(), 30),
        slot in 0usize..30,
        coef in prop::collection::vec(0.1f64..5.0, 30),
    ) {
        let before = model_from_bits(&bits, &coef);
        let mut more = bits.clone();
        more[slot] = true;
        let after = model_from_bits(&more, &coef);
        prop_assert!(fpiv(&after, &causal_truth()).unwrap() >= fpiv(&before, &causal_truth()).unwrap());
    }

    #[test]
    fn select_is_idempotent_and_scale_free(v in prop::collection::vec(prop_oneof![Just(0.0), -10.0f64..10.0], 0..20), s in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        let once = select(&v);
        prop_assert_eq!(select(&once), once.clone());
        let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
        prop_assert_eq!(select(&scaled), once.clone());
        for (x, y) in v.iter().zip(&once) {
            prop_assert_eq!(*y, if *x != 0.0 { 1.0 } else { 0.0 });
        }
    }
}
