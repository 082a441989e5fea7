use nalgebra::DMatrix;
use proptest::prelude::*;
use sindy_core::{build_polynomial_library, restrict_library, CausalMask, LibrarySpec, TimeSeries};

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn series(m: usize, n: usize) -> TimeSeries {
    let values = DMatrix::from_fn(m, n, |i, j| ((i * 7 + j * 13) % 11) as f64 / 5.0 - 1.0 + 0.1 * j as f64);
    let names = (0..n).map(|j| format!("x{}", j + 1)).collect();
    TimeSeries::uniform(0.0, 1.0, values, names).unwrap()
}

fn mask_for(ts: &TimeSeries, admissible: Vec<bool>) -> CausalMask {
    let mut mask = CausalMask::full(&ts.names()[..1], ts.names());
    mask.admissible = vec![admissible];
    mask
}

#[test]
fn term_count_matches_binomial_formula() {
    for n in 1..=6 {
        for d in 1..=3 {
            let lib = build_polynomial_library(&series(12, n), d as u32).unwrap();
            assert_eq!(lib.n_terms(), binomial(n + d, d), "n={n} d={d}");
        }
    }
}

#[test]
fn excluding_two_of_four_variables_leaves_six_terms() {
    let ts = series(20, 4);
    let lib = build_polynomial_library(&ts, 2).unwrap();
    assert_eq!(lib.n_terms(), 15);
    let r = restrict_library(&lib, &mask_for(&ts, vec![true, true, false, false]), 0);
    assert_eq!(r.n_terms(), 6);
    assert!(r.terms.iter().all(|t| !t.depends_on(2) && !t.depends_on(3)));
}

#[test]
fn full_mask_is_identity_and_empty_mask_keeps_constant() {
    let ts = series(20, 3);
    let lib = build_polynomial_library(&ts, 2).unwrap();
    let full = restrict_library(&lib, &CausalMask::full(&ts.names()[..1], ts.names()), 0);
    assert_eq!(full, lib);
    let none = restrict_library(&lib, &mask_for(&ts, vec![false; 3]), 0);
    assert_eq!(none.labels(), ["1"]);
}

#[test]
fn columns_are_the_terms_evaluated_on_the_states() {
    let ts = series(30, 3);
    let spec = LibrarySpec {
        trig_vars: vec![0, 2],
        custom: vec![vec![0.5, 0.0, 1.5]],
        ..LibrarySpec::polynomial(3)
    };
    let shifted = TimeSeries::uniform(0.0, 1.0, ts.values().map(|v| v + 2.0), ts.names().to_vec()).unwrap();
    let lib = spec.build(&shifted).unwrap();
    for (j, term) in lib.terms.iter().enumerate() {
        assert_eq!(term.evaluate_rows(shifted.values()).unwrap(), lib.matrix.column(j));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn restriction_is_monotone(bits in 0u8..16, extra in 0usize..4) {
        let ts = series(15, 4);
        let lib = build_polynomial_library(&ts, 2).unwrap();
        let small: Vec<bool> = (0..4).map(|j| bits & (1 << j) != 0).collect();
        let mut large = small.clone();
        large[extra] = true;
        let a = restrict_library(&lib, &mask_for(&ts, small), 0).labels();
        let b = restrict_library(&lib, &mask_for(&ts, large), 0).labels();
        prop_assert!(a.iter().all(|l| b.contains(l)));
    }
}
