//! Candidate-function libraries: the evaluated matrix `Theta(X)` together with
//! a symbolic descriptor for every column.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::causal::CausalMask;
use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigFn {
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TermKind {
    Constant,
    /// Integer powers, one per source variable.
    Monomial { exponents: Vec<u32> },
    Trig { func: TrigFn, var: usize },
    /// Product of real powers, one exponent per source variable.
    Custom { exponents: Vec<f64> },
    /// A learned data-space column; it has no closed form.
    LearnedAtom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub kind: TermKind,
    pub label: String,
    /// Sorted indices of the source variables the term depends on.
    pub variables: Vec<usize>,
}

fn fmt_exponent(e: f64) -> String {
    let s = format!("{e:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

impl Term {
    pub fn constant() -> Self {
        Term {
            kind: TermKind::Constant,
            label: "1".into(),
            variables: Vec::new(),
        }
    }

    pub fn monomial(exponents: Vec<u32>, names: &[String]) -> Self {
        assert_eq!(exponents.len(), names.len());
        let variables: Vec<usize> = (0..exponents.len()).filter(|&i| exponents[i] > 0).collect();
        if variables.is_empty() {
            return Term::constant();
        }
        let label = variables
            .iter()
            .map(|&i| match exponents[i] {
                1 => names[i].clone(),
                e => format!("{}^{e}", names[i]),
            })
            .collect::<Vec<_>>()
            .join("*");
        Term {
            kind: TermKind::Monomial { exponents },
            label,
            variables,
        }
    }

    /// Monomial from `(variable, power)` pairs.
    pub fn monomial_of(powers: &[(usize, u32)], names: &[String]) -> Self {
        let mut exponents = vec![0; names.len()];
        for &(v, p) in powers {
            exponents[v] += p;
        }
        Term::monomial(exponents, names)
    }

    pub fn trig(func: TrigFn, var: usize, names: &[String]) -> Self {
        let f = match func {
            TrigFn::Sin => "sin",
            TrigFn::Cos => "cos",
        };
        Term {
            kind: TermKind::Trig { func, var },
            label: format!("{f}({})", names[var]),
            variables: vec![var],
        }
    }

    pub fn custom(exponents: Vec<f64>, names: &[String]) -> Self {
        assert_eq!(exponents.len(), names.len());
        let variables: Vec<usize> = (0..exponents.len()).filter(|&i| exponents[i] != 0.0).collect();
        let label = variables
            .iter()
            .map(|&i| format!("{}^{}", names[i], fmt_exponent(exponents[i])))
            .collect::<Vec<_>>()
            .join("*");
        Term {
            kind: TermKind::Custom { exponents },
            label,
            variables,
        }
    }

    pub fn learned_atom(label: impl Into<String>) -> Self {
        Term {
            kind: TermKind::LearnedAtom,
            label: label.into(),
            variables: Vec::new(),
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        self.variables.binary_search(&var).is_ok()
    }

    pub fn is_learned(&self) -> bool {
        matches!(self.kind, TermKind::LearnedAtom)
    }

    /// Value at one state; `None` for learned atoms.
    pub fn evaluate(&self, state: &[f64]) -> Option<f64> {
        Some(match &self.kind {
            TermKind::Constant => 1.0,
            TermKind::Monomial { exponents } => exponents
                .iter()
                .zip(state)
                .filter(|(e, _)| **e > 0)
                .map(|(&e, &x)| x.powi(e as i32))
                .product(),
            TermKind::Trig { func, var } => match func {
                TrigFn::Sin => state[*var].sin(),
                TrigFn::Cos => state[*var].cos(),
            },
            TermKind::Custom { exponents } => exponents
                .iter()
                .zip(state)
                .filter(|(e, _)| **e != 0.0)
                .map(|(&e, &x)| x.powf(e))
                .product(),
            TermKind::LearnedAtom => return None,
        })
    }

    /// Evaluate on every row of a state matrix.
    pub fn evaluate_rows(&self, values: &DMatrix<f64>) -> Option<DVector<f64>> {
        match &self.kind {
            TermKind::LearnedAtom => return None,
            TermKind::Monomial { exponents } => {
                let mut out = DVector::from_element(values.nrows(), 1.0);
                for (j, &e) in exponents.iter().enumerate().filter(|(_, e)| **e > 0) {
                    out.zip_apply(&values.column(j), |o, x| *o *= x.powi(e as i32));
                }
                return Some(out);
            }
            _ => {}
        }
        let mut row = vec![0.0; values.ncols()];
        Some(DVector::from_fn(values.nrows(), |i, _| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = values[(i, j)];
            }
            self.evaluate(&row).expect("closed-form term")
        }))
    }
}

/// Recipe for a library over the variables of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySpec {
    /// Maximum total polynomial degree (0 disables monomials).
    pub degree: u32,
    #[serde(default = "yes")]
    pub include_constant: bool,
    /// Only square-free monomials (products of distinct variables).
    #[serde(default)]
    pub interaction_only: bool,
    /// Variables that get `sin` and `cos` columns.
    #[serde(default)]
    pub trig_vars: Vec<usize>,
    /// Real-exponent power products.
    #[serde(default)]
    pub custom: Vec<Vec<f64>>,
}

fn yes() -> bool {
    true
}

impl LibrarySpec {
    pub fn polynomial(degree: u32) -> Self {
        Self {
            degree,
            include_constant: true,
            interaction_only: false,
            trig_vars: Vec::new(),
            custom: Vec::new(),
        }
    }

    /// Descriptors in canonical column order: constant, monomials by total
    /// degree (combinations-with-replacement order), trig, custom.
    pub fn terms(&self, names: &[String]) -> Result<Vec<Term>> {
        let n = names.len();
        let mut terms = Vec::new();
        if self.include_constant {
            terms.push(Term::constant());
        }
        for d in 1..=self.degree {
            let mut combo = Vec::with_capacity(d as usize);
            monomials_of_degree(n, d as usize, 0, &mut combo, &mut |c| {
                let mut exps = vec![0u32; n];
                for &v in c {
                    exps[v] += 1;
                }
                if !self.interaction_only || exps.iter().all(|&e| e <= 1) {
                    terms.push(Term::monomial(exps, names));
                }
            });
        }
        for &v in &self.trig_vars {
            if v >= n {
                return Err(Error::Parameter(format!("trig variable index {v} out of range")));
            }
            terms.push(Term::trig(TrigFn::Sin, v, names));
            terms.push(Term::trig(TrigFn::Cos, v, names));
        }
        for exps in &self.custom {
            if exps.len() != n {
                return Err(Error::Parameter(format!(
                    "custom term has {} exponents for {n} variables",
                    exps.len()
                )));
            }
            terms.push(Term::custom(exps.clone(), names));
        }
        check_unique(&terms)?;
        Ok(terms)
    }

    pub fn build(&self, ts: &TimeSeries) -> Result<FunctionLibrary> {
        let terms = self.terms(ts.names())?;
        FunctionLibrary::from_terms(ts, terms)
    }
}

fn monomials_of_degree(
    n: usize,
    remaining: usize,
    start: usize,
    combo: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    if remaining == 0 {
        emit(combo);
        return;
    }
    for v in start..n {
        combo.push(v);
        monomials_of_degree(n, remaining - 1, v, combo, emit);
        combo.pop();
    }
}

fn check_unique(terms: &[Term]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in terms {
        if !seen.insert(t.label.as_str()) {
            return Err(Error::Collision(t.label.clone()));
        }
    }
    Ok(())
}

/// `m x L` evaluated library with one descriptor per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionLibrary {
    pub matrix: DMatrix<f64>,
    pub terms: Vec<Term>,
    pub source_names: Vec<String>,
}

impl FunctionLibrary {
    pub fn from_terms(ts: &TimeSeries, terms: Vec<Term>) -> Result<Self> {
        check_unique(&terms)?;
        let m = ts.n_samples();
        let mut matrix = DMatrix::zeros(m, terms.len());
        for (j, term) in terms.iter().enumerate() {
            let col = term.evaluate_rows(ts.values()).ok_or_else(|| {
                Error::Parameter(format!("learned atom {:?} has no closed form", term.label))
            })?;
            matrix.set_column(j, &col);
        }
        Ok(Self {
            matrix,
            terms,
            source_names: ts.names().to_vec(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.label.clone()).collect()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.label == label)
    }

    /// Copy keeping only the listed columns, in the listed order.
    pub fn subset(&self, cols: &[usize]) -> FunctionLibrary {
        FunctionLibrary {
            matrix: self.matrix.select_columns(cols),
            terms: cols.iter().map(|&j| self.terms[j].clone()).collect(),
            source_names: self.source_names.clone(),
        }
    }

    /// Copy without the columns whose labels are listed.
    pub fn without(&self, labels: &[String]) -> FunctionLibrary {
        let keep: Vec<usize> = (0..self.n_terms())
            .filter(|&j| !labels.contains(&self.terms[j].label))
            .collect();
        self.subset(&keep)
    }

    /// Indices of terms whose variable set lies inside the admissible set.
    /// The constant and learned atoms depend on no variable and always pass.
    pub fn admissible_terms(&self, admissible: &[bool]) -> Vec<usize> {
        (0..self.n_terms())
            .filter(|&j| self.terms[j].variables.iter().all(|&v| admissible[v]))
            .collect()
    }
}

/// Build all monomials of total degree `<= degree`, constant included.
pub fn build_polynomial_library(ts: &TimeSeries, degree: u32) -> Result<FunctionLibrary> {
    if degree < 1 {
        return Err(Error::Parameter(format!("polynomial degree must be >= 1, got {degree}")));
    }
    LibrarySpec::polynomial(degree).build(ts)
}

/// A column appended to an existing library.
#[derive(Debug, Clone)]
pub struct ExtraColumn {
    pub term: Term,
    pub values: DVector<f64>,
}

impl ExtraColumn {
    pub fn atom(label: impl Into<String>, values: DVector<f64>) -> Self {
        Self {
            term: Term::learned_atom(label),
            values,
        }
    }
}

pub fn extend_library(lib: &FunctionLibrary, extra: Vec<ExtraColumn>) -> Result<FunctionLibrary> {
    let m = lib.n_rows();
    let mut labels: HashSet<String> = lib.terms.iter().map(|t| t.label.clone()).collect();
    for e in &extra {
        if e.values.len() != m {
            return Err(Error::Shape(format!(
                "column {:?} has {} rows, library has {m}",
                e.term.label,
                e.values.len()
            )));
        }
        if !labels.insert(e.term.label.clone()) {
            return Err(Error::Collision(e.term.label.clone()));
        }
    }
    let l = lib.n_terms();
    let mut matrix = lib.matrix.clone().resize_horizontally(l + extra.len(), 0.0);
    let mut terms = lib.terms.clone();
    for (k, e) in extra.into_iter().enumerate() {
        matrix.set_column(l + k, &e.values);
        terms.push(e.term);
    }
    Ok(FunctionLibrary {
        matrix,
        terms,
        source_names: lib.source_names.clone(),
    })
}

/// Keep only the terms the mask admits for `target`.
pub fn restrict_library(lib: &FunctionLibrary, mask: &CausalMask, target: usize) -> FunctionLibrary {
    let admissible = mask.admissible_for(target, &lib.source_names);
    lib.subset(&lib.admissible_terms(&admissible))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn series(n: usize, m: usize) -> TimeSeries {
        let values = DMatrix::from_fn(m, n, |i, j| 0.3 + (i as f64) * 0.7 - (j as f64) * 0.2);
        TimeSeries::uniform(0.0, 1.0, values, names(n)).unwrap()
    }

    #[test]
    fn two_variable_quadratic_terms() {
        let lib = build_polynomial_library(&series(2, 4), 2).unwrap();
        assert_eq!(lib.labels(), ["1", "x0", "x1", "x0^2", "x0*x1", "x1^2"]);
    }

    #[test]
    fn single_sample_cubic_values() {
        let ts = TimeSeries::new(vec![0.0], DMatrix::from_element(1, 1, 2.0), names(1)).unwrap();
        let lib = build_polynomial_library(&ts, 3).unwrap();
        assert_eq!(lib.matrix.row(0).iter().cloned().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn degree_zero_rejected() {
        assert!(matches!(
            build_polynomial_library(&series(2, 3), 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn term_count_matches_binomial() {
        fn binom(n: u64, k: u64) -> u64 {
            (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
        }
        for n in 1..=6 {
            for d in 1..=3 {
                let lib = build_polynomial_library(&series(n, 3), d).unwrap();
                assert_eq!(lib.n_terms() as u64, binom((n as u64) + d as u64, d as u64), "n={n} d={d}");
            }
        }
    }

    #[test]
    fn monomial_variables_match_exponents() {
        let lib = build_polynomial_library(&series(3, 3), 3).unwrap();
        for t in &lib.terms {
            if let TermKind::Monomial { exponents } = &t.kind {
                let expect: Vec<usize> = (0..3).filter(|&i| exponents[i] > 0).collect();
                assert_eq!(t.variables, expect);
            }
        }
    }

    #[test]
    fn extend_by_atoms() {
        let lib = build_polynomial_library(&series(2, 5), 2).unwrap();
        assert_eq!(extend_library(&lib, vec![]).unwrap(), lib);
        let ext = extend_library(&lib, vec![ExtraColumn::atom("N1", DVector::from_element(5, 1.0))]).unwrap();
        assert_eq!(ext.n_terms(), 7);
        assert!(ext.terms[6].is_learned());
        assert!(ext.terms[6].variables.is_empty());
    }

    #[test]
    fn extend_errors() {
        let lib = build_polynomial_library(&series(2, 5), 2).unwrap();
        let dup = ExtraColumn {
            term: Term::monomial(vec![1, 0], &names(2)),
            values: DVector::zeros(5),
        };
        assert!(matches!(extend_library(&lib, vec![dup]), Err(Error::Collision(_))));
        let short = ExtraColumn::atom("N1", DVector::zeros(4));
        assert!(matches!(extend_library(&lib, vec![short]), Err(Error::Shape(_))));
    }

    #[test]
    fn trig_and_custom_terms_evaluate() {
        let n = names(2);
        let s = Term::trig(TrigFn::Sin, 1, &n);
        assert_eq!(s.label, "sin(x1)");
        assert_eq!(s.evaluate(&[0.0, 0.5]).unwrap(), 0.5_f64.sin());
        let c = Term::custom(vec![1.0 / 3.0, 1.0 / 3.0], &n);
        assert_eq!(c.label, "x0^0.3333*x1^0.3333");
        assert!((c.evaluate(&[8.0, 27.0]).unwrap() - 6.0).abs() < 1e-12);
    }
}
