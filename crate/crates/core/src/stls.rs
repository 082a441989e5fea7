//! Sequential thresholded least squares (STLS) and the per-target SINDy fit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::differentiate::DerivativeMatrix;
use crate::error::{Error, Result};
use crate::library::{FunctionLibrary, Term};
use crate::linalg;

pub const DEFAULT_MAX_ITER: usize = 25;

/// Output of one STLS solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StlsSolution {
    pub coef: DVector<f64>,
    pub iterations: usize,
    /// Support was unchanged between the last two passes.
    pub converged: bool,
}

/// Alternate least squares on the active columns with hard thresholding at
/// `lambda` until the support stops changing or `max_iter` passes were made.
///
/// Rank-deficient active sets fall back to the minimum-norm solution.
/// Inactive entries of the result are exactly zero.
pub fn stls_solve(
    theta: &DMatrix<f64>,
    xdot: &DVector<f64>,
    lambda: f64,
    max_iter: usize,
) -> Result<StlsSolution> {
    if theta.nrows() != xdot.len() {
        return Err(Error::Shape(format!(
            "library has {} rows, target has {}",
            theta.nrows(),
            xdot.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be >= 1".into()));
    }
    let mut active: Vec<usize> = (0..theta.ncols()).collect();
    let mut coef = linalg::lstsq_subset(theta, xdot, &active);
    for it in 1..=max_iter {
        let kept: Vec<usize> = active.iter().copied().filter(|&j| coef[j].abs() >= lambda).collect();
        if kept.len() == active.len() {
            return Ok(StlsSolution {
                coef,
                iterations: it,
                converged: true,
            });
        }
        active = kept;
        coef = linalg::lstsq_subset(theta, xdot, &active);
        if active.is_empty() {
            return Ok(StlsSolution {
                coef,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(StlsSolution {
        coef,
        iterations: max_iter,
        converged: false,
    })
}

/// Lasso, `min 0.5 ||y - A b||^2 + lambda ||b||_1`, by accelerated proximal
/// gradient (FISTA). Used as a cross-check for STLS, not as the default.
pub fn lasso_solve(
    theta: &DMatrix<f64>,
    xdot: &DVector<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<StlsSolution> {
    if theta.nrows() != xdot.len() {
        return Err(Error::Shape(format!(
            "library has {} rows, target has {}",
            theta.nrows(),
            xdot.len()
        )));
    }
    let n = theta.ncols();
    let gram = theta.tr_mul(theta);
    let aty = theta.tr_mul(xdot);
    let lip = gram.clone().symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
    if lip == 0.0 {
        return Ok(StlsSolution {
            coef: DVector::zeros(n),
            iterations: 0,
            converged: true,
        });
    }
    let step = 1.0 / lip;
    let soft = |v: f64| v.signum() * (v.abs() - step * lambda).max(0.0);
    let mut b = DVector::zeros(n);
    let mut z = b.clone();
    let mut t = 1.0_f64;
    for it in 1..=max_iter {
        let grad = &gram * &z - &aty;
        let next = (&z - grad * step).map(soft);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &b) * ((t - 1.0) / t_next);
        let delta = (&next - &b).norm();
        b = next;
        t = t_next;
        if delta <= tol * b.norm().max(1.0) {
            return Ok(StlsSolution {
                coef: b,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(StlsSolution {
        coef: b,
        iterations: max_iter,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Threshold raw coefficients.
    None,
    /// Scale library columns to unit l2 norm, threshold, then unscale.
    #[default]
    Columns,
    /// As `Columns`, and also scale each target to unit l2 norm, so the
    /// threshold is a fraction of the target's size.
    ColumnsAndTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    #[default]
    Stls,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: f64,
    pub max_iter: usize,
    pub normalization: Normalization,
    pub solver: Solver,
}

impl FitOptions {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iter: DEFAULT_MAX_ITER,
            normalization: Normalization::default(),
            solver: Solver::default(),
        }
    }

    pub fn normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }
}

/// Solve one target column under the configured normalization; returns the
/// coefficients on the original (unscaled) columns.
pub fn fit_column(theta: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<StlsSolution> {
    let (scaled, col_scale) = match opts.normalization {
        Normalization::None => (theta.clone(), vec![1.0; theta.ncols()]),
        _ => {
            let norms: Vec<f64> = linalg::column_norms(theta)
                .into_iter()
                .map(|s| if s > 0.0 { s } else { 1.0 })
                .collect();
            let mut a = theta.clone();
            for (j, s) in norms.iter().enumerate() {
                a.column_mut(j).scale_mut(1.0 / s);
            }
            (a, norms)
        }
    };
    let y_scale = match opts.normalization {
        Normalization::ColumnsAndTarget if y.norm() > 0.0 => y.norm(),
        _ => 1.0,
    };
    let target = y / y_scale;
    let mut sol = match opts.solver {
        Solver::Stls => stls_solve(&scaled, &target, opts.lambda, opts.max_iter)?,
        Solver::Lasso => lasso_solve(&scaled, &target, opts.lambda, 100 * opts.max_iter.max(1), 1e-10)?,
    };
    for (j, s) in col_scale.iter().enumerate() {
        sol.coef[j] *= y_scale / s;
    }
    Ok(sol)
}

/// Sparse coefficient matrix `Xi = [xi_1 .. xi_k]`, one column per target.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    /// `L x k`, unscaled coefficients.
    pub xi: DMatrix<f64>,
    pub terms: Vec<Term>,
    pub targets: Vec<String>,
    /// Names of the source variables the term descriptors index into.
    pub variables: Vec<String>,
    pub lambda: f64,
    pub iterations: Vec<usize>,
}

impl SparseModel {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn support(&self, eq: usize) -> Vec<usize> {
        (0..self.n_terms()).filter(|&j| self.xi[(j, eq)] != 0.0).collect()
    }

    pub fn support_labels(&self, eq: usize) -> Vec<String> {
        self.support(eq).into_iter().map(|j| self.terms[j].label.clone()).collect()
    }

    pub fn coefficient(&self, eq: usize, label: &str) -> Option<f64> {
        self.terms.iter().position(|t| t.label == label).map(|j| self.xi[(j, eq)])
    }

    /// Source variables that appear with a nonzero coefficient in `eq`.
    pub fn variables_in(&self, eq: usize) -> Vec<usize> {
        let mut vars: Vec<usize> = self
            .support(eq)
            .into_iter()
            .flat_map(|j| self.terms[j].variables.iter().copied())
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    /// Right-hand side of one equation, e.g. `0.186h - 0.426l`.
    pub fn render_rhs(&self, eq: usize) -> String {
        let mut out = String::new();
        for j in self.support(eq) {
            let c = self.xi[(j, eq)];
            let mag = format!("{:.3}", c.abs());
            let body = if self.terms[j].label == "1" {
                mag
            } else {
                format!("{mag}{}", self.terms[j].label)
            };
            if out.is_empty() {
                if c < 0.0 {
                    out.push('-');
                }
                out.push_str(&body);
            } else {
                out.push_str(if c < 0.0 { " - " } else { " + " });
                out.push_str(&body);
            }
        }
        if out.is_empty() {
            out.push('0');
        }
        out
    }

    /// All equations, one per line: `h' = 0.186h - 0.426l`.
    pub fn render(&self) -> String {
        (0..self.n_targets())
            .map(|eq| format!("{}' = {}\n", self.targets[eq], self.render_rhs(eq)))
            .collect()
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            targets: self.targets.clone(),
            variables: self.variables.clone(),
            lambda: self.lambda,
            iterations: self.iterations.clone(),
            terms: self.terms.clone(),
            coefficients: (0..self.n_targets())
                .map(|eq| self.xi.column(eq).iter().cloned().collect())
                .collect(),
            equations: (0..self.n_targets()).map(|eq| self.render_rhs(eq)).collect(),
        }
    }

    pub fn from_record(rec: ModelRecord) -> Result<Self> {
        let l = rec.terms.len();
        let k = rec.targets.len();
        if rec.coefficients.len() != k || rec.coefficients.iter().any(|c| c.len() != l) {
            return Err(Error::Shape("coefficient table does not match terms x targets".into()));
        }
        Ok(SparseModel {
            xi: DMatrix::from_fn(l, k, |j, eq| rec.coefficients[eq][j]),
            terms: rec.terms,
            targets: rec.targets,
            variables: rec.variables,
            lambda: rec.lambda,
            iterations: rec.iterations,
        })
    }
}

/// JSON form of a [`SparseModel`]; `coefficients[eq][term]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub targets: Vec<String>,
    pub variables: Vec<String>,
    pub lambda: f64,
    pub iterations: Vec<usize>,
    pub terms: Vec<Term>,
    pub coefficients: Vec<Vec<f64>>,
    /// Rendered right-hand sides, informational only.
    #[serde(default)]
    pub equations: Vec<String>,
}

pub(crate) fn check_shapes(xdot: &DerivativeMatrix, lib: &FunctionLibrary) -> Result<()> {
    if xdot.n_rows() == 0 {
        return Err(Error::InsufficientData("no sample rows".into()));
    }
    if xdot.n_rows() != lib.n_rows() {
        return Err(Error::Shape(format!(
            "derivative has {} rows, library has {}",
            xdot.n_rows(),
            lib.n_rows()
        )));
    }
    Ok(())
}

/// Plain SINDy: an independent STLS solve for every derivative column.
pub fn fit_sindy(xdot: &DerivativeMatrix, lib: &FunctionLibrary, opts: &FitOptions) -> Result<SparseModel> {
    check_shapes(xdot, lib)?;
    let k = xdot.values.ncols();
    let solved = (0..k)
        .into_par_iter()
        .map(|eq| fit_column(&lib.matrix, &xdot.values.column(eq).into_owned(), opts))
        .collect::<Result<Vec<_>>>()?;
    let mut xi = DMatrix::zeros(lib.n_terms(), k);
    let mut iterations = Vec::with_capacity(k);
    for (eq, sol) in solved.into_iter().enumerate() {
        xi.set_column(eq, &sol.coef);
        iterations.push(sol.iterations);
    }
    Ok(SparseModel {
        xi,
        terms: lib.terms.clone(),
        targets: xdot.names.clone(),
        variables: lib.source_names.clone(),
        lambda: opts.lambda,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed);
        DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn planted_recovery() {
        let theta = random_matrix(60, 8, 1);
        let truth = DVector::from_vec(vec![0.0, 0.5, 0.0, -0.3, 0.0, 0.0, 0.0, 0.0]);
        let y = &theta * &truth;
        let sol = stls_solve(&theta, &y, 0.1, 25).unwrap();
        assert!(sol.converged);
        assert!((sol.coef.clone() - truth.clone()).amax() < 1e-8);
        for j in 0..8 {
            assert_eq!(sol.coef[j] == 0.0, truth[j] == 0.0);
        }
    }

    #[test]
    fn huge_threshold_zeroes_everything() {
        let theta = random_matrix(30, 5, 2);
        let y = random_matrix(30, 1, 3).column(0).into_owned();
        let ols = linalg::lstsq(&theta, &y);
        let sol = stls_solve(&theta, &y, ols.amax() * 1.01, 25).unwrap();
        assert!(sol.coef.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn zero_threshold_is_ols() {
        let theta = random_matrix(30, 5, 4);
        let y = random_matrix(30, 1, 5).column(0).into_owned();
        let ols = linalg::lstsq(&theta, &y);
        let sol = stls_solve(&theta, &y, 0.0, 25).unwrap();
        assert!((sol.coef - ols).amax() < 1e-10);
    }

    #[test]
    fn argument_errors() {
        let theta = random_matrix(10, 3, 6);
        let y = DVector::zeros(9);
        assert!(matches!(stls_solve(&theta, &y, 0.1, 5), Err(Error::Shape(_))));
        let y = DVector::zeros(10);
        assert!(stls_solve(&theta, &y, -1.0, 5).is_err());
        assert!(stls_solve(&theta, &y, 0.1, 0).is_err());
    }

    #[test]
    fn lasso_agrees_on_support_for_planted_model() {
        let theta = random_matrix(200, 6, 7);
        let truth = DVector::from_vec(vec![1.5, 0.0, 0.0, -2.0, 0.0, 0.0]);
        let y = &theta * &truth;
        let sol = lasso_solve(&theta, &y, 1.0, 20_000, 1e-12).unwrap();
        for j in 0..6 {
            assert_eq!(sol.coef[j].abs() > 1e-6, truth[j] != 0.0, "coef {j}: {}", sol.coef[j]);
        }
    }

    #[test]
    fn render_matches_equation_style() {
        let names = vec!["h".to_string(), "l".to_string()];
        let terms = vec![
            Term::constant(),
            Term::monomial(vec![1, 0], &names),
            Term::monomial(vec![0, 1], &names),
        ];
        let xi = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.186, 0.128, -0.426, -0.160]);
        let model = SparseModel {
            xi,
            terms,
            targets: names.clone(),
            variables: names,
            lambda: 0.05,
            iterations: vec![1, 1],
        };
        assert_eq!(model.render_rhs(0), "0.186h - 0.426l");
        assert_eq!(model.render(), "h' = 0.186h - 0.426l\nl' = 0.128h - 0.160l\n");
        let back = SparseModel::from_record(
            serde_json::from_str(&serde_json::to_string(&model.to_record()).unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, model);
    }
}
