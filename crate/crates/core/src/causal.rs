//! Causal variable screening ("Augmented SINDy" front end).
//!
//! For every target equation and every candidate variable `j` the screen asks
//! whether the library columns that depend on `j` explain the target
//! derivative beyond all the other columns. The statistic is the group
//! F-ratio of the residual-sum-of-squares drop; its null distribution is
//! obtained by refitting with row-permuted copies of variable `j` (every
//! `j`-dependent term is re-evaluated on the permuted state). P-values are
//! Benjamini-Hochberg corrected across the candidates of one target.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::differentiate::DerivativeMatrix;
use crate::error::{Error, Result};
use crate::library::{restrict_library, FunctionLibrary};
use crate::linalg;
use crate::seed;
use crate::stls::{check_shapes, fit_column, FitOptions, SparseModel};
use crate::timeseries::TimeSeries;

/// Smallest permutation count that resolves p-values near 0.005.
pub const MIN_PERMUTATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    None,
    #[default]
    BenjaminiHochberg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    pub alpha: f64,
    pub n_permutations: usize,
    pub seed: u64,
    #[serde(default)]
    pub correction: Correction,
    /// Also test a target's own variable. When false the own variable is
    /// always admissible.
    #[serde(default = "default_true")]
    pub screen_self: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_permutations: 1000,
            seed: 0,
            correction: Correction::BenjaminiHochberg,
            screen_self: true,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_permutations < MIN_PERMUTATIONS {
            return Err(Error::Config(format!(
                "n_permutations must be >= {MIN_PERMUTATIONS}, got {}",
                self.n_permutations
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `admissible[t][j]`: variable `j` may appear in target `t`'s equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalMask {
    pub targets: Vec<String>,
    pub variables: Vec<String>,
    pub admissible: Vec<Vec<bool>>,
    /// Raw permutation p-values (1.0 where nothing was tested).
    #[serde(default)]
    pub p_values: Vec<Vec<f64>>,
    pub alpha: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

impl CausalMask {
    /// Mask admitting every variable for every target.
    pub fn full(targets: &[String], variables: &[String]) -> Self {
        Self {
            targets: targets.to_vec(),
            variables: variables.to_vec(),
            admissible: vec![vec![true; variables.len()]; targets.len()],
            p_values: vec![vec![0.0; variables.len()]; targets.len()],
            alpha: 1.0,
            n_permutations: 0,
            seed: 0,
        }
    }

    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == name)
    }

    /// Admissibility of each of `names` for target row `target`. Names the
    /// mask does not know about are admissible.
    pub fn admissible_for(&self, target: usize, names: &[String]) -> Vec<bool> {
        names
            .iter()
            .map(|n| match self.variables.iter().position(|v| v == n) {
                Some(j) => self.admissible[target][j],
                None => true,
            })
            .collect()
    }

    pub fn admissible_names(&self, target: usize) -> Vec<String> {
        self.variables
            .iter()
            .zip(&self.admissible[target])
            .filter(|(_, &a)| a)
            .map(|(v, _)| v.clone())
            .collect()
    }
}

/// Benjamini-Hochberg step-up: indices rejected at level `alpha`.
pub fn benjamini_hochberg(p: &[f64], alpha: f64) -> Vec<bool> {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut cutoff = None;
    for (rank, &i) in order.iter().enumerate() {
        if p[i] <= alpha * (rank + 1) as f64 / n as f64 {
            cutoff = Some(rank);
        }
    }
    let mut out = vec![false; n];
    if let Some(c) = cutoff {
        for &i in &order[..=c] {
            out[i] = true;
        }
    }
    out
}

/// Group statistic `drop / rss_full`; monotone in the F-ratio for fixed
/// degrees of freedom, so permutation p-values are identical.
fn group_stat(q_reduced: &DMatrix<f64>, z: &DMatrix<f64>, r: &DVector<f64>, rss_reduced: f64) -> f64 {
    let drop = linalg::explained_by_extra(q_reduced, z, r).min(rss_reduced);
    let rss_full = (rss_reduced - drop).max(rss_reduced * 1e-14);
    drop / rss_full
}

/// Permutation p-value for "variable `var` helps explain `y`".
fn permutation_p_value(
    ts: &TimeSeries,
    lib: &FunctionLibrary,
    y: &DVector<f64>,
    var: usize,
    n_permutations: usize,
    stream_seed: u64,
) -> f64 {
    let dep: Vec<usize> = (0..lib.n_terms()).filter(|&c| lib.terms[c].depends_on(var)).collect();
    if dep.is_empty() {
        return 1.0;
    }
    let reduced: Vec<usize> = (0..lib.n_terms()).filter(|c| !dep.contains(c)).collect();
    let q = linalg::orth(&lib.matrix.select_columns(&reduced));
    let r = linalg::residual_after(&q, y);
    let rss_reduced = r.norm_squared();
    if rss_reduced <= 1e-24 * y.norm_squared().max(f64::MIN_POSITIVE) {
        return 1.0;
    }
    let observed = group_stat(&q, &lib.matrix.select_columns(&dep), &r, rss_reduced);

    let m = ts.n_samples();
    let mut rng = seed::rng(stream_seed);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut state = ts.values().clone();
    let mut z = DMatrix::zeros(m, dep.len());
    let mut exceed = 0usize;
    for _ in 0..n_permutations {
        perm.shuffle(&mut rng);
        for i in 0..m {
            state[(i, var)] = ts.values()[(perm[i], var)];
        }
        for (c, &term) in dep.iter().enumerate() {
            let col = lib.terms[term]
                .evaluate_rows(&state)
                .expect("variable-dependent terms have closed forms");
            z.set_column(c, &col);
        }
        if group_stat(&q, &z, &r, rss_reduced) >= observed {
            exceed += 1;
        }
    }
    (1 + exceed) as f64 / (n_permutations + 1) as f64
}

/// Screen every (target, variable) pair. `lib` must be built on `ts`.
pub fn screen_variables(
    ts: &TimeSeries,
    xdot: &DerivativeMatrix,
    lib: &FunctionLibrary,
    cfg: &ScreeningConfig,
) -> Result<CausalMask> {
    cfg.validate()?;
    check_shapes(xdot, lib)?;
    if ts.n_samples() != lib.n_rows() {
        return Err(Error::Shape(format!(
            "series has {} rows, library has {}",
            ts.n_samples(),
            lib.n_rows()
        )));
    }
    if lib.source_names != ts.names() {
        return Err(Error::Shape("library was not built on this series".into()));
    }
    let n = ts.n_vars();
    let k = xdot.values.ncols();
    let own: Vec<Option<usize>> = xdot.names.iter().map(|t| ts.index_of(t)).collect();

    let jobs: Vec<(usize, usize)> = (0..k)
        .flat_map(|t| (0..n).map(move |j| (t, j)))
        .filter(|&(t, j)| cfg.screen_self || own[t] != Some(j))
        .collect();
    let p_flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, j)| {
            let y = xdot.values.column(t).into_owned();
            let stream = seed::derive(cfg.seed, &[t as u64, j as u64]);
            permutation_p_value(ts, lib, &y, j, cfg.n_permutations, stream)
        })
        .collect();

    let mut p_values = vec![vec![1.0; n]; k];
    let mut admissible = vec![vec![false; n]; k];
    for (&(t, j), &p) in jobs.iter().zip(&p_flat) {
        p_values[t][j] = p;
    }
    for t in 0..k {
        let tested: Vec<usize> = (0..n)
            .filter(|&j| cfg.screen_self || own[t] != Some(j))
            .collect();
        let ps: Vec<f64> = tested.iter().map(|&j| p_values[t][j]).collect();
        let reject = match cfg.correction {
            Correction::BenjaminiHochberg => benjamini_hochberg(&ps, cfg.alpha),
            Correction::None => ps.iter().map(|&p| p < cfg.alpha).collect(),
        };
        for (&j, &rej) in tested.iter().zip(&reject) {
            admissible[t][j] = rej;
        }
        if !cfg.screen_self {
            if let Some(j) = own[t] {
                admissible[t][j] = true;
                p_values[t][j] = 0.0;
            }
        }
    }
    Ok(CausalMask {
        targets: xdot.names.clone(),
        variables: ts.names().to_vec(),
        admissible,
        p_values,
        alpha: cfg.alpha,
        n_permutations: cfg.n_permutations,
        seed: cfg.seed,
    })
}

/// SINDy restricted per target by the mask. Coefficients of masked-out terms
/// are structurally zero; a target with no admissible variable gets the zero
/// equation.
pub fn fit_augmented(
    xdot: &DerivativeMatrix,
    lib: &FunctionLibrary,
    mask: &CausalMask,
    opts: &FitOptions,
) -> Result<SparseModel> {
    check_shapes(xdot, lib)?;
    let k = xdot.values.ncols();
    let rows = xdot
        .names
        .iter()
        .map(|t| {
            mask.target_index(t)
                .ok_or_else(|| Error::Shape(format!("mask has no row for target {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let solved = (0..k)
        .into_par_iter()
        .map(|eq| -> Result<(DVector<f64>, usize)> {
            let row = rows[eq];
            let mut coef = DVector::zeros(lib.n_terms());
            let admissible = mask.admissible_for(row, &lib.source_names);
            if !admissible.iter().any(|&a| a) {
                return Ok((coef, 0));
            }
            let keep = lib.admissible_terms(&admissible);
            let restricted = restrict_library(lib, mask, row);
            let y = xdot.values.column(eq).into_owned();
            let sol = fit_column(&restricted.matrix, &y, opts)?;
            for (c, &j) in keep.iter().enumerate() {
                coef[j] = sol.coef[c];
            }
            Ok((coef, sol.iterations))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut xi = DMatrix::zeros(lib.n_terms(), k);
    let mut iterations = Vec::with_capacity(k);
    for (eq, (coef, it)) in solved.into_iter().enumerate() {
        xi.set_column(eq, &coef);
        iterations.push(it);
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

    #[test]
    fn bh_step_up() {
        let p = [0.01, 0.04, 0.03, 0.2];
        // Sorted: .01 <= .0125, .03 <= .025? no, .04 <= .0375? no.
        assert_eq!(benjamini_hochberg(&p, 0.05), vec![true, false, false, false]);
        assert_eq!(benjamini_hochberg(&p, 0.1), vec![true, true, true, false]);
        assert_eq!(benjamini_hochberg(&[], 0.05), Vec::<bool>::new());
    }

    #[test]
    fn too_few_permutations_is_config_error() {
        let cfg = ScreeningConfig {
            n_permutations: 199,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
