//! Learning auxiliary library atoms by sparse coding.
//!
//! When the known library `F` misses some terms of the true right-hand side,
//! the derivative data cannot be represented sparsely over `F` alone. We look
//! for `p` unit-norm data-space atoms `N` such that every (unit-normalized)
//! target derivative is sparse over `[F | N]`:
//!
//! ```text
//!   min_{N, C}  sum_t ||y_t - [F N] c_t||^2 + mu * ||c_t||_0,
//!   at most `sparsity` atoms of N active per target, ||N_a|| = 1
//! ```
//!
//! with `mu = threshold^2` on unit-normalized columns. Alternating
//! minimization: a sparse-coding step (the best of thresholded least squares
//! and orthogonal matching pursuit, kept only when it lowers the penalized
//! objective) and an exact least-squares update of each atom on its own
//! residual, followed by renormalization that is absorbed into the codes.
//! Both steps are non-increasing in the objective, so the recorded trace is
//! monotone.
//!
//! The objective alone cannot tell a missing term from a whole derivative
//! column, so initialization is greedy: sparse residuals of the targets,
//! and, when the states are given, directions that behave as functions of a
//! single state variable. Leftover atoms start from the residual's leading
//! singular vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::differentiate::DerivativeMatrix;
use crate::error::{Error, Result};
use crate::library::FunctionLibrary;
use crate::linalg;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictLearnConfig {
    pub max_iter: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    /// Hard threshold on unit-normalized codes; the l0 penalty is its square.
    pub threshold: f64,
    /// Scale of the seeded perturbation added to the initial atoms.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            threshold: 0.02,
            jitter: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedBasis {
    /// `m x p`, unit-norm columns.
    pub atoms: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    /// `(L_known + p) x k` codes over `[F_normalized | N]` for the
    /// unit-normalized targets.
    pub codes: DMatrix<f64>,
    pub seed: u64,
}

impl LearnedBasis {
    pub fn p(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, a: usize) -> DVector<f64> {
        self.atoms.column(a).into_owned()
    }

    /// Largest |code| of atom `a` over all targets.
    pub fn atom_usage(&self, a: usize, n_known: usize) -> f64 {
        self.codes.row(n_known + a).amax()
    }
}

struct Problem {
    /// Unit-norm known columns.
    known: DMatrix<f64>,
    /// Unit-norm targets.
    targets: DMatrix<f64>,
    mu: f64,
    sparsity: usize,
    threshold: f64,
}

impl Problem {
    fn dictionary(&self, atoms: &DMatrix<f64>) -> DMatrix<f64> {
        let lf = self.known.ncols();
        let mut d = self.known.clone().resize_horizontally(lf + atoms.ncols(), 0.0);
        d.columns_mut(lf, atoms.ncols()).copy_from(atoms);
        d
    }

    fn column_objective(&self, d: &DMatrix<f64>, y: &DVector<f64>, c: &DVector<f64>) -> f64 {
        (y - d * c).norm_squared() + self.mu * c.iter().filter(|v| **v != 0.0).count() as f64
    }

    fn objective(&self, atoms: &DMatrix<f64>, codes: &DMatrix<f64>) -> f64 {
        let d = self.dictionary(atoms);
        (0..self.targets.ncols())
            .map(|t| {
                self.column_objective(&d, &self.targets.column(t).into_owned(), &codes.column(t).into_owned())
            })
            .sum()
    }

    /// Thresholded least squares over `d` starting from `support`, keeping at
    /// most `sparsity` atom entries.
    fn threshold_code(&self, gram: &DMatrix<f64>, dty: &DVector<f64>, mut support: Vec<usize>) -> DVector<f64> {
        let lf = self.known.ncols();
        let mut c = linalg::lstsq_gram(gram, dty, &support);
        for _ in 0..50 {
            let mut next: Vec<usize> = support
                .iter()
                .copied()
                .filter(|&j| c[j].abs() >= self.threshold)
                .collect();
            let mut atoms: Vec<usize> = next.iter().copied().filter(|&j| j >= lf).collect();
            if atoms.len() > self.sparsity {
                atoms.sort_by(|&a, &b| c[b].abs().total_cmp(&c[a].abs()));
                let drop: Vec<usize> = atoms[self.sparsity..].to_vec();
                next.retain(|j| !drop.contains(j));
            }
            if next == support {
                break;
            }
            support = next;
            c = linalg::lstsq_gram(gram, dty, &support);
        }
        c
    }

    /// Orthogonal matching pursuit: add the column that most lowers the
    /// residual while the drop beats the penalty.
    fn pursuit_code(&self, gram: &DMatrix<f64>, dty: &DVector<f64>, yy: f64) -> DVector<f64> {
        let lf = self.known.ncols();
        let n = gram.ncols();
        let rss = |c: &DVector<f64>| yy - 2.0 * c.dot(dty) + (gram * c).dot(c);
        let mut support: Vec<usize> = Vec::new();
        let mut c = DVector::zeros(n);
        let mut current = yy;
        loop {
            let atoms_used = support.iter().filter(|&&j| j >= lf).count();
            let mut best: Option<(f64, usize, DVector<f64>)> = None;
            for j in 0..n {
                if support.contains(&j) || (j >= lf && atoms_used >= self.sparsity) {
                    continue;
                }
                let mut trial = support.clone();
                trial.push(j);
                let cj = linalg::lstsq_gram(gram, dty, &trial);
                let r = rss(&cj);
                if best.as_ref().is_none_or(|b| r < b.0) {
                    best = Some((r, j, cj));
                }
            }
            match best {
                Some((r, j, cj)) if current - r > self.mu => {
                    support.push(j);
                    c = cj;
                    current = r;
                }
                _ => return c,
            }
        }
    }

    /// Best of: thresholding from the full dictionary, matching pursuit, and
    /// when there are previous codes, refitting or thresholding their support
    /// or keeping them.
    fn code_step(&self, atoms: &DMatrix<f64>, prev: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let d = self.dictionary(atoms);
        let gram = d.tr_mul(&d);
        let dty_all = d.tr_mul(&self.targets);
        let k = self.targets.ncols();
        let mut codes = DMatrix::zeros(d.ncols(), k);
        for t in 0..k {
            let y = self.targets.column(t).into_owned();
            let dty = dty_all.column(t).into_owned();
            let all: Vec<usize> = (0..d.ncols()).collect();
            let mut candidates = vec![
                self.threshold_code(&gram, &dty, all),
                self.pursuit_code(&gram, &dty, y.norm_squared()),
            ];
            if let Some(prev) = prev {
                let support: Vec<usize> = (0..d.ncols()).filter(|&j| prev[(j, t)] != 0.0).collect();
                candidates.push(linalg::lstsq_gram(&gram, &dty, &support));
                candidates.push(self.threshold_code(&gram, &dty, support));
                // Unchanged codes keep the objective from rising even when
                // the normal equations lose a few digits.
                candidates.push(prev.column(t).into_owned());
            }
            let best = candidates
                .into_iter()
                .map(|c| (self.column_objective(&d, &y, &c), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("at least one candidate");
            codes.set_column(t, &best.1);
        }
        codes
    }

    /// Exact least-squares update of each atom given the codes.
    fn atom_step(&self, atoms: &mut DMatrix<f64>, codes: &mut DMatrix<f64>) {
        let lf = self.known.ncols();
        for a in 0..atoms.ncols() {
            let row = lf + a;
            let users: Vec<usize> = (0..codes.ncols()).filter(|&t| codes[(row, t)] != 0.0).collect();
            if users.is_empty() {
                continue;
            }
            let d = self.dictionary(atoms);
            let mut update = DVector::zeros(atoms.nrows());
            let mut weight = 0.0;
            for &t in &users {
                let c = codes[(row, t)];
                let others = &d * codes.column(t) - atoms.column(a) * c;
                update += (self.targets.column(t) - others) * c;
                weight += c * c;
            }
            update /= weight;
            let norm = update.norm();
            if norm == 0.0 || !norm.is_finite() {
                continue;
            }
            atoms.set_column(a, &(update / norm));
            for &t in &users {
                codes[(row, t)] *= norm;
            }
        }
    }
}

fn validate(xdot: &DerivativeMatrix, known: &FunctionLibrary, p: usize, sparsity: usize) -> Result<()> {
    let m = xdot.n_rows();
    if p < 1 {
        return Err(Error::Parameter("need at least one atom".into()));
    }
    if sparsity < 1 {
        return Err(Error::Parameter("sparsity must be >= 1".into()));
    }
    if p >= m {
        return Err(Error::Parameter(format!("{p} atoms need more than {m} samples")));
    }
    if known.n_rows() != m {
        return Err(Error::Shape(format!(
            "library has {} rows, derivative has {m}",
            known.n_rows()
        )));
    }
    Ok(())
}

fn unit_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

fn problem(xdot: &DerivativeMatrix, known: &FunctionLibrary, sparsity: usize, cfg: &DictLearnConfig) -> Problem {
    Problem {
        known: unit_columns(&known.matrix),
        targets: unit_columns(&xdot.values),
        mu: cfg.threshold * cfg.threshold,
        sparsity,
        threshold: cfg.threshold,
    }
}

impl Problem {
    /// `[F | A]^T [F | A]` and `[F | A]^T Y` from the precomputed known blocks.
    fn gram_with(&self, ff: &DMatrix<f64>, fy: &DMatrix<f64>, atoms: &[DVector<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
        let lf = self.known.ncols();
        let n = lf + atoms.len();
        let mut gram = DMatrix::zeros(n, n);
        gram.view_mut((0, 0), (lf, lf)).copy_from(ff);
        let mut dty = DMatrix::zeros(n, self.targets.ncols());
        dty.rows_mut(0, lf).copy_from(fy);
        for (i, a) in atoms.iter().enumerate() {
            let fa = self.known.tr_mul(a);
            gram.view_mut((0, lf + i), (lf, 1)).copy_from(&fa);
            gram.view_mut((lf + i, 0), (1, lf)).copy_from(&fa.transpose());
            for (j, b) in atoms.iter().enumerate() {
                gram[(lf + i, lf + j)] = a.dot(b);
            }
            dty.row_mut(lf + i).copy_from(&a.tr_mul(&self.targets));
        }
        (gram, dty)
    }

    /// Penalized objective of thresholded codes, from the Gram matrix alone.
    fn score(&self, gram: &DMatrix<f64>, dty: &DMatrix<f64>) -> f64 {
        let all: Vec<usize> = (0..gram.ncols()).collect();
        let mut obj = 0.0;
        for t in 0..self.targets.ncols() {
            let d = dty.column(t).into_owned();
            let yy = self.targets.column(t).norm_squared();
            obj += [self.threshold_code(gram, &d, all.clone()), self.pursuit_code(gram, &d, yy)]
                .iter()
                .map(|c| {
                    let r = (yy - 2.0 * c.dot(&d) + (gram * c).dot(c)).max(0.0);
                    r + self.mu * c.iter().filter(|v| **v != 0.0).count() as f64
                })
                .fold(f64::INFINITY, f64::min);
        }
        obj
    }

    /// Greedy atoms. Candidates are what one target leaves unexplained by at
    /// most two known columns plus the atoms already chosen; with `states`,
    /// single-variable directions (see [`single_variable_candidates`]) are
    /// offered first. The candidate with the lowest penalized objective is
    /// kept while it lowers the objective. The set is kept only if, together,
    /// it saves more than two penalty units per target; re-expressing targets
    /// that `F` already covers sparsely never saves that much.
    fn greedy_atoms(&self, p: usize, states: Option<&DMatrix<f64>>) -> Vec<DVector<f64>> {
        let lf = self.known.ncols();
        let ff = self.known.tr_mul(&self.known);
        let fy = self.known.tr_mul(&self.targets);
        let objective = |atoms: &[DVector<f64>]| {
            let (g, d) = self.gram_with(&ff, &fy, atoms);
            self.score(&g, &d)
        };
        let mut chosen: Vec<DVector<f64>> = Vec::new();
        let start = objective(&chosen);
        let mut current = start;
        let margin = 2.0 * self.mu * self.targets.ncols() as f64;

        let mut supports: Vec<Vec<usize>> = vec![vec![]];
        for i in 0..lf {
            supports.push(vec![i]);
            for j in i + 1..lf {
                supports.push(vec![i, j]);
            }
        }
        if let Some(x) = states {
            let m = x.nrows();
            let gap = (m / 50).max(1);
            let lagged: Vec<(usize, usize)> = (0..m.saturating_sub(gap + 1)).map(|i| (i, i + gap + 1)).collect();
            let pairs: Vec<Vec<(usize, usize)>> = (0..x.ncols())
                .map(|v| neighbours(&x.column(v).iter().cloned().collect::<Vec<_>>(), gap))
                .collect();
            while chosen.len() < p {
                let best = single_variable_candidates(self, &pairs, &lagged, &chosen, &supports)
                    .into_iter()
                    .map(|a| {
                        let mut trial = chosen.clone();
                        trial.push(a);
                        (objective(&trial), trial.pop().expect("pushed"))
                    })
                    .min_by(|x, y| x.0.total_cmp(&y.0));
                match best {
                    Some((obj, atom)) if obj <= current * (1.0 + 1e-9) => {
                        chosen.push(atom);
                        current = obj;
                    }
                    _ => break,
                }
            }
        }
        while chosen.len() < p {
            let mut best: Option<(f64, DVector<f64>)> = None;
            for t in 0..self.targets.ncols() {
                let y = self.targets.column(t).into_owned();
                for s in &supports {
                    let mut b = DMatrix::zeros(y.len(), s.len() + chosen.len());
                    for (c, &j) in s.iter().enumerate() {
                        b.set_column(c, &self.known.column(j));
                    }
                    for (c, a) in chosen.iter().enumerate() {
                        b.set_column(s.len() + c, a);
                    }
                    let r = if b.ncols() == 0 { y.clone() } else { &y - &b * linalg::lstsq(&b, &y) };
                    let n = r.norm();
                    if n < 1e-6 {
                        continue;
                    }
                    let mut trial = chosen.clone();
                    trial.push(r / n);
                    let obj = objective(&trial);
                    if best.as_ref().is_none_or(|b| obj < b.0) {
                        best = Some((obj, trial.pop().expect("pushed")));
                    }
                }
            }
            match best {
                Some((obj, atom)) if obj < current - self.mu => {
                    chosen.push(atom);
                    current = obj;
                }
                _ => break,
            }
        }
        if current < start - margin {
            chosen
        } else {
            Vec::new()
        }
    }
}

/// Initial atoms: greedy sparse-residual atoms while they lower the
/// objective, then leading left singular vectors of the residual after
/// projection onto `F` and those atoms, then seeded random directions if the
/// residual has too few; jitter on all but the greedy atoms.
fn initial_atoms(prob: &Problem, p: usize, cfg: &DictLearnConfig, states: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let m = prob.targets.nrows();
    let greedy = prob.greedy_atoms(p, states);
    let mut chosen = DMatrix::zeros(m, greedy.len());
    for (i, a) in greedy.iter().enumerate() {
        chosen.set_column(i, a);
    }
    let q = linalg::orth(&prob.dictionary(&chosen));
    let mut resid = prob.targets.clone();
    for mut c in resid.column_iter_mut() {
        let r = linalg::residual_after(&q, &c.clone_owned());
        c.copy_from(&r);
    }
    let mut rng = seed::rng(cfg.seed);
    let mut atoms = chosen.resize_horizontally(p, 0.0);
    let mut filled = greedy.len();
    let svd = resid.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    for &i in &order {
        if filled == p || svd.singular_values[i] <= 1e-8 * smax.max(f64::MIN_POSITIVE) {
            break;
        }
        atoms.set_column(filled, &u.column(i));
        filled += 1;
    }
    while filled < p {
        let g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut v = linalg::residual_after(&q, &g);
        for prev in 0..filled {
            let a = atoms.column(prev).into_owned();
            v -= &a * a.dot(&v);
        }
        atoms.set_column(filled, &(v.clone() / v.norm()));
        filled += 1;
    }
    // Greedy atoms are exact completions; only the residual directions are
    // perturbed.
    for mut c in atoms.column_iter_mut().skip(greedy.len()) {
        for v in c.iter_mut() {
            *v += cfg.jitter * rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt();
        }
        let n = c.norm();
        c /= n;
    }
    atoms
}

/// Nearest neighbour of every sample in the values `u`, among samples more
/// than `gap` steps away in time.
fn neighbours(u: &[f64], gap: usize) -> Vec<(usize, usize)> {
    let m = u.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    let mut pairs = Vec::with_capacity(m);
    for (pos, &i) in order.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for dir in [-1isize, 1] {
            let mut q = pos as isize + dir;
            while q >= 0 && (q as usize) < m {
                let j = order[q as usize];
                let dist = (u[j] - u[i]).abs();
                if best.is_some_and(|b| dist >= b.0) {
                    break;
                }
                if i.abs_diff(j) > gap {
                    best = Some((dist, j));
                    break;
                }
                q += dir;
            }
        }
        if let Some((_, j)) = best {
            pairs.push((i, j));
        }
    }
    pairs
}

/// `sum (b_i - b_j)(b_i - b_j)' / n` over the row pairs.
fn difference_form(b: &DMatrix<f64>, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(pairs.len(), b.ncols());
    for (r, &(i, j)) in pairs.iter().enumerate() {
        d.set_row(r, &(b.row(i) - b.row(j)));
    }
    d.tr_mul(&d) / pairs.len().max(1) as f64
}

/// Solutions of `u g = r t g` with their ratios `r`, smallest first, over the
/// directions where `t` is not negligible.
fn generalized_directions(u: &DMatrix<f64>, t: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = t.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > lmax * 1e-10)
        .collect();
    if keep.is_empty() {
        return Vec::new();
    }
    let mut w = DMatrix::zeros(t.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        w.set_column(c, &(eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
    }
    let inner = (w.transpose() * u * &w).symmetric_eigen();
    let mut out: Vec<(f64, DVector<f64>)> = (0..keep.len())
        .map(|i| (inner.eigenvalues[i], &w * inner.eigenvectors.column(i)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Largest ratio of neighbour differences (neighbours in one variable) to
/// time-lag differences for a direction to count as a function of that
/// variable.
const SINGLE_VARIABLE_RATIO: f64 = 0.01;

/// Directions in `span(targets, chosen, F_S)` over small known supports `S`
/// that behave as functions of one state variable and reach outside
/// `[F | chosen]`. Sparse codes alone cannot tell a missing term from a whole
/// derivative column: both complete `F`. On data that revisit states, a
/// function of one variable takes similar values wherever that variable
/// does, which a derivative column does not. Comparing neighbours in the
/// variable against neighbours in time makes that a generalized eigenproblem.
fn single_variable_candidates(
    prob: &Problem,
    neighbour_pairs: &[Vec<(usize, usize)>],
    lagged: &[(usize, usize)],
    chosen: &[DVector<f64>],
    supports: &[Vec<usize>],
) -> Vec<DVector<f64>> {
    let lf = prob.known.ncols();
    let k = prob.targets.ncols();
    let mut cols = prob.known.clone().resize_horizontally(lf + k + chosen.len(), 0.0);
    cols.columns_mut(lf, k).copy_from(&prob.targets);
    for (i, a) in chosen.iter().enumerate() {
        cols.set_column(lf + k + i, a);
    }
    let mut covered = prob.known.clone().resize_horizontally(lf + chosen.len(), 0.0);
    for (i, a) in chosen.iter().enumerate() {
        covered.set_column(lf + i, a);
    }
    let q = linalg::orth(&covered);
    let t_full = difference_form(&cols, lagged);
    let mut out = Vec::new();
    for pairs in neighbour_pairs {
        let u_full = difference_form(&cols, pairs);
        for s in supports {
            let idx: Vec<usize> = (lf..cols.ncols()).chain(s.iter().copied()).collect();
            let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
            let sub = cols.select_columns(&idx);
            for (ratio, g) in generalized_directions(&pick(&u_full), &pick(&t_full)) {
                if ratio > SINGLE_VARIABLE_RATIO {
                    break;
                }
                let a = &sub * g;
                let n = a.norm();
                if linalg::residual_after(&q, &a).norm() > 0.01 * n {
                    out.push(a / n);
                    break;
                }
            }
        }
    }
    out
}

fn run(prob: &Problem, mut atoms: DMatrix<f64>, cfg: &DictLearnConfig, max_iter: usize) -> LearnedBasis {
    let mut codes = prob.code_step(&atoms, None);
    let mut trace = vec![prob.objective(&atoms, &codes)];
    for _ in 0..max_iter {
        prob.atom_step(&mut atoms, &mut codes);
        codes = prob.code_step(&atoms, Some(&codes));
        let obj = prob.objective(&atoms, &codes);
        let prev = *trace.last().expect("non-empty trace");
        // Exact block minimizations can come out a few ulps worse.
        let obj = if obj > prev && obj - prev <= 1e-12 * prev.max(1.0) { prev } else { obj };
        trace.push(obj);
        if prev - obj <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    LearnedBasis {
        atoms,
        objective_trace: trace,
        codes,
        seed: cfg.seed,
    }
}

/// Learn `p` atoms completing `known` for the targets in `xdot`.
pub fn learn_basis(
    xdot: &DerivativeMatrix,
    known: &FunctionLibrary,
    p: usize,
    sparsity: usize,
    cfg: &DictLearnConfig,
) -> Result<LearnedBasis> {
    validate(xdot, known, p, sparsity)?;
    let prob = problem(xdot, known, sparsity, cfg);
    let atoms = initial_atoms(&prob, p, cfg, None);
    Ok(run(&prob, atoms, cfg, cfg.max_iter))
}

/// As [`learn_basis`], with the sampled states (`m x n`) used to prefer atoms
/// that are functions of a single variable.
pub fn learn_basis_with_states(
    xdot: &DerivativeMatrix,
    known: &FunctionLibrary,
    states: &DMatrix<f64>,
    p: usize,
    sparsity: usize,
    cfg: &DictLearnConfig,
) -> Result<LearnedBasis> {
    validate(xdot, known, p, sparsity)?;
    if states.nrows() != xdot.n_rows() {
        return Err(Error::Shape(format!(
            "states have {} rows, derivative has {}",
            states.nrows(),
            xdot.n_rows()
        )));
    }
    let prob = problem(xdot, known, sparsity, cfg);
    let atoms = initial_atoms(&prob, p, cfg, Some(states));
    Ok(run(&prob, atoms, cfg, cfg.max_iter))
}

/// Run the alternation from caller-supplied atoms (normalized on entry).
pub fn learn_basis_from(
    xdot: &DerivativeMatrix,
    known: &FunctionLibrary,
    init: &DMatrix<f64>,
    sparsity: usize,
    cfg: &DictLearnConfig,
) -> Result<LearnedBasis> {
    validate(xdot, known, init.ncols(), sparsity)?;
    if init.nrows() != xdot.n_rows() {
        return Err(Error::Shape(format!(
            "initial atoms have {} rows, derivative has {}",
            init.nrows(),
            xdot.n_rows()
        )));
    }
    let prob = problem(xdot, known, sparsity, cfg);
    Ok(run(&prob, unit_columns(init), cfg, cfg.max_iter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomMatch {
    pub atom: usize,
    pub withheld: usize,
    /// Absolute cosine similarity.
    pub corr: f64,
}

/// Greedy one-to-one assignment by decreasing |cosine similarity|.
pub fn match_atoms(atoms: &DMatrix<f64>, withheld: &DMatrix<f64>) -> Vec<AtomMatch> {
    let mut pairs = Vec::new();
    for a in 0..atoms.ncols() {
        for w in 0..withheld.ncols() {
            let corr = linalg::abs_cosine(&atoms.column(a).into_owned(), &withheld.column(w).into_owned());
            pairs.push(AtomMatch { atom: a, withheld: w, corr });
        }
    }
    pairs.sort_by(|x, y| y.corr.total_cmp(&x.corr).then(x.atom.cmp(&y.atom)).then(x.withheld.cmp(&y.withheld)));
    let mut used_atom = vec![false; atoms.ncols()];
    let mut used_withheld = vec![false; withheld.ncols()];
    let mut out = Vec::new();
    for p in pairs {
        if !used_atom[p.atom] && !used_withheld[p.withheld] {
            used_atom[p.atom] = true;
            used_withheld[p.withheld] = true;
            out.push(p);
        }
    }
    out.sort_by_key(|p| p.atom);
    out
}

/// Matching on the parts of atoms and withheld columns outside the span of
/// `known`. An atom is only determined up to known columns: adding any of them
/// to it changes the codes, not the fit.
pub fn match_atoms_outside(atoms: &DMatrix<f64>, withheld: &DMatrix<f64>, known: &DMatrix<f64>) -> Vec<AtomMatch> {
    let q = linalg::orth(known);
    let strip = |a: &DMatrix<f64>| {
        let mut out = a.clone();
        for mut c in out.column_iter_mut() {
            let r = linalg::residual_after(&q, &c.clone_owned());
            c.copy_from(&r);
        }
        out
    };
    match_atoms(&strip(atoms), &strip(withheld))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_copy_matches_perfectly() {
        let w = DMatrix::from_row_slice(4, 1, &[1.0, -2.0, 0.5, 3.0]);
        let a = &w * -7.5;
        let m = match_atoms(&a, &w);
        assert_eq!(m.len(), 1);
        assert!((m[0].corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matching_is_one_to_one() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.9, 0.1, 0.1, 0.0, 0.0]);
        let m = match_atoms(&a, &w);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].atom, m[0].withheld), (0, 0));
        assert_eq!((m[1].atom, m[1].withheld), (1, 1));
    }
}
