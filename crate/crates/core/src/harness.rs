//! Experiment runner: trial x lambda grids over the real-data screening
//! experiments and the dual-uncertainty (missing terms + noise variables)
//! experiment, plus report rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{fit_augmented, screen_variables, CausalMask, Correction, ScreeningConfig};
use crate::dictlearn::{learn_basis_with_states, match_atoms_outside, AtomMatch, DictLearnConfig};
use crate::differentiate::{DerivativeMatrix, DiffMethod};
use crate::error::{Error, Result};
use crate::library::{extend_library, ExtraColumn, FunctionLibrary, LibrarySpec, Term, TermKind};
use crate::metrics::{aggregate, fdes, fpiv, GroundTruthCausal, Metric, MetricReport};
use crate::seed;
use crate::simulate::{self, true_model, OdeSystem, SimConfig, SystemKind};
use crate::stls::{fit_sindy, FitOptions, Normalization, SparseModel};
use crate::timeseries::{augment_with_noise, load_csv, CsvSchema, NoiseMode, NoiseSpec, TimeSeries};

/// Geometric threshold schedule `start * ratio^i`.
pub fn lambda_schedule(start: f64, ratio: f64, count: usize) -> Result<Vec<f64>> {
    if !(start > 0.0) || !start.is_finite() {
        return Err(Error::Config(format!("schedule start must be > 0, got {start}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("schedule ratio must be in (0, 1), got {ratio}")));
    }
    if count == 0 {
        return Err(Error::Config("schedule needs at least one value".into()));
    }
    Ok((0..count).map(|i| start * ratio.powi(i as i32)).collect())
}

/// Display form of a threshold: four decimals, no leading zero.
pub fn format_lambda(l: f64) -> String {
    strip_zero(&format!("{l:.4}"))
}

fn strip_zero(s: &str) -> String {
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s.to_string()
    }
}

fn default_lambdas() -> Vec<f64> {
    lambda_schedule(0.09, 0.9, 5).expect("valid default schedule")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LynxHare,
    SardineAnchovy,
    DualUncertainty,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lynx-hare" => Ok(Self::LynxHare),
            "sardine-anchovy" => Ok(Self::SardineAnchovy),
            "dual-uncertainty" => Ok(Self::DualUncertainty),
            _ => Err(Error::Config(format!("unknown experiment {s:?}"))),
        }
    }
}

/// Pipeline knobs. Every field is optional in a config file; missing ones
/// take the per-experiment defaults of [`Pipeline::defaults_for`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOverrides {
    pub standardize: Option<bool>,
    pub degree: Option<u32>,
    pub constant: Option<bool>,
    pub diff: Option<String>,
    pub trim: Option<usize>,
    pub normalization: Option<Normalization>,
    pub max_iter: Option<usize>,
    pub alpha: Option<f64>,
    pub permutations: Option<usize>,
    pub correction: Option<Correction>,
    pub screen_self: Option<bool>,
    pub noise_count: Option<usize>,
    pub samples: Option<usize>,
    pub atom_sparsity: Option<usize>,
    pub atom_threshold: Option<f64>,
    pub atom_iterations: Option<usize>,
    pub match_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    /// z-score every variable, synthetic ones included, before differentiating.
    pub standardize: bool,
    /// Polynomial degree of the real-data library.
    pub degree: u32,
    /// Constant column in the real-data library.
    pub constant: bool,
    pub diff: String,
    /// Rows dropped at each end after differentiation.
    pub trim: usize,
    pub normalization: Normalization,
    pub max_iter: usize,
    pub alpha: f64,
    pub permutations: usize,
    pub correction: Correction,
    pub screen_self: bool,
    /// Standard-normal noise variables in the dual-uncertainty experiment.
    pub noise_count: usize,
    /// Simulated samples in the dual-uncertainty experiment.
    pub samples: usize,
    pub atom_sparsity: usize,
    pub atom_threshold: f64,
    pub atom_iterations: usize,
    /// Minimum |cosine| for a learned atom to stand in for a withheld term.
    pub match_threshold: f64,
}

impl Pipeline {
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        let base = Self {
            standardize: true,
            degree: 2,
            constant: true,
            diff: "central".into(),
            trim: 0,
            normalization: Normalization::None,
            max_iter: crate::stls::DEFAULT_MAX_ITER,
            alpha: 0.001,
            permutations: 2000,
            correction: Correction::None,
            screen_self: true,
            noise_count: 2,
            samples: 2000,
            atom_sparsity: 2,
            atom_threshold: 0.02,
            atom_iterations: 100,
            match_threshold: 0.8,
        };
        match kind {
            // Annual abundance counts: smoothed slopes, linear library.
            ExperimentKind::LynxHare => Self {
                degree: 1,
                diff: "smooth:5:2".into(),
                trim: 2,
                ..base
            },
            // The series are already differenced and standardized.
            ExperimentKind::SardineAnchovy => base,
            ExperimentKind::DualUncertainty => Self {
                standardize: false,
                normalization: Normalization::ColumnsAndTarget,
                alpha: 0.05,
                permutations: 200,
                correction: Correction::BenjaminiHochberg,
                atom_threshold: 0.005,
                ..base
            },
        }
    }

    fn apply(mut self, o: &PipelineOverrides) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f.clone() { self.$f = v; } )* };
        }
        take!(
            standardize, degree, constant, diff, trim, normalization, max_iter, alpha, permutations, correction,
            screen_self, noise_count, samples, atom_sparsity, atom_threshold, atom_iterations,
            match_threshold
        );
        self
    }

    fn fit_options(&self, lambda: f64) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            ..FitOptions::new(lambda).normalization(self.normalization)
        }
    }

    fn screening(&self, seed: u64) -> ScreeningConfig {
        ScreeningConfig {
            alpha: self.alpha,
            n_permutations: self.permutations,
            seed,
            correction: self.correction,
            screen_self: self.screen_self,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub noise_mode: Option<NoiseMode>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: Option<SystemKind>,
    #[serde(default)]
    pub n_missing: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory holding the real-data CSV fixtures.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineOverrides,
}

fn default_trials() -> usize {
    10
}

/// Fixture directory of this workspace.
pub fn default_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            noise_mode: None,
            lambdas: None,
            trials: default_trials(),
            seed: 0,
            system: None,
            n_missing: None,
            output: None,
            data_dir: None,
            pipeline: PipelineOverrides::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fill defaults and validate.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let lambdas = self.lambdas.clone().unwrap_or_else(default_lambdas);
        if lambdas.is_empty() {
            return Err(Error::Config("lambdas must be nonempty".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {l}")));
        }
        let pipeline = Pipeline::defaults_for(self.experiment).apply(&self.pipeline);
        DiffMethod::parse(&pipeline.diff)?;
        let dual = self.experiment == ExperimentKind::DualUncertainty;
        let noise_mode = match (dual, self.noise_mode) {
            (true, Some(NoiseMode::MatchedMoments)) => {
                return Err(Error::Config("dual-uncertainty uses standard-normal noise".into()))
            }
            (true, _) => NoiseMode::StandardNormal,
            (false, m) => m.unwrap_or(NoiseMode::MatchedMoments),
        };
        let (system, n_missing) = if dual {
            let system = self
                .system
                .ok_or_else(|| Error::Config("dual-uncertainty needs a system".into()))?;
            let n = self
                .n_missing
                .ok_or_else(|| Error::Config("dual-uncertainty needs n_missing".into()))?;
            let size = OdeSystem::new(system)
                .canonical_library()
                .terms(&OdeSystem::new(system).names())?
                .len();
            if n < 1 || n >= size {
                return Err(Error::Config(format!(
                    "n_missing must be in [1, {}), got {n}",
                    size
                )));
            }
            if pipeline.samples < 3 || pipeline.samples > 100_000 {
                return Err(Error::Config(format!("samples out of range: {}", pipeline.samples)));
            }
            (Some(system), Some(n))
        } else {
            (None, None)
        };
        Ok(ResolvedConfig {
            experiment: self.experiment,
            noise_mode,
            lambdas,
            trials: self.trials,
            seed: self.seed,
            system,
            n_missing,
            data_dir: self.data_dir.clone().unwrap_or_else(default_data_dir),
            pipeline,
        })
    }
}

/// Fully specified experiment, echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub experiment: ExperimentKind,
    pub noise_mode: NoiseMode,
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub system: Option<SystemKind>,
    pub n_missing: Option<usize>,
    pub data_dir: PathBuf,
    pub pipeline: Pipeline,
}

impl ResolvedConfig {
    /// Seed of cell (trial, lambda index).
    pub fn cell_seed(&self, trial: usize, lambda: usize) -> u64 {
        derive_seed(self.seed, trial, lambda)
    }
}

pub fn derive_seed(master: u64, trial: usize, lambda: usize) -> u64 {
    seed::derive(master, &[trial as u64, lambda as u64])
}

// ---------------------------------------------------------------------------
// shared pipeline pieces

fn cells(cfg: &ResolvedConfig) -> Vec<(usize, usize)> {
    (0..cfg.trials)
        .flat_map(|t| (0..cfg.lambdas.len()).map(move |i| (t, i)))
        .collect()
}

fn grid_from(cfg: &ResolvedConfig, values: &[(f64, f64)]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = cfg.lambdas.len();
    let a = values.chunks(n).map(|r| r.iter().map(|v| v.0).collect()).collect();
    let b = values.chunks(n).map(|r| r.iter().map(|v| v.1).collect()).collect();
    (a, b)
}

/// Differentiate and drop `trim` rows at both ends of series and derivative.
fn differentiate(ts: &TimeSeries, p: &Pipeline) -> Result<(TimeSeries, DerivativeMatrix)> {
    let method = DiffMethod::parse(&p.diff)?;
    let xdot = method.apply(ts)?;
    if p.trim == 0 {
        return Ok((ts.clone(), xdot));
    }
    let m = ts.n_samples();
    if 2 * p.trim + 3 > m {
        return Err(Error::InsufficientData(format!("cannot trim {} of {m} rows", p.trim)));
    }
    let keep = m - 2 * p.trim;
    let times = ts.times()[p.trim..p.trim + keep].to_vec();
    let values = ts.values().rows(p.trim, keep).into_owned();
    let trimmed = TimeSeries::new(times, values, ts.names().to_vec())?;
    let xdot = DerivativeMatrix {
        values: xdot.values.rows(p.trim, keep).into_owned(),
        names: xdot.names,
        method: xdot.method,
    };
    Ok((trimmed, xdot))
}

// ---------------------------------------------------------------------------
// real-data screening experiments

/// Observed variables, fixture file and the variables each equation may use.
struct Dataset {
    file: &'static str,
    names: [&'static str; 2],
    allowed: [(&'static str, &'static [&'static str]); 2],
    mirror_of: [&'static str; 2],
}

fn dataset(kind: ExperimentKind) -> Result<Dataset> {
    match kind {
        ExperimentKind::LynxHare => Ok(Dataset {
            file: "lynx_hare.csv",
            names: ["h", "l"],
            allowed: [("h", &["h", "l"]), ("l", &["h", "l"])],
            mirror_of: ["l", "h"],
        }),
        ExperimentKind::SardineAnchovy => Ok(Dataset {
            file: "sardine_anchovy.csv",
            names: ["a", "s"],
            allowed: [("a", &["a"]), ("s", &["s"])],
            mirror_of: ["a", "s"],
        }),
        ExperimentKind::DualUncertainty => {
            Err(Error::Config("not a real-data experiment".into()))
        }
    }
}

/// Load the observed series of a real-data experiment.
pub fn load_dataset(cfg: &ResolvedConfig) -> Result<TimeSeries> {
    let ds = dataset(cfg.experiment)?;
    let path = cfg.data_dir.join(ds.file);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset fixture {} not found", path.display()),
        )));
    }
    load_csv(&path, &CsvSchema::new("year", &ds.names))
}

/// Everything produced in one real-data cell.
#[derive(Debug, Clone)]
pub struct VariableCell {
    pub plain: SparseModel,
    pub augmented: SparseModel,
    pub mask: CausalMask,
    pub plain_fpiv: f64,
    pub augmented_fpiv: f64,
}

/// Run cell (trial, lambda index) of a real-data experiment on the loaded
/// observations.
pub fn variable_cell(cfg: &ResolvedConfig, observed: &TimeSeries, trial: usize, li: usize) -> Result<VariableCell> {
    let ds = dataset(cfg.experiment)?;
    let p = &cfg.pipeline;
    let cell = cfg.cell_seed(trial, li);
    let spec = match cfg.noise_mode {
        NoiseMode::MatchedMoments => NoiseSpec::matched(&ds.mirror_of, seed::derive(cell, &[0, 0])),
        NoiseMode::StandardNormal => NoiseSpec::standard(2, seed::derive(cell, &[0, 1])),
    };
    let aug = augment_with_noise(observed, &spec)?;
    let aug = if p.standardize { aug.zscore() } else { aug };
    let (aug, xdot) = differentiate(&aug, p)?;
    let lib = LibrarySpec {
        include_constant: p.constant,
        ..LibrarySpec::polynomial(p.degree)
    }
    .build(&aug)?;
    let opts = p.fit_options(cfg.lambdas[li]);
    let plain = fit_sindy(&xdot, &lib, &opts)?;
    let mask = screen_variables(&aug, &xdot, &lib, &p.screening(seed::derive(cell, &[1])))?;
    let augmented = fit_augmented(&xdot, &lib, &mask, &opts)?;
    let noise: Vec<String> = aug.names()[observed.n_vars()..].to_vec();
    let truth = GroundTruthCausal::with_noise(aug.names(), &ds.allowed, &noise)?;
    Ok(VariableCell {
        plain_fpiv: fpiv(&plain, &truth)?,
        augmented_fpiv: fpiv(&augmented, &truth)?,
        plain,
        augmented,
        mask,
    })
}

/// Plain and screened SINDy on a real dataset with synthetic noise
/// variables; returns (plain, augmented) FPIV reports.
pub fn run_variable_uncertainty(cfg: &ExperimentConfig) -> Result<(MetricReport, MetricReport)> {
    let cfg = cfg.resolve()?;
    let observed = load_dataset(&cfg)?;
    let values = cells(&cfg)
        .par_iter()
        .map(|&(t, i)| variable_cell(&cfg, &observed, t, i).map(|c| (c.plain_fpiv, c.augmented_fpiv)))
        .collect::<Result<Vec<_>>>()?;
    let (plain, aug) = grid_from(&cfg, &values);
    Ok((
        aggregate(Metric::Fpiv, &cfg.lambdas, &plain)?,
        aggregate(Metric::Fpiv, &cfg.lambdas, &aug)?,
    ))
}

// ---------------------------------------------------------------------------
// dual uncertainty

/// Labels of the `n` terms withheld from the canonical library: true-support
/// terms by decreasing largest |coefficient| (ties in canonical order), then,
/// once the support is exhausted, the remaining terms in canonical order.
pub fn withheld_terms(system: &OdeSystem, n: usize) -> Result<Vec<String>> {
    let spec = system.canonical_library();
    let truth = true_model(system, &spec)?;
    let l = truth.n_terms();
    if n < 1 || n >= l {
        return Err(Error::Config(format!("n_missing must be in [1, {l}), got {n}")));
    }
    let weight: Vec<f64> = (0..l).map(|r| truth.xi.row(r).amax()).collect();
    let mut support: Vec<usize> = (0..l).filter(|&r| weight[r] != 0.0).collect();
    support.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));
    let rest = (0..l).filter(|&r| weight[r] == 0.0);
    Ok(support
        .into_iter()
        .chain(rest)
        .take(n)
        .map(|r| truth.terms[r].label.clone())
        .collect())
}

/// Re-express a term over a longer variable list whose prefix is the
/// original one.
fn lift(term: &Term, names: &[String]) -> Term {
    let pad = |n: usize| names.len() - n;
    match &term.kind {
        TermKind::Constant | TermKind::LearnedAtom => term.clone(),
        TermKind::Monomial { exponents } => {
            let mut e = exponents.clone();
            e.extend(std::iter::repeat_n(0, pad(exponents.len())));
            Term::monomial(e, names)
        }
        TermKind::Custom { exponents } => {
            let mut e = exponents.clone();
            e.extend(std::iter::repeat_n(0.0, pad(exponents.len())));
            Term::custom(e, names)
        }
        TermKind::Trig { func, var } => Term::trig(*func, *var, names),
    }
}

/// Simulated trajectory of a system at the configured sample count.
pub fn dual_trajectory(system: &OdeSystem, samples: usize) -> Result<TimeSeries> {
    let base = system.default_sim();
    let dt = base.t_end / (samples - 1) as f64;
    let steps = (base.dt / dt).max(1.0).round() as usize;
    let fine = SimConfig {
        dt: dt / steps.max(1) as f64,
        ..base
    };
    let ts = simulate::simulate(system, &fine)?;
    let rows: Vec<usize> = (0..ts.n_samples()).step_by(steps.max(1)).take(samples).collect();
    let times = rows.iter().map(|&r| ts.times()[r]).collect();
    let values = ts.values().select_rows(&rows);
    TimeSeries::new(times, values, ts.names().to_vec())
}

/// Re-index `model` onto `slots` by label; labels not in the model are zero.
fn align(model: &SparseModel, slots: &[Term], rename: &[(String, String)]) -> SparseModel {
    let mut xi = DMatrix::zeros(slots.len(), model.n_targets());
    for (r, term) in model.terms.iter().enumerate() {
        let label = rename
            .iter()
            .find(|(from, _)| *from == term.label)
            .map(|(_, to)| to.as_str())
            .unwrap_or(term.label.as_str());
        if let Some(s) = slots.iter().position(|t| t.label == label) {
            xi.row_mut(s).copy_from(&model.xi.row(r));
        }
    }
    SparseModel {
        xi,
        terms: slots.to_vec(),
        targets: model.targets.clone(),
        variables: model.variables.clone(),
        lambda: model.lambda,
        iterations: model.iterations.clone(),
    }
}

/// Per-experiment state shared by every dual-uncertainty cell.
pub struct DualSetup {
    system: OdeSystem,
    /// Canonical terms over the augmented variable list, then the noise terms.
    full_terms: Vec<Term>,
    truth_xi: DMatrix<f64>,
    withheld: Vec<String>,
    base: TimeSeries,
}

pub fn dual_setup(cfg: &ResolvedConfig) -> Result<DualSetup> {
    let system = OdeSystem::new(cfg.system.expect("resolved"));
    let spec = system.canonical_library();
    let truth = true_model(&system, &spec)?;
    let withheld = withheld_terms(&system, cfg.n_missing.expect("resolved"))?;
    let base = dual_trajectory(&system, cfg.pipeline.samples)?;
    Ok(DualSetup {
        system,
        full_terms: truth.terms.clone(),
        truth_xi: truth.xi,
        withheld,
        base,
    })
}

/// Everything produced in one dual-uncertainty cell. Models are aligned to
/// the scoring slots.
#[derive(Debug, Clone)]
pub struct DualCell {
    pub baseline: SparseModel,
    pub augmented: SparseModel,
    pub truth: SparseModel,
    pub augmented_truth: SparseModel,
    pub matches: Vec<AtomMatch>,
    pub baseline_fdes: f64,
    pub augmented_fdes: f64,
}

pub fn dual_cell(cfg: &ResolvedConfig, setup: &DualSetup, trial: usize, li: usize) -> Result<DualCell> {
    let p = &cfg.pipeline;
    let cell = cfg.cell_seed(trial, li);
    let aug = augment_with_noise(&setup.base, &NoiseSpec::standard(p.noise_count, seed::derive(cell, &[0])))?;
    let (aug, xdot_all) = differentiate(&aug, p)?;
    let names = aug.names().to_vec();
    let dim = setup.system.names().len();
    let xdot = xdot_all.select(&names[..dim])?;

    let mut slots: Vec<Term> = setup.full_terms.iter().map(|t| lift(t, &names)).collect();
    for z in dim..names.len() {
        slots.push(Term::monomial_of(&[(z, 1)], &names));
    }
    let full = FunctionLibrary::from_terms(&aug, slots.clone())?;
    let known = full.without(&setup.withheld);
    let opts = p.fit_options(cfg.lambdas[li]);

    let mut truth_xi = DMatrix::zeros(slots.len(), dim);
    truth_xi.rows_mut(0, setup.truth_xi.nrows()).copy_from(&setup.truth_xi);
    let truth = SparseModel {
        xi: truth_xi,
        terms: slots.clone(),
        targets: names[..dim].to_vec(),
        variables: names.clone(),
        lambda: 0.0,
        iterations: Vec::new(),
    };

    let baseline = fit_sindy(&xdot, &known, &opts)?;
    let baseline = align(&baseline, &slots, &[]);
    let base_score = fdes(&baseline, &truth)?;

    let n = setup.withheld.len();
    let dl = DictLearnConfig {
        max_iter: p.atom_iterations,
        threshold: p.atom_threshold,
        seed: seed::derive(cell, &[2]),
        ..DictLearnConfig::default()
    };
    let basis = learn_basis_with_states(&xdot, &known, aug.values(), n, p.atom_sparsity, &dl)?;
    let atom_labels: Vec<String> = (0..n).map(|a| format!("N{}", a + 1)).collect();
    let extra = atom_labels
        .iter()
        .enumerate()
        .map(|(a, label)| ExtraColumn::atom(label.clone(), basis.atom(a)))
        .collect();
    let theta = extend_library(&known, extra)?;
    // Atoms belong to no variable; screening with them would let an atom stand
    // in for the variables it was built from.
    let mask = screen_variables(&aug, &xdot, &known, &p.screening(seed::derive(cell, &[1])))?;
    let treated = fit_augmented(&xdot, &theta, &mask, &opts)?;

    let withheld_cols: Vec<usize> = setup
        .withheld
        .iter()
        .map(|l| full.position(l).expect("withheld term in library"))
        .collect();
    let matches = match_atoms_outside(&basis.atoms, &full.matrix.select_columns(&withheld_cols), &known.matrix);
    let mut rename = Vec::new();
    let mut aug_slots = slots.clone();
    let mut aug_truth = truth.clone();
    for m in &matches {
        if m.corr >= p.match_threshold {
            rename.push((atom_labels[m.atom].clone(), setup.withheld[m.withheld].clone()));
        }
    }
    for label in &atom_labels {
        if !rename.iter().any(|(from, _)| from == label) {
            // An atom that stands for no withheld term is a slot whose true
            // coefficient is zero.
            aug_slots.push(Term::learned_atom(label.clone()));
        }
    }
    let extra_rows = aug_slots.len() - slots.len();
    if extra_rows > 0 {
        aug_truth.xi = aug_truth.xi.clone().resize_vertically(aug_slots.len(), 0.0);
        aug_truth.terms = aug_slots.clone();
    }
    let augmented = align(&treated, &aug_slots, &rename);
    let aug_score = fdes(&augmented, &aug_truth)?;
    Ok(DualCell {
        baseline,
        augmented,
        truth,
        augmented_truth: aug_truth,
        matches,
        baseline_fdes: base_score,
        augmented_fdes: aug_score,
    })
}

/// Baseline SINDy on `F u Z` against dictionary completion plus screening
/// on `F u N u Z`; returns (baseline, augmented) FDES reports.
pub fn run_dual_uncertainty(cfg: &ExperimentConfig) -> Result<(MetricReport, MetricReport)> {
    let cfg = cfg.resolve()?;
    if cfg.experiment != ExperimentKind::DualUncertainty {
        return Err(Error::Config("not a dual-uncertainty experiment".into()));
    }
    let setup = dual_setup(&cfg)?;
    let values = cells(&cfg)
        .par_iter()
        .map(|&(t, i)| dual_cell(&cfg, &setup, t, i).map(|c| (c.baseline_fdes, c.augmented_fdes)))
        .collect::<Result<Vec<_>>>()?;
    let (base, aug) = grid_from(&cfg, &values);
    Ok((
        aggregate(Metric::Fdes, &cfg.lambdas, &base)?,
        aggregate(Metric::Fdes, &cfg.lambdas, &aug)?,
    ))
}

/// Dispatch on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(MetricReport, MetricReport)> {
    match cfg.experiment {
        ExperimentKind::DualUncertainty => run_dual_uncertainty(cfg),
        _ => run_variable_uncertainty(cfg),
    }
}

// ---------------------------------------------------------------------------
// reports

fn fmt3(v: f64) -> String {
    strip_zero(&format!("{v:.3}"))
}

/// Fixed-width table: one row per trial, one column per lambda, and an
/// `Average` footer of `mean ± (std)`.
pub fn render_table(report: &MetricReport) -> String {
    let cells: Vec<Vec<String>> = report
        .per_trial
        .iter()
        .map(|r| r.iter().map(|&v| fmt3(v)).collect())
        .collect();
    let footer: Vec<String> = report
        .mean
        .iter()
        .zip(&report.std)
        .map(|(m, s)| format!("{} ± ({})", fmt3(*m), fmt3(*s)))
        .collect();
    let header: Vec<String> = report.lambdas.iter().map(|&l| format!("λ = {}", format_lambda(l))).collect();
    let width = header
        .iter()
        .chain(&footer)
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(0);
    let first = report.n_trials().to_string().len().max("Average".len()).max("Trial".len());
    let mut out = String::new();
    let mut line = |label: &str, vals: &[String]| {
        let _ = write!(out, "{label:<first$}");
        for v in vals {
            let _ = write!(out, " | {v:>width$}");
        }
        out.push('\n');
    };
    line(&report.metric.to_string().to_uppercase(), &header);
    for (t, row) in cells.iter().enumerate() {
        line(&format!("{}", t + 1), row);
    }
    line("Average", &footer);
    out
}

fn parse_num(s: &str) -> Result<f64> {
    let s = s.trim();
    let fixed = if let Some(rest) = s.strip_prefix('.') {
        format!("0.{rest}")
    } else if let Some(rest) = s.strip_prefix("-.") {
        format!("-0.{rest}")
    } else {
        s.to_string()
    };
    fixed
        .parse()
        .map_err(|_| Error::Parse { row: 0, message: format!("bad number {s:?}") })
}

/// Inverse of [`render_table`] at the rendered precision.
pub fn parse_table(text: &str) -> Result<MetricReport> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| Error::Parse { row: 0, message: "empty table".into() })?;
    let mut parts = head.split(" | ");
    let metric = match parts.next().map(str::trim) {
        Some("FPIV") => Metric::Fpiv,
        Some("FDES") => Metric::Fdes,
        other => {
            return Err(Error::Parse { row: 0, message: format!("unknown metric {other:?}") })
        }
    };
    let lambdas = parts
        .map(|p| parse_num(p.trim().trim_start_matches("λ =")))
        .collect::<Result<Vec<_>>>()?;
    let mut per_trial = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (row, line) in lines.enumerate() {
        let mut parts = line.split(" | ");
        let label = parts.next().unwrap_or("").trim();
        let vals: Vec<&str> = parts.map(str::trim).collect();
        if vals.len() != lambdas.len() {
            return Err(Error::Parse { row: row + 1, message: "ragged row".into() });
        }
        if label == "Average" {
            for v in vals {
                let (m, s) = v
                    .split_once(" ± (")
                    .ok_or_else(|| Error::Parse { row: row + 1, message: format!("bad footer {v:?}") })?;
                mean.push(parse_num(m)?);
                std.push(parse_num(s.trim_end_matches(')'))?);
            }
        } else {
            per_trial.push(vals.into_iter().map(parse_num).collect::<Result<Vec<_>>>()?);
        }
    }
    Ok(MetricReport { metric, lambdas, per_trial, mean, std })
}

/// Split a combined `report.csv` back into its per-method reports.
pub fn read_report_csv(metric: Metric, text: &str) -> Result<Vec<(String, MetricReport)>> {
    let mut lines = text.lines();
    let head = lines
        .next()
        .and_then(|h| h.strip_prefix("method,"))
        .ok_or_else(|| Error::Parse { row: 0, message: "missing method column".into() })?;
    let mut order: Vec<String> = Vec::new();
    let mut bodies: Vec<String> = Vec::new();
    for line in lines {
        let (method, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse { row: 0, message: format!("bad line {line:?}") })?;
        let i = match order.iter().position(|m| m == method) {
            Some(i) => i,
            None => {
                order.push(method.to_string());
                bodies.push(format!("{head}\n"));
                order.len() - 1
            }
        };
        bodies[i].push_str(rest);
        bodies[i].push('\n');
    }
    order
        .into_iter()
        .zip(bodies)
        .map(|(m, b)| Ok((m, MetricReport::from_csv(metric, &b)?)))
        .collect()
}

/// Write `report.csv`, `report.txt` and `manifest.json` into `dir`.
pub fn write_outputs(
    dir: impl AsRef<Path>,
    cfg: &ExperimentConfig,
    baseline: &MetricReport,
    augmented: &MetricReport,
) -> Result<()> {
    let dir = dir.as_ref();
    let resolved = cfg.resolve()?;
    std::fs::create_dir_all(dir)?;

    let mut csv = String::from("method,");
    let base_csv = baseline.to_csv();
    let aug_csv = augmented.to_csv();
    let mut base_lines = base_csv.lines();
    csv.push_str(base_lines.next().unwrap_or(""));
    csv.push('\n');
    for l in base_lines {
        let _ = writeln!(csv, "sindy,{l}");
    }
    for l in aug_csv.lines().skip(1) {
        let _ = writeln!(csv, "augmented,{l}");
    }
    std::fs::write(dir.join("report.csv"), csv)?;

    let txt = format!(
        "SINDy\n{}\nAugmented SINDy\n{}",
        render_table(baseline),
        render_table(augmented)
    );
    std::fs::write(dir.join("report.txt"), txt)?;

    let seeds: Vec<serde_json::Value> = cells(&resolved)
        .into_iter()
        .map(|(t, i)| {
            serde_json::json!({
                "trial": t + 1,
                "lambda": resolved.lambdas[i],
                "seed": resolved.cell_seed(t, i),
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "config": resolved,
        "cells": seeds,
        "metric": baseline.metric,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
