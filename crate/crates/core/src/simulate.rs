//! Benchmark dynamical systems and a fixed-step RK4 integrator.

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{LibrarySpec, Term};
use crate::stls::SparseModel;
use crate::timeseries::TimeSeries;

/// States whose magnitude exceeds this abort the integration.
pub const OVERFLOW_GUARD: f64 = 1e12;

pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], dx: &mut [f64]);
}

/// Adapter for ad-hoc fields given as closures.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (self.f)(x, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz,
    Mrw,
    FitzhughNagumo,
    Pendulum,
    Sir,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::Lorenz,
        SystemKind::Mrw,
        SystemKind::FitzhughNagumo,
        SystemKind::Pendulum,
        SystemKind::Sir,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Mrw => "mrw",
            SystemKind::FitzhughNagumo => "fitzhugh-nagumo",
            SystemKind::Pendulum => "pendulum",
            SystemKind::Sir => "sir",
        }
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system {s:?}")))
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the five benchmark systems with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSystem {
    pub kind: SystemKind,
    pub params: BTreeMap<String, f64>,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl OdeSystem {
    /// Canonical textbook parameters.
    pub fn new(kind: SystemKind) -> Self {
        let params = match kind {
            SystemKind::Lorenz => params(&[("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)]),
            SystemKind::Mrw => params(&[
                ("s_k", 0.3),
                ("s_h", 0.2),
                ("n_g_delta", 0.1),
                ("alpha", 1.0 / 3.0),
                ("beta", 1.0 / 3.0),
            ]),
            SystemKind::FitzhughNagumo => {
                params(&[("a", 0.7), ("b", 0.8), ("tau", 12.5), ("i_ext", 0.5)])
            }
            SystemKind::Pendulum => params(&[("g_over_l", 9.81), ("damping", 0.0)]),
            SystemKind::Sir => params(&[("beta", 0.3), ("gamma", 0.1)]),
        };
        Self { kind, params }
    }

    pub fn p(&self, key: &str) -> f64 {
        self.params[key]
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn names(&self) -> Vec<String> {
        let n: &[&str] = match self.kind {
            SystemKind::Lorenz => &["x", "y", "z"],
            SystemKind::Mrw => &["k", "h"],
            SystemKind::FitzhughNagumo => &["v", "w"],
            SystemKind::Pendulum => &["theta", "omega"],
            SystemKind::Sir => &["S", "I", "R"],
        };
        n.iter().map(|s| s.to_string()).collect()
    }

    /// Library that spans this system's right-hand side.
    pub fn canonical_library(&self) -> LibrarySpec {
        match self.kind {
            SystemKind::Lorenz => LibrarySpec::polynomial(2),
            SystemKind::Mrw => LibrarySpec {
                custom: vec![vec![self.p("alpha"), self.p("beta")]],
                ..LibrarySpec::polynomial(2)
            },
            SystemKind::FitzhughNagumo => LibrarySpec::polynomial(3),
            SystemKind::Pendulum => LibrarySpec {
                trig_vars: vec![0],
                ..LibrarySpec::polynomial(2)
            },
            // S + I + R is conserved, so the constant and the squares would be
            // linearly dependent on the remaining columns.
            SystemKind::Sir => LibrarySpec {
                include_constant: false,
                interaction_only: true,
                ..LibrarySpec::polynomial(2)
            },
        }
    }

    /// Default integration setup producing a non-degenerate trajectory.
    pub fn default_sim(&self) -> SimConfig {
        let (x0, t_end, dt) = match self.kind {
            SystemKind::Lorenz => (vec![-8.0, 7.0, 27.0], 8.0, 0.002),
            SystemKind::Mrw => (vec![2.0, 30.0], 30.0, 0.05),
            SystemKind::FitzhughNagumo => (vec![-1.0, 1.0], 200.0, 0.05),
            SystemKind::Pendulum => (vec![2.0, 0.0], 10.0, 0.005),
            SystemKind::Sir => (vec![0.99, 0.01, 0.0], 150.0, 0.05),
        };
        SimConfig {
            x0,
            t_end,
            dt,
            method: Integrator::Rk4,
        }
    }

    /// Symbolic right-hand side as `(equation, term, coefficient)` triples.
    pub fn symbolic_terms(&self) -> Vec<(usize, Term, f64)> {
        let names = self.names();
        let mono = |powers: &[(usize, u32)]| Term::monomial_of(powers, &names);
        match self.kind {
            SystemKind::Lorenz => {
                let (s, r, b) = (self.p("sigma"), self.p("rho"), self.p("beta"));
                vec![
                    (0, mono(&[(0, 1)]), -s),
                    (0, mono(&[(1, 1)]), s),
                    (1, mono(&[(0, 1)]), r),
                    (1, mono(&[(1, 1)]), -1.0),
                    (1, mono(&[(0, 1), (2, 1)]), -1.0),
                    (2, mono(&[(2, 1)]), -b),
                    (2, mono(&[(0, 1), (1, 1)]), 1.0),
                ]
            }
            SystemKind::Mrw => {
                let cobb = Term::custom(vec![self.p("alpha"), self.p("beta")], &names);
                let d = self.p("n_g_delta");
                vec![
                    (0, cobb.clone(), self.p("s_k")),
                    (0, mono(&[(0, 1)]), -d),
                    (1, cobb, self.p("s_h")),
                    (1, mono(&[(1, 1)]), -d),
                ]
            }
            SystemKind::FitzhughNagumo => {
                let (a, b, tau, i) = (self.p("a"), self.p("b"), self.p("tau"), self.p("i_ext"));
                vec![
                    (0, Term::constant(), i),
                    (0, mono(&[(0, 1)]), 1.0),
                    (0, mono(&[(0, 3)]), -1.0 / 3.0),
                    (0, mono(&[(1, 1)]), -1.0),
                    (1, Term::constant(), a / tau),
                    (1, mono(&[(0, 1)]), 1.0 / tau),
                    (1, mono(&[(1, 1)]), -b / tau),
                ]
            }
            SystemKind::Pendulum => {
                let mut t = vec![
                    (0, mono(&[(1, 1)]), 1.0),
                    (1, Term::trig(crate::library::TrigFn::Sin, 0, &names), -self.p("g_over_l")),
                ];
                let damping = self.p("damping");
                if damping != 0.0 {
                    t.push((1, mono(&[(1, 1)]), -damping));
                }
                t
            }
            SystemKind::Sir => {
                let (b, g) = (self.p("beta"), self.p("gamma"));
                vec![
                    (0, mono(&[(0, 1), (1, 1)]), -b),
                    (1, mono(&[(0, 1), (1, 1)]), b),
                    (1, mono(&[(1, 1)]), -g),
                    (2, mono(&[(1, 1)]), g),
                ]
            }
        }
    }
}

impl VectorField for OdeSystem {
    fn dim(&self) -> usize {
        match self.kind {
            SystemKind::Lorenz | SystemKind::Sir => 3,
            _ => 2,
        }
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        match self.kind {
            SystemKind::Lorenz => {
                let (s, r, b) = (self.p("sigma"), self.p("rho"), self.p("beta"));
                dx[0] = s * (x[1] - x[0]);
                dx[1] = x[0] * (r - x[2]) - x[1];
                dx[2] = x[0] * x[1] - b * x[2];
            }
            SystemKind::Mrw => {
                let y = x[0].powf(self.p("alpha")) * x[1].powf(self.p("beta"));
                let d = self.p("n_g_delta");
                dx[0] = self.p("s_k") * y - d * x[0];
                dx[1] = self.p("s_h") * y - d * x[1];
            }
            SystemKind::FitzhughNagumo => {
                let (a, b, tau, i) = (self.p("a"), self.p("b"), self.p("tau"), self.p("i_ext"));
                dx[0] = x[0] - x[0].powi(3) / 3.0 - x[1] + i;
                dx[1] = (x[0] + a - b * x[1]) / tau;
            }
            SystemKind::Pendulum => {
                dx[0] = x[1];
                dx[1] = -self.p("g_over_l") * x[0].sin() - self.p("damping") * x[1];
            }
            SystemKind::Sir => {
                let (b, g) = (self.p("beta"), self.p("gamma"));
                let infection = b * x[0] * x[1];
                dx[0] = -infection;
                dx[1] = infection - g * x[1];
                dx[2] = g * x[1];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub method: Integrator,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.dt) {
            return Err(Error::Parameter(format!(
                "t_end ({}) must exceed dt ({})",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        // Guard against t_end/dt landing a hair below an integer.
        ((self.t_end / self.dt) * (1.0 + 1e-12)).floor() as usize + 1
    }
}

/// Fixed-step classical Runge-Kutta; samples at `t = i * dt`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    names: Vec<String>,
    cfg: &SimConfig,
) -> Result<TimeSeries> {
    cfg.validate()?;
    let n = field.dim();
    if cfg.x0.len() != n {
        return Err(Error::Shape(format!(
            "initial state has {} entries, system dimension is {n}",
            cfg.x0.len()
        )));
    }
    let m = cfg.n_samples();
    let h = cfg.dt;
    let mut out = DMatrix::zeros(m, n);
    let mut x = cfg.x0.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..m {
        if x.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
            return Err(Error::BlowUp {
                step,
                guard: OVERFLOW_GUARD,
            });
        }
        for j in 0..n {
            out[(step, j)] = x[j];
        }
        if step + 1 == m {
            break;
        }
        field.eval(&x, &mut k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        field.eval(&tmp, &mut k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        field.eval(&tmp, &mut k3);
        for j in 0..n {
            tmp[j] = x[j] + h * k3[j];
        }
        field.eval(&tmp, &mut k4);
        for j in 0..n {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    TimeSeries::uniform(0.0, h, out, names)
}

pub fn simulate(system: &OdeSystem, cfg: &SimConfig) -> Result<TimeSeries> {
    integrate(system, system.names(), cfg)
}

/// Ground-truth coefficient matrix of `system` over the library `spec`.
pub fn true_model(system: &OdeSystem, spec: &LibrarySpec) -> Result<SparseModel> {
    let names = system.names();
    let terms = spec.terms(&names)?;
    if terms.is_empty() {
        return Err(Error::Coverage("library has no terms".into()));
    }
    let k = system.dim();
    let mut xi = DMatrix::zeros(terms.len(), k);
    for (eq, term, coef) in system.symbolic_terms() {
        let row = terms.iter().position(|t| t.label == term.label).ok_or_else(|| {
            Error::Coverage(format!("{} term {:?} is not in the library", system.kind, term.label))
        })?;
        xi[(row, eq)] += coef;
    }
    Ok(SparseModel {
        xi,
        terms,
        targets: names.clone(),
        variables: names,
        lambda: 0.0,
        iterations: vec![0; k],
    })
}
