//! Variable- and term-selection scores: FPIV, FDES and the SELECT map.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stls::SparseModel;

/// Elementwise nonzero indicator (1.0 / 0.0).
pub fn select(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x != 0.0 { 1.0 } else { 0.0 }).collect()
}

/// Variables whose appearance in an equation counts as an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCausal {
    pub targets: Vec<String>,
    pub incorrect_sets: Vec<BTreeSet<String>>,
}

impl GroundTruthCausal {
    /// Build from the variables each target *may* depend on; everything else
    /// in `variables` is incorrect for that target.
    pub fn from_allowed(variables: &[String], allowed: &[(&str, &[&str])]) -> Result<Self> {
        let mut targets = Vec::new();
        let mut incorrect_sets = Vec::new();
        for (target, ok) in allowed {
            for v in ok.iter() {
                if !variables.iter().any(|x| x == v) {
                    return Err(Error::Alignment(format!("unknown variable {v:?}")));
                }
            }
            targets.push(target.to_string());
            incorrect_sets.push(
                variables
                    .iter()
                    .filter(|v| !ok.contains(&v.as_str()))
                    .cloned()
                    .collect(),
            );
        }
        Ok(Self { targets, incorrect_sets })
    }

    /// Real variables may depend on the listed real variables; every noise
    /// variable's true dynamics are `xdot = 0`, so any variable in its
    /// equation is incorrect.
    pub fn with_noise(
        variables: &[String],
        real: &[(&str, &[&str])],
        noise: &[String],
    ) -> Result<Self> {
        let mut allowed: Vec<(&str, &[&str])> = real.to_vec();
        for n in noise {
            allowed.push((n.as_str(), &[]));
        }
        Self::from_allowed(variables, &allowed)
    }

    pub fn denominator(&self) -> usize {
        self.incorrect_sets.iter().map(BTreeSet::len).sum()
    }
}

/// Fraction of possible incorrect variables that appear in the model.
pub fn fpiv(model: &SparseModel, truth: &GroundTruthCausal) -> Result<f64> {
    let denom = truth.denominator();
    if denom == 0 {
        return Err(Error::UndefinedMetric("no variable can be incorrect".into()));
    }
    let mut wrong = 0usize;
    for (t, incorrect) in truth.targets.iter().zip(&truth.incorrect_sets) {
        let eq = model
            .targets
            .iter()
            .position(|m| m == t)
            .ok_or_else(|| Error::Alignment(format!("model has no equation for {t:?}")))?;
        wrong += model
            .variables_in(eq)
            .into_iter()
            .filter(|&v| incorrect.contains(&model.variables[v]))
            .count();
    }
    Ok(wrong as f64 / denom as f64)
}

fn check_alignment(model: &SparseModel, truth: &SparseModel) -> Result<()> {
    if model.targets != truth.targets {
        return Err(Error::Alignment(format!(
            "targets differ: {:?} vs {:?}",
            model.targets, truth.targets
        )));
    }
    if model.terms.len() != truth.terms.len()
        || model.terms.iter().zip(&truth.terms).any(|(a, b)| a.label != b.label)
    {
        return Err(Error::Alignment("term lists differ".into()));
    }
    Ok(())
}

/// Total Hamming distance between the selected and the true supports.
pub fn support_mismatches(model: &SparseModel, truth: &SparseModel) -> Result<usize> {
    check_alignment(model, truth)?;
    let mut total = 0usize;
    for eq in 0..model.n_targets() {
        let a = select(model.xi.column(eq).as_slice());
        let b = select(truth.xi.column(eq).as_slice());
        total += a.iter().zip(&b).filter(|(x, y)| x != y).count();
    }
    Ok(total)
}

/// Fraction of dictionary-slot decisions that match the truth:
/// `1 - sum_i ||xi_i - SELECT(xi'_i)||_1 / (k L)`.
pub fn fdes(model: &SparseModel, truth: &SparseModel) -> Result<f64> {
    let mismatches = support_mismatches(model, truth)?;
    let slots = model.n_targets() * model.n_terms();
    if slots == 0 {
        return Err(Error::UndefinedMetric("empty dictionary".into()));
    }
    Ok(1.0 - mismatches as f64 / slots as f64)
}

/// The unnormalized form `sum_i ||xi_i - SELECT(xi'_i)||_1 / k`.
pub fn fdes_literal(model: &SparseModel, truth: &SparseModel) -> Result<f64> {
    let mismatches = support_mismatches(model, truth)?;
    if model.n_targets() == 0 {
        return Err(Error::UndefinedMetric("no equations".into()));
    }
    Ok(mismatches as f64 / model.n_targets() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Fpiv,
    Fdes,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Fpiv => "fpiv",
            Metric::Fdes => "fdes",
        })
    }
}

/// Trial x lambda grid of scores with per-lambda mean and sample std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub lambdas: Vec<f64>,
    /// `per_trial[trial][lambda]`.
    pub per_trial: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MetricReport {
    pub fn n_trials(&self) -> usize {
        self.per_trial.len()
    }

    /// Mean over every cell.
    pub fn grand_mean(&self) -> f64 {
        let n = self.per_trial.iter().map(Vec::len).sum::<usize>();
        self.per_trial.iter().flatten().sum::<f64>() / n as f64
    }

    /// Wide CSV: `trial,<lambda>...` then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial");
        for l in &self.lambdas {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        let row = |label: String, vals: &[f64]| {
            let mut s = label;
            for v in vals {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
            s
        };
        for (t, vals) in self.per_trial.iter().enumerate() {
            out.push_str(&row((t + 1).to_string(), vals));
        }
        out.push_str(&row("mean".into(), &self.mean));
        out.push_str(&row("std".into(), &self.std));
        out
    }

    pub fn from_csv(metric: Metric, text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        let num = |row: usize, s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("bad number {s:?}"),
            })
        };
        let lambdas = header
            .iter()
            .skip(1)
            .map(|s| num(0, s))
            .collect::<Result<Vec<_>>>()?;
        let mut grid = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if matches!(rec.get(0), Some("mean") | Some("std")) {
                continue;
            }
            grid.push(rec.iter().skip(1).map(|s| num(row, s)).collect::<Result<Vec<_>>>()?);
        }
        aggregate(metric, &lambdas, &grid)
    }
}

/// Per-lambda mean and sample standard deviation (`n - 1`; zero for a single
/// trial).
pub fn aggregate(metric: Metric, lambdas: &[f64], grid: &[Vec<f64>]) -> Result<MetricReport> {
    if grid.is_empty() || lambdas.is_empty() {
        return Err(Error::Shape("empty metric grid".into()));
    }
    if grid.iter().any(|r| r.len() != lambdas.len()) {
        return Err(Error::Shape("ragged metric grid".into()));
    }
    let n = grid.len();
    let mut mean = Vec::with_capacity(lambdas.len());
    let mut std = Vec::with_capacity(lambdas.len());
    for c in 0..lambdas.len() {
        let col: Vec<f64> = grid.iter().map(|r| r[c]).collect();
        let mu = col.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        mean.push(mu);
        std.push(sd);
    }
    Ok(MetricReport {
        metric,
        lambdas: lambdas.to_vec(),
        per_trial: grid.to_vec(),
        mean,
        std,
    })
}
