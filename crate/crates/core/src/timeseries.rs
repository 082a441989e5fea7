//! Sampled trajectories, CSV ingestion and noise-variable augmentation.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// An `m x n` state matrix sampled at strictly increasing instants.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if times.len() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} sample rows",
                times.len(),
                values.nrows()
            )));
        }
        if names.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "{} names for {} variables",
                names.len(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Data(format!("duplicate variable name {n:?}")));
            }
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite timestamp at row {i}")));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!(
                    "timestamps must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some((k, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let row = k % values.nrows().max(1);
            let col = k / values.nrows().max(1);
            return Err(Error::Data(format!(
                "non-finite value at row {row}, variable {}",
                names[col]
            )));
        }
        Ok(Self { times, values, names })
    }

    /// Uniformly sampled series starting at `t0`.
    pub fn uniform(t0: f64, dt: f64, values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let times = (0..values.nrows()).map(|i| t0 + dt * i as f64).collect();
        Self::new(times, values, names)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    /// Column-wise z-scoring with the sample standard deviation. Constant
    /// columns are only centered.
    pub fn zscore(&self) -> TimeSeries {
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            let (mean, std) = moments(col.as_slice());
            for v in col.iter_mut() {
                *v -= mean;
                if std > 0.0 {
                    *v /= std;
                }
            }
        }
        TimeSeries {
            times: self.times.clone(),
            values,
            names: self.names.clone(),
        }
    }

    /// Keep the named columns in the given order.
    pub fn select(&self, names: &[&str]) -> Result<TimeSeries> {
        let idx = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| Error::Schema(format!("unknown variable {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        TimeSeries::new(
            self.times.clone(),
            self.values.select_columns(&idx),
            names.iter().map(|s| s.to_string()).collect(),
        )
    }

    /// Append columns on the same time grid.
    pub fn with_columns(&self, extra: &DMatrix<f64>, names: Vec<String>) -> Result<TimeSeries> {
        if extra.nrows() != self.n_samples() {
            return Err(Error::Shape(format!(
                "extra columns have {} rows, series has {}",
                extra.nrows(),
                self.n_samples()
            )));
        }
        let n = self.n_vars();
        let mut values = self.values.clone().resize_horizontally(n + extra.ncols(), 0.0);
        values.columns_mut(n, extra.ncols()).copy_from(extra);
        let mut all = self.names.clone();
        all.extend(names);
        TimeSeries::new(self.times.clone(), values, all)
    }
}

/// Sample mean and sample standard deviation (`n - 1` denominator).
pub(crate) fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Which CSV columns to read. An empty `time_column` means the first column;
/// an empty `value_columns` means every column other than the time column,
/// in file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_column: String,
    #[serde(default)]
    pub value_columns: Vec<String>,
}

impl CsvSchema {
    pub fn new(time_column: &str, value_columns: &[&str]) -> Self {
        Self {
            time_column: time_column.to_string(),
            value_columns: value_columns.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn all_columns(time_column: &str) -> Self {
        Self::new(time_column, &[])
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let time_idx = if schema.time_column.is_empty() {
        if header.is_empty() {
            return Err(Error::Schema("empty header".into()));
        }
        0
    } else {
        find(&schema.time_column)?
    };
    let value_names: Vec<String> = if schema.value_columns.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_idx)
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        schema.value_columns.clone()
    };
    if value_names.is_empty() {
        return Err(Error::Schema("no value columns".into()));
    }
    let value_idx = value_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let parse = |row: usize, s: &str| -> Result<f64> {
        let v: f64 = s.parse().map_err(|_| Error::Parse {
            row,
            message: format!("non-numeric cell {s:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                row,
                message: format!("non-finite cell {s:?}"),
            });
        }
        Ok(v)
    };

    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| {
            rec.get(i).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field {i}"),
            })
        };
        let t = parse(row, cell(time_idx)?)?;
        let vals = value_idx
            .iter()
            .map(|&i| parse(row, cell(i)?))
            .collect::<Result<Vec<_>>>()?;
        rows.push((t, vals));
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "{} sample row(s); at least 2 are needed to differentiate",
            rows.len()
        )));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate timestamp {}", w[0].0)));
    }
    let m = rows.len();
    let n = value_names.len();
    let values = DMatrix::from_fn(m, n, |i, j| rows[i].1[j]);
    let times = rows.iter().map(|r| r.0).collect();
    TimeSeries::new(times, values, value_names)
}

pub fn save_csv(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(ts, file, "time")
}

/// Write with a header row; floats use the shortest round-trip representation.
pub fn write_csv<W: std::io::Write>(ts: &TimeSeries, writer: W, time_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![time_column.to_string()];
    header.extend(ts.names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..ts.n_samples() {
        let mut rec = vec![ts.times()[i].to_string()];
        rec.extend(ts.values().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Each synthetic column mirrors the sample mean and std of a source column.
    MatchedMoments,
    /// Each synthetic column is standard normal.
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    #[serde(default)]
    pub mirror_of: Vec<String>,
    pub count: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn matched(mirror_of: &[&str], seed: u64) -> Self {
        Self {
            mode: NoiseMode::MatchedMoments,
            mirror_of: mirror_of.iter().map(|s| s.to_string()).collect(),
            count: mirror_of.len(),
            seed,
        }
    }

    pub fn standard(count: usize, seed: u64) -> Self {
        Self {
            mode: NoiseMode::StandardNormal,
            mirror_of: Vec::new(),
            count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == NoiseMode::MatchedMoments && self.count != self.mirror_of.len() {
            return Err(Error::Spec(format!(
                "matched-moments needs one source per synthetic variable ({} vs {})",
                self.count,
                self.mirror_of.len()
            )));
        }
        Ok(())
    }
}

/// Append `spec.count` i.i.d. Gaussian columns named `x1, x2, ...` (skipping
/// names already in use). Original columns are left untouched.
pub fn augment_with_noise(ts: &TimeSeries, spec: &NoiseSpec) -> Result<TimeSeries> {
    spec.validate()?;
    if spec.count == 0 {
        return Ok(ts.clone());
    }
    let params: Vec<(f64, f64)> = match spec.mode {
        NoiseMode::StandardNormal => vec![(0.0, 1.0); spec.count],
        NoiseMode::MatchedMoments => spec
            .mirror_of
            .iter()
            .map(|name| {
                let j = ts
                    .index_of(name)
                    .ok_or_else(|| Error::Spec(format!("unknown mirror_of variable {name:?}")))?;
                Ok(moments(ts.values().column(j).as_slice()))
            })
            .collect::<Result<_>>()?,
    };

    let m = ts.n_samples();
    let mut rng = seed::rng(spec.seed);
    let mut extra = DMatrix::zeros(m, spec.count);
    for (c, &(mean, std)) in params.iter().enumerate() {
        if std > 0.0 {
            let dist = Normal::new(mean, std).map_err(|e| Error::Spec(e.to_string()))?;
            for i in 0..m {
                extra[(i, c)] = dist.sample(&mut rng);
            }
        } else {
            // Degenerate source: still consume draws so later columns are stable.
            for i in 0..m {
                let _: f64 = StandardNormal.sample(&mut rng);
                extra[(i, c)] = mean;
            }
        }
    }

    let mut names = Vec::with_capacity(spec.count);
    let mut k = 1;
    while names.len() < spec.count {
        let candidate = format!("x{k}");
        if ts.index_of(&candidate).is_none() {
            names.push(candidate);
        }
        k += 1;
    }
    ts.with_columns(&extra, names)
}
