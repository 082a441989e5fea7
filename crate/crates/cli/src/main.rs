use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sindy_core::causal::Correction;
use sindy_core::harness::{self, ExperimentConfig, ExperimentKind};
use sindy_core::metrics::Metric;
use sindy_core::simulate::{self, OdeSystem, SystemKind};
use sindy_core::stls::{FitOptions, Normalization, Solver};
use sindy_core::timeseries::NoiseMode;
use sindy_core::{
    augment_with_noise, fit_augmented, fit_sindy, learn_basis, load_csv, match_atoms_outside, save_csv,
    screen_variables, CsvSchema, DictLearnConfig, DiffMethod, LibrarySpec, NoiseSpec,
    ScreeningConfig, TimeSeries,
};

#[derive(Parser)]
#[command(name = "sindy", version, about = "Sparse identification of dynamics with variable screening")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct DataArgs {
    /// CSV with the time in the first column.
    #[arg(long)]
    data: PathBuf,
    /// Polynomial degree of the library.
    #[arg(long, default_value_t = 2)]
    degree: u32,
    /// central | smooth:<odd window>
    #[arg(long, default_value = "central")]
    diff: String,
    /// z-score every variable first.
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<TimeSeries> {
        let ts = load_csv(&self.data, &CsvSchema::all_columns(""))
            .with_context(|| format!("reading {}", self.data.display()))?;
        Ok(if self.standardize { ts.zscore() } else { ts })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one of the built-in systems and write a CSV.
    Simulate {
        #[arg(long)]
        system: SystemKind,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Append this many standard-normal noise columns.
        #[arg(long, default_value_t = 0)]
        noise: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a sparse model.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 25)]
        max_iter: usize,
        #[arg(long, default_value = "stls")]
        solver: String,
        #[arg(long, default_value = "columns")]
        normalization: String,
        /// Write the model as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Permutation screening of every (target, variable) pair, then a
    /// screened fit.
    Screen {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        /// Skip the multiple-testing correction.
        #[arg(long)]
        uncorrected: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn atoms that complete a library with some terms removed.
    LearnBasis {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated labels removed from the library before learning.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<String>,
        #[arg(long)]
        atoms: usize,
        #[arg(long, default_value_t = 2)]
        sparsity: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        /// Write the atoms as CSV columns.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment grid from a JSON config.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        experiment: Option<ExperimentKind>,
        #[arg(long)]
        noise_mode: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        system: Option<SystemKind>,
        #[arg(long)]
        n_missing: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Print the tables of a finished experiment.
    Report {
        /// `report.csv` or the directory containing it.
        input: PathBuf,
        #[arg(long)]
        metric: Option<String>,
    },
}

fn parse_normalization(s: &str) -> Result<Normalization> {
    Ok(match s {
        "none" => Normalization::None,
        "columns" => Normalization::Columns,
        "columns-and-target" => Normalization::ColumnsAndTarget,
        _ => bail!("unknown normalization {s:?}"),
    })
}

fn parse_metric(s: &str) -> Result<Metric> {
    Ok(match s {
        "fpiv" => Metric::Fpiv,
        "fdes" => Metric::Fdes,
        _ => bail!("unknown metric {s:?}"),
    })
}

fn parse_noise_mode(s: &str) -> Result<NoiseMode> {
    Ok(match s {
        "matched-moments" | "matched" => NoiseMode::MatchedMoments,
        "standard-normal" | "standard" => NoiseMode::StandardNormal,
        _ => bail!("unknown noise mode {s:?}"),
    })
}

fn simulate_cmd(
    system: SystemKind,
    t_end: Option<f64>,
    dt: Option<f64>,
    x0: Option<Vec<f64>>,
    noise: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let sys = OdeSystem::new(system);
    let mut cfg = sys.default_sim();
    if let Some(t) = t_end {
        cfg.t_end = t;
    }
    if let Some(d) = dt {
        cfg.dt = d;
    }
    if let Some(x) = x0 {
        cfg.x0 = x;
    }
    let mut ts = simulate::simulate(&sys, &cfg)?;
    if noise > 0 {
        ts = augment_with_noise(&ts, &NoiseSpec::standard(noise, seed))?;
    }
    save_csv(&ts, out)?;
    eprintln!("wrote {} samples of {} to {}", ts.n_samples(), system, out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { system, t_end, dt, x0, noise, seed, out } => {
            simulate_cmd(system, t_end, dt, x0, noise, seed, &out)
        }
        Cmd::Fit { data, lambda, max_iter, solver, normalization, out } => {
            let ts = data.load()?;
            let xdot = DiffMethod::parse(&data.diff)?.apply(&ts)?;
            let lib = LibrarySpec::polynomial(data.degree).build(&ts)?;
            let solver = match solver.as_str() {
                "stls" => Solver::Stls,
                "lasso" => Solver::Lasso,
                _ => bail!("unknown solver {solver:?}"),
            };
            let opts = FitOptions {
                lambda,
                max_iter,
                normalization: parse_normalization(&normalization)?,
                solver,
            };
            let model = fit_sindy(&xdot, &lib, &opts)?;
            print!("{}", model.render());
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&model.to_record())?)?;
            }
            Ok(())
        }
        Cmd::Screen { data, alpha, permutations, seed, lambda, uncorrected, out } => {
            let ts = data.load()?;
            let xdot = DiffMethod::parse(&data.diff)?.apply(&ts)?;
            let lib = LibrarySpec::polynomial(data.degree).build(&ts)?;
            let cfg = ScreeningConfig {
                alpha,
                n_permutations: permutations,
                seed,
                correction: if uncorrected { Correction::None } else { Correction::BenjaminiHochberg },
                screen_self: true,
            };
            let mask = screen_variables(&ts, &xdot, &lib, &cfg)?;
            for (t, target) in mask.targets.iter().enumerate() {
                let ps: Vec<String> = mask
                    .variables
                    .iter()
                    .zip(&mask.p_values[t])
                    .map(|(v, p)| format!("{v}:{p:.4}"))
                    .collect();
                println!("{target}: keep [{}]  p {}", mask.admissible_names(t).join(", "), ps.join(" "));
            }
            let model = fit_augmented(&xdot, &lib, &mask, &FitOptions::new(lambda))?;
            print!("{}", model.render());
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&mask)?)?;
            }
            Ok(())
        }
        Cmd::LearnBasis { data, drop, atoms, sparsity, seed, max_iter, out } => {
            let ts = data.load()?;
            let xdot = DiffMethod::parse(&data.diff)?.apply(&ts)?;
            let full = LibrarySpec::polynomial(data.degree).build(&ts)?;
            for label in &drop {
                if full.position(label).is_none() {
                    bail!("no library term {label:?}");
                }
            }
            let known = full.without(&drop);
            let cfg = DictLearnConfig { max_iter, seed, ..DictLearnConfig::default() };
            let basis = learn_basis(&xdot, &known, atoms, sparsity, &cfg)?;
            println!(
                "objective {:.6} -> {:.6} in {} iterations",
                basis.objective_trace[0],
                basis.objective_trace.last().copied().unwrap_or(f64::NAN),
                basis.objective_trace.len() - 1
            );
            if !drop.is_empty() {
                let cols: Vec<usize> = drop.iter().filter_map(|l| full.position(l)).collect();
                for m in match_atoms_outside(&basis.atoms, &full.matrix.select_columns(&cols), &known.matrix) {
                    println!("N{} ~ {} (|cos| {:.4})", m.atom + 1, drop[m.withheld], m.corr);
                }
            }
            if let Some(out) = out {
                let names = (1..=atoms).map(|a| format!("N{a}")).collect();
                let ts = TimeSeries::new(ts.times().to_vec(), basis.atoms.clone(), names)?;
                save_csv(&ts, &out)?;
            }
            Ok(())
        }
        Cmd::Experiment {
            config,
            out,
            experiment,
            noise_mode,
            trials,
            seed,
            system,
            n_missing,
            lambdas,
            data_dir,
        } => {
            let mut cfg = match (&config, experiment) {
                (Some(path), _) => ExperimentConfig::load(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                (None, Some(kind)) => ExperimentConfig::new(kind),
                (None, None) => bail!("need --config or --experiment"),
            };
            if let Some(kind) = experiment {
                cfg.experiment = kind;
            }
            if let Some(m) = noise_mode {
                cfg.noise_mode = Some(parse_noise_mode(&m)?);
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if system.is_some() {
                cfg.system = system;
            }
            if n_missing.is_some() {
                cfg.n_missing = n_missing;
            }
            if lambdas.is_some() {
                cfg.lambdas = lambdas;
            }
            if data_dir.is_some() {
                cfg.data_dir = data_dir;
            }
            let dir = out
                .or_else(|| cfg.output.clone())
                .context("need --out or an output entry in the config")?;
            let (base, aug) = harness::run_experiment(&cfg)?;
            harness::write_outputs(&dir, &cfg, &base, &aug)?;
            println!("SINDy\n{}", harness::render_table(&base));
            println!("Augmented SINDy\n{}", harness::render_table(&aug));
            Ok(())
        }
        Cmd::Report { input, metric } => {
            let csv = if input.is_dir() { input.join("report.csv") } else { input };
            let metric = match metric {
                Some(m) => parse_metric(&m)?,
                None => {
                    let manifest = csv.with_file_name("manifest.json");
                    let text = std::fs::read_to_string(&manifest)
                        .with_context(|| format!("no --metric and no {}", manifest.display()))?;
                    let v: serde_json::Value = serde_json::from_str(&text)?;
                    parse_metric(v["metric"].as_str().unwrap_or(""))?
                }
            };
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            for (method, report) in harness::read_report_csv(metric, &text)? {
                println!("{method}\n{}", harness::render_table(&report));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
