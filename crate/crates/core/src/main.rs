use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use samplex::data::{gen_dataset, sample_truth};
use samplex::lower::{build_packing_with, fano_lower_bound, free_positions, CodeBudget, FreeSet, PACKING_SCALE};
use samplex::model::{ModelKind, ModelSpec};
use samplex::recheck::recheck;
use samplex::sweep::{figure_config, reproduce_figure_with, run_sweep, FigureId, SweepConfig};
use samplex::ExecMode;

#[derive(Parser)]
#[command(name = "samplex", version, about = "Sample-complexity experiments for structured linear networks")]
struct Cli {
    /// Run every task on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a JSON config and write its CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path; without either, CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a figure preset and write `<id>.csv` and `<id>.svg`.
    Figure {
        #[arg(long)]
        id: FigureId,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fewer trials than the preset's 20.
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated sample sizes replacing the preset grid.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Build a packing set and print its Fano lower bound as JSON.
    Packing {
        #[command(flatten)]
        shape: Shape,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Absolute perturbation size; defaults to c·σ·√(|I|/n).
        #[arg(long)]
        eps_scale: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Free coordinate set for weighted pooling.
        #[arg(long, default_value = "filter")]
        which: String,
        #[arg(long)]
        max_words: Option<usize>,
    },
    /// Run the invariant suite on the shapes of a sweep config.
    Recheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a generated dataset as CSV.
    Dataset {
        #[command(flatten)]
        shape: Shape,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Shape {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
}

impl Shape {
    fn spec(&self) -> samplex::Result<ModelSpec> {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| samplex::Error::Argument(format!("--{name} is required for {} models", self.model)))
        };
        match self.model {
            ModelKind::Ca => ModelSpec::ca(self.d, need(self.m, "m")?, need(self.s, "s")?),
            ModelKind::Cw => ModelSpec::cw(self.d, need(self.m, "m")?, need(self.s, "s")?),
            ModelKind::Rnn => ModelSpec::rnn(self.d, need(self.r, "r")?, need(self.l, "L")?),
            ModelKind::Fnn => ModelSpec::fnn(self.d, self.l.unwrap_or(1)),
        }
    }
}

#[derive(Serialize)]
struct PackingReport {
    spec: ModelSpec,
    free_set: FreeSet,
    free_dim: usize,
    #[serde(rename = "M")]
    m: usize,
    code_min_distance: usize,
    eps_scale: f64,
    n: f64,
    sigma: f64,
    rho_min: f64,
    rho_avg: f64,
    fano_bound: f64,
}

fn run(cli: Cli) -> samplex::Result<bool> {
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match cli.command {
        Command::Sweep { config, out } => {
            let mut cfg = SweepConfig::load(&config)?;
            if out.is_some() {
                cfg.output = out;
            }
            let result = run_sweep(&cfg, mode)?;
            if cfg.output.is_none() {
                let stdout = std::io::stdout();
                result.write_csv(stdout.lock())?;
            }
        }
        Command::Figure { id, seed, out, trials, n } => {
            let mut cfg = figure_config(id, seed);
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(n) = n {
                cfg.n = n;
            }
            let fig = reproduce_figure_with(id, &cfg, &out, mode)?;
            eprintln!("wrote {} and {}", fig.csv_path.display(), fig.svg_path.display());
        }
        Command::Packing {
            shape,
            n,
            sigma,
            eps_scale,
            seed,
            which,
            max_words,
        } => {
            let spec = shape.spec()?;
            let set = match which.as_str() {
                "filter" => FreeSet::Filter,
                "pooling" => FreeSet::Pooling,
                other => {
                    return Err(samplex::Error::Argument(format!(
                        "--which must be filter or pooling, got {other:?}"
                    )))
                }
            };
            let free_dim = free_positions(&spec, set).len();
            let eps = eps_scale.unwrap_or(PACKING_SCALE * sigma * (free_dim as f64 / n).sqrt());
            let mut budget = CodeBudget::default();
            if let Some(w) = max_words {
                budget.max_words = w;
            }
            let packing = build_packing_with(&spec, set, eps, seed, budget)?;
            let report = PackingReport {
                spec,
                free_set: set,
                free_dim,
                m: packing.m(),
                code_min_distance: packing.code_min_distance,
                eps_scale: eps,
                n,
                sigma,
                rho_min: packing.rho_min,
                rho_avg: packing.rho_avg,
                fano_bound: fano_lower_bound(&packing, n, sigma)?,
            };
            writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Recheck { config } => {
            let cfg = SweepConfig::load(&config)?;
            let report = recheck(&cfg)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for c in &report.checks {
                writeln!(out, "{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} checks, {failed} failed", report.checks.len())?;
            return Ok(failed == 0);
        }
        Command::Dataset {
            shape,
            n,
            sigma,
            seed,
            out,
        } => {
            let spec = shape.spec()?;
            let truth = sample_truth(&spec, seed);
            let ds = gen_dataset(&spec, &truth, n, sigma, seed)?;
            match out {
                Some(path) => {
                    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
                    ds.write_csv(file)?;
                }
                None => ds.write_csv(std::io::stdout().lock())?,
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(samplex::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
