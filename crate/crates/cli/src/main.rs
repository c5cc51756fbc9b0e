use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rkf_cli::experiments::{self, DEFAULT_RICCATI_STEPS};
use rkf_cli::table::{format_sig, Cell};
use rkf_cli::{bundled_config, load_config, write_table, ExperimentConfig, Figure, Table};

#[derive(Parser)]
#[command(version, about = "Robust Kalman filter experiments", long_about = None)]
struct Cli {
    /// Experiment configuration (JSON); `reproduce` defaults to the bundled benchmark
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and SVG files
    #[arg(long, global = true, env = "RKF_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Monte Carlo seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo sampling
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-step covariance, rank and theta diagnostics of every filter
    Filter,
    /// Error variance of every filter under the least favorable model
    Adversary {
        /// Tolerance of the adversary, overriding `adversary_c`
        #[arg(long)]
        c: Option<f64>,
    },
    /// Error variance of every filter under the nominal model
    Evaluate,
    /// Fixed point of the robust Riccati iteration for each tolerance
    Converge,
    /// Certified upper bound on the tolerance
    Cmax {
        /// Window length N (default: state dimension)
        #[arg(long)]
        window: Option<usize>,
        /// Riccati steps q behind P_bar
        #[arg(long, default_value_t = DEFAULT_RICCATI_STEPS)]
        riccati_steps: usize,
    },
    /// Data of one figure of the simulation study: fig1 .. fig8
    Reproduce { figure: String },
}

fn parse_figure(s: &str) -> anyhow::Result<Figure> {
    s.strip_prefix("fig")
        .and_then(|k| k.parse::<u8>().ok())
        .and_then(Figure::from_number)
        .with_context(|| format!("unknown figure {s:?}, expected fig1 .. fig8"))
}

fn print_summary(table: &Table, written: &[PathBuf]) {
    println!("{}", table.title);
    if let Some(last) = table.rows.last() {
        if table.is_time_series() {
            let width = table.columns.iter().map(String::len).max().unwrap_or(0);
            for (name, cell) in table.columns.iter().zip(last) {
                let value = cell.as_f64().map(format_sig).unwrap_or_default();
                println!("  {name:<width$}  {value}");
            }
        } else {
            println!("  {}", table.columns.join("  "));
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(Cell::render).collect();
                println!("  {}", cells.join("  "));
            }
        }
    }
    for path in written {
        println!("wrote {}", path.display());
    }
}

fn emit(cfg: &ExperimentConfig, table: &Table, out_dir: &Path) -> anyhow::Result<()> {
    let written = write_table(cfg, table, out_dir).with_context(|| format!("writing to {}", out_dir.display()))?;
    print_summary(table, &written);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => load_config(path)?,
        (None, Command::Reproduce { .. }) => bundled_config(),
        (None, _) => bail!("--config is required for this subcommand"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Filter => emit(&cfg, &experiments::filter_table(&cfg)?, out),
        Command::Evaluate => emit(&cfg, &experiments::nominal_table(&cfg, "evaluate", "Error variance, nominal model")?, out),
        Command::Adversary { c } => {
            let Some(c) = c.or(cfg.adversary_c) else {
                bail!("adversary needs --c or adversary_c in the configuration");
            };
            if !(c.is_finite() && c > 0.0) {
                bail!("--c must be a finite number > 0");
            }
            let title = format!("Error variance, least favorable model c = {c}");
            let table = experiments::adversary_table(&cfg, c, &cfg.filters, "adversary", &title, true)?;
            emit(&cfg, &table, out)
        }
        Command::Converge => {
            let (table, failures) = experiments::converge_table(&cfg)?;
            emit(&cfg, &table, out)?;
            match failures.into_iter().next() {
                Some(e) => Err(e.into()),
                None => Ok(()),
            }
        }
        Command::Cmax { window, riccati_steps } => {
            emit(&cfg, &experiments::cmax_table(&cfg, window, riccati_steps)?, out)
        }
        Command::Reproduce { figure } => {
            let fig = parse_figure(&figure)?;
            emit(&cfg, &experiments::reproduce(&cfg, fig)?, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
