use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heatvol_cli::output::{write_rows, write_summary};
use heatvol_cli::run::{self, Table};
use heatvol_cli::{CliError, Method, Result, RunConfig};

/// Short-maturity SABR implied volatility: smiles, reference solutions and
/// comparison tables as CSV (`method,K,T,value,flag`).
#[derive(Debug, Parser)]
#[command(name = "heatvol", version)]
struct Cli {
    /// Log to stderr: -v for progress, -vv for solver diagnostics.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Implied volatility per method, strike and maturity.
    Smile(Common),
    /// Relative errors against a reference method, with a summary on stderr.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Reference method (default from the config, else fdm).
        #[arg(long)]
        reference: Option<String>,
    },
    /// Discounted option prices per method.
    Price(Common),
    /// Observed convergence orders of the finite difference solver.
    FdmConvergence(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults reproduce the reference setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the configured methods (repeatable).
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Replace the configured maturities (repeatable).
    #[arg(long = "maturity")]
    maturities: Vec<f64>,
    /// Accepted for scripted runs; no computation uses randomness.
    #[arg(long)]
    seed_free: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if !self.methods.is_empty() {
            config.methods = self.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
        }
        if !self.maturities.is_empty() {
            config.maturities = self.maturities.clone();
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        Ok(config)
    }
}

fn emit(config: &RunConfig, table: &Table) -> Result<()> {
    match &config.output {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::Io {
                path: path.clone(),
                source: e,
            })?;
            write_rows(&table.rows, BufWriter::new(file))?;
        }
        None => write_rows(&table.rows, io::stdout().lock())?,
    }
    if table.failed > 0 {
        return Err(CliError::FailedCells(table.failed));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Smile(c) => {
            let config = c.load()?;
            emit(&config, &run::smile(&config)?)
        }
        Command::Compare { common, reference } => {
            let mut config = common.load()?;
            if let Some(r) = reference {
                config.reference = Method::parse(&r)?;
            }
            let (table, summary) = run::compare(&config)?;
            let result = emit(&config, &table);
            let _ = write_summary(&summary, io::stderr().lock());
            result
        }
        Command::Price(c) => {
            let config = c.load()?;
            emit(&config, &run::price(&config)?)
        }
        Command::FdmConvergence(c) => {
            let config = c.load()?;
            emit(&config, &run::fdm_convergence(&config)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // no environment lookup: the run is fully determined by the arguments
    env_logger::Builder::new().filter_level(level).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("heatvol: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
