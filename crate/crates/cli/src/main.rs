use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod args;
mod commands;

use args::Usage;

#[derive(Debug, Parser, Serialize)]
#[command(name = "logitfe", version, about = "Fixed-effects logit: differencing, sufficiency, moments, estimation")]
struct Cli {
    /// Worker threads (defaults to LOGITFE_THREADS, then all cores).
    #[arg(long, global = true, env = "LOGITFE_THREADS")]
    threads: Option<usize>,
    /// Write the result here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum Command {
    /// Differencing vectors orthogonal to W.
    Wperp(commands::WperpArgs),
    /// Minimal T and differencing vector for polynomial trends of degree 0..=max-p.
    Table1(commands::Table1Args),
    /// Outcome pairs whose likelihood ratio is free of the fixed effects.
    Pairs(commands::PairsArgs),
    /// Network conditioning set and conditional likelihood.
    Netcond(commands::NetcondArgs),
    /// Index-value counts Q_t and the exponent set D.
    Dset(commands::DsetArgs),
    /// Fixed-effect-free moment functions at one (y0, X, theta) cell.
    Moments(commands::MomentsArgs),
    /// Exact expectation of closed-form moments at random draws.
    Verify(commands::VerifyArgs),
    /// Estimate theta from a sample file.
    Estimate(commands::EstimateArgs),
    /// Simulate a sample from a configuration file.
    Simulate(commands::SimulateArgs),
    /// Monte Carlo study from a configuration file.
    Mc(commands::McArgs),
}

/// What a command produced.
pub struct Output {
    pub json: Option<serde_json::Value>,
    pub csv: Option<String>,
    pub default: Format,
    /// Nonzero for degenerate results that still print output.
    pub exit: u8,
}

impl Output {
    pub fn json(v: impl Serialize) -> Result<Self> {
        Ok(Self { json: Some(serde_json::to_value(v)?), csv: None, default: Format::Json, exit: 0 })
    }

    pub fn csv(text: String) -> Self {
        Self { json: None, csv: Some(text), default: Format::Csv, exit: 0 }
    }

    pub fn with_csv(mut self, text: String) -> Self {
        self.csv = Some(text);
        self
    }

    pub fn with_json(mut self, v: impl Serialize) -> Result<Self> {
        self.json = Some(serde_json::to_value(v)?);
        Ok(self)
    }

    pub fn degenerate(mut self) -> Self {
        self.exit = 3;
        self
    }
}

fn setup_threads(threads: Option<usize>) -> Result<usize> {
    if threads == Some(0) {
        return args::usage("--threads must be at least 1");
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(1)
    }
}

fn emit(cli: &Cli, out: Output) -> Result<u8> {
    let format = cli.format.unwrap_or(out.default);
    let text = match format {
        Format::Json => {
            let Some(mut v) = out.json else {
                return args::usage("this command has no JSON output");
            };
            logitfe::io::round_json(&mut v);
            serde_json::to_string_pretty(&v)? + "\n"
        }
        Format::Csv => match out.csv {
            Some(c) => c,
            None => return args::usage("this command has no CSV output"),
        },
    };
    match &cli.output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(out.exit)
}

fn run(cli: &Cli) -> Result<u8> {
    let threads = setup_threads(cli.threads)?;
    let header = serde_json::json!({ "threads": threads, "format": cli.format, "output": cli.output, "args": cli.command });
    eprintln!("# logitfe {} resolved-config {}", env!("CARGO_PKG_VERSION"), header);
    let out = match &cli.command {
        Command::Wperp(a) => commands::wperp(a)?,
        Command::Table1(a) => commands::table1(a)?,
        Command::Pairs(a) => commands::pairs(a)?,
        Command::Netcond(a) => commands::netcond(a)?,
        Command::Dset(a) => commands::dset(a)?,
        Command::Moments(a) => commands::moments(a)?,
        Command::Verify(a) => commands::verify(a)?,
        Command::Estimate(a) => commands::estimate(a)?,
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Mc(a) => commands::mc(a)?,
    };
    emit(cli, out)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<serde_json::Error>().is_some() {
        return 2;
    }
    if let Some(e) = e.downcast_ref::<logitfe::Error>() {
        use logitfe::Error::*;
        return match e {
            InvalidInput(_) | Precondition(_) | TooLarge { .. } | Json(_) | Csv(_) | Io(_) => 2,
            NoInformation(_) | NotBinaryDesign => 3,
            Numerical(_) => 1,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() || e.downcast_ref::<csv::Error>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
