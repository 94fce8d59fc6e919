//! Command-line driver: locality lab, single simulations, parameter sweeps
//! and report aggregation.

pub mod commands;
pub mod config;
pub mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use config::{parse_value, resolve, ConfigSources};

#[derive(Debug, Parser)]
#[command(name = "sftbloom", version, about = "Bloom-filter flow-space lab and flow-table eviction simulator")]
pub struct Cli {
    /// TOML config file; flags and SFTBLOOM_* variables override it.
    #[arg(long, global = true, env = "SFTBLOOM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Built-in preset applied beneath the config file.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override any config key, e.g. `--set capacity=[16,32]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonFlags {
    /// Trace file; repeat to sweep over several.
    #[arg(long)]
    pub trace: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed; repeat to sweep over several.
    #[arg(long)]
    pub seed: Vec<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the locality experiments and write one CSV per experiment.
    Lab {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Simulate one (trace, policy, seed) cell.
    Sim {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        policy: Option<String>,
    },
    /// Run the Cartesian product of every list-valued setting.
    Sweep {
        #[command(flatten)]
        common: CommonFlags,
        /// Policy; repeat to sweep over several.
        #[arg(long)]
        policy: Vec<String>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate every summary.json under a directory.
    Report {
        input: PathBuf,
        /// Where to write the table; defaults to `<input>/report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured synthetic trace to a file.
    GenTrace { path: PathBuf },
}

fn insert_list<T: Into<toml::Value> + Clone>(flags: &mut toml::Table, key: &str, values: &[T]) {
    match values {
        [] => {}
        [one] => {
            flags.insert(key.into(), one.clone().into());
        }
        many => {
            flags.insert(key.into(), toml::Value::Array(many.iter().cloned().map(Into::into).collect()));
        }
    }
}

fn path_str(p: &std::path::Path) -> Result<String> {
    p.to_str().map(str::to_string).ok_or_else(|| anyhow!("path {} is not valid UTF-8", p.display()))
}

impl Cli {
    /// Flag overrides keyed by config name; `--set` entries apply first so
    /// dedicated flags win.
    pub fn flag_layer(&self) -> Result<toml::Table> {
        let mut flags = toml::Table::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            flags.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let common = match &self.command {
            Command::Lab { common } | Command::Sim { common, .. } | Command::Sweep { common, .. } => Some(common),
            _ => None,
        };
        if let Some(c) = common {
            let traces = c.trace.iter().map(|p| path_str(p)).collect::<Result<Vec<_>>>()?;
            insert_list(&mut flags, "trace", &traces);
            if let Some(out) = &c.out {
                flags.insert("out".into(), path_str(out)?.into());
            }
            let seeds = c.seed.iter().map(|&s| i64::try_from(s).context("seed exceeds the config integer range")).collect::<Result<Vec<_>>>()?;
            insert_list(&mut flags, "seed", &seeds);
        }
        match &self.command {
            Command::Sim { policy: Some(p), .. } => {
                flags.insert("policy".into(), p.clone().into());
            }
            Command::Sweep { policy, jobs, .. } => {
                insert_list(&mut flags, "policy", policy);
                if let Some(j) = jobs {
                    flags.insert("jobs".into(), i64::try_from(*j)?.into());
                }
            }
            _ => {}
        }
        Ok(flags)
    }

    pub fn sources(&self) -> Result<ConfigSources> {
        Ok(ConfigSources {
            file: self.config.clone(),
            preset: self.preset.clone(),
            env: Vec::new(),
            flags: self.flag_layer()?,
        }
        .with_process_env())
    }
}

/// Runs the parsed command; the exit code is success iff every requested
/// unit of work completed.
pub fn run(cli: &Cli) -> Result<ExitCode> {
    if let Command::Report { input, out } = &cli.command {
        let report = commands::cmd_report(input)?;
        for (path, err) in &report.corrupt {
            error!("unreadable summary {}: {err}", path.display());
        }
        let dest = out.clone().unwrap_or_else(|| input.join(commands::REPORT_FILE));
        std::fs::write(&dest, &report.csv).with_context(|| format!("writing {}", dest.display()))?;
        print!("{}", report.csv);
        info!("{} runs aggregated into {}", report.runs, dest.display());
        return Ok(if report.corrupt.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }

    let cfg = resolve(&cli.sources()?)?;
    match &cli.command {
        Command::Lab { .. } => {
            for path in commands::cmd_lab(&cfg)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sim { .. } => {
            commands::cmd_sim(&cfg)?;
            println!("{}", cfg.out.join(commands::SUMMARY_FILE).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { .. } => {
            let r = commands::cmd_sweep(&cfg)?;
            println!(
                "{} cells: {} completed, {} skipped, {} failed",
                r.total, r.completed, r.skipped, r.failed
            );
            Ok(if r.all_done() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::GenTrace { path } => {
            commands::cmd_gen_trace(&cfg, path)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}
