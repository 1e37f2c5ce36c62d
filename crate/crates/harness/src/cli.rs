//! The `ies` command line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ies_core::profile::synthetic_days;

use crate::config::{Mode, RunConfig};
use crate::error::{io_err, Result};
use crate::experiment::{load_agent, run_matrix, save_agent, AgentKey, Experiment};
use crate::profiles::write_profiles;
use crate::report::{emit, write_curves, Format};

#[derive(Debug, Parser)]
#[command(name = "ies", version, about = "Train, attack and compare IES scheduling agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run this seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file and IES_OUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the mode's algorithm and save checkpoints and learning curves.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        mode: Option<u8>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: Option<u8>,
    },
    /// Evaluate saved checkpoints and write a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        mode: Option<u8>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: Option<u8>,
        /// Force the attack on or off regardless of the mode.
        #[arg(long)]
        attack: Option<Switch>,
    },
    /// Train and evaluate the full mode × scenario × seed grid.
    Matrix {
        #[command(flatten)]
        common: Common,
        /// Restrict the grid to one mode.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        mode: Option<u8>,
        /// Restrict the grid to one scenario.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: Option<u8>,
        #[arg(long)]
        attack: Option<Switch>,
    },
    /// Write a seeded synthetic profile file.
    GenProfiles {
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        days: usize,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn attack_flag(s: Option<Switch>) -> Option<bool> {
    s.map(|s| s == Switch::On)
}

fn keys(mode: Mode, scenarios: &[u8], seeds: &[u64]) -> Vec<AgentKey> {
    scenarios
        .iter()
        .flat_map(|&scenario| seeds.iter().map(move |&seed| AgentKey { algorithm: mode.algorithm(), scenario, seed }))
        .collect()
}

/// Runs a parsed command; every written path is returned.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Train { common, mode, scenario } => {
            let cfg = load_config(&common)?;
            let out = cfg.out_dir(common.out.as_deref());
            let mode = mode.map(Mode::new).transpose()?.unwrap_or(cfg.mode);
            let scenario = scenario.unwrap_or(cfg.scenario);
            let exp = Experiment::new(cfg)?;
            let mut written = Vec::new();
            for t in exp.train_all(&keys(mode, &[scenario], &exp.cfg.seeds))? {
                written.push(save_agent(&out, t.key, &t.agent)?);
                written.push(write_curves(&out, t.key, &t.curves)?);
            }
            Ok(written)
        }
        Command::Evaluate { common, mode, scenario, attack } => {
            let cfg = load_config(&common)?;
            let out = cfg.out_dir(common.out.as_deref());
            let mode = mode.map(Mode::new).transpose()?.unwrap_or(cfg.mode);
            let scenario = scenario.unwrap_or(cfg.scenario);
            let exp = Experiment::new(cfg)?;
            let cells = exp.cells(&[mode], &[scenario], &exp.cfg.seeds, attack_flag(attack));
            let agents = cells
                .iter()
                .map(|c| Ok((c.agent_key(), load_agent(&out, c.agent_key(), &exp.cfg)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let report = run_matrix(&exp, &cells, &agents)?;
            emit(&report, &out, &[Format::Csv, Format::Json])
        }
        Command::Matrix { common, mode, scenario, attack } => {
            let cfg = load_config(&common)?;
            let out = cfg.out_dir(common.out.as_deref());
            let modes = match mode {
                Some(m) => vec![Mode::new(m)?],
                None => cfg.matrix.modes.clone(),
            };
            let scenarios = scenario.map_or_else(|| cfg.matrix.scenarios.clone(), |s| vec![s]);
            let exp = Experiment::new(cfg)?;
            let cells = exp.cells(&modes, &scenarios, &exp.cfg.seeds, attack_flag(attack));
            let mut needed: Vec<AgentKey> = cells.iter().map(|c| c.agent_key()).collect();
            needed.sort();
            needed.dedup();
            let mut written = Vec::new();
            let mut agents = BTreeMap::new();
            for t in exp.train_all(&needed)? {
                written.push(save_agent(&out, t.key, &t.agent)?);
                written.push(write_curves(&out, t.key, &t.curves)?);
                agents.insert(t.key, t.agent);
            }
            let report = run_matrix(&exp, &cells, &agents)?;
            written.extend(emit(&report, &out, &[Format::Csv, Format::Json])?);
            Ok(written)
        }
        Command::GenProfiles { out, seed, days } => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            write_profiles(&out, &synthetic_days(days, seed))?;
            Ok(vec![out])
        }
    }
}
