//! Training, evaluation and the mode × scenario × seed matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ies_core::attack::AdversaryMode;
use ies_core::env::{Adversary, DayPick, IesEnv};
use ies_core::profile::DayProfile;
use ies_core::sac::{evaluate, train, Agent, AgentCheckpoint, CurvePoint, EvalMetrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, Mode, RunConfig};
use crate::error::{io_err, HarnessError, Result};
use crate::report::{Report, RunRecord, RunTrace};

/// Evaluation environments draw exogenous noise from a stream distinct from
/// the training one.
const EVAL_SEED_OFFSET: u64 = 0x5eed_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentKey {
    pub algorithm: Algorithm,
    pub scenario: u8,
    pub seed: u64,
}

impl AgentKey {
    pub fn file_stem(&self) -> String {
        format!("{}_scenario{}_seed{}", self.algorithm.name(), self.scenario, self.seed)
    }
}

/// One matrix entry. `attack` normally follows the mode but can be forced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub scenario: u8,
    pub seed: u64,
    pub attack: bool,
}

impl Cell {
    pub fn new(mode: Mode, scenario: u8, seed: u64, attack: Option<bool>) -> Self {
        Self {
            mode,
            scenario,
            seed,
            attack: attack.unwrap_or(mode.attacked()),
        }
    }

    pub fn agent_key(&self) -> AgentKey {
        AgentKey {
            algorithm: self.mode.algorithm(),
            scenario: self.scenario,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub key: AgentKey,
    pub agent: Agent,
    pub curves: Vec<CurvePoint>,
}

/// A run configuration with its profiles loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: RunConfig,
    pub days: Vec<DayProfile>,
}

impl Experiment {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let days = cfg.days()?;
        Ok(Self { cfg, days })
    }

    fn env(&self, scenario: u8, seed: u64) -> Result<IesEnv> {
        Ok(IesEnv::new(self.cfg.system_params(scenario)?, self.days.clone(), seed)?)
    }

    pub fn eval_episodes(&self) -> usize {
        self.cfg.eval_episodes.unwrap_or(self.days.len())
    }

    pub fn train(&self, key: AgentKey) -> Result<Trained> {
        let mut env = self.env(key.scenario, key.seed)?;
        let out = train(&mut env, &self.cfg.trainer_for(key.algorithm), key.seed)?;
        Ok(Trained {
            key,
            agent: out.agent,
            curves: out.curves,
        })
    }

    /// Trains every key in parallel; results come back in key order.
    pub fn train_all(&self, keys: &[AgentKey]) -> Result<Vec<Trained>> {
        keys.par_iter().map(|&k| self.train(k)).collect()
    }

    /// Deterministic rollout over the profile days in order, starting from
    /// the first. The perturbation touches only what the policy observes.
    pub fn evaluate(&self, agent: &Agent, cell: Cell) -> Result<EvalMetrics> {
        let params = self.cfg.system_params(cell.scenario)?;
        let adversary = cell.attack.then(|| Adversary::from_config(AdversaryMode::Itdsa, &params.attack));
        let mut env = IesEnv::new(params, self.days.clone(), cell.seed.wrapping_add(EVAL_SEED_OFFSET))?.with_day_pick(DayPick::Cycle);
        Ok(evaluate(agent, &mut env, adversary.as_ref(), self.eval_episodes())?)
    }

    pub fn cells(&self, modes: &[Mode], scenarios: &[u8], seeds: &[u64], attack: Option<bool>) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(modes.len() * scenarios.len() * seeds.len());
        for &mode in modes {
            for &scenario in scenarios {
                for &seed in seeds {
                    cells.push(Cell::new(mode, scenario, seed, attack));
                }
            }
        }
        cells
    }
}

/// Evaluates every cell against its trained agent. Cells run in parallel;
/// rows keep the order of `cells`.
pub fn run_matrix(exp: &Experiment, cells: &[Cell], agents: &BTreeMap<AgentKey, Agent>) -> Result<Report> {
    let results: Vec<(RunRecord, RunTrace)> = cells
        .par_iter()
        .map(|&cell| {
            let key = cell.agent_key();
            let agent = agents.get(&key).ok_or_else(|| HarnessError::MissingCheckpoint(PathBuf::from(key.file_stem())))?;
            let metrics = exp.evaluate(agent, cell)?;
            Ok((RunRecord::new(cell, &metrics), RunTrace::new(cell, metrics)))
        })
        .collect::<Result<_>>()?;
    let (rows, traces) = results.into_iter().unzip();
    Ok(Report::new(rows, traces))
}

pub fn checkpoint_path(dir: &Path, key: AgentKey) -> PathBuf {
    dir.join("checkpoints").join(format!("{}.json", key.file_stem()))
}

pub fn save_agent(dir: &Path, key: AgentKey, agent: &Agent) -> Result<PathBuf> {
    let path = checkpoint_path(dir, key);
    let parent = path.parent().expect("checkpoint path has a parent");
    std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    std::fs::write(&path, agent.checkpoint().to_json()?).map_err(io_err(&path))?;
    Ok(path)
}

pub fn load_agent(dir: &Path, key: AgentKey, cfg: &RunConfig) -> Result<Agent> {
    let path = checkpoint_path(dir, key);
    if !path.is_file() {
        return Err(HarnessError::MissingCheckpoint(path));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(AgentCheckpoint::from_json(&text)?.into_agent(&cfg.trainer_for(key.algorithm))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ies_core::sac::TrainerConfig;

    pub(crate) fn tiny_config() -> RunConfig {
        RunConfig {
            trainer: TrainerConfig {
                hidden: vec![8],
                batch: 16,
                warmup_transitions: 48,
                ..TrainerConfig::default()
            }
            .with_episodes(4),
            synthetic: crate::config::SyntheticProfiles { days: 2, seed: 3 },
            seeds: vec![0, 1],
            ..RunConfig::default()
        }
    }

    fn agents_for(exp: &Experiment, cells: &[Cell]) -> BTreeMap<AgentKey, Agent> {
        let mut keys: Vec<AgentKey> = cells.iter().map(Cell::agent_key).collect();
        keys.sort();
        keys.dedup();
        exp.train_all(&keys).unwrap().into_iter().map(|t| (t.key, t.agent)).collect()
    }

    #[test]
    fn row_count_is_the_grid_size() {
        let exp = Experiment::new(tiny_config()).unwrap();
        let cells = exp.cells(&Mode::ALL, &[1, 4], &[0, 1], None);
        assert_eq!(cells.len(), 16);
        let report = run_matrix(&exp, &cells, &agents_for(&exp, &cells)).unwrap();
        assert_eq!(report.rows.len(), 16);
        assert_eq!(report.traces.len(), 16);
    }

    #[test]
    fn modes_three_and_four_agree_without_attack() {
        let exp = Experiment::new(tiny_config()).unwrap();
        let three = exp.cells(&[Mode::new(3).unwrap()], &[1], &[0], None);
        let four = exp.cells(&[Mode::new(4).unwrap()], &[1], &[0], Some(false));
        let agents = agents_for(&exp, &three);
        let a = run_matrix(&exp, &three, &agents).unwrap();
        let b = run_matrix(&exp, &four, &agents).unwrap();
        assert_eq!(a.traces[0].trace, b.traces[0].trace);
        assert_eq!(a.rows[0].profit, b.rows[0].profit);
        let attacked = run_matrix(&exp, &exp.cells(&[Mode::new(4).unwrap()], &[1], &[0], None), &agents).unwrap();
        assert!(attacked.rows[0].attack);
    }

    #[test]
    fn missing_agent_is_reported() {
        let exp = Experiment::new(tiny_config()).unwrap();
        let cells = exp.cells(&[Mode::new(1).unwrap()], &[1], &[0], None);
        assert!(matches!(run_matrix(&exp, &cells, &BTreeMap::new()), Err(HarnessError::MissingCheckpoint(_))));
        let dir = tempfile::tempdir().unwrap();
        let key = cells[0].agent_key();
        assert!(matches!(load_agent(dir.path(), key, &exp.cfg), Err(HarnessError::MissingCheckpoint(_))));
    }

    #[test]
    fn saved_agent_reloads() {
        let exp = Experiment::new(tiny_config()).unwrap();
        let key = AgentKey { algorithm: Algorithm::SaSac, scenario: 1, seed: 0 };
        let trained = exp.train(key).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_agent(dir.path(), key, &trained.agent).unwrap();
        let back = load_agent(dir.path(), key, &exp.cfg).unwrap();
        let cell = Cell::new(Mode::new(3).unwrap(), 1, 0, None);
        assert_eq!(exp.evaluate(&trained.agent, cell).unwrap(), exp.evaluate(&back, cell).unwrap());
    }
}
