//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use ies_core::env::{Scenario, SystemParams};
use ies_core::profile::{synthetic_days, DayProfile};
use ies_core::sac::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};
use crate::profiles::load_profiles;

/// Overrides the configured output directory when set.
pub const OUT_DIR_ENV: &str = "IES_OUT_DIR";

/// Modes 1..=4: SAC clean, SAC attacked, SA-SAC clean, SA-SAC attacked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Mode(u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sac,
    SaSac,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sac => "sac",
            Algorithm::SaSac => "sa_sac",
        }
    }
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode(1), Mode(2), Mode(3), Mode(4)];

    pub fn new(n: u8) -> Result<Self> {
        if (1..=4).contains(&n) {
            Ok(Self(n))
        } else {
            Err(HarnessError::Config(format!("mode {n} not in 1..=4")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn algorithm(self) -> Algorithm {
        if self.0 <= 2 {
            Algorithm::Sac
        } else {
            Algorithm::SaSac
        }
    }

    pub fn attacked(self) -> bool {
        self.0.is_multiple_of(2)
    }
}

impl TryFrom<u8> for Mode {
    type Error = HarnessError;

    fn try_from(n: u8) -> Result<Self> {
        Mode::new(n)
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m.0
    }
}

/// Generated profiles used when no file is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticProfiles {
    pub days: usize,
    pub seed: u64,
}

impl Default for SyntheticProfiles {
    fn default() -> Self {
        Self { days: 20, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixGrid {
    pub modes: Vec<Mode>,
    pub scenarios: Vec<u8>,
}

impl Default for MatrixGrid {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            scenarios: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV of day profiles, relative to the config file. Synthetic days
    /// are generated when unset.
    pub profiles: Option<PathBuf>,
    pub synthetic: SyntheticProfiles,
    /// Partial [`SystemParams`] merged over the defaults.
    pub system: toml::Table,
    /// Partial attack settings merged over `system.attack`.
    pub attack: toml::Table,
    pub trainer: TrainerConfig,
    pub mode: Mode,
    pub scenario: u8,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Evaluation days per run; defaults to the number of profile days.
    pub eval_episodes: Option<usize>,
    pub matrix: MatrixGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profiles: None,
            synthetic: SyntheticProfiles::default(),
            system: toml::Table::new(),
            attack: toml::Table::new(),
            trainer: TrainerConfig::default(),
            mode: Mode(1),
            scenario: 1,
            seeds: vec![0],
            out: PathBuf::from("out"),
            eval_episodes: None,
            matrix: MatrixGrid::default(),
        }
    }
}

/// Deep merge that refuses keys the base does not already have, so typos
/// in overrides surface instead of being ignored.
fn merge(base: &mut toml::Table, over: &toml::Table, path: &str) -> Result<()> {
    for (key, value) in over {
        let here = format!("{path}{key}");
        match (base.get_mut(key), value) {
            (None, _) => return Err(HarnessError::Config(format!("unknown override key {here}"))),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &format!("{here}."))?,
            (Some(slot), _) => *slot = value.clone(),
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative profile path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.profiles, path.parent()) {
            if p.is_relative() {
                cfg.profiles = Some(dir.join(p));
            }
        }
        if let Some(p) = &cfg.profiles {
            if !p.is_file() {
                return Err(HarnessError::Config(format!("profile file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let scenarios = std::iter::once(&self.scenario).chain(&self.matrix.scenarios);
        if let Some(s) = scenarios.clone().find(|s| !(1..=4).contains(*s)) {
            return Err(HarnessError::Config(format!("scenario {s} not in 1..=4")));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        if self.eval_episodes == Some(0) {
            return Err(HarnessError::Config("eval_episodes must be positive".into()));
        }
        self.trainer.validate()?;
        self.system_params(self.scenario)?;
        Ok(())
    }

    /// Defaults, then `[system]`, then `[attack]`, then the scenario toggles.
    pub fn system_params(&self, scenario: u8) -> Result<SystemParams> {
        let mut table = toml::Table::try_from(SystemParams::default()).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut table, &self.system, "system.")?;
        if let Some(toml::Value::Table(attack)) = table.get_mut("attack") {
            merge(attack, &self.attack, "attack.")?;
        }
        let params: SystemParams = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(format!("system overrides: {e}")))?;
        let params = params.with_scenario(Scenario::numbered(scenario)?);
        params.validate()?;
        Ok(params)
    }

    pub fn days(&self) -> Result<Vec<DayProfile>> {
        match &self.profiles {
            Some(path) => load_profiles(path),
            None if self.synthetic.days == 0 => Err(HarnessError::Config("synthetic.days must be positive".into())),
            None => Ok(synthetic_days(self.synthetic.days, self.synthetic.seed)),
        }
    }

    /// `--out` beats the environment variable, which beats the file.
    pub fn out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out.clone(),
        }
    }

    /// Trainer settings for one algorithm; SAC always runs with `κ = 0`.
    pub fn trainer_for(&self, algorithm: Algorithm) -> TrainerConfig {
        match algorithm {
            Algorithm::Sac => TrainerConfig { kappa: 0.0, ..self.trainer.clone() },
            Algorithm::SaSac => self.trainer.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.system_params(1).unwrap(), SystemParams::default());
    }

    #[test]
    fn mode_semantics() {
        let kinds: Vec<(Algorithm, bool)> = Mode::ALL.iter().map(|m| (m.algorithm(), m.attacked())).collect();
        assert_eq!(
            kinds,
            vec![(Algorithm::Sac, false), (Algorithm::Sac, true), (Algorithm::SaSac, false), (Algorithm::SaSac, true)]
        );
        assert!(Mode::new(0).is_err() && Mode::new(5).is_err());
        assert!(RunConfig::parse("mode = 7").is_err());
        assert!(RunConfig::parse("scenario = 0").is_err());
        assert!(RunConfig::parse("[matrix]\nscenarios = [1, 5]").is_err());
        assert!(RunConfig::parse("seeds = []").is_err());
    }

    #[test]
    fn nested_overrides_touch_only_their_fields() {
        let cfg = RunConfig::parse(
            r#"
            [system]
            buildings = 4
            [system.esd]
            c_max = 300.0
            [attack.budget]
            epsilon = 0.5
            [trainer]
            kappa = 0.5
            episodes = 10
            warm_episodes = 5
            ramp_episodes = 3
            hold_episodes = 2
            "#,
        )
        .unwrap();
        let p = cfg.system_params(1).unwrap();
        let d = SystemParams::default();
        assert_eq!(p.buildings, 4.0);
        assert_eq!(p.esd.c_max, 300.0);
        assert_eq!(p.esd.c0, d.esd.c0);
        assert_eq!(p.attack.budget.epsilon, 0.5);
        assert_eq!(p.attack.budget.mask, d.attack.budget.mask);
        assert_eq!(p.attack.itdsa, d.attack.itdsa);
        assert_eq!(cfg.trainer_for(Algorithm::Sac).kappa, 0.0);
        assert_eq!(cfg.trainer_for(Algorithm::SaSac).kappa, 0.5);
    }

    #[test]
    fn scenario_toggles_only_storage_and_pricing() {
        let cfg = RunConfig::default();
        let base = cfg.system_params(1).unwrap();
        for s in 2..=4 {
            let p = cfg.system_params(s).unwrap();
            assert_eq!(SystemParams { scenario: base.scenario, ..p.clone() }, base);
            assert_eq!(p.scenario.number(), s);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sedes = [1]").is_err());
        assert!(RunConfig::parse("[system]\nbuildingz = 3.0").is_err_and(|e| e.to_string().contains("buildingz")));
    }

    #[test]
    fn output_directory_precedence() {
        let cfg = RunConfig { out: "from_file".into(), ..RunConfig::default() };
        assert_eq!(cfg.out_dir(Some(Path::new("cli"))), PathBuf::from("cli"));
    }
}
