use serde::{Deserialize, Serialize};

use crate::attack::{AdversaryBudget, ItdsaSpec};
use crate::devices::{BuildingParams, ComfortParams, ConverterParams, FlexBehaviour, Span, StorageParams};
use crate::error::{CoreError, Result};
use crate::pricing::{PricingParams, TouSchedule};

use super::ACTION_DIM;

/// Which optional subsystems take part in the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    /// Heat storage installed.
    pub hsd: bool,
    /// Demand response active; when off, prices stay at their benchmarks.
    pub idr: bool,
}

impl Scenario {
    /// Scenarios 1..=4: both, no IDR, no HSD, neither.
    pub fn numbered(n: u8) -> Result<Self> {
        let (hsd, idr) = match n {
            1 => (true, true),
            2 => (true, false),
            3 => (false, true),
            4 => (false, false),
            _ => return Err(CoreError::InvalidParams(format!("scenario {n} not in 1..=4"))),
        };
        Ok(Self { hsd, idr })
    }

    pub fn number(&self) -> u8 {
        match (self.hsd, self.idr) {
            (true, true) => 1,
            (true, false) => 2,
            (false, true) => 3,
            (false, false) => 4,
        }
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self { hsd: true, idr: true }
    }
}

/// Penalty coefficients. Action-rate terms are in normalized action units,
/// ordered like the action vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub delta1: [f64; ACTION_DIM],
    pub delta2: [f64; ACTION_DIM],
    pub a_umax: [f64; ACTION_DIM],
    pub a_dmax: [f64; ACTION_DIM],
    /// ¥ per kWh of heat shortfall.
    pub beta_lr: f64,
    /// ¥ per kWh of heat oversupply.
    pub beta_el: f64,
}

impl PenaltyParams {
    /// Unit coefficients with rate limits equal to the converter ramp
    /// limits expressed in normalized action units.
    pub fn from_converters(cp: &ConverterParams<f64>) -> Self {
        let scaled = |ramp: f64, range: Span<f64>| 2.0 * ramp / range.width();
        let free = 2.0;
        let up = [
            scaled(cp.p2g_ramp.hi, cp.p2g_range),
            free,
            scaled(cp.mt_ramp.hi, cp.mt_range),
            free,
            free,
            free,
        ];
        let down = [
            scaled(-cp.p2g_ramp.lo, cp.p2g_range),
            free,
            scaled(-cp.mt_ramp.lo, cp.mt_range),
            free,
            free,
            free,
        ];
        Self {
            delta1: [1.0; ACTION_DIM],
            delta2: [1.0; ACTION_DIM],
            a_umax: up,
            a_dmax: down,
            beta_lr: 5.0,
            beta_el: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .delta1
            .iter()
            .chain(&self.delta2)
            .chain(&self.a_umax)
            .chain(&self.a_dmax)
            .chain([&self.beta_lr, &self.beta_el]);
        for v in all {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(CoreError::InvalidParams("penalty coefficients must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Benchmark blend and band thresholds; gains default to the values that
/// let the full level range span the band for the day's tariff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    pub zeta: f64,
    pub l_p: f64,
    pub l_q: f64,
    pub l_h: f64,
    /// Explicit `[k_p, k_q, k_h]`.
    pub gains: Option<[f64; 3]>,
    /// Selling price as a fraction of the buying price.
    pub sell_ratio: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            l_p: 1.0,
            l_q: 1.0,
            l_h: 1.5,
            gains: None,
            sell_ratio: 0.5,
        }
    }
}

impl PricingConfig {
    pub fn params_for(&self, tou: &TouSchedule<f64>) -> Result<PricingParams<f64>> {
        let mut p = PricingParams::spanning(tou, self.zeta, self.l_p, self.l_q, self.l_h);
        if let Some([k_p, k_q, k_h]) = self.gains {
            p.k_p = k_p;
            p.k_q = k_q;
            p.k_h = k_h;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub itdsa: ItdsaSpec<f64>,
    pub budget: AdversaryBudget<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            itdsa: ItdsaSpec::default(),
            budget: AdversaryBudget {
                epsilon: 0.3,
                mask: vec![super::obs_index::H_BASIC],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub building: BuildingParams<f64>,
    /// Number of identical buildings on the heat network.
    pub buildings: f64,
    pub comfort: ComfortParams<f64>,
    pub converters: ConverterParams<f64>,
    pub esd: StorageParams<f64>,
    pub hsd: StorageParams<f64>,
    /// Grid exchange limits; negative values are sales.
    pub grid_p: Span<f64>,
    pub grid_q: Span<f64>,
    pub flex: FlexBehaviour,
    /// Compensation per kWh of shifted electric load.
    pub gamma_tse: f64,
    /// Compensation per m³ of shifted gas load.
    pub gamma_tsq: f64,
    /// Compensation per kWh of cut heat.
    pub gamma_ch: f64,
    pub pricing: PricingConfig,
    pub penalty: PenaltyParams,
    pub scenario: Scenario,
    pub attack: AttackConfig,
}

impl Default for SystemParams {
    fn default() -> Self {
        let converters = ConverterParams::default();
        Self {
            building: BuildingParams::default(),
            buildings: 6.0,
            comfort: ComfortParams::default(),
            converters,
            esd: StorageParams::with_defaults(200.0, 100.0, 0.9),
            hsd: StorageParams::with_defaults(180.0, 90.0, 1.0),
            grid_p: Span::new(-1000.0, 1000.0),
            grid_q: Span::new(-80.0, 80.0),
            flex: FlexBehaviour::default(),
            gamma_tse: 0.1,
            gamma_tsq: 0.1,
            gamma_ch: 0.1,
            pricing: PricingConfig::default(),
            penalty: PenaltyParams::from_converters(&converters),
            scenario: Scenario::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl SystemParams {
    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.scenario = scenario;
        self
    }

    /// Heat storage as seen by the scenario.
    pub fn effective_hsd(&self) -> StorageParams<f64> {
        if self.scenario.hsd {
            self.hsd
        } else {
            StorageParams::absent()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.building.validate()?;
        self.comfort.validate()?;
        self.converters.validate()?;
        self.esd.validate()?;
        self.hsd.validate()?;
        self.penalty.validate()?;
        if !(self.buildings.is_finite() && self.buildings > 0.0) {
            return Err(CoreError::InvalidParams("building count must be positive".into()));
        }
        if !(self.grid_p.lo <= 0.0 && self.grid_p.hi >= 0.0 && self.grid_q.lo <= 0.0 && self.grid_q.hi >= 0.0) {
            return Err(CoreError::InvalidParams("grid limits must bracket zero".into()));
        }
        if [self.gamma_tse, self.gamma_tsq, self.gamma_ch].iter().any(|g| !(*g >= 0.0)) {
            return Err(CoreError::InvalidParams("compensation costs must be non-negative".into()));
        }
        if !(self.pricing.sell_ratio >= 0.0 && self.pricing.sell_ratio <= 1.0) {
            return Err(CoreError::InvalidParams("sell ratio must lie in [0, 1]".into()));
        }
        self.attack.itdsa.validate()?;
        self.attack.budget.validate(super::OBS_DIM)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_numbering_round_trips() {
        for n in 1..=4 {
            assert_eq!(Scenario::numbered(n).unwrap().number(), n);
        }
        assert!(Scenario::numbered(5).is_err());
    }

    #[test]
    fn default_rate_limits() {
        let p = PenaltyParams::from_converters(&ConverterParams::default());
        assert!((p.a_umax[0] - 1.0).abs() < 1e-12);
        assert!((p.a_umax[2] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.a_umax[1], 2.0);
    }

    #[test]
    fn defaults_validate() {
        SystemParams::default().validate().unwrap();
        let p = SystemParams::default().with_scenario(Scenario::numbered(3).unwrap());
        assert!(p.effective_hsd().is_absent());
    }
}
