//! Day-long scheduling episodes of the integrated energy system.
//!
//! Each step the agent picks P2G power, EB power, MT gas and three retail
//! prices. The environment serves the flexible loads, closes the three
//! carrier balances with storage and grid exchange, and returns the
//! operator's profit less the action-rate and heat-balance penalties.
//!
//! Closure order is heat → HSD, electricity → ESD → grid, gas → grid. Users
//! always receive the heat load; a mismatch the HSD cannot absorb is
//! reported as `heat_slack` and penalised. During the last hour the ESD is
//! driven back to its initial capacity with the grid as slack.

mod params;

pub use params::{AttackConfig, PenaltyParams, PricingConfig, Scenario, SystemParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{perturb_observation, AdversaryBudget, AdversaryMode, ItdsaSpec, PerturbContext, ThermalReading};
use crate::devices::{
    building_heat_demand, check_hour, clamp_ramp, converters, flex_shift, indoor_temp_from_heat, max_cuttable_heat,
    Carrier, FlexLoadLedger, FlexOutcome, Span, StorageOutcome, HOURS_PER_DAY,
};
use crate::error::{CoreError, Result};
use crate::pricing::{benchmarks, levels_from_prices, price_bands, PriceLevels, Prices, PricingParams, Tariff, TouSchedule};
use crate::profile::DayProfile;

pub const OBS_DIM: usize = 9;
pub const ACTION_DIM: usize = 6;

/// Positions in the observation vector.
pub mod obs_index {
    pub const SOC_ESD: usize = 0;
    pub const SOC_HSD: usize = 1;
    pub const GRID_PRICE_E: usize = 2;
    pub const GRID_PRICE_G: usize = 3;
    pub const WT: usize = 4;
    pub const P_BASIC: usize = 5;
    pub const Q_BASIC: usize = 6;
    pub const H_BASIC: usize = 7;
    pub const HOUR: usize = 8;
}

/// Positions in the action vector.
pub mod act_index {
    pub const P2G: usize = 0;
    pub const EB: usize = 1;
    pub const MT: usize = 2;
    pub const PRICE_H: usize = 3;
    pub const PRICE_P: usize = 4;
    pub const PRICE_Q: usize = 5;
}

const TERMINAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub p_p2g: f64,
    pub p_eb: f64,
    pub q_mt: f64,
    pub price_h: f64,
    pub price_p: f64,
    pub price_q: f64,
}

impl Action {
    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        [self.p_p2g, self.p_eb, self.q_mt, self.price_h, self.price_p, self.price_q]
    }

    pub fn prices(&self) -> Prices<f64> {
        Tariff::new(self.price_p, self.price_q, self.price_h)
    }
}

/// Decoded action together with what the policy asked for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub action: Action,
    /// Raw request clipped to [-1, 1].
    pub requested: [f64; ACTION_DIM],
    /// Realized action mapped back to [-1, 1].
    pub realized: [f64; ACTION_DIM],
    pub p2g_ramp_infeasible: bool,
    pub mt_ramp_infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub hour: usize,
    pub day_index: usize,
    pub c_esd: f64,
    pub c_hsd: f64,
    pub soc_esd: f64,
    pub soc_hsd: f64,
    pub grid_price_e: f64,
    pub grid_price_g: f64,
    pub wt: f64,
    pub basic_e: f64,
    pub basic_g: f64,
    /// Space heating to the set-point plus the hot-water load, kW.
    pub basic_h: f64,
    pub t_in_prev: f64,
    pub ledger_e: FlexLoadLedger<f64>,
    pub ledger_g: FlexLoadLedger<f64>,
    pub prev_action: Action,
    /// `prev_action` in normalized units.
    pub prev_norm: [f64; ACTION_DIM],
    pub day: DayProfile,
    pub tou: TouSchedule<f64>,
    pub pricing: PricingParams<f64>,
}

impl EnvState {
    pub fn done(&self) -> bool {
        self.hour >= HOURS_PER_DAY
    }

    /// The nine observed quantities in physical units.
    pub fn raw_observation(&self) -> [f64; OBS_DIM] {
        [
            self.soc_esd,
            self.soc_hsd,
            self.grid_price_e,
            self.grid_price_g,
            self.wt,
            self.basic_e,
            self.basic_g,
            self.basic_h,
            self.hour as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DispatchFlags {
    pub p2g_ramp_infeasible: bool,
    pub mt_ramp_infeasible: bool,
    /// P2G or EB input reduced to respect the import limit.
    pub converters_curtailed: bool,
    pub wt_curtailed: bool,
    pub elec_unserved: bool,
    pub elec_dumped: bool,
    pub gas_unserved: bool,
    pub gas_vented: bool,
    pub heat_shortfall: bool,
    pub heat_surplus: bool,
    pub esd_terminal_gap: bool,
    pub hsd_terminal_gap: bool,
}

impl DispatchFlags {
    /// Number of raised flags that signal an unbalanced carrier.
    pub fn violations(&self) -> usize {
        [
            self.elec_unserved,
            self.elec_dumped,
            self.gas_unserved,
            self.gas_vented,
            self.heat_shortfall,
            self.heat_surplus,
        ]
        .iter()
        .filter(|f| **f)
        .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DispatchResult {
    pub hour: usize,
    /// Realized set-points and issued prices.
    pub action: Action,
    pub levels: PriceLevels<f64>,
    pub wt_available: f64,
    pub wt_used: f64,
    pub h_eb: f64,
    pub q_p2g: f64,
    pub p_mt: f64,
    pub h_mt: f64,
    pub p_load: f64,
    pub p_shift: f64,
    pub p_payback: f64,
    pub p_unserved: f64,
    pub p_dumped: f64,
    pub q_load: f64,
    pub q_shift: f64,
    pub q_payback: f64,
    pub q_unserved: f64,
    pub q_vented: f64,
    pub h_basic: f64,
    pub h_cut: f64,
    pub h_load: f64,
    /// Heat delivered beyond what the devices supplied; negative when heat
    /// had to be dumped.
    pub heat_slack: f64,
    pub esd_out: f64,
    pub hsd_out: f64,
    pub c_esd_prev: f64,
    pub c_esd: f64,
    pub c_hsd_prev: f64,
    pub c_hsd: f64,
    pub hsd_c_max: f64,
    /// Signed exchange, positive when buying.
    pub p_grid: f64,
    pub q_grid: f64,
    pub grid_price_e: f64,
    pub grid_price_g: f64,
    pub sell_price_e: f64,
    pub sell_price_g: f64,
    pub t_in: f64,
    pub flags: DispatchFlags,
}

impl DispatchResult {
    pub fn electric_residual(&self) -> f64 {
        self.p_grid + self.wt_used + self.esd_out + self.p_mt
            - self.action.p_eb
            - self.action.p_p2g
            - self.p_load
            - self.p_dumped
    }

    pub fn heat_residual(&self) -> f64 {
        self.h_mt + self.hsd_out + self.h_eb + self.heat_slack - self.h_load
    }

    pub fn gas_residual(&self) -> f64 {
        self.q_grid + self.q_p2g - self.action.q_mt - self.q_load - self.q_vented
    }
}

/// Observation adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    pub mode: AdversaryMode,
    pub itdsa: ItdsaSpec<f64>,
    pub budget: AdversaryBudget<f64>,
}

impl Adversary {
    pub fn from_config(mode: AdversaryMode, cfg: &AttackConfig) -> Self {
        Self {
            mode,
            itdsa: cfg.itdsa.clone(),
            budget: cfg.budget.clone(),
        }
    }
}

/// Min-max scaling of the observation into [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsScale {
    pub spans: [Span<f64>; OBS_DIM],
}

impl ObsScale {
    pub fn normalize_one(&self, index: usize, value: f64) -> f64 {
        let span = self.spans[index];
        if span.width() <= 0.0 {
            return 0.0;
        }
        (2.0 * (value - span.lo) / span.width() - 1.0).clamp(-1.0, 1.0)
    }

    pub fn normalize(&self, raw: &[f64; OBS_DIM]) -> Vec<f64> {
        raw.iter().enumerate().map(|(i, &v)| self.normalize_one(i, v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accounting {
    pub rev: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub dispatch: DispatchResult,
    pub rev: f64,
    pub cost: f64,
    pub c1: f64,
    pub c2: f64,
}

impl StepInfo {
    pub fn profit(&self) -> f64 {
        self.rev - self.cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub observation: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

/// How `reset` picks the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayPick {
    Random,
    Cycle,
}

pub struct IesEnv {
    params: SystemParams,
    days: Vec<DayProfile>,
    scale: ObsScale,
    rng: ChaCha8Rng,
    state: EnvState,
    pick: DayPick,
    next_day: usize,
}

impl IesEnv {
    pub fn new(params: SystemParams, days: Vec<DayProfile>, seed: u64) -> Result<Self> {
        params.validate()?;
        if days.is_empty() {
            return Err(CoreError::InvalidParams("at least one day profile is required".into()));
        }
        for d in &days {
            d.validate()?;
        }
        let scale = observation_scale(&params, &days);
        let state = initial_state(&params, &days[0], 0, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self {
            params,
            days,
            scale,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            pick: DayPick::Random,
            next_day: 0,
        })
    }

    pub fn with_day_pick(mut self, pick: DayPick) -> Self {
        self.pick = pick;
        self
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn days(&self) -> &[DayProfile] {
        &self.days
    }

    pub fn scale(&self) -> &ObsScale {
        &self.scale
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Starts a new episode on a day chosen by the configured rule and
    /// returns the clean observation.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let index = match self.pick {
            DayPick::Random => self.rng.random_range(0..self.days.len()),
            DayPick::Cycle => {
                let i = self.next_day % self.days.len();
                self.next_day += 1;
                i
            }
        };
        self.reset_day(index)
    }

    pub fn reset_day(&mut self, index: usize) -> Result<Vec<f64>> {
        let day = self.days.get(index).ok_or(CoreError::InvalidParams(format!(
            "day {index} out of range for {} profiles",
            self.days.len()
        )))?;
        self.state = initial_state(&self.params, day, index, &mut self.rng)?;
        self.observe(None)
    }

    fn space_heat(&self, t_in_prev: f64, t_out: f64) -> f64 {
        space_heat(&self.params, t_in_prev, t_out)
    }

    /// Normalized observation; the adversary changes only the returned
    /// vector.
    pub fn observe(&self, adversary: Option<&Adversary>) -> Result<Vec<f64>> {
        self.observe_with(adversary, None)
    }

    /// As [`observe`](Self::observe), with an ascent direction for the
    /// worst-case probe.
    pub fn observe_with(&self, adversary: Option<&Adversary>, direction: Option<&[f64]>) -> Result<Vec<f64>> {
        let clean = self.scale.normalize(&self.state.raw_observation());
        let Some(adv) = adversary else {
            return Ok(clean);
        };
        let falsified = match adv.mode {
            AdversaryMode::Itdsa => Some(self.falsified_observation(&clean, &adv.itdsa)),
            _ => None,
        };
        let ctx = PerturbContext {
            falsified: falsified.as_deref(),
            direction,
        };
        perturb_observation(&clean, &adv.budget, adv.mode, ctx)
    }

    /// Observation with the heat load recomputed from temperatures the
    /// attack has rewritten.
    fn falsified_observation(&self, clean: &[f64], spec: &ItdsaSpec<f64>) -> Vec<f64> {
        let s = &self.state;
        let hour = s.hour.min(HOURS_PER_DAY - 1);
        let t_out = s.day.t_out[hour];
        let b = &self.params.building;
        let reading = ThermalReading::consistent(self.params.comfort.t_comfort, s.t_in_prev, t_out, b);
        let fake = reading.falsified(hour, t_out, spec, b);
        let heat = self.params.buildings * fake.heat + s.day.basic_h[hour];
        let mut out = clean.to_vec();
        out[obs_index::H_BASIC] = self.scale.normalize_one(obs_index::H_BASIC, heat);
        out
    }

    /// Ranges that the six raw action components map onto at the current
    /// hour.
    pub fn action_ranges(&self) -> Result<[Span<f64>; ACTION_DIM]> {
        let s = &self.state;
        let cp = &self.params.converters;
        let bands = price_bands(&s.tou, &s.pricing, check_hour(s.hour)?)?;
        Ok([
            cp.p2g_range,
            Span::new(0.0, cp.eb_p_max()),
            cp.mt_range,
            bands.heat,
            bands.elec,
            bands.gas,
        ])
    }

    /// Maps a policy output in [-1, 1]⁶ onto device set-points and prices.
    pub fn decode_action(&self, raw: &[f64]) -> Result<Decoded> {
        if raw.len() != ACTION_DIM {
            return Err(CoreError::DimensionMismatch {
                expected: ACTION_DIM,
                got: raw.len(),
            });
        }
        if raw.iter().any(|r| !r.is_finite()) {
            return Err(CoreError::NonFinite("raw action"));
        }
        let s = &self.state;
        let cp = &self.params.converters;
        let ranges = self.action_ranges()?;
        let mut requested = [0.0; ACTION_DIM];
        let mut value = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            requested[i] = raw[i].clamp(-1.0, 1.0);
            value[i] = ranges[i].lo + 0.5 * (requested[i] + 1.0) * ranges[i].width();
        }
        let p2g = clamp_ramp(value[act_index::P2G], s.prev_action.p_p2g, cp.p2g_range, cp.p2g_ramp);
        let mt = clamp_ramp(value[act_index::MT], s.prev_action.q_mt, cp.mt_range, cp.mt_ramp);
        let prices = if self.params.scenario.idr {
            Tariff::new(
                value[act_index::PRICE_P],
                value[act_index::PRICE_Q],
                value[act_index::PRICE_H],
            )
        } else {
            benchmarks(&s.tou, &s.pricing, s.hour)?
        };
        let action = Action {
            p_p2g: p2g.value,
            p_eb: value[act_index::EB],
            q_mt: mt.value,
            price_h: prices.heat,
            price_p: prices.elec,
            price_q: prices.gas,
        };
        Ok(Decoded {
            action,
            requested,
            realized: normalize_action(&action, &ranges),
            p2g_ramp_infeasible: p2g.infeasible,
            mt_ramp_infeasible: mt.infeasible,
        })
    }

    /// Serves the loads and closes the carrier balances for the current
    /// hour. Advances the flexible-load ledgers; storage, temperature and
    /// clock are left for [`step`](Self::step).
    pub fn dispatch(&mut self, decoded: &Decoded) -> Result<DispatchResult> {
        let p = &self.params;
        let s = &mut self.state;
        let hour = check_hour(s.hour)?;
        let mut a = decoded.action;
        let mut flags = DispatchFlags {
            p2g_ramp_infeasible: decoded.p2g_ramp_infeasible,
            mt_ramp_infeasible: decoded.mt_ramp_infeasible,
            ..Default::default()
        };
        let day = &s.day;

        let levels = if p.scenario.idr {
            levels_from_prices(a.prices(), &s.tou, &s.pricing, hour)?
        } else {
            Tariff::default()
        };
        s.ledger_e.sigma = p.flex.sample_sigma(&mut self.rng);
        s.ledger_g.sigma = p.flex.sample_sigma(&mut self.rng);
        let elec: FlexOutcome<f64> = flex_shift(&mut s.ledger_e, hour, levels.elec, &mut self.rng)?;
        let gas: FlexOutcome<f64> = flex_shift(&mut s.ledger_g, hour, levels.gas, &mut self.rng)?;

        let t_out = day.t_out[hour];
        let h_space = space_heat(p, s.t_in_prev, t_out);
        let h_basic = h_space + day.basic_h[hour];
        let h_cut_max = p.buildings * max_cuttable_heat(s.t_in_prev, t_out, hour, &p.building, &p.comfort)?;
        let h_cut = levels.heat * h_cut_max;
        let h_load = h_basic - h_cut;

        // Electricity: ESD first, then the grid; converters are curtailed
        // if imports would exceed the limit.
        let cp = &p.converters;
        let mut conv = converters(a.p_eb, a.p_p2g, a.q_mt, cp)?;
        let wt_available = day.wt[hour];
        let mut p_load = elec.served;
        let net = wt_available + conv.p_mt - p_load - a.p_eb - a.p_p2g;
        let esd: StorageOutcome<f64> = if hour == HOURS_PER_DAY - 1 {
            restore_request(s.c_esd, &p.esd)
        } else if net > 0.0 {
            crate::devices::storage_step(s.c_esd, net, 0.0, &p.esd)?
        } else {
            crate::devices::storage_step(s.c_esd, 0.0, -net, &p.esd)?
        };
        if hour == HOURS_PER_DAY - 1 && (esd.c_next - p.esd.c0).abs() > TERMINAL_TOL {
            flags.esd_terminal_gap = true;
        }
        let esd_out = esd.net_output();
        let mut p_grid = p_load + a.p_eb + a.p_p2g - wt_available - conv.p_mt - esd_out;
        let mut wt_used = wt_available;
        let mut p_unserved = 0.0;
        let mut p_dumped = 0.0;
        if p_grid > p.grid_p.hi {
            let mut excess = p_grid - p.grid_p.hi;
            let p2g_floor = cp.p2g_range.lo.max(s.prev_action.p_p2g + cp.p2g_ramp.lo).min(a.p_p2g);
            let cut = excess.min(a.p_p2g - p2g_floor);
            a.p_p2g -= cut;
            excess -= cut;
            let cut = excess.min(a.p_eb);
            a.p_eb -= cut;
            excess -= cut;
            flags.converters_curtailed = true;
            if excess > 0.0 {
                p_unserved = excess;
                p_load -= excess;
                flags.elec_unserved = true;
            }
            p_grid = p.grid_p.hi;
            conv = converters(a.p_eb, a.p_p2g, a.q_mt, cp)?;
        } else if p_grid < p.grid_p.lo {
            let mut surplus = p.grid_p.lo - p_grid;
            let cut = surplus.min(wt_used);
            wt_used -= cut;
            surplus -= cut;
            flags.wt_curtailed = cut > 0.0;
            if surplus > 0.0 {
                p_dumped = surplus;
                flags.elec_dumped = true;
            }
            p_grid = p.grid_p.lo;
        }

        // Heat: HSD absorbs the mismatch within its limits.
        let hsd_params = p.effective_hsd();
        let mismatch = conv.h_eb + conv.h_mt - h_load;
        let hsd = if mismatch > 0.0 {
            crate::devices::storage_step(s.c_hsd, mismatch, 0.0, &hsd_params)?
        } else {
            crate::devices::storage_step(s.c_hsd, 0.0, -mismatch, &hsd_params)?
        };
        let hsd_out = hsd.net_output();
        let heat_slack = h_load - (conv.h_eb + conv.h_mt + hsd_out);
        flags.heat_shortfall = heat_slack > TERMINAL_TOL;
        flags.heat_surplus = heat_slack < -TERMINAL_TOL;
        if hour == HOURS_PER_DAY - 1 && !hsd_params.is_absent() && (hsd.c_next - hsd_params.c0).abs() > TERMINAL_TOL {
            flags.hsd_terminal_gap = true;
        }

        // Gas: the grid is the only slack.
        let mut q_load = gas.served;
        let mut q_grid = q_load + a.q_mt - conv.q_p2g;
        let mut q_unserved = 0.0;
        let mut q_vented = 0.0;
        if q_grid > p.grid_q.hi {
            q_unserved = q_grid - p.grid_q.hi;
            q_load -= q_unserved;
            q_grid = p.grid_q.hi;
            flags.gas_unserved = true;
        } else if q_grid < p.grid_q.lo {
            q_vented = p.grid_q.lo - q_grid;
            q_grid = p.grid_q.lo;
            flags.gas_vented = true;
        }

        let space_delivered = (h_load - day.basic_h[hour]) / p.buildings;
        let t_in = indoor_temp_from_heat(space_delivered, s.t_in_prev, t_out, &p.building);
        let sell = p.pricing.sell_ratio;
        Ok(DispatchResult {
            hour,
            action: a,
            levels,
            wt_available,
            wt_used,
            h_eb: conv.h_eb,
            q_p2g: conv.q_p2g,
            p_mt: conv.p_mt,
            h_mt: conv.h_mt,
            p_load,
            p_shift: elec.shifted,
            p_payback: elec.payback,
            p_unserved,
            p_dumped,
            q_load,
            q_shift: gas.shifted,
            q_payback: gas.payback,
            q_unserved,
            q_vented,
            h_basic,
            h_cut,
            h_load,
            heat_slack,
            esd_out,
            hsd_out,
            c_esd_prev: s.c_esd,
            c_esd: esd.c_next,
            c_hsd_prev: s.c_hsd,
            c_hsd: hsd.c_next,
            hsd_c_max: hsd_params.c_max,
            p_grid,
            q_grid,
            grid_price_e: s.grid_price_e,
            grid_price_g: s.grid_price_g,
            sell_price_e: sell * s.grid_price_e,
            sell_price_g: sell * s.grid_price_g,
            t_in,
            flags,
        })
    }

    pub fn revenue_and_cost(&self, d: &DispatchResult) -> Accounting {
        revenue_and_cost(d, &self.params)
    }

    pub fn penalties(&self, decoded: &Decoded, d: &DispatchResult) -> Penalties {
        penalties(&self.state.prev_norm, decoded, d, &self.params.penalty)
    }

    /// Applies one raw action. The adversary, if any, only changes the
    /// returned observation.
    pub fn step(&mut self, raw: &[f64], adversary: Option<&Adversary>) -> Result<StepOutcome> {
        if self.state.done() {
            return Err(CoreError::EpisodeDone);
        }
        let decoded = self.decode_action(raw)?;
        let penalty_base = self.state.prev_norm;
        let d = self.dispatch(&decoded)?;
        let Accounting { rev, cost } = self.revenue_and_cost(&d);
        let Penalties { c1, c2 } = penalties(&penalty_base, &decoded, &d, &self.params.penalty);
        let reward = reward_of(rev, cost, c1, c2);

        let esd_params = self.params.esd;
        let hsd_params = self.params.effective_hsd();
        let s = &mut self.state;
        s.c_esd = d.c_esd;
        s.c_hsd = d.c_hsd;
        s.soc_esd = esd_params.soc(d.c_esd);
        s.soc_hsd = hsd_params.soc(d.c_hsd);
        s.t_in_prev = d.t_in;
        s.prev_action = d.action;
        s.prev_norm = decoded.realized;
        if d.action != decoded.action {
            // Curtailment changed the set-points that later ramps refer to.
            let ranges = self.action_ranges()?;
            self.state.prev_norm = normalize_action(&d.action, &ranges);
        }
        self.state.hour += 1;
        self.refresh_exogenous();
        let observation = self.observe(adversary)?;
        Ok(StepOutcome {
            reward,
            observation,
            done: self.state.done(),
            info: StepInfo {
                dispatch: d,
                rev,
                cost,
                c1,
                c2,
            },
        })
    }

    fn refresh_exogenous(&mut self) {
        let hour = self.state.hour.min(HOURS_PER_DAY - 1);
        let h_space = self.space_heat(self.state.t_in_prev, self.state.day.t_out[hour]);
        let s = &mut self.state;
        s.grid_price_e = s.day.tou_e[hour];
        s.grid_price_g = s.day.tou_g[hour];
        s.wt = s.day.wt[hour];
        s.basic_e = s.day.basic_e[hour];
        s.basic_g = s.day.basic_g[hour];
        s.basic_h = h_space + s.day.basic_h[hour];
    }
}

/// Reward as profit less penalties.
pub fn reward_of(rev: f64, cost: f64, c1: f64, c2: f64) -> f64 {
    (rev - cost) - (c1 + c2)
}

fn space_heat(p: &SystemParams, t_in_prev: f64, t_out: f64) -> f64 {
    p.buildings * building_heat_demand(p.comfort.t_comfort, t_in_prev, t_out, &p.building)
}

fn normalize_action(a: &Action, ranges: &[Span<f64>; ACTION_DIM]) -> [f64; ACTION_DIM] {
    let values = a.to_array();
    let mut out = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        let r = ranges[i];
        out[i] = if r.width() > 0.0 {
            (2.0 * (values[i] - r.lo) / r.width() - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        };
    }
    out
}

/// Storage flow that returns the capacity to `c0`, limited by power.
fn restore_request(c: f64, s: &crate::devices::StorageParams<f64>) -> StorageOutcome<f64> {
    let gap = s.c0 - c;
    let (ch, dc) = if gap > 0.0 {
        (gap / (s.eta_ch * s.dt), 0.0)
    } else {
        (0.0, -gap * s.eta_dc / s.dt)
    };
    crate::devices::storage_step(c, ch, dc, s).expect("restore request is non-negative and one-sided")
}

fn initial_state<R: Rng + ?Sized>(p: &SystemParams, day: &DayProfile, day_index: usize, rng: &mut R) -> Result<EnvState> {
    let tou = day.tou()?;
    let pricing = p.pricing.params_for(&tou)?;
    let hsd = p.effective_hsd();
    let t_in_prev = p.comfort.t_comfort;
    let bench = benchmarks(&tou, &pricing, 0)?;
    let cp = &p.converters;
    let prev_action = Action {
        p_p2g: cp.p2g_range.lo,
        p_eb: 0.0,
        q_mt: cp.mt_range.lo,
        price_h: bench.heat,
        price_p: bench.elec,
        price_q: bench.gas,
    };
    let bands = price_bands(&tou, &pricing, 0)?;
    let ranges = [
        cp.p2g_range,
        Span::new(0.0, cp.eb_p_max()),
        cp.mt_range,
        bands.heat,
        bands.elec,
        bands.gas,
    ];
    let mut ledger_e = FlexLoadLedger::new(Carrier::Electric, day.basic_e.to_vec(), p.flex.sample_eta(rng), p.gamma_tse);
    let mut ledger_g = FlexLoadLedger::new(Carrier::Gas, day.basic_g.to_vec(), p.flex.sample_eta(rng), p.gamma_tsq);
    ledger_e.sigma = 0.0;
    ledger_g.sigma = 0.0;
    Ok(EnvState {
        hour: 0,
        day_index,
        c_esd: p.esd.c0,
        c_hsd: hsd.c0,
        soc_esd: p.esd.soc(p.esd.c0),
        soc_hsd: hsd.soc(hsd.c0),
        grid_price_e: day.tou_e[0],
        grid_price_g: day.tou_g[0],
        wt: day.wt[0],
        basic_e: day.basic_e[0],
        basic_g: day.basic_g[0],
        basic_h: space_heat(p, t_in_prev, day.t_out[0]) + day.basic_h[0],
        t_in_prev,
        ledger_e,
        ledger_g,
        prev_norm: normalize_action(&prev_action, &ranges),
        prev_action,
        day: day.clone(),
        tou,
        pricing,
    })
}

/// Profile-derived observation bounds. The heat bound covers every
/// admissible previous indoor temperature and carries a margin so that
/// falsified readings stay distinguishable.
fn observation_scale(p: &SystemParams, days: &[DayProfile]) -> ObsScale {
    let extremes = |f: &dyn Fn(&DayProfile) -> &[f64; HOURS_PER_DAY]| {
        days.iter()
            .flat_map(|d| f(d).iter().copied())
            .fold(Span::new(f64::INFINITY, f64::NEG_INFINITY), |s, x| Span::new(s.lo.min(x), s.hi.max(x)))
    };
    let coolest = (0..HOURS_PER_DAY)
        .filter_map(|h| p.comfort.band_min_temperature(h).ok())
        .fold(p.comfort.t_comfort, f64::min);
    let mut heat = Span::new(f64::INFINITY, f64::NEG_INFINITY);
    for d in days {
        for h in 0..HOURS_PER_DAY {
            let lo = space_heat(p, coolest, d.t_out[h]) + d.basic_h[h];
            let hi = space_heat(p, p.comfort.t_comfort, d.t_out[h]) + d.basic_h[h];
            heat = Span::new(heat.lo.min(lo.min(hi)), heat.hi.max(lo.max(hi)));
        }
    }
    let margin = 0.1 * heat.width().max(1.0);
    let heat = Span::new(heat.lo - margin, heat.hi + margin);
    ObsScale {
        spans: [
            Span::new(0.0, 1.0),
            Span::new(0.0, 1.0),
            extremes(&|d| &d.tou_e),
            extremes(&|d| &d.tou_g),
            extremes(&|d| &d.wt),
            extremes(&|d| &d.basic_e),
            extremes(&|d| &d.basic_g),
            heat,
            Span::new(0.0, (HOURS_PER_DAY - 1) as f64),
        ],
    }
}

pub fn revenue_and_cost(d: &DispatchResult, p: &SystemParams) -> Accounting {
    let a = &d.action;
    let p_buy = d.p_grid.max(0.0);
    let p_sell = (-d.p_grid).max(0.0);
    let q_buy = d.q_grid.max(0.0);
    let q_sell = (-d.q_grid).max(0.0);
    let rev = a.price_p * d.p_load
        + a.price_q * d.q_load
        + a.price_h * d.h_load
        + d.sell_price_e * p_sell
        + d.sell_price_g * q_sell;
    let cost = p_buy * d.grid_price_e
        + q_buy * d.grid_price_g
        + p.gamma_ch * d.h_cut
        + p.gamma_tse * d.p_shift.max(0.0)
        + p.gamma_tsq * d.q_shift.max(0.0);
    Accounting { rev, cost }
}

/// Action-rate penalty against `prev_norm` and the heat-balance penalty
/// judged on device output and the HSD content before the step.
pub fn penalties(prev_norm: &[f64; ACTION_DIM], decoded: &Decoded, d: &DispatchResult, pp: &PenaltyParams) -> Penalties {
    let c1 = (0..ACTION_DIM).fold(0.0, |c1, i| {
        let change = decoded.requested[i] - prev_norm[i];
        c1 + pp.delta1[i] * (change - pp.a_umax[i]).max(0.0) + pp.delta2[i] * (-change - pp.a_dmax[i]).max(0.0)
    });
    let supply = d.h_eb + d.h_mt;
    let c2 = if supply + d.c_hsd_prev < d.h_load {
        pp.beta_lr * (d.h_load - (supply + d.c_hsd_prev))
    } else if supply > d.h_load + d.hsd_c_max - d.c_hsd_prev {
        pp.beta_el * (supply - (d.h_load + d.hsd_c_max - d.c_hsd_prev))
    } else {
        0.0
    };
    Penalties { c1, c2 }
}
