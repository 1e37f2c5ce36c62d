//! Device, storage and flexible-load models of the integrated energy system.
//!
//! Everything here is a pure function over value-type parameter records. The
//! only stateful piece is [`FlexLoadLedger`], which tracks time-shifted load
//! that is still waiting to be paid back.
//!
//! Hours are 0-based step indices. The comfort bands use the day band for
//! steps 7..=18 and the night band for 0..=6 and 19..=23.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

pub const HOURS_PER_DAY: usize = 24;

/// Validated hour index.
pub fn check_hour(hour: usize) -> Result<usize> {
    if hour < HOURS_PER_DAY {
        Ok(hour)
    } else {
        Err(CoreError::HourOutOfRange(hour as i64))
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Span<S: Scalar> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Span<S> {
    pub fn new(lo: S, hi: S) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> S {
        self.hi - self.lo
    }

    pub fn contains(&self, x: S) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: S) -> S {
        x.clip(self.lo, self.hi)
    }

    fn is_ordered(&self) -> bool {
        self.lo <= self.hi
    }
}

// ---------------------------------------------------------------------------
// Building thermodynamics and comfort
// ---------------------------------------------------------------------------

/// Single representative building for the first-order heat balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BuildingParams<S: Scalar> {
    /// Comprehensive heat-transfer coefficient, W/(m²·°C).
    pub k: S,
    /// Envelope surface area, m².
    pub area: S,
    /// Heated volume, m³.
    pub volume: S,
    /// Specific heat of indoor air, kJ/(kg·°C).
    pub c_air: S,
    /// Air density, kg/m³.
    pub rho_air: S,
    /// Step length, h.
    pub dt: S,
}

impl<S: Scalar> Default for BuildingParams<S> {
    fn default() -> Self {
        Self {
            k: S::lit(0.5),
            area: S::lit(2400.0),
            volume: S::lit(36000.0),
            c_air: S::lit(1.007),
            rho_air: S::lit(1.2),
            dt: S::one(),
        }
    }
}

impl<S: Scalar> BuildingParams<S> {
    /// Envelope conductance K·F in kW/°C.
    pub fn conductance_kw(&self) -> S {
        self.k * self.area / S::lit(1000.0)
    }

    /// Air heat capacity c·ρ·V in kWh/°C.
    pub fn air_capacity_kwh(&self) -> S {
        self.c_air * self.rho_air * self.volume / S::lit(3600.0)
    }

    /// Denominator of the heat balance, °C/kW.
    fn balance_denominator(&self) -> S {
        S::one() / self.conductance_kw() + self.dt / self.air_capacity_kwh()
    }

    /// Weight of the previous-step temperature difference.
    fn inertia_ratio(&self) -> S {
        self.conductance_kw() / self.air_capacity_kwh() * self.dt
    }

    /// Heat (kW) delivered per °C of indoor temperature at fixed history.
    pub fn heat_per_degree(&self) -> S {
        S::one() / self.balance_denominator()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.k, self.area, self.volume, self.c_air, self.rho_air, self.dt];
        if fields.iter().all(|v| v.is_finite() && *v > S::zero()) {
            Ok(())
        } else {
            Err(CoreError::InvalidParams(
                "building parameters must be strictly positive".into(),
            ))
        }
    }
}

/// Heat demand (kW) that brings the building to `t_in_target` given the
/// previous indoor temperature and the outdoor temperature.
pub fn building_heat_demand<S: Scalar>(
    t_in_target: S,
    t_in_prev: S,
    t_out: S,
    b: &BuildingParams<S>,
) -> S {
    ((t_in_target - t_out) + b.inertia_ratio() * (t_in_prev - t_out)) / b.balance_denominator()
}

/// Inverse of [`building_heat_demand`] in the target temperature.
pub fn indoor_temp_from_heat<S: Scalar>(
    heat: S,
    t_in_prev: S,
    t_out: S,
    b: &BuildingParams<S>,
) -> S {
    heat * b.balance_denominator() - b.inertia_ratio() * (t_in_prev - t_out) + t_out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ComfortParams<S: Scalar> {
    /// Skin comfort temperature, °C.
    pub t_skin: S,
    /// Metabolic rate (model units).
    pub metabolic: S,
    /// Clothing thermal resistance (model units).
    pub clothing: S,
    /// Indoor set-point, °C.
    pub t_comfort: S,
    pub day_band: S,
    pub night_band: S,
}

impl<S: Scalar> ComfortParams<S> {
    /// Metabolic rate chosen so that PMV vanishes at `t_comfort`.
    pub fn calibrated(t_skin: S, clothing: S, t_comfort: S) -> Self {
        let metabolic = S::lit(3.76) * (t_skin - t_comfort) / (S::lit(2.43) * (clothing + S::lit(0.1)));
        Self {
            t_skin,
            metabolic,
            clothing,
            t_comfort,
            day_band: S::lit(0.5),
            night_band: S::lit(0.9),
        }
    }

    /// |PMV| limit for the step index.
    pub fn band(&self, hour: usize) -> Result<S> {
        check_hour(hour)?;
        Ok(if (7..=18).contains(&hour) {
            self.day_band
        } else {
            self.night_band
        })
    }

    /// Indoor temperature at which the PMV equals `vote`.
    pub fn temperature_for_pmv(&self, vote: S) -> S {
        self.t_skin - (S::lit(2.43) - vote) * self.metabolic * (self.clothing + S::lit(0.1)) / S::lit(3.76)
    }

    /// Coolest indoor temperature that still satisfies the band at `hour`.
    pub fn band_min_temperature(&self, hour: usize) -> Result<S> {
        Ok(self.temperature_for_pmv(-self.band(hour)?))
    }

    pub fn band_max_temperature(&self, hour: usize) -> Result<S> {
        Ok(self.temperature_for_pmv(self.band(hour)?))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.metabolic > S::zero()
            && self.clothing > S::zero()
            && self.day_band > S::zero()
            && self.day_band <= self.night_band;
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidParams("comfort parameters out of domain".into()))
        }
    }
}

impl<S: Scalar> Default for ComfortParams<S> {
    fn default() -> Self {
        Self::calibrated(S::lit(33.5), S::lit(1.5), S::lit(21.0))
    }
}

/// Predicted mean vote for indoor temperature `t_in`.
pub fn pmv<S: Scalar>(t_in: S, c: &ComfortParams<S>) -> S {
    S::lit(2.43) - S::lit(3.76) * (c.t_skin - t_in) / (c.metabolic * (c.clothing + S::lit(0.1)))
}

pub fn pmv_band<S: Scalar>(hour: usize, c: &ComfortParams<S>) -> Result<S> {
    c.band(hour)
}

/// Largest heat cut (kW) that keeps the building inside the comfort band.
///
/// Zero when the band's lowest admissible temperature is not below the
/// set-point.
pub fn max_cuttable_heat<S: Scalar>(
    t_in_prev: S,
    t_out: S,
    hour: usize,
    b: &BuildingParams<S>,
    c: &ComfortParams<S>,
) -> Result<S> {
    let t_min = c.band_min_temperature(hour)?;
    if t_min >= c.t_comfort {
        return Ok(S::zero());
    }
    let full = building_heat_demand(c.t_comfort, t_in_prev, t_out, b);
    let reduced = building_heat_demand(t_min, t_in_prev, t_out, b);
    Ok((full - reduced).pos())
}

// ---------------------------------------------------------------------------
// Flexible loads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carrier {
    Electric,
    Gas,
}

/// Sampling distributions of the demand-response behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlexBehaviour {
    pub sigma_mean: f64,
    pub sigma_std: f64,
    pub eta_mean: f64,
    pub eta_std: f64,
}

impl Default for FlexBehaviour {
    fn default() -> Self {
        Self {
            sigma_mean: 0.2,
            sigma_std: 0.2,
            eta_mean: 10.0,
            eta_std: 6.0,
        }
    }
}

impl FlexBehaviour {
    /// Price sensitivity, clamped to [0, 1].
    pub fn sample_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        normal(self.sigma_mean, self.sigma_std).sample(rng).clamp(0.0, 1.0)
    }

    /// Patience factor in hours, clamped to [1, 24].
    pub fn sample_eta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        normal(self.eta_mean, self.eta_std).sample(rng).clamp(1.0, 24.0)
    }
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std.max(0.0)).expect("non-negative std")
}

/// Load shifted at hour `origin` and not yet paid back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ShiftEntry<S: Scalar> {
    pub origin: usize,
    pub amount: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FlexLoadLedger<S: Scalar> {
    pub carrier: Carrier,
    /// Base demand per hour (kW or m³/h).
    pub basic_profile: Vec<S>,
    /// Price sensitivity for the current step.
    pub sigma: S,
    /// Patience factor, h.
    pub eta_patience: S,
    pub outstanding: Vec<ShiftEntry<S>>,
    /// Compensation paid per unit of positive shift.
    pub gamma_comp: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexOutcome<S> {
    pub served: S,
    pub shifted: S,
    pub payback: S,
}

impl<S: Scalar> FlexLoadLedger<S> {
    pub fn new(carrier: Carrier, basic_profile: Vec<S>, eta_patience: S, gamma_comp: S) -> Self {
        Self {
            carrier,
            basic_profile,
            sigma: S::zero(),
            eta_patience,
            outstanding: Vec::new(),
            gamma_comp,
        }
    }

    /// Sum of shifted load still awaiting payback.
    pub fn outstanding_total(&self) -> S {
        self.outstanding.iter().map(|e| e.amount).sum()
    }
}

/// Probability that an entry shifted at `origin` is paid back at `hour`.
pub fn payback_probability<S: Scalar>(price_level: S, amount: S, hour: usize, origin: usize, eta: S) -> S {
    let sign = if amount > S::zero() {
        S::one()
    } else if amount < S::zero() {
        -S::one()
    } else {
        S::zero()
    };
    let elapsed = S::from_usize(hour.saturating_sub(origin)).unwrap();
    (-price_level * sign / S::two() + elapsed / eta).clip(S::zero(), S::one())
}

/// Serves one hour of a flexible load.
///
/// Shifts `basic·σ·ς` away from the current hour, pays back outstanding
/// entries with their clip probability, removes repaid entries and records
/// the new shift.
pub fn flex_shift<S: Scalar, R: Rng + ?Sized>(
    ledger: &mut FlexLoadLedger<S>,
    hour: usize,
    price_level: S,
    rng: &mut R,
) -> Result<FlexOutcome<S>> {
    check_hour(hour)?;
    if !price_level.is_finite() {
        return Err(CoreError::NonFinite("price level"));
    }
    let basic = *ledger
        .basic_profile
        .get(hour)
        .ok_or(CoreError::DimensionMismatch {
            expected: HOURS_PER_DAY,
            got: ledger.basic_profile.len(),
        })?;
    let shift_fraction = (ledger.sigma * price_level).clip(-S::one(), S::one());
    let shifted = basic * shift_fraction;

    let mut payback = S::zero();
    let eta = ledger.eta_patience;
    ledger.outstanding.retain(|entry| {
        if entry.origin >= hour {
            return true;
        }
        let p = payback_probability(price_level, entry.amount, hour, entry.origin, eta);
        let draw = S::lit(rng.random::<f64>());
        if draw < p {
            payback += entry.amount;
            false
        } else {
            true
        }
    });
    if shifted != S::zero() {
        ledger.outstanding.push(ShiftEntry { origin: hour, amount: shifted });
    }
    Ok(FlexOutcome {
        served: basic - shifted + payback,
        shifted,
        payback,
    })
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StorageParams<S: Scalar> {
    pub c_max: S,
    pub c_min: S,
    pub c0: S,
    pub p_ch_max: S,
    pub p_dc_max: S,
    pub eta_ch: S,
    pub eta_dc: S,
    /// Step length, h.
    pub dt: S,
}

impl<S: Scalar> StorageParams<S> {
    /// Storage with `c_min = 0.1·c_max` and `c0 = 0.5·c_max`.
    pub fn with_defaults(c_max: S, p_max: S, eta: S) -> Self {
        Self {
            c_max,
            c_min: S::lit(0.1) * c_max,
            c0: S::half() * c_max,
            p_ch_max: p_max,
            p_dc_max: p_max,
            eta_ch: eta,
            eta_dc: eta,
            dt: S::one(),
        }
    }

    /// A storage slot with no capacity; used when the device is absent.
    pub fn absent() -> Self {
        Self {
            c_max: S::zero(),
            c_min: S::zero(),
            c0: S::zero(),
            p_ch_max: S::zero(),
            p_dc_max: S::zero(),
            eta_ch: S::one(),
            eta_dc: S::one(),
            dt: S::one(),
        }
    }

    pub fn is_absent(&self) -> bool {
        self.c_max <= S::zero()
    }

    pub fn soc(&self, c: S) -> S {
        if self.is_absent() {
            S::zero()
        } else {
            c / self.c_max
        }
    }

    /// Largest charging power accepted from capacity `c`.
    pub fn charge_limit(&self, c: S) -> S {
        if self.is_absent() {
            return S::zero();
        }
        let by_capacity = ((self.c_max - c) / (self.eta_ch * self.dt)).pos();
        self.p_ch_max.min(by_capacity)
    }

    /// Largest discharging power available from capacity `c`.
    pub fn discharge_limit(&self, c: S) -> S {
        if self.is_absent() {
            return S::zero();
        }
        let by_capacity = ((c - self.c_min) * self.eta_dc / self.dt).pos();
        self.p_dc_max.min(by_capacity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_absent() {
            return Ok(());
        }
        let ok = self.c_min <= self.c0
            && self.c0 <= self.c_max
            && self.eta_ch > S::zero()
            && self.eta_ch <= S::one()
            && self.eta_dc > S::zero()
            && self.eta_dc <= S::one()
            && self.p_ch_max >= S::zero()
            && self.p_dc_max >= S::zero()
            && self.dt > S::zero();
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidParams("storage parameters out of domain".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageOutcome<S> {
    pub c_next: S,
    pub soc: S,
    /// Realized charging power after clamping.
    pub p_ch: S,
    /// Realized discharging power after clamping.
    pub p_dc: S,
}

impl<S: Scalar> StorageOutcome<S> {
    /// Signed flow seen by the carrier balance: discharge positive.
    pub fn net_output(&self) -> S {
        self.p_dc - self.p_ch
    }
}

/// Advances a storage unit by one step. Requests beyond power or capacity
/// limits are clamped; the realized powers are returned.
pub fn storage_step<S: Scalar>(c: S, p_ch: S, p_dc: S, s: &StorageParams<S>) -> Result<StorageOutcome<S>> {
    if !(p_ch.is_finite() && p_dc.is_finite() && c.is_finite()) {
        return Err(CoreError::NonFinite("storage request"));
    }
    if p_ch < S::zero() || p_dc < S::zero() {
        return Err(CoreError::OutOfRange {
            name: "storage power",
            value: p_ch.min(p_dc).as_f64(),
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if p_ch > S::zero() && p_dc > S::zero() {
        return Err(CoreError::SimultaneousChargeDischarge {
            charge: p_ch.as_f64(),
            discharge: p_dc.as_f64(),
        });
    }
    let p_ch = p_ch.min(s.charge_limit(c));
    let p_dc = p_dc.min(s.discharge_limit(c));
    let mut c_next = c + (s.eta_ch * p_ch - p_dc / s.eta_dc) * s.dt;
    if !s.is_absent() {
        c_next = c_next.clip(s.c_min.min(c), s.c_max.max(c));
    } else {
        c_next = S::zero();
    }
    Ok(StorageOutcome {
        c_next,
        soc: s.soc(c_next),
        p_ch,
        p_dc,
    })
}

// ---------------------------------------------------------------------------
// Converters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConverterParams<S: Scalar> {
    pub eb_eta: S,
    /// Maximum EB heat output, kW.
    pub eb_h_max: S,
    pub p2g_eta: S,
    /// P2G electrical input range, kW.
    pub p2g_range: Span<S>,
    /// P2G ramp limits, kW/h.
    pub p2g_ramp: Span<S>,
    pub mt_eta_e: S,
    pub mt_eta_h: S,
    pub mt_eta_loss: S,
    /// MT gas consumption range, m³/h.
    pub mt_range: Span<S>,
    pub mt_ramp: Span<S>,
    /// Gas calorific value, kWh/m³.
    pub hhv: S,
}

impl<S: Scalar> Default for ConverterParams<S> {
    fn default() -> Self {
        Self {
            eb_eta: S::lit(0.99),
            eb_h_max: S::lit(300.0),
            p2g_eta: S::lit(0.6),
            p2g_range: Span::new(S::lit(100.0), S::lit(500.0)),
            p2g_ramp: Span::new(S::lit(-200.0), S::lit(200.0)),
            mt_eta_e: S::lit(0.4),
            mt_eta_h: S::lit(0.5),
            mt_eta_loss: S::lit(0.1),
            mt_range: Span::new(S::lit(10.0), S::lit(40.0)),
            mt_ramp: Span::new(S::lit(-10.0), S::lit(10.0)),
            hhv: S::lit(9.7),
        }
    }
}

impl<S: Scalar> ConverterParams<S> {
    /// EB electrical input that yields the maximum heat output.
    pub fn eb_p_max(&self) -> S {
        self.eb_h_max / self.eb_eta
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: S| x > S::zero() && x < S::one();
        let eff_sum = self.mt_eta_e + self.mt_eta_h + self.mt_eta_loss;
        let ok = unit(self.eb_eta)
            && unit(self.p2g_eta)
            && unit(self.mt_eta_e)
            && unit(self.mt_eta_h)
            && unit(self.mt_eta_loss)
            && (eff_sum - S::one()).abs() < S::lit(1e-9)
            && self.p2g_range.is_ordered()
            && self.p2g_ramp.is_ordered()
            && self.mt_range.is_ordered()
            && self.mt_ramp.is_ordered()
            && self.eb_h_max >= S::zero()
            && self.hhv > S::zero();
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidParams("converter parameters out of domain".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConverterOutput<S> {
    pub h_eb: S,
    pub q_p2g: S,
    pub p_mt: S,
    pub h_mt: S,
}

fn check_input<S: Scalar>(name: &'static str, value: S, hi: S) -> Result<()> {
    let tol = S::lit(1e-9) * (S::one() + hi.abs());
    if value.is_finite() && value >= -tol && value <= hi + tol {
        Ok(())
    } else {
        Err(CoreError::OutOfRange {
            name,
            value: value.as_f64(),
            lo: 0.0,
            hi: hi.as_f64(),
        })
    }
}

/// Evaluates the electric boiler, power-to-gas unit and micro gas turbine.
pub fn converters<S: Scalar>(p_eb: S, p_p2g: S, q_mt: S, cp: &ConverterParams<S>) -> Result<ConverterOutput<S>> {
    check_input("EB input", p_eb, cp.eb_p_max())?;
    check_input("P2G input", p_p2g, cp.p2g_range.hi)?;
    check_input("MT gas", q_mt, cp.mt_range.hi)?;
    let gas_energy = q_mt * cp.hhv;
    Ok(ConverterOutput {
        h_eb: cp.eb_eta * p_eb,
        q_p2g: cp.p2g_eta * p_p2g / cp.hhv,
        p_mt: (S::one() - cp.mt_eta_h - cp.mt_eta_loss) * gas_energy,
        h_mt: (S::one() - cp.mt_eta_e - cp.mt_eta_loss) * gas_energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampClamp<S> {
    pub value: S,
    /// The range and the ramp window did not intersect.
    pub infeasible: bool,
}

/// Projects `requested` onto `range ∩ [previous + ramp.lo, previous + ramp.hi]`.
///
/// When the two intervals are disjoint the range endpoint nearest to the
/// ramp window is returned and the result is flagged.
pub fn clamp_ramp<S: Scalar>(requested: S, previous: S, range: Span<S>, ramp: Span<S>) -> RampClamp<S> {
    let lo = range.lo.max(previous + ramp.lo);
    let hi = range.hi.min(previous + ramp.hi);
    if lo <= hi {
        RampClamp {
            value: requested.clip(lo, hi),
            infeasible: false,
        }
    } else {
        let value = if previous + ramp.hi < range.lo { range.lo } else { range.hi };
        RampClamp { value, infeasible: true }
    }
}
