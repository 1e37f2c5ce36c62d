//! Real-time retail prices anchored to time-of-use benchmarks.
//!
//! Each carrier's price is `benchmark + level * gain`, clamped into a band
//! around the tariff. Electricity and gas levels lie in [-2, 2] and drive
//! load shifting; the heat level lies in [0, 1] and is the fraction of the
//! cuttable heat load that is cut.

use serde::{Deserialize, Serialize};

use crate::devices::{check_hour, Span, HOURS_PER_DAY};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Level range for shiftable electric and gas loads.
pub fn shift_level_range<S: Scalar>() -> Span<S> {
    Span::new(-S::two(), S::two())
}

/// Level range for heat cutting.
pub fn cut_level_range<S: Scalar>() -> Span<S> {
    Span::new(S::zero(), S::one())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TouSchedule<S: Scalar> {
    /// ¥/kWh per hour.
    pub elec: Vec<S>,
    /// ¥/m³ per hour.
    pub gas: Vec<S>,
    /// ¥/kWh per hour.
    pub heat: Vec<S>,
    pub elec_peak: S,
    pub elec_offpeak: S,
    pub gas_peak: S,
    pub gas_offpeak: S,
}

impl<S: Scalar> TouSchedule<S> {
    /// Schedule whose peak and off-peak values are the hourly extremes.
    pub fn from_hourly(elec: Vec<S>, gas: Vec<S>, heat: Vec<S>) -> Result<Self> {
        let extremes = |v: &[S]| {
            v.iter()
                .fold((S::infinity(), S::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)))
        };
        let (elec_offpeak, elec_peak) = extremes(&elec);
        let (gas_offpeak, gas_peak) = extremes(&gas);
        let tou = Self {
            elec,
            gas,
            heat,
            elec_peak,
            elec_offpeak,
            gas_peak,
            gas_offpeak,
        };
        tou.validate()?;
        Ok(tou)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [&self.elec, &self.gas, &self.heat] {
            if v.len() != HOURS_PER_DAY {
                return Err(CoreError::DimensionMismatch {
                    expected: HOURS_PER_DAY,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite() || *x <= S::zero()) {
                return Err(CoreError::InvalidParams("tariffs must be positive and finite".into()));
            }
        }
        let within = |v: &[S], lo: S, hi: S| v.iter().all(|&x| x >= lo && x <= hi);
        if !within(&self.elec, self.elec_offpeak, self.elec_peak)
            || !within(&self.gas, self.gas_offpeak, self.gas_peak)
        {
            return Err(CoreError::InvalidParams(
                "hourly tariff outside its peak/off-peak envelope".into(),
            ));
        }
        Ok(())
    }

    pub fn max_heat(&self) -> S {
        self.heat.iter().copied().fold(S::neg_infinity(), S::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PricingParams<S: Scalar> {
    pub zeta_p: S,
    pub zeta_q: S,
    pub k_p: S,
    pub k_q: S,
    pub k_h: S,
    pub l_p: S,
    pub l_q: S,
    pub l_h: S,
}

impl<S: Scalar> PricingParams<S> {
    /// Gains chosen so the full level range reaches both ends of each band.
    pub fn spanning(tou: &TouSchedule<S>, zeta: S, l_p: S, l_q: S, l_h: S) -> Self {
        let reach = |bench: S, lo: S, hi: S| (hi - bench).max(bench - lo) / S::two();
        let bench_p = zeta * (tou.elec_peak + tou.elec_offpeak);
        let bench_q = zeta * (tou.gas_peak + tou.gas_offpeak);
        Self {
            zeta_p: zeta,
            zeta_q: zeta,
            k_p: reach(bench_p, l_p * tou.elec_offpeak, l_p * tou.elec_peak),
            k_q: reach(bench_q, l_q * tou.gas_offpeak, l_q * tou.gas_peak),
            k_h: (l_h - S::one()) * tou.max_heat(),
            l_p,
            l_q,
            l_h,
        }
    }

    /// `spanning` with ζ = 0.5, l_P = l_Q = 1 and l_H = 1.5.
    pub fn default_for(tou: &TouSchedule<S>) -> Self {
        Self::spanning(tou, S::half(), S::one(), S::one(), S::lit(1.5))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.zeta_p, self.zeta_q, self.k_p, self.k_q, self.k_h, self.l_p, self.l_q];
        if positive.iter().any(|v| !(*v > S::zero())) || !(self.l_h >= S::one()) {
            return Err(CoreError::InvalidParams(
                "pricing needs positive blends, gains and thresholds (heat threshold >= 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-carrier triple of elec, gas and heat values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tariff<T> {
    pub elec: T,
    pub gas: T,
    pub heat: T,
}

impl<T> Tariff<T> {
    pub fn new(elec: T, gas: T, heat: T) -> Self {
        Self { elec, gas, heat }
    }

    pub fn map<U>(self, f: impl Fn(T) -> U) -> Tariff<U> {
        Tariff::new(f(self.elec), f(self.gas), f(self.heat))
    }
}

pub type PriceLevels<S> = Tariff<S>;
pub type Prices<S> = Tariff<S>;

pub fn benchmarks<S: Scalar>(tou: &TouSchedule<S>, p: &PricingParams<S>, hour: usize) -> Result<Prices<S>> {
    check_hour(hour)?;
    Ok(Tariff::new(
        p.zeta_p * (tou.elec_peak + tou.elec_offpeak),
        p.zeta_q * (tou.gas_peak + tou.gas_offpeak),
        tou.heat[hour],
    ))
}

/// Admissible price bands at `hour`.
pub fn price_bands<S: Scalar>(tou: &TouSchedule<S>, p: &PricingParams<S>, hour: usize) -> Result<Tariff<Span<S>>> {
    check_hour(hour)?;
    let heat = tou.heat[hour];
    Ok(Tariff {
        elec: Span::new(p.l_p * tou.elec_offpeak, p.l_p * tou.elec_peak),
        gas: Span::new(p.l_q * tou.gas_offpeak, p.l_q * tou.gas_peak),
        heat: Span::new(heat, p.l_h * heat),
    })
}

fn check_level<S: Scalar>(name: &'static str, level: S, range: Span<S>) -> Result<()> {
    if !level.is_finite() {
        return Err(CoreError::NonFinite(name));
    }
    if !range.contains(level) {
        return Err(CoreError::OutOfRange {
            name,
            value: level.as_f64(),
            lo: range.lo.as_f64(),
            hi: range.hi.as_f64(),
        });
    }
    Ok(())
}

/// Prices issued to users for the given levels, clamped into the bands.
pub fn realtime_prices<S: Scalar>(
    levels: PriceLevels<S>,
    tou: &TouSchedule<S>,
    p: &PricingParams<S>,
    hour: usize,
) -> Result<Prices<S>> {
    check_level("electric price level", levels.elec, shift_level_range())?;
    check_level("gas price level", levels.gas, shift_level_range())?;
    check_level("heat price level", levels.heat, cut_level_range())?;
    let bench = benchmarks(tou, p, hour)?;
    let bands = price_bands(tou, p, hour)?;
    Ok(Tariff::new(
        bands.elec.clamp(bench.elec + levels.elec * p.k_p),
        bands.gas.clamp(bench.gas + levels.gas * p.k_q),
        bands.heat.clamp(bench.heat + levels.heat * p.k_h),
    ))
}

/// Inverse of [`realtime_prices`]; recovered levels are clamped into their
/// admissible ranges.
pub fn levels_from_prices<S: Scalar>(
    prices: Prices<S>,
    tou: &TouSchedule<S>,
    p: &PricingParams<S>,
    hour: usize,
) -> Result<PriceLevels<S>> {
    for (name, k) in [("electricity", p.k_p), ("gas", p.k_q), ("heat", p.k_h)] {
        if k == S::zero() {
            return Err(CoreError::ZeroGain(name));
        }
    }
    let bench = benchmarks(tou, p, hour)?;
    Ok(Tariff::new(
        shift_level_range().clamp((prices.elec - bench.elec) / p.k_p),
        shift_level_range().clamp((prices.gas - bench.gas) / p.k_q),
        cut_level_range().clamp((prices.heat - bench.heat) / p.k_h),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tou() -> TouSchedule<f64> {
        let elec = (0..24)
            .map(|h| match h {
                0..=6 | 23 => 0.4,
                10..=14 | 18..=20 => 1.2,
                _ => 0.8,
            })
            .collect();
        let gas = (0..24).map(|h| if (8..=20).contains(&h) { 3.5 } else { 2.5 }).collect();
        let heat = (0..24).map(|h| 0.3 + 0.2 * (h % 2) as f64).collect();
        TouSchedule::from_hourly(elec, gas, heat).unwrap()
    }

    #[test]
    fn benchmark_blend() {
        let tou = tou();
        let p = PricingParams::default_for(&tou);
        let b = benchmarks(&tou, &p, 3).unwrap();
        assert!((b.elec - 0.8).abs() < 1e-12);
        assert!((b.gas - 3.0).abs() < 1e-12);
        for h in 0..24 {
            assert_eq!(benchmarks(&tou, &p, h).unwrap().heat, tou.heat[h]);
        }
        assert!(PricingParams { zeta_p: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn realtime_examples() {
        let tou = tou();
        let p = PricingParams::default_for(&tou);
        let zero = realtime_prices(Tariff::default(), &tou, &p, 5).unwrap();
        assert_eq!(zero, benchmarks(&tou, &p, 5).unwrap());

        let p = PricingParams { k_p: 0.2, ..p };
        let r = realtime_prices(Tariff::new(1.0, 0.0, 0.0), &tou, &p, 5).unwrap();
        assert!((r.elec - 1.0).abs() < 1e-12);
        let p = PricingParams { k_p: 0.5, ..p };
        let r = realtime_prices(Tariff::new(2.0, 0.0, 0.0), &tou, &p, 5).unwrap();
        assert_eq!(r.elec, 1.2);

        assert!(realtime_prices(Tariff::new(2.5, 0.0, 0.0), &tou, &p, 5).is_err());
        assert!(realtime_prices(Tariff::new(0.0, 0.0, -0.1), &tou, &p, 5).is_err());
    }

    #[test]
    fn spanning_gains_reach_band_edges() {
        let tou = tou();
        let p = PricingParams::default_for(&tou);
        let lo = realtime_prices(Tariff::new(-2.0, -2.0, 0.0), &tou, &p, 0).unwrap();
        let hi = realtime_prices(Tariff::new(2.0, 2.0, 1.0), &tou, &p, 1).unwrap();
        assert!((lo.elec - 0.4).abs() < 1e-12 && (hi.elec - 1.2).abs() < 1e-12);
        assert!((lo.gas - 2.5).abs() < 1e-12 && (hi.gas - 3.5).abs() < 1e-12);
        assert!((hi.heat - 1.5 * tou.heat[1]).abs() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let tou = tou();
        let p = PricingParams::default_for(&tou);
        let bench = benchmarks(&tou, &p, 9).unwrap();
        assert_eq!(levels_from_prices(bench, &tou, &p, 9).unwrap(), Tariff::default());
        // A saturated price maps back to the level that just reaches the edge.
        let tight = PricingParams { k_p: 0.5, ..p };
        let clamped = realtime_prices(Tariff::new(2.0, 0.0, 0.0), &tou, &tight, 9).unwrap();
        let back = levels_from_prices(clamped, &tou, &tight, 9).unwrap();
        assert!((back.elec - 0.8).abs() < 1e-12);
        assert_eq!(
            levels_from_prices(bench, &tou, &PricingParams { k_q: 0.0, ..p }, 9),
            Err(CoreError::ZeroGain("gas"))
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_in_band(hour in 0usize..24, fe in 0.0f64..=1.0, fg in 0.0f64..=1.0, fh in 0.0f64..=1.0) {
            let tou = tou();
            let p = PricingParams::default_for(&tou);
            let bands = price_bands(&tou, &p, hour).unwrap();
            let lerp = |s: Span<f64>, f: f64| s.lo + f * s.width();
            // Heat prices reachable at this hour.
            let heat_top = bands.heat.hi.min(tou.heat[hour] + p.k_h);
            let prices = Tariff::new(lerp(bands.elec, fe), lerp(bands.gas, fg), tou.heat[hour] + fh * (heat_top - tou.heat[hour]));
            let levels = levels_from_prices(prices, &tou, &p, hour).unwrap();
            let again = realtime_prices(levels, &tou, &p, hour).unwrap();
            prop_assert!((again.elec - prices.elec).abs() < 1e-9);
            prop_assert!((again.gas - prices.gas).abs() < 1e-9);
            prop_assert!((again.heat - prices.heat).abs() < 1e-9);
        }

        #[test]
        fn prices_in_band_and_monotone(hour in 0usize..24, a in -2.0f64..=2.0, b in -2.0f64..=2.0, c in 0.0f64..=1.0) {
            let tou = tou();
            let p = PricingParams::default_for(&tou);
            let bands = price_bands(&tou, &p, hour).unwrap();
            let r = realtime_prices(Tariff::new(a, b, c), &tou, &p, hour).unwrap();
            prop_assert!(bands.elec.contains(r.elec) && bands.gas.contains(r.gas) && bands.heat.contains(r.heat));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let rl = realtime_prices(Tariff::new(lo, 0.0, 0.0), &tou, &p, hour).unwrap();
            let rh = realtime_prices(Tariff::new(hi, 0.0, 0.0), &tou, &p, hour).unwrap();
            prop_assert!(rl.elec <= rh.elec);
            if hi > lo && bands.elec.contains(rh.elec) && rh.elec < bands.elec.hi && rl.elec > bands.elec.lo {
                prop_assert!(rl.elec < rh.elec);
            }
        }
    }
}
