//! Exogenous day data: weather, wind, base demands and tariffs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::devices::HOURS_PER_DAY;
use crate::error::{CoreError, Result};
use crate::pricing::TouSchedule;

pub type Hourly = [f64; HOURS_PER_DAY];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    /// Outdoor temperature, °C.
    pub t_out: Hourly,
    /// Available wind power, kW.
    pub wt: Hourly,
    /// Base electric demand, kW.
    pub basic_e: Hourly,
    /// Base gas demand, m³/h.
    pub basic_g: Hourly,
    /// Heat demand not tied to space heating (hot water), kW.
    pub basic_h: Hourly,
    pub tou_e: Hourly,
    pub tou_g: Hourly,
    pub tou_h: Hourly,
}

impl DayProfile {
    pub fn validate(&self) -> Result<()> {
        let columns: [(&'static str, &Hourly, bool); 8] = [
            ("t_out", &self.t_out, false),
            ("wt", &self.wt, true),
            ("basic_e", &self.basic_e, true),
            ("basic_g", &self.basic_g, true),
            ("basic_h", &self.basic_h, true),
            ("tou_e", &self.tou_e, true),
            ("tou_g", &self.tou_g, true),
            ("tou_h", &self.tou_h, true),
        ];
        for (name, col, non_negative) in columns {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite(name));
            }
            if non_negative && col.iter().any(|&v| v < 0.0) {
                return Err(CoreError::InvalidParams(format!("{name} has negative entries")));
            }
        }
        self.tou()?;
        Ok(())
    }

    pub fn tou(&self) -> Result<TouSchedule<f64>> {
        TouSchedule::from_hourly(self.tou_e.to_vec(), self.tou_g.to_vec(), self.tou_h.to_vec())
    }

    /// A day with every column held at its value for `hour` of `self`.
    pub fn flattened(&self, hour: usize) -> Self {
        let flat = |col: &Hourly| [col[hour]; HOURS_PER_DAY];
        Self {
            t_out: flat(&self.t_out),
            wt: flat(&self.wt),
            basic_e: flat(&self.basic_e),
            basic_g: flat(&self.basic_g),
            basic_h: flat(&self.basic_h),
            tou_e: self.tou_e,
            tou_g: self.tou_g,
            tou_h: self.tou_h,
        }
    }
}

/// Winter tariff: off-peak at night, peaks late morning and evening.
pub fn winter_tou() -> (Hourly, Hourly, Hourly) {
    let mut e = [0.0; HOURS_PER_DAY];
    let mut g = [0.0; HOURS_PER_DAY];
    let mut h = [0.0; HOURS_PER_DAY];
    for hour in 0..HOURS_PER_DAY {
        let (pe, pg, ph) = match hour {
            0..=6 | 23 => (0.4, 2.5, 0.3),
            10..=14 | 18..=21 => (1.2, 3.5, 0.5),
            _ => (0.8, 3.0, 0.4),
        };
        e[hour] = pe;
        g[hour] = pg;
        h[hour] = ph;
    }
    (e, g, h)
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    (-(hour - centre).powi(2) / (2.0 * width * width)).exp()
}

/// Seeded synthetic winter days.
///
/// Temperatures follow a daily sinusoid between about -12 and -2 °C; wind
/// is stronger at night; electric and gas demand have morning and evening
/// peaks. Each day draws its own level offsets, and every hour carries a
/// small amount of noise.
pub fn synthetic_days(count: usize, seed: u64) -> Vec<DayProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (tou_e, tou_g, tou_h) = winter_tou();
    (0..count)
        .map(|_| {
            let temp_shift = 1.2 * unit.sample(&mut rng);
            let wind_scale = rng.random_range(0.7..1.1);
            let load_scale = rng.random_range(0.92..1.08);
            let mut day = DayProfile {
                t_out: [0.0; HOURS_PER_DAY],
                wt: [0.0; HOURS_PER_DAY],
                basic_e: [0.0; HOURS_PER_DAY],
                basic_g: [0.0; HOURS_PER_DAY],
                basic_h: [0.0; HOURS_PER_DAY],
                tou_e,
                tou_g,
                tou_h,
            };
            for hour in 0..HOURS_PER_DAY {
                let t = hour as f64;
                let phase = 2.0 * std::f64::consts::PI * (t - 9.0) / 24.0;
                day.t_out[hour] = (-7.0 + 4.5 * phase.sin() + temp_shift + 0.3 * unit.sample(&mut rng)).clamp(-12.0, -2.0);

                let night = 2.0 * std::f64::consts::PI * (t - 3.0) / 24.0;
                let wind = wind_scale * (240.0 + 140.0 * night.cos()) + 15.0 * unit.sample(&mut rng);
                day.wt[hour] = wind.clamp(50.0, 400.0);

                let elec = 210.0 + 110.0 * bump(t, 10.0, 2.5) + 190.0 * bump(t, 19.0, 2.0);
                day.basic_e[hour] = (load_scale * elec + 6.0 * unit.sample(&mut rng)).clamp(200.0, 450.0);

                let gas = 15.0 + 12.0 * bump(t, 7.5, 1.5) + 18.0 * bump(t, 18.5, 1.8);
                day.basic_g[hour] = (load_scale * gas + 0.5 * unit.sample(&mut rng)).clamp(15.0, 35.0);

                let water = 10.0 + 18.0 * bump(t, 7.0, 1.5) + 25.0 * bump(t, 20.0, 2.0);
                day.basic_h[hour] = (load_scale * water + 0.8 * unit.sample(&mut rng)).clamp(10.0, 40.0);
            }
            day
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_days_valid_and_in_range() {
        let days = synthetic_days(20, 3);
        assert_eq!(days.len(), 20);
        for d in &days {
            d.validate().unwrap();
            assert!(d.t_out.iter().all(|t| (-12.0..=-2.0).contains(t)));
            assert!(d.wt.iter().all(|w| (50.0..=400.0).contains(w)));
            assert!(d.basic_e.iter().all(|p| (200.0..=450.0).contains(p)));
            assert!(d.basic_g.iter().all(|q| (15.0..=35.0).contains(q)));
            assert!(d.basic_h.iter().all(|h| (10.0..=40.0).contains(h)));
        }
        let coldest = days[0].t_out.iter().copied().fold(f64::INFINITY, f64::min);
        let warmest = days[0].t_out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(warmest - coldest > 5.0);
    }

    #[test]
    fn generator_is_seeded() {
        assert_eq!(synthetic_days(3, 9), synthetic_days(3, 9));
        assert_ne!(synthetic_days(3, 9), synthetic_days(3, 10));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut d = synthetic_days(1, 1).remove(0);
        d.wt[4] = f64::NAN;
        assert_eq!(d.validate(), Err(CoreError::NonFinite("wt")));
        let mut d = synthetic_days(1, 1).remove(0);
        d.basic_g[0] = -1.0;
        assert!(d.validate().is_err());
    }
}
