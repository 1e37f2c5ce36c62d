//! Indoor-temperature delay scaling attack, observation adversaries and the
//! residual-test bad-data detector.
//!
//! The detector's measurement model is the building heat balance applied to
//! the reported indoor temperatures: a measurement is `[T, H]` and the model
//! predicts `[T, heat(T)]`. An attacker that rewrites `T` and recomputes `H`
//! from it leaves only the sensor noise in the residual.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::devices::{building_heat_demand, check_hour, BuildingParams, Span, HOURS_PER_DAY};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ItdsaSpec<S: Scalar> {
    /// Scaling amplitude; the multiplier tends to `1 + lambda`.
    pub lambda: S,
    /// Delay rate, 1/h.
    pub a: S,
    pub t0: usize,
    /// Attacked step indices, sorted and unique.
    pub window: Vec<usize>,
}

impl<S: Scalar> ItdsaSpec<S> {
    /// Attack over the whole day starting at step 0.
    pub fn full_day(lambda: S, a: S) -> Self {
        Self {
            lambda,
            a,
            t0: 0,
            window: (0..HOURS_PER_DAY).collect(),
        }
    }

    /// Attack over `start..end`.
    pub fn hours(lambda: S, a: S, start: usize, end: usize) -> Result<Self> {
        let spec = Self {
            lambda,
            a,
            t0: start,
            window: (start..end).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > -S::one() && self.a > S::zero()) {
            return Err(CoreError::InvalidParams("attack needs lambda > -1 and a > 0".into()));
        }
        if self.window.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::InvalidParams("attack window must be sorted and unique".into()));
        }
        if let Some(&last) = self.window.last() {
            check_hour(last)?;
        }
        match self.window.first() {
            Some(&first) if first != self.t0 => Err(CoreError::InvalidParams(format!(
                "attack start {} differs from first attacked hour {first}",
                self.t0
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_active(&self, hour: usize) -> bool {
        self.window.binary_search(&hour).is_ok()
    }

    /// Factor applied to the indoor temperature at `hour`.
    pub fn multiplier(&self, hour: usize) -> S {
        if !self.is_active(hour) {
            return S::one();
        }
        let elapsed = S::from_usize(hour - self.t0).unwrap();
        S::one() + self.lambda * (S::one() - (-self.a * elapsed).exp())
    }
}

impl<S: Scalar> Default for ItdsaSpec<S> {
    fn default() -> Self {
        Self::full_day(S::lit(0.2), S::lit(0.3))
    }
}

/// Reported indoor temperature under the attack.
pub fn itdsa_temperature<S: Scalar>(t_in: S, hour: usize, spec: &ItdsaSpec<S>) -> S {
    spec.multiplier(hour) * t_in
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DetectorSpec<S: Scalar> {
    pub tau_thresh: S,
    /// Standard deviation of the additive measurement noise.
    pub noise_sigma: S,
}

impl<S: Scalar> DetectorSpec<S> {
    /// Threshold at the given quantile of clean residuals.
    pub fn calibrate(residuals: &[S], quantile: f64, noise_sigma: S) -> Result<Self> {
        if residuals.is_empty() {
            return Err(CoreError::InvalidParams("no calibration residuals".into()));
        }
        let mut sorted: Vec<f64> = residuals.iter().map(|r| r.as_f64()).collect();
        sorted.sort_by(f64::total_cmp);
        let rank = (quantile.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).ceil() as usize;
        let tau = S::lit(sorted[rank]);
        if tau <= S::zero() {
            return Err(CoreError::InvalidParams("calibrated threshold is not positive".into()));
        }
        Ok(Self {
            tau_thresh: tau,
            noise_sigma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTest<S> {
    pub residual: S,
    pub flagged: bool,
}

/// Euclidean residual test; a measurement is valid iff `residual <= tau`.
pub fn residual_check<S: Scalar>(measured: &[S], predicted: &[S], d: &DetectorSpec<S>) -> Result<ResidualTest<S>> {
    if measured.len() != predicted.len() {
        return Err(CoreError::DimensionMismatch {
            expected: predicted.len(),
            got: measured.len(),
        });
    }
    let residual = measured
        .iter()
        .zip(predicted)
        .map(|(m, p)| (*m - *p) * (*m - *p))
        .sum::<S>()
        .sqrt();
    Ok(ResidualTest {
        residual,
        flagged: residual > d.tau_thresh,
    })
}

/// Thermal measurement of one step: reported indoor temperatures and the
/// heat load that goes with them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalReading<S> {
    pub t_in: S,
    pub t_in_prev: S,
    pub heat: S,
}

impl<S: Scalar> ThermalReading<S> {
    /// Noise-free reading consistent with the heat balance.
    pub fn consistent(t_in: S, t_in_prev: S, t_out: S, b: &BuildingParams<S>) -> Self {
        Self {
            t_in,
            t_in_prev,
            heat: building_heat_demand(t_in, t_in_prev, t_out, b),
        }
    }

    /// Reading rewritten by the attack at `hour`, heat recomputed from the
    /// falsified temperatures.
    pub fn falsified(&self, hour: usize, t_out: S, spec: &ItdsaSpec<S>, b: &BuildingParams<S>) -> Self {
        let t_in = itdsa_temperature(self.t_in, hour, spec);
        let t_in_prev = match hour.checked_sub(1) {
            Some(prev) => itdsa_temperature(self.t_in_prev, prev, spec),
            None => self.t_in_prev,
        };
        Self::consistent(t_in, t_in_prev, t_out, b)
    }

    /// Measurement vector `[T, H]` with Gaussian sensor noise added.
    pub fn measure<R: Rng + ?Sized>(&self, noise_sigma: S, rng: &mut R) -> [S; 2] {
        let mut noise = || S::lit(StandardNormal.sample(rng)) * noise_sigma;
        [self.t_in + noise(), self.heat + noise()]
    }

    /// Model prediction for a measurement: the heat balance applied to the
    /// reported temperature.
    pub fn predict(measured_t: S, t_in_prev: S, t_out: S, b: &BuildingParams<S>) -> [S; 2] {
        [measured_t, building_heat_demand(measured_t, t_in_prev, t_out, b)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdversaryBudget<S: Scalar> {
    /// ℓ∞ radius in normalized observation units.
    pub epsilon: S,
    /// Observation components the adversary may touch.
    pub mask: Vec<usize>,
}

impl<S: Scalar> AdversaryBudget<S> {
    pub fn validate(&self, width: usize) -> Result<()> {
        if !(self.epsilon >= S::zero()) {
            return Err(CoreError::InvalidParams("adversary epsilon must be non-negative".into()));
        }
        match self.mask.iter().find(|&&i| i >= width) {
            Some(&index) => Err(CoreError::MaskIndex { index, width }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    #[default]
    None,
    Itdsa,
    LinfWorst,
}

/// What the adversary knows about the current step.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerturbContext<'a, S> {
    /// Falsified values in normalized units, indexed like the observation.
    pub falsified: Option<&'a [S]>,
    /// Ascent direction for the worst-case probe; only its sign is used.
    pub direction: Option<&'a [S]>,
}

/// Applies the adversary to a normalized observation. The result is clipped
/// to `[-1, 1]` and deviates from `obs` by at most `epsilon` on masked
/// components only.
pub fn perturb_observation<S: Scalar>(
    obs: &[S],
    b: &AdversaryBudget<S>,
    mode: AdversaryMode,
    ctx: PerturbContext<'_, S>,
) -> Result<Vec<S>> {
    b.validate(obs.len())?;
    let mut out = obs.to_vec();
    let target = match mode {
        AdversaryMode::None => return Ok(out),
        AdversaryMode::Itdsa => ctx.falsified,
        AdversaryMode::LinfWorst => ctx.direction,
    };
    let Some(target) = target else {
        return Ok(out);
    };
    if target.len() != obs.len() {
        return Err(CoreError::DimensionMismatch {
            expected: obs.len(),
            got: target.len(),
        });
    }
    let ball = Span::new(-b.epsilon, b.epsilon);
    for &i in &b.mask {
        let delta = match mode {
            AdversaryMode::Itdsa => ball.clamp(target[i] - obs[i]),
            _ if target[i] == S::zero() => S::zero(),
            _ => b.epsilon * target[i].signum(),
        };
        out[i] = (obs[i] + delta).clip(-S::one(), S::one());
    }
    Ok(out)
}
