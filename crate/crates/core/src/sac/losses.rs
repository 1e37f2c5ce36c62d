//! The three soft actor-critic objectives as pure functions of their
//! inputs, each returning the loss and its exact gradient.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::replay::Batch;
use crate::bounds::{sa_regularizer, AlphaPolicy};
use crate::error::{CoreError, Result};
use crate::nn::{GaussianPolicy, Mlp, MlpParams};

pub fn critic_input(obs: ArrayView2<f64>, action: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, action]).expect("row counts match")
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::NonFiniteLoss(what))
    }
}

/// `r·scale + γ·(1 − done)·(min Q̄(s′, a′) − α·log π(a′|s′))` with
/// `a′ = tanh(μ + σ·noise)` drawn from the current policy.
#[allow(clippy::too_many_arguments)]
pub fn soft_target(
    policy: &GaussianPolicy<f64>,
    target1: &Mlp<f64>,
    target2: &Mlp<f64>,
    batch: &Batch,
    noise: ArrayView2<f64>,
    alpha: f64,
    gamma: f64,
    reward_scale: f64,
) -> Result<Array1<f64>> {
    let next = policy.sample(batch.next_obs.view(), noise)?;
    let input = critic_input(batch.next_obs.view(), next.action.view());
    let q1 = target1.eval_batch(input.view())?;
    let q2 = target2.eval_batch(input.view())?;
    let y = Array1::from_shape_fn(batch.len(), |i| {
        let soft = q1[[i, 0]].min(q2[[i, 0]]) - alpha * next.log_prob[i];
        reward_scale * batch.reward[i] + gamma * (1.0 - batch.done[i]) * soft
    });
    Ok(y)
}

/// Mean of `½(Q(s, a) − y)²`.
pub fn critic_loss(q: &Mlp<f64>, batch: &Batch, y: ArrayView1<f64>) -> Result<(f64, MlpParams<f64>)> {
    if batch.is_empty() {
        return Err(CoreError::EmptyBuffer);
    }
    let input = critic_input(batch.obs.view(), batch.action.view());
    let (pred, cache) = q.forward(input.view())?;
    let n = batch.len() as f64;
    let residual = &pred.column(0) - &y;
    let loss = finite(0.5 * residual.mapv(|r| r * r).sum() / n, "critic")?;
    let dy = (residual / n).insert_axis(Axis(1));
    let (grads, _) = q.backward(&cache, dy.view())?;
    Ok((loss, grads))
}

/// Certified-width penalty added to the actor objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kappa: f64,
    pub eps: f64,
    pub beta: f64,
    pub alpha: AlphaPolicy,
    /// Use only the first `rows` observations of the batch.
    pub rows: Option<usize>,
}

impl RegularizerSpec {
    pub fn is_active(&self) -> bool {
        self.kappa > 0.0 && self.eps > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    /// `sac + κ·regularizer`.
    pub loss: f64,
    pub sac: f64,
    pub regularizer: f64,
    pub log_prob: Array1<f64>,
    pub grads: MlpParams<f64>,
}

/// Mean of `α·log π(a|s) − min Q(s, a)` with reparameterized `a`, plus the
/// optional regularizer on the mean head.
pub fn actor_loss(
    policy: &GaussianPolicy<f64>,
    q1: &Mlp<f64>,
    q2: &Mlp<f64>,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    alpha: f64,
    reg: Option<&RegularizerSpec>,
) -> Result<ActorLoss> {
    let n_rows = obs.nrows();
    if n_rows == 0 {
        return Err(CoreError::EmptyBuffer);
    }
    let n = n_rows as f64;
    let draw = policy.sample(obs, noise)?;
    let input = critic_input(obs, draw.action.view());
    let (v1, c1) = q1.forward(input.view())?;
    let (v2, c2) = q2.forward(input.view())?;
    let mut d1 = Array2::zeros((n_rows, 1));
    let mut d2 = Array2::zeros((n_rows, 1));
    let mut sac = 0.0;
    for i in 0..n_rows {
        let (a, b) = (v1[[i, 0]], v2[[i, 0]]);
        if a <= b {
            d1[[i, 0]] = -1.0 / n;
        } else {
            d2[[i, 0]] = -1.0 / n;
        }
        sac += alpha * draw.log_prob[i] - a.min(b);
    }
    let sac = finite(sac / n, "actor")?;
    let (_, dx1) = q1.backward(&c1, d1.view())?;
    let (_, dx2) = q2.backward(&c2, d2.view())?;
    let obs_dim = obs.ncols();
    let d_action = (dx1 + dx2).slice(s![.., obs_dim..]).to_owned();
    let d_log_prob = Array1::from_elem(n_rows, alpha / n);
    let (mut grads, _) = policy.backward(&draw, d_action.view(), d_log_prob.view())?;

    let mut regularizer = 0.0;
    let mut loss = sac;
    if let Some(spec) = reg.filter(|r| r.is_active()) {
        let rows = spec.rows.unwrap_or(n_rows).min(n_rows);
        let head = policy.mean_head()?;
        let (value, head_grads) = sa_regularizer(&head, obs.slice(s![..rows, ..]), spec.eps, spec.beta, spec.alpha)?;
        let mut scaled = head_grads;
        scaled.values_mut().for_each(|g| *g *= spec.kappa);
        grads.add_head(&scaled)?;
        regularizer = value;
        loss = finite(sac + spec.kappa * value, "actor")?;
    }
    Ok(ActorLoss {
        loss,
        sac,
        regularizer,
        log_prob: draw.log_prob,
        grads,
    })
}

/// `J = mean(−α·(log π + H₀))` with `α = exp(log_alpha)`, and `dJ/d log_alpha`.
pub fn temperature_loss(log_alpha: f64, log_prob: ArrayView1<f64>, target_entropy: f64) -> Result<(f64, f64)> {
    if log_prob.is_empty() {
        return Err(CoreError::EmptyBuffer);
    }
    let alpha = log_alpha.exp();
    let gap = log_prob.mean().expect("non-empty") + target_entropy;
    let loss = finite(-alpha * gap, "temperature")?;
    Ok((loss, -alpha * gap))
}

/// `θ̄ ← τ·θ + (1 − τ)·θ̄`.
pub fn soft_update(target: &mut Mlp<f64>, online: &Mlp<f64>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(CoreError::OutOfRange {
            name: "tau",
            value: tau,
            lo: 0.0,
            hi: 1.0,
        });
    }
    target.params_mut().blend_toward(online.params(), tau)
}
