use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{ForwardCache, Mlp, MlpParams};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Network emitting `[μ, log σ]` with a tanh squash on the sampled action.
#[derive(Debug, Clone)]
pub struct GaussianPolicy<S> {
    pub net: Mlp<S>,
    action_dim: usize,
}

impl<S: Scalar> PartialEq for GaussianPolicy<S> {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.action_dim == other.action_dim
    }
}

/// A reparameterized batch draw with everything needed for backward.
#[derive(Debug, Clone)]
pub struct PolicySample<S> {
    /// Squashed action in `(-1, 1)`.
    pub action: Array2<S>,
    /// Log-density of `action`, including the tanh correction.
    pub log_prob: Array1<S>,
    /// Log-density of the pre-squash Gaussian draw.
    pub gaussian_log_prob: Array1<S>,
    pub mean: Array2<S>,
    pub log_std: Array2<S>,
    noise: Array2<S>,
    /// Whether the raw log-std hit the clamp.
    clamped: Array2<bool>,
    cache: ForwardCache<S>,
}

fn softplus<S: Scalar>(x: S) -> S {
    x.pos() + (S::one() + (-x.abs()).exp()).ln()
}

/// `ln(1 − tanh²u)` without cancellation.
fn log_one_minus_tanh_sq<S: Scalar>(u: S) -> S {
    S::two() * (S::lit(std::f64::consts::LN_2) - u - softplus(-S::two() * u))
}

impl<S: Scalar> GaussianPolicy<S> {
    pub fn new(net: Mlp<S>) -> Result<Self> {
        let out = net.output_dim();
        if out == 0 || !out.is_multiple_of(2) {
            return Err(CoreError::InvalidParams(format!("policy output width {out} is not 2·action_dim")));
        }
        Ok(Self { net, action_dim: out / 2 })
    }

    /// ReLU MLP `obs → hidden.. → 2·action_dim`.
    pub fn init<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(2 * action_dim))
            .collect();
        Self::new(Mlp::init(&sizes, rng)?)
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// The sub-network producing μ only.
    pub fn mean_head(&self) -> Result<MlpParams<S>> {
        self.net.params().head(self.action_dim)
    }

    /// `tanh(μ(obs))` for a batch.
    pub fn deterministic(&self, obs: ArrayView2<S>) -> Result<Array2<S>> {
        let out = self.net.eval_batch(obs)?;
        Ok(squash(out.slice(s![.., ..self.action_dim]).mapv(S::tanh)))
    }

    pub fn deterministic_one(&self, obs: &[S]) -> Result<Vec<S>> {
        let out = self.net.eval(ArrayView1::from(obs))?;
        Ok(out.iter().take(self.action_dim).map(|m| squash_one(m.tanh())).collect())
    }

    /// Reparameterized draw `a = tanh(μ + σ·ε)`.
    pub fn sample(&self, obs: ArrayView2<S>, noise: ArrayView2<S>) -> Result<PolicySample<S>> {
        let a = self.action_dim;
        if noise.dim() != (obs.nrows(), a) {
            return Err(CoreError::DimensionMismatch {
                expected: a,
                got: noise.ncols(),
            });
        }
        let (out, cache) = self.net.forward(obs)?;
        let mean = out.slice(s![.., ..a]).to_owned();
        let raw = out.slice(s![.., a..]);
        let (lo, hi) = (S::lit(LOG_STD_MIN), S::lit(LOG_STD_MAX));
        let clamped = raw.mapv(|v| v < lo || v > hi);
        let log_std = raw.mapv(|v| v.clip(lo, hi));
        let pre = &mean + &(log_std.mapv(S::exp) * noise);
        let half_log_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let gauss = (noise.mapv(|e| -S::half() * e * e) - &log_std).mapv(|v| v - half_log_2pi);
        let gaussian_log_prob = gauss.sum_axis(Axis(1));
        let log_prob = &gaussian_log_prob - &pre.mapv(log_one_minus_tanh_sq).sum_axis(Axis(1));
        Ok(PolicySample {
            action: squash(pre.mapv(S::tanh)),
            log_prob,
            gaussian_log_prob,
            mean,
            log_std,
            noise: noise.to_owned(),
            clamped,
            cache,
        })
    }

    /// Single-state convenience wrapper around [`GaussianPolicy::sample`].
    pub fn sample_action(&self, obs: &[S], noise: &[S]) -> Result<(Vec<S>, S)> {
        let o = ArrayView2::from_shape((1, obs.len()), obs).map_err(|_| CoreError::DimensionMismatch {
            expected: self.obs_dim(),
            got: obs.len(),
        })?;
        let n = ArrayView2::from_shape((1, noise.len()), noise).map_err(|_| CoreError::DimensionMismatch {
            expected: self.action_dim,
            got: noise.len(),
        })?;
        let draw = self.sample(o, n)?;
        Ok((draw.action.row(0).to_vec(), draw.log_prob[0]))
    }

    /// Gradients of `Σ d_action ⊙ action + Σ d_log_prob ⊙ log_prob`.
    pub fn backward(
        &self,
        draw: &PolicySample<S>,
        d_action: ArrayView2<S>,
        d_log_prob: ArrayView1<S>,
    ) -> Result<(MlpParams<S>, Array2<S>)> {
        let a = self.action_dim;
        let batch = draw.action.nrows();
        if d_action.dim() != (batch, a) || d_log_prob.len() != batch {
            return Err(CoreError::DimensionMismatch {
                expected: batch,
                got: d_log_prob.len(),
            });
        }
        let mut d_out = Array2::zeros((batch, 2 * a));
        for r in 0..batch {
            let g_lp = d_log_prob[r];
            for j in 0..a {
                let y = draw.action[[r, j]];
                let sigma = draw.log_std[[r, j]].exp();
                // d log_prob / d pre = 2·tanh(pre); the squash clamp only
                // moves y by one ulp, so y stands in for tanh(pre).
                let d_pre = d_action[[r, j]] * (S::one() - y * y) + g_lp * S::two() * y;
                d_out[[r, j]] = d_pre;
                d_out[[r, a + j]] = if draw.clamped[[r, j]] {
                    S::zero()
                } else {
                    d_pre * sigma * draw.noise[[r, j]] - g_lp
                };
            }
        }
        self.net.backward(&draw.cache, d_out.view())
    }
}

fn squash_one<S: Scalar>(y: S) -> S {
    let edge = S::one() - S::epsilon();
    y.clip(-edge, edge)
}

fn squash<S: Scalar>(mut y: Array2<S>) -> Array2<S> {
    y.mapv_inplace(squash_one);
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn policy(seed: u64) -> GaussianPolicy<f64> {
        GaussianPolicy::init(4, &[8, 8], 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
    }

    #[test]
    fn zero_noise_gives_tanh_mean() {
        let p = policy(1);
        let obs = [0.3, -0.2, 0.9, 0.0];
        let (a, _) = p.sample_action(&obs, &[0.0; 3]).unwrap();
        assert_eq!(a, p.deterministic_one(&obs).unwrap());
        let raw = p.net.eval(ArrayView1::from(&obs)).unwrap();
        for j in 0..3 {
            assert_eq!(a[j], raw[j].tanh());
        }
    }

    #[test]
    fn gaussian_part_peaks_at_zero_noise() {
        let p = policy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = normal(1, 4, &mut rng);
        let centre = p.sample(obs.view(), Array2::zeros((1, 3)).view()).unwrap();
        for _ in 0..500 {
            let draw = p.sample(obs.view(), normal(1, 3, &mut rng).view()).unwrap();
            assert!(centre.gaussian_log_prob[0] >= draw.gaussian_log_prob[0]);
        }
    }

    #[test]
    fn log_prob_matches_direct_formula() {
        let p = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = normal(3, 4, &mut rng);
        let eps = normal(3, 3, &mut rng);
        let draw = p.sample(obs.view(), eps.view()).unwrap();
        for r in 0..3 {
            let mut lp = 0.0;
            for j in 0..3 {
                let sigma = draw.log_std[[r, j]].exp();
                let u = draw.mean[[r, j]] + sigma * eps[[r, j]];
                let z = (u - draw.mean[[r, j]]) / sigma;
                lp += -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                lp -= (1.0 - u.tanh().powi(2)).ln();
            }
            assert!((lp - draw.log_prob[r]).abs() < 1e-9);
        }
    }

    #[test]
    fn monte_carlo_mean_matches_pushforward() {
        let p = policy(6);
        let obs = Array2::from_elem((1, 4), 0.5);
        let base = p.sample(obs.view(), Array2::zeros((1, 3)).view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let obs_batch = Array2::from_elem((n, 4), 0.5);
        let draws = p.sample(obs_batch.view(), normal(n, 3, &mut rng).view()).unwrap();
        for j in 0..3 {
            let (mu, sigma) = (base.mean[[0, j]], base.log_std[[0, j]].exp());
            // trapezoid rule over the standard normal density
            let steps = 20_000;
            let (lo, hi) = (-10.0, 10.0);
            let dz = (hi - lo) / steps as f64;
            let expect: f64 = (0..=steps)
                .map(|i| {
                    let z = lo + i as f64 * dz;
                    let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                    w * (mu + sigma * z).tanh() * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * dz
                / (2.0 * std::f64::consts::PI).sqrt();
            let col = draws.action.column(j);
            let mean = col.mean().unwrap();
            let se = col.std(1.0) / (n as f64).sqrt();
            assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect} (se {se})");
        }
    }

    #[test]
    fn actions_strictly_inside_unit_box() {
        let mut p = policy(8);
        for v in p.net.params_mut().layers[2].b.iter_mut() {
            *v = 50.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draw = p.sample(normal(64, 4, &mut rng).view(), normal(64, 3, &mut rng).view()).unwrap();
        assert!(draw.action.iter().all(|a| a.abs() < 1.0));
        assert!(draw.log_prob.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut p = policy(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = normal(5, 4, &mut rng);
        let eps = normal(5, 3, &mut rng);
        let ga = normal(5, 3, &mut rng);
        let gl = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
        let objective = |q: &GaussianPolicy<f64>| {
            let d = q.sample(obs.view(), eps.view()).unwrap();
            (&d.action * &ga).sum() + (&d.log_prob * &gl).sum()
        };
        let draw = p.sample(obs.view(), eps.view()).unwrap();
        let (g, _) = p.backward(&draw, ga.view(), gl.view()).unwrap();
        let analytic = g.to_flat();
        let base = p.net.params().to_flat();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut x = base.clone();
            x[i] += h;
            p.net.params_mut().set_flat(&x).unwrap();
            let up = objective(&p);
            x[i] -= 2.0 * h;
            p.net.params_mut().set_flat(&x).unwrap();
            let down = objective(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn sampling_is_deterministic_given_noise() {
        let p = policy(12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let obs = normal(4, 4, &mut rng);
        let eps = normal(4, 3, &mut rng);
        let a = p.sample(obs.view(), eps.view()).unwrap();
        let b = p.sample(obs.view(), eps.view()).unwrap();
        assert_eq!(a.action, b.action);
        assert_eq!(a.log_prob, b.log_prob);
    }

    #[test]
    fn odd_output_width_rejected() {
        let net = Mlp::<f64>::init(&[2, 3], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(GaussianPolicy::new(net).is_err());
    }
}
