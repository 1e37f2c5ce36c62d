//! Soft actor-critic with twin critics, adaptive temperature and an
//! optional certified-width regularizer on the policy mean.

mod losses;
mod replay;

pub use losses::{actor_loss, critic_input, critic_loss, soft_target, soft_update, temperature_loss, ActorLoss, RegularizerSpec};
pub use replay::{Batch, ReplayBuffer, Transition};

use ndarray::{Array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attack::AdversaryMode;
use crate::bounds::AlphaPolicy;
use crate::env::{Adversary, DispatchResult, IesEnv, ACTION_DIM, OBS_DIM};
use crate::error::{CoreError, Result};
use crate::nn::{AdamConfig, AdamState, Checkpoint, GaussianPolicy, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub batch: usize,
    pub tau: f64,
    pub episodes: usize,
    pub replay_capacity: usize,
    /// Transitions collected with uniform random actions before updates start.
    pub warmup_transitions: usize,
    pub updates_per_step: usize,
    pub warm_episodes: usize,
    pub ramp_episodes: usize,
    pub hold_episodes: usize,
    pub kappa: f64,
    pub target_eps: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub alpha_policy: AlphaPolicy,
    /// Rows of each minibatch fed to the regularizer; all rows when unset.
    pub regularizer_rows: Option<usize>,
    pub target_entropy: f64,
    pub init_alpha: f64,
    pub hidden: Vec<usize>,
    /// Multiplies environment rewards before they enter the critic targets.
    pub reward_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr_actor: 5e-4,
            lr_critic: 2e-3,
            lr_alpha: 1e-2,
            gamma: 0.95,
            batch: 256,
            tau: 0.005,
            episodes: 1000,
            replay_capacity: 100_000,
            warmup_transitions: 1000,
            updates_per_step: 1,
            warm_episodes: 500,
            ramp_episodes: 300,
            hold_episodes: 200,
            kappa: 1.0,
            target_eps: 0.1,
            beta_start: 1.0,
            beta_end: 0.0,
            alpha_policy: AlphaPolicy::Adaptive,
            regularizer_rows: None,
            target_entropy: -(ACTION_DIM as f64),
            init_alpha: 1.0,
            hidden: vec![128, 128],
            reward_scale: 0.01,
        }
    }
}

impl TrainerConfig {
    /// Plain SAC: the regularizer weight is zero.
    pub fn sac() -> Self {
        Self { kappa: 0.0, ..Self::default() }
    }

    /// Sets the episode count and splits it 50/30/20 into warm, ramp and hold.
    pub fn with_episodes(mut self, episodes: usize) -> Self {
        let warm = episodes / 2;
        let ramp = episodes * 3 / 10;
        self.episodes = episodes;
        self.warm_episodes = warm;
        self.ramp_episodes = ramp;
        self.hold_episodes = episodes - warm - ramp;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidParams(m.to_string()));
        if self.warm_episodes + self.ramp_episodes + self.hold_episodes != self.episodes {
            return bad("warm + ramp + hold episodes must equal episodes");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch == 0 || self.replay_capacity == 0 {
            return bad("batch and replay capacity must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        let rates = [self.lr_actor, self.lr_critic, self.lr_alpha];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(self.kappa >= 0.0 && self.target_eps >= 0.0 && self.init_alpha > 0.0 && self.reward_scale > 0.0) {
            return bad("kappa and target_eps must be non-negative; init_alpha and reward_scale positive");
        }
        if ![self.beta_start, self.beta_end].iter().all(|b| (0.0..=1.0).contains(b)) {
            return bad("beta endpoints must lie in [0, 1]");
        }
        Ok(())
    }

    /// Perturbation radius and mix weight for a zero-based episode index.
    pub fn schedule(&self, episode: usize) -> (f64, f64) {
        if episode < self.warm_episodes {
            return (0.0, self.beta_start);
        }
        let into = episode - self.warm_episodes;
        if into < self.ramp_episodes {
            let t = (into + 1) as f64 / self.ramp_episodes as f64;
            return (self.target_eps * t, self.beta_start + (self.beta_end - self.beta_start) * t);
        }
        (self.target_eps, self.beta_end)
    }
}

/// Policy, twin critics with targets, temperature and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: GaussianPolicy<f64>,
    pub q1: Mlp<f64>,
    pub q2: Mlp<f64>,
    pub target1: Mlp<f64>,
    pub target2: Mlp<f64>,
    pub log_alpha: f64,
    opt_policy: AdamState<f64>,
    opt_q1: AdamState<f64>,
    opt_q2: AdamState<f64>,
    opt_alpha: AdamState<f64>,
}

/// Losses of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic: f64,
    pub actor: f64,
    pub regularizer: f64,
    pub temperature: f64,
    pub entropy: f64,
}

impl Agent {
    pub fn new(cfg: &TrainerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let policy = GaussianPolicy::init(OBS_DIM, &cfg.hidden, ACTION_DIM, rng)?;
        let critic_sizes: Vec<usize> = std::iter::once(OBS_DIM + ACTION_DIM)
            .chain(cfg.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let q1 = Mlp::init(&critic_sizes, rng)?;
        let q2 = Mlp::init(&critic_sizes, rng)?;
        Ok(Self {
            opt_policy: AdamState::for_params(AdamConfig::with_lr(cfg.lr_actor), policy.net.params()),
            opt_q1: AdamState::for_params(AdamConfig::with_lr(cfg.lr_critic), q1.params()),
            opt_q2: AdamState::for_params(AdamConfig::with_lr(cfg.lr_critic), q2.params()),
            opt_alpha: AdamState::new(AdamConfig::with_lr(cfg.lr_alpha), 1),
            target1: q1.clone(),
            target2: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha: cfg.init_alpha.ln(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// One critic, actor, temperature and target step on `batch`.
    pub fn update(&mut self, batch: &Batch, cfg: &TrainerConfig, reg: &RegularizerSpec, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let n = batch.len();
        let alpha = self.alpha();
        let next_noise = normal_matrix(n, ACTION_DIM, rng);
        let y = soft_target(&self.policy, &self.target1, &self.target2, batch, next_noise.view(), alpha, cfg.gamma, cfg.reward_scale)?;
        let (l1, g1) = critic_loss(&self.q1, batch, y.view())?;
        let (l2, g2) = critic_loss(&self.q2, batch, y.view())?;
        self.opt_q1.step(self.q1.params_mut(), &g1)?;
        self.opt_q2.step(self.q2.params_mut(), &g2)?;

        let noise = normal_matrix(n, ACTION_DIM, rng);
        let reg = reg.is_active().then_some(reg);
        let actor = actor_loss(&self.policy, &self.q1, &self.q2, batch.obs.view(), noise.view(), alpha, reg)?;
        self.opt_policy.step(self.policy.net.params_mut(), &actor.grads)?;

        let (temperature, grad) = temperature_loss(self.log_alpha, actor.log_prob.view(), cfg.target_entropy)?;
        let mut log_alpha = [self.log_alpha];
        self.opt_alpha.step_slice(&mut log_alpha, &[grad])?;
        self.log_alpha = log_alpha[0];

        soft_update(&mut self.target1, &self.q1, cfg.tau)?;
        soft_update(&mut self.target2, &self.q2, cfg.tau)?;
        Ok(UpdateStats {
            critic: l1 + l2,
            actor: actor.loss,
            regularizer: actor.regularizer,
            temperature,
            entropy: -actor.log_prob.mean().unwrap_or(0.0),
        })
    }

    /// Deterministic action `tanh(μ(obs))`.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.policy.deterministic_one(obs)
    }

    /// Direction that lowers the smaller critic value of the clean action.
    pub fn value_descent_direction(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let action = self.act(obs)?;
        let input = Array2::from_shape_vec((1, OBS_DIM + ACTION_DIM), obs.iter().chain(&action).copied().collect())
            .map_err(|_| CoreError::DimensionMismatch { expected: OBS_DIM, got: obs.len() })?;
        let (v1, c1) = self.q1.forward(input.view())?;
        let (v2, c2) = self.q2.forward(input.view())?;
        let one = Array2::from_elem((1, 1), -1.0);
        let (_, dx) = if v1[[0, 0]] <= v2[[0, 0]] {
            self.q1.backward(&c1, one.view())?
        } else {
            self.q2.backward(&c2, one.view())?
        };
        Ok(dx.row(0).iter().take(OBS_DIM).copied().collect())
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: AGENT_FORMAT.to_string(),
            policy: Checkpoint::from(self.policy.net.params()),
            q1: Checkpoint::from(self.q1.params()),
            q2: Checkpoint::from(self.q2.params()),
            log_alpha: self.log_alpha,
        }
    }
}

pub const AGENT_FORMAT: &str = "ies-agent/1";

/// Networks needed to act and to compute critic-guided perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub policy: Checkpoint<f64>,
    pub q1: Checkpoint<f64>,
    pub q2: Checkpoint<f64>,
    pub log_alpha: f64,
}

impl AgentCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| CoreError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        if c.format != AGENT_FORMAT {
            return Err(CoreError::Checkpoint(format!("unknown format {:?}", c.format)));
        }
        Ok(c)
    }

    /// Rebuilds an agent for evaluation; optimizer state starts fresh.
    pub fn into_agent(self, cfg: &TrainerConfig) -> Result<Agent> {
        let policy = GaussianPolicy::new(Mlp::new(self.policy.into_params()?)?)?;
        let q1 = Mlp::new(self.q1.into_params()?)?;
        let q2 = Mlp::new(self.q2.into_params()?)?;
        if policy.obs_dim() != OBS_DIM || policy.action_dim() != ACTION_DIM || q1.input_dim() != OBS_DIM + ACTION_DIM {
            return Err(CoreError::Checkpoint("network shapes do not match the environment".into()));
        }
        Ok(Agent {
            opt_policy: AdamState::for_params(AdamConfig::with_lr(cfg.lr_actor), policy.net.params()),
            opt_q1: AdamState::for_params(AdamConfig::with_lr(cfg.lr_critic), q1.params()),
            opt_q2: AdamState::for_params(AdamConfig::with_lr(cfg.lr_critic), q2.params()),
            opt_alpha: AdamState::new(AdamConfig::with_lr(cfg.lr_alpha), 1),
            target1: q1.clone(),
            target2: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha: self.log_alpha,
        })
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub eps: f64,
    pub beta: f64,
    pub profit: f64,
    /// Gradient steps taken during the episode.
    pub updates: usize,
    /// Mean of `−log π` over the episode's updates; zero without updates.
    pub entropy: f64,
    pub regularizer: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: Agent,
    pub curves: Vec<CurvePoint>,
    pub updates: usize,
}

/// Seed streams so that changing one consumer never shifts another.
mod stream {
    pub const INIT: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const REPLAY: u64 = 4;
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs the full training loop on clean observations. The environment's
/// own randomness comes from however it was constructed.
pub fn train(env: &mut IesEnv, cfg: &TrainerConfig, seed: u64) -> Result<TrainOutput> {
    train_with(env, cfg, seed, |_| {})
}

/// [`train`] with a callback after every episode.
pub fn train_with(env: &mut IesEnv, cfg: &TrainerConfig, seed: u64, mut on_episode: impl FnMut(&CurvePoint)) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut agent = Agent::new(cfg, &mut seeded(seed, stream::INIT))?;
    let mut explore = seeded(seed, stream::EXPLORE);
    let mut update_rng = seeded(seed, stream::UPDATE);
    let mut replay_rng = seeded(seed, stream::REPLAY);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut curves = Vec::with_capacity(cfg.episodes);
    let mut updates = 0;
    for episode in 0..cfg.episodes {
        let (eps, beta) = cfg.schedule(episode);
        let reg = RegularizerSpec {
            kappa: cfg.kappa,
            eps,
            beta,
            alpha: cfg.alpha_policy,
            rows: cfg.regularizer_rows,
        };
        let mut obs = env.reset()?;
        let (mut reward, mut c1, mut c2, mut profit) = (0.0, 0.0, 0.0, 0.0);
        let (mut entropy, mut reg_sum, mut episode_updates) = (0.0, 0.0, 0usize);
        loop {
            let action: Vec<f64> = if buffer.len() < cfg.warmup_transitions {
                (0..ACTION_DIM).map(|_| explore.random_range(-1.0..=1.0)).collect()
            } else {
                let noise: Vec<f64> = (0..ACTION_DIM).map(|_| explore.sample(StandardNormal)).collect();
                agent.policy.sample_action(&obs, &noise)?.0
            };
            let out = env.step(&action, None)?;
            reward += out.reward;
            c1 += out.info.c1;
            c2 += out.info.c2;
            profit += out.info.profit();
            buffer.push(Transition::new(&obs, &action, out.reward, &out.observation, out.done)?);
            if buffer.len() >= cfg.warmup_transitions {
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer.sample(cfg.batch, &mut replay_rng)?;
                    let stats = agent.update(&batch, cfg, &reg, &mut update_rng)?;
                    entropy += stats.entropy;
                    reg_sum += stats.regularizer;
                    episode_updates += 1;
                }
            }
            obs = out.observation;
            if out.done {
                break;
            }
        }
        updates += episode_updates;
        let per_update = |v: f64| if episode_updates > 0 { v / episode_updates as f64 } else { 0.0 };
        let point = CurvePoint {
            episode,
            reward,
            c1,
            c2,
            alpha: agent.alpha(),
            eps,
            beta,
            profit,
            updates: episode_updates,
            entropy: per_update(entropy),
            regularizer: per_update(reg_sum),
        };
        on_episode(&point);
        curves.push(point);
    }
    Ok(TrainOutput { agent, curves, updates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub day: usize,
    pub reward: f64,
    pub rev: f64,
    pub cost: f64,
    /// `Σ (rev − cost)` over the day.
    pub profit: f64,
    pub c1: f64,
    pub c2: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: Vec<EpisodeMetrics>,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_profit: f64,
    pub total_profit: f64,
    pub total_rev: f64,
    pub total_cost: f64,
    pub total_c1: f64,
    pub total_c2: f64,
    pub violations: usize,
    /// Hourly dispatch of the first episode.
    pub trace: Vec<DispatchResult>,
}

/// Rolls out the deterministic policy for `episodes` days. The adversary
/// only changes what the policy sees.
pub fn evaluate(agent: &Agent, env: &mut IesEnv, adversary: Option<&Adversary>, episodes: usize) -> Result<EvalMetrics> {
    let mut rows = Vec::with_capacity(episodes);
    let mut trace = Vec::new();
    for e in 0..episodes {
        env.reset()?;
        let day = env.state().day_index;
        let mut m = EpisodeMetrics {
            day,
            reward: 0.0,
            rev: 0.0,
            cost: 0.0,
            profit: 0.0,
            c1: 0.0,
            c2: 0.0,
            violations: 0,
        };
        while !env.state().done() {
            let seen = match adversary {
                Some(a) if a.mode == AdversaryMode::LinfWorst => {
                    let clean = env.observe(None)?;
                    let dir = agent.value_descent_direction(&clean)?;
                    env.observe_with(Some(a), Some(&dir))?
                }
                other => env.observe(other)?,
            };
            let action = agent.act(&seen)?;
            let out = env.step(&action, None)?;
            m.reward += out.reward;
            m.rev += out.info.rev;
            m.cost += out.info.cost;
            m.profit += out.info.profit();
            m.c1 += out.info.c1;
            m.c2 += out.info.c2;
            m.violations += out.info.dispatch.flags.violations();
            if e == 0 {
                trace.push(out.info.dispatch);
            }
        }
        rows.push(m);
    }
    Ok(summarize(rows, trace))
}

fn summarize(episodes: Vec<EpisodeMetrics>, trace: Vec<DispatchResult>) -> EvalMetrics {
    let n = episodes.len().max(1) as f64;
    let mean_reward = episodes.iter().map(|e| e.reward).sum::<f64>() / n;
    let var = episodes.iter().map(|e| (e.reward - mean_reward).powi(2)).sum::<f64>() / n;
    let total_profit = episodes.iter().map(|e| e.profit).sum::<f64>();
    EvalMetrics {
        mean_reward,
        std_reward: var.sqrt(),
        mean_profit: total_profit / n,
        total_profit,
        total_rev: episodes.iter().map(|e| e.rev).sum(),
        total_cost: episodes.iter().map(|e| e.cost).sum(),
        total_c1: episodes.iter().map(|e| e.c1).sum(),
        total_c2: episodes.iter().map(|e| e.c2).sum(),
        violations: episodes.iter().map(|e| e.violations).sum(),
        episodes,
        trace,
    }
}

/// Mean of a slice of curve rewards; used for learning-progress checks.
pub fn mean_reward(points: &[CurvePoint]) -> f64 {
    points.iter().map(|p| p.reward).sum::<f64>() / points.len().max(1) as f64
}
