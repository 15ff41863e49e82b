//! Proximal policy optimization for the gain-scheduling task.
//!
//! Rollouts are collected from several environments, each owned by one worker
//! with its own random stream, and merged in environment order. Advantages
//! come from generalized advantage estimation; the policy and value networks
//! are then updated for several epochs of shuffled minibatches against the
//! clipped surrogate objective.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{ActionVector, EnvConfig, Environment, EpisodeOutcome, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad, Adam, InputMap, PolicyParams,
};
use crate::rng;
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub n_envs: usize,
    pub n_steps_per_env: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub n_epochs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden_sizes: Vec<usize>,
    /// Update iterations aggregated into one monitoring window.
    pub monitor_every: usize,
    /// Present cascade errors to the networks with per-channel signs folded
    /// so the position error is non-negative.
    pub fold_error_signs: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 240_000,
            n_envs: 3,
            n_steps_per_env: 2048,
            batch_size: 64,
            gamma: 0.99,
            lr: 3e-4,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            n_epochs: 10,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            hidden_sizes: vec![64, 64],
            monitor_every: 2,
            fold_error_signs: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("total_steps", self.total_steps as usize),
            ("n_envs", self.n_envs),
            ("n_steps_per_env", self.n_steps_per_env),
            ("batch_size", self.batch_size),
            ("n_epochs", self.n_epochs),
            ("monitor_every", self.monitor_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        let unit = [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        let positive = [
            ("lr", self.lr),
            ("clip_eps", self.clip_eps),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid(
                "hidden_sizes",
                "layer widths must be positive",
            ));
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> usize {
        self.n_envs * self.n_steps_per_env
    }

    pub fn iterations(&self) -> usize {
        (self.total_steps as usize).div_ceil(self.steps_per_iteration())
    }

    pub fn windows(&self) -> usize {
        self.iterations().div_ceil(self.monitor_every)
    }

    pub fn minibatches_per_epoch(&self) -> usize {
        self.steps_per_iteration().div_ceil(self.batch_size)
    }
}

/// On-policy experience from one collection phase, stored environment-major:
/// entry `env * n_steps + step`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    n_envs: usize,
    n_steps: usize,
    pub observations: Vec<f64>,
    /// Unclamped actions, matching the stored log-probabilities.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    /// Value of the observation following each stream's last step.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    advantages_ready: bool,
}

impl RolloutBuffer {
    pub fn capacity(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_envs(&self) -> usize {
        self.n_envs
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn advantages_ready(&self) -> bool {
        self.advantages_ready
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * OBS_DIM..(i + 1) * OBS_DIM]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]
    }

    /// Runs GAE over every environment stream. May only be called once per
    /// collection.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        if self.advantages_ready {
            return Err(Error::invalid(
                "buffer",
                "advantages already computed for this collection",
            ));
        }
        if self.len() != self.capacity() {
            return Err(Error::invalid("buffer", "buffer is not full"));
        }
        let n = self.n_steps;
        self.advantages = Vec::with_capacity(self.len());
        self.returns = Vec::with_capacity(self.len());
        for e in 0..self.n_envs {
            let r = e * n..(e + 1) * n;
            let (adv, ret) = compute_gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.terminals[r],
                self.last_values[e],
                gamma,
                lambda,
            )?;
            self.advantages.extend(adv);
            self.returns.extend(ret);
        }
        self.advantages_ready = true;
        Ok(())
    }
}

/// Generalized advantage estimation over one environment stream.
/// `terminals[t]` marks that the episode ended with transition `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for len in [values.len(), terminals.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Summary of one finished episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcome: EpisodeOutcome,
    pub total_reward: f64,
    pub length: usize,
    pub ise: f64,
}

/// One environment plus the random stream and bookkeeping that stay with it
/// across collection phases.
#[derive(Debug)]
pub struct EnvWorker {
    env: Environment,
    traj: Arc<Trajectory>,
    rng: ChaCha8Rng,
    obs: [f64; OBS_DIM],
    episode_reward: f64,
    episode_length: usize,
}

impl EnvWorker {
    pub fn new(config: EnvConfig, traj: Arc<Trajectory>, mut rng: ChaCha8Rng) -> Result<Self> {
        let mut env = Environment::new(config)?;
        let obs = env.reset(rng.random(), traj.clone())?.to_array();
        Ok(Self {
            env,
            traj,
            rng,
            obs,
            episode_reward: 0.0,
            episode_length: 0,
        })
    }
}

struct Segment {
    observations: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    last_value: f64,
    episodes: Vec<EpisodeSummary>,
}

fn collect_segment(
    worker: &mut EnvWorker,
    policy: &PolicyParams,
    n_steps: usize,
) -> Result<Segment> {
    let mut seg = Segment {
        observations: Vec::with_capacity(n_steps * OBS_DIM),
        actions: Vec::with_capacity(n_steps * ACTION_DIM),
        log_probs: Vec::with_capacity(n_steps),
        values: Vec::with_capacity(n_steps),
        rewards: Vec::with_capacity(n_steps),
        terminals: Vec::with_capacity(n_steps),
        last_value: 0.0,
        episodes: Vec::new(),
    };
    for _ in 0..n_steps {
        let sample = policy.sample_action(&worker.obs, &mut worker.rng)?;
        let action = ActionVector(sample.action.as_slice().try_into().map_err(|_| {
            Error::DimensionMismatch {
                expected: ACTION_DIM,
                actual: sample.action.len(),
            }
        })?);
        let tr = worker.env.step(&action)?;

        seg.observations.extend_from_slice(&worker.obs);
        seg.actions.extend_from_slice(&sample.raw);
        seg.log_probs.push(sample.log_prob);
        seg.values.push(sample.value);
        seg.rewards.push(tr.reward);
        seg.terminals.push(tr.outcome.is_terminal());

        worker.episode_reward += tr.reward;
        worker.episode_length += 1;
        if tr.outcome.is_terminal() {
            let ise = worker.env.state().map_or(f64::NAN, |s| s.accumulated_ise);
            seg.episodes.push(EpisodeSummary {
                outcome: tr.outcome,
                total_reward: worker.episode_reward,
                length: worker.episode_length,
                ise,
            });
            worker.episode_reward = 0.0;
            worker.episode_length = 0;
            let seed = worker.rng.random();
            worker.obs = worker.env.reset(seed, worker.traj.clone())?.to_array();
        } else {
            worker.obs = tr.observation.to_array();
        }
    }
    seg.last_value = policy.value(&worker.obs)?;
    Ok(seg)
}

/// Steps every worker `n_steps_per_env` times with actions sampled from
/// `policy`. Workers run concurrently; results are merged in worker order, so
/// the buffer does not depend on scheduling.
pub fn collect_rollouts(
    workers: &mut [EnvWorker],
    policy: &PolicyParams,
    n_steps_per_env: usize,
) -> Result<(RolloutBuffer, Vec<EpisodeSummary>)> {
    let segments = workers
        .par_iter_mut()
        .map(|w| collect_segment(w, policy, n_steps_per_env))
        .collect::<Result<Vec<_>>>()?;
    let cap = workers.len() * n_steps_per_env;
    let mut buf = RolloutBuffer {
        n_envs: workers.len(),
        n_steps: n_steps_per_env,
        observations: Vec::with_capacity(cap * OBS_DIM),
        actions: Vec::with_capacity(cap * ACTION_DIM),
        log_probs: Vec::with_capacity(cap),
        values: Vec::with_capacity(cap),
        rewards: Vec::with_capacity(cap),
        terminals: Vec::with_capacity(cap),
        last_values: Vec::with_capacity(workers.len()),
        advantages: Vec::new(),
        returns: Vec::new(),
        advantages_ready: false,
    };
    let mut episodes = Vec::new();
    for s in segments {
        buf.observations.extend(s.observations);
        buf.actions.extend(s.actions);
        buf.log_probs.extend(s.log_probs);
        buf.values.extend(s.values);
        buf.rewards.extend(s.rewards);
        buf.terminals.extend(s.terminals);
        buf.last_values.push(s.last_value);
        episodes.extend(s.episodes);
    }
    Ok((buf, episodes))
}

/// A set of transitions to evaluate the PPO objective on. Observations and
/// actions are row-major with one row per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    pub fn gather(buf: &RolloutBuffer, indices: &[usize]) -> Self {
        let mut b = Batch {
            observations: Vec::with_capacity(indices.len() * OBS_DIM),
            actions: Vec::with_capacity(indices.len() * ACTION_DIM),
            old_log_probs: Vec::with_capacity(indices.len()),
            advantages: Vec::with_capacity(indices.len()),
            returns: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            b.observations.extend_from_slice(buf.observation(i));
            b.actions.extend_from_slice(buf.action(i));
            b.old_log_probs.push(buf.log_probs[i]);
            b.advantages.push(buf.advantages[i]);
            b.returns.push(buf.returns[i]);
        }
        b
    }

    /// Rescales advantages to zero mean and unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self
            .advantages
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let std = var.sqrt() + 1e-8;
        self.advantages
            .iter_mut()
            .for_each(|a| *a = (*a - mean) / std);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&TrainConfig> for LossCoefficients {
    fn from(c: &TrainConfig) -> Self {
        Self {
            clip_eps: c.clip_eps,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    /// Negated clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    /// Negated mean policy entropy.
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub fn ppo_loss(
    policy: &PolicyParams,
    batch: &Batch,
    coef: &LossCoefficients,
) -> Result<LossComponents> {
    evaluate_loss(policy, batch, coef, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to [`PolicyParams::to_flat`].
pub fn ppo_loss_grad(
    policy: &PolicyParams,
    batch: &Batch,
    coef: &LossCoefficients,
) -> Result<(LossComponents, Vec<f64>)> {
    evaluate_loss(policy, batch, coef, true).map(|(l, g)| (l, g.unwrap()))
}

fn evaluate_loss(
    policy: &PolicyParams,
    batch: &Batch,
    coef: &LossCoefficients,
    want_grad: bool,
) -> Result<(LossComponents, Option<Vec<f64>>)> {
    let n = batch.len();
    let (od, ad) = (policy.obs_dim(), policy.act_dim());
    if n == 0 {
        return Err(Error::invalid("batch", "empty batch"));
    }
    if batch.observations.len() != n * od || batch.actions.len() != n * ad {
        return Err(Error::DimensionMismatch {
            expected: n * od,
            actual: batch.observations.len(),
        });
    }
    if batch.advantages.len() != n || batch.returns.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: batch.advantages.len().min(batch.returns.len()),
        });
    }
    let inv_n = 1.0 / n as f64;
    let (lo, hi) = (1.0 - coef.clip_eps, 1.0 + coef.clip_eps);

    let mut actor_grads = policy.actor.zeros_like();
    let mut critic_grads = policy.critic.zeros_like();
    let mut log_std_grads = vec![0.0; ad];
    let mut out = LossComponents::default();

    for i in 0..n {
        let obs = policy
            .input_map
            .apply(&batch.observations[i * od..(i + 1) * od]);
        let action = &batch.actions[i * ad..(i + 1) * ad];
        let adv = batch.advantages[i];

        let actor_cache = policy.actor.forward_cached(&obs)?;
        let mean = actor_cache.output();
        let log_prob = gaussian_log_prob(mean, &policy.log_std, action);
        let log_ratio = log_prob - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        out.policy -= unclipped.min(clipped) * inv_n;
        out.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
        if (ratio - 1.0).abs() > coef.clip_eps {
            out.clip_fraction += inv_n;
        }

        let critic_cache = policy.critic.forward_cached(&obs)?;
        let value = critic_cache.output()[0];
        let err = value - batch.returns[i];
        out.value += err * err * inv_n;

        if want_grad {
            // The clipped branch is flat in the parameters once it is the
            // active minimum and the ratio sits outside the trust region.
            let surrogate_active = unclipped <= clipped || (lo..=hi).contains(&ratio);
            let d_log_prob = if surrogate_active {
                -adv * ratio * inv_n
            } else {
                0.0
            };
            if d_log_prob != 0.0 {
                let (d_mean, d_log_std) = gaussian_log_prob_grad(mean, &policy.log_std, action);
                let mean_grad: Vec<f64> = d_mean.iter().map(|g| g * d_log_prob).collect();
                policy
                    .actor
                    .backward_accumulate(&actor_cache, &mean_grad, &mut actor_grads)?;
                log_std_grads
                    .iter_mut()
                    .zip(&d_log_std)
                    .for_each(|(acc, g)| *acc += g * d_log_prob);
            }
            let d_value = 2.0 * coef.value_coef * err * inv_n;
            policy
                .critic
                .backward_accumulate(&critic_cache, &[d_value], &mut critic_grads)?;
        }
    }
    // Entropy does not depend on the observation.
    out.entropy = -gaussian_entropy(&policy.log_std);
    out.total = out.policy + coef.value_coef * out.value + coef.entropy_coef * out.entropy;
    if !out.total.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {}", out.total)));
    }

    let grads = want_grad.then(|| {
        log_std_grads
            .iter_mut()
            .for_each(|g| *g -= coef.entropy_coef);
        let mut flat = Vec::with_capacity(policy.num_params());
        actor_grads.write_flat(&mut flat);
        flat.extend_from_slice(&log_std_grads);
        critic_grads.write_flat(&mut flat);
        flat
    });
    Ok((out, grads))
}

/// `1 - Var(returns - values) / Var(returns)`. Returns 1 for a perfect fit and
/// 0 when the returns have no variance to explain but the fit is imperfect.
pub fn explained_variance(values: &[f64], returns: &[f64]) -> f64 {
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    };
    let var_y = var(&mut returns.iter().copied());
    let var_res = var(&mut returns.iter().zip(values).map(|(r, v)| r - v));
    if var_res == 0.0 {
        1.0
    } else if var_y == 0.0 {
        0.0
    } else {
        1.0 - var_res / var_y
    }
}

/// Scales `grads` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Diagnostics of one update iteration, averaged over all minibatches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub explained_variance: f64,
    pub grad_norm: f64,
    pub std_mean: f64,
    pub gradient_steps: usize,
}

pub fn update(
    buffer: &RolloutBuffer,
    policy: &mut PolicyParams,
    opt: &mut Adam,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if !buffer.advantages_ready() {
        return Err(Error::invalid(
            "buffer",
            "advantages have not been computed",
        ));
    }
    let coef = LossCoefficients::from(config);
    let explained = explained_variance(&buffer.values, &buffer.returns);
    let mut indices: Vec<usize> = (0..buffer.len()).collect();
    let mut sums = LossComponents::default();
    let mut grad_norm_sum = 0.0;
    let mut steps = 0usize;

    for _ in 0..config.n_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(config.batch_size) {
            let mut batch = Batch::gather(buffer, chunk);
            batch.normalize_advantages();
            let (loss, mut grads) = ppo_loss_grad(policy, &batch, &coef)?;
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient component {i} is {} at gradient step {steps}",
                    grads[i]
                )));
            }
            grad_norm_sum += clip_grad_norm(&mut grads, config.max_grad_norm);
            let mut flat = policy.to_flat();
            opt.update(&mut flat, &grads)?;
            policy.set_flat(&flat)?;
            policy.clamp_log_std();

            sums.policy += loss.policy;
            sums.value += loss.value;
            sums.entropy += loss.entropy;
            sums.approx_kl += loss.approx_kl;
            sums.clip_fraction += loss.clip_fraction;
            steps += 1;
        }
    }
    let k = steps.max(1) as f64;
    Ok(UpdateStats {
        policy_loss: sums.policy / k,
        value_loss: sums.value / k,
        entropy_loss: sums.entropy / k,
        approx_kl: sums.approx_kl / k,
        clip_fraction: sums.clip_fraction / k,
        explained_variance: explained,
        grad_norm: grad_norm_sum / k,
        std_mean: policy.log_std.iter().map(|l| l.exp()).sum::<f64>() / policy.log_std.len() as f64,
        gradient_steps: steps,
    })
}

/// Episode outcome tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub successes: usize,
    pub deviations: usize,
    pub timeouts: usize,
}

impl OutcomeCounts {
    pub fn from_episodes(episodes: &[EpisodeSummary]) -> Self {
        let mut c = Self::default();
        for e in episodes {
            match e.outcome {
                EpisodeOutcome::Success => c.successes += 1,
                EpisodeOutcome::Deviation => c.deviations += 1,
                EpisodeOutcome::TimeOut => c.timeouts += 1,
                EpisodeOutcome::Running => {}
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.successes + self.deviations + self.timeouts
    }
}

fn mean_reward(episodes: &[EpisodeSummary]) -> Option<f64> {
    (!episodes.is_empty())
        .then(|| episodes.iter().map(|e| e.total_reward).sum::<f64>() / episodes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total_steps: u64,
    #[serde(flatten)]
    pub update: UpdateStats,
    #[serde(flatten)]
    pub outcomes: OutcomeCounts,
    pub mean_episode_reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: usize,
    pub first_iteration: usize,
    pub last_iteration: usize,
    pub total_steps: u64,
    #[serde(flatten)]
    pub outcomes: OutcomeCounts,
    pub mean_episode_reward: Option<f64>,
    /// Mean ISE over successful episodes.
    pub mean_success_ise: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub iterations: Vec<IterationRecord>,
    pub windows: Vec<WindowRecord>,
}

/// Hooks for persisting progress while training runs.
pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &IterationRecord, _policy: &PolicyParams) -> Result<()> {
        Ok(())
    }

    fn on_window(&mut self, _record: &WindowRecord, _policy: &PolicyParams) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every event.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Environment settings and the reference every training episode tracks.
#[derive(Clone, Debug)]
pub struct TrainingTask {
    pub env: EnvConfig,
    pub trajectory: Arc<Trajectory>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub history: TrainHistory,
}

/// Training failure, carrying the history recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("training aborted after {} iterations: {source}", history.iterations.len())]
pub struct TrainFailure {
    #[source]
    pub source: Error,
    pub history: TrainHistory,
}

pub fn train(
    config: &TrainConfig,
    task: &TrainingTask,
    observer: &mut dyn TrainObserver,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let mut history = TrainHistory::default();
    match run_training(config, task, observer, &mut history) {
        Ok(policy) => Ok(TrainOutcome { policy, history }),
        Err(source) => Err(TrainFailure { source, history }),
    }
}

fn run_training(
    config: &TrainConfig,
    task: &TrainingTask,
    observer: &mut dyn TrainObserver,
    history: &mut TrainHistory,
) -> Result<PolicyParams> {
    config.validate()?;
    task.env.validate()?;
    let mut init_rng = rng::stream(config.seed, rng::INIT_STREAM);
    let mut sampler = rng::stream(config.seed, rng::SAMPLER_STREAM);
    let input_map = if config.fold_error_signs {
        InputMap::FoldErrorSigns
    } else {
        InputMap::Identity
    };
    let mut policy = PolicyParams::new(OBS_DIM, ACTION_DIM, &config.hidden_sizes, &mut init_rng)?
        .with_input_map(input_map);
    let mut opt = Adam::new(policy.num_params(), config.lr);
    let mut workers = (0..config.n_envs)
        .map(|i| {
            EnvWorker::new(
                task.env,
                task.trajectory.clone(),
                rng::stream(config.seed, &rng::env_stream_name(i)),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut window_episodes: Vec<EpisodeSummary> = Vec::new();
    let mut window_start = 1;
    let iterations = config.iterations();
    let mut steps = 0u64;
    for iteration in 1..=iterations {
        let (mut buffer, episodes) =
            collect_rollouts(&mut workers, &policy, config.n_steps_per_env)?;
        steps += buffer.len() as u64;
        buffer.compute_advantages(config.gamma, config.gae_lambda)?;
        let stats = update(&buffer, &mut policy, &mut opt, config, &mut sampler)?;

        let record = IterationRecord {
            iteration,
            total_steps: steps,
            update: stats,
            outcomes: OutcomeCounts::from_episodes(&episodes),
            mean_episode_reward: mean_reward(&episodes),
        };
        observer.on_iteration(&record, &policy)?;
        history.iterations.push(record);
        window_episodes.extend(episodes);

        if iteration % config.monitor_every == 0 || iteration == iterations {
            let successes: Vec<f64> = window_episodes
                .iter()
                .filter(|e| e.outcome == EpisodeOutcome::Success)
                .map(|e| e.ise)
                .collect();
            let window = WindowRecord {
                window: history.windows.len() + 1,
                first_iteration: window_start,
                last_iteration: iteration,
                total_steps: steps,
                outcomes: OutcomeCounts::from_episodes(&window_episodes),
                mean_episode_reward: mean_reward(&window_episodes),
                mean_success_ise: (!successes.is_empty())
                    .then(|| successes.iter().sum::<f64>() / successes.len() as f64),
            };
            observer.on_window(&window, &policy)?;
            history.windows.push(window);
            window_episodes.clear();
            window_start = iteration + 1;
        }
    }
    Ok(policy)
}
