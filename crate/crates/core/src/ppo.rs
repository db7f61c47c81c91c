//! PPO optimizer: generalized advantage estimation, the clipped surrogate,
//! value and entropy losses, minibatch epochs with Adam, and the outer
//! training loop over environment rollouts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::ActorCritic;
use crate::norm::ObsNormalizer;
use crate::policy::{self};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite gradient in `{array}` (iteration diagnostic: {detail})")]
    NonFiniteGradient { array: String, detail: String },
    #[error("non-finite loss input")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error("environment failure: {0}")]
    Environment(String),
}

/// One stored policy step. `next_value` is only consulted at truncated
/// segment ends (bootstrap); terminal ends use V = 0.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub log_prob: f64,
    pub value: f64,
    pub terminal: bool,
    pub truncated: bool,
    pub next_value: f64,
}

impl Transition {
    pub fn is_segment_end(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub horizon: usize,
    pub samples_per_iteration: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub iterations: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            horizon: 400,
            samples_per_iteration: 4800,
            minibatch_size: 64,
            epochs: 3,
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.005,
            value_coef: 0.5,
            learning_rate: 1e-4,
            grad_clip_norm: 0.5,
            iterations: 100,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PpoError::BadConfig(format!("gamma {} outside (0,1]", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(PpoError::BadConfig(format!("lambda {} outside (0,1]", self.lambda)));
        }
        if self.clip_epsilon <= 0.0 {
            return Err(PpoError::BadConfig("clip_epsilon must be > 0".into()));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("samples_per_iteration", self.samples_per_iteration),
            ("minibatch_size", self.minibatch_size),
            ("epochs", self.epochs),
            ("iterations", self.iterations),
        ] {
            if v == 0 {
                return Err(PpoError::BadConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimates {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// GAE over the buffer: delta_t = r_t + gamma V(s_{t+1}) - V(s_t),
/// advantages accumulate (gamma lambda)-discounted deltas within each
/// segment; returns are advantage + value.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Result<AdvantageEstimates, PpoError> {
    if buffer.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let n = buffer.len();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let step = &buffer.steps[t];
        let next_value = if step.terminal {
            0.0
        } else if step.truncated {
            step.next_value
        } else {
            buffer.steps[t + 1].value
        };
        let delta = step.reward + gamma * next_value - step.value;
        gae = if step.is_segment_end() {
            delta
        } else {
            delta + gamma * lambda * gae
        };
        advantages[t] = gae;
        returns[t] = gae + step.value;
    }
    Ok(AdvantageEstimates { advantages, returns })
}

/// In-place standardization to zero mean, unit variance.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateStats {
    /// Mean clipped surrogate (to be maximized).
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Mean over the batch of min(rho A, clip(rho, 1-eps, 1+eps) A).
pub fn clipped_policy_loss(
    advantages: &[f64],
    old_log_probs: &[f64],
    new_log_probs: &[f64],
    epsilon: f64,
) -> Result<SurrogateStats, PpoError> {
    if advantages.len() != old_log_probs.len() || advantages.len() != new_log_probs.len() {
        return Err(PpoError::LengthMismatch("surrogate batch".into()));
    }
    if advantages.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let mut surrogate = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for i in 0..advantages.len() {
        let ratio = (new_log_probs[i] - old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(PpoError::NonFinite);
        }
        let un = ratio * advantages[i];
        let cl = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantages[i];
        surrogate += un.min(cl);
        if (ratio - 1.0).abs() > epsilon {
            clipped += 1;
        }
        kl += old_log_probs[i] - new_log_probs[i];
    }
    let n = advantages.len() as f64;
    Ok(SurrogateStats {
        surrogate: surrogate / n,
        clip_fraction: clipped as f64 / n,
        approx_kl: kl / n,
    })
}

/// 0.5 * mean squared error between value predictions and returns.
pub fn value_loss(predictions: &[f64], returns: &[f64]) -> Result<f64, PpoError> {
    if predictions.len() != returns.len() {
        return Err(PpoError::LengthMismatch("value batch".into()));
    }
    if predictions.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(returns)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        * 0.5
        / n)
}

/// J = -L_clip + beta_V * L_V - beta_H * mean entropy; minimized.
pub fn total_objective(surrogate: f64, value_loss: f64, entropy: f64, beta_v: f64, beta_h: f64) -> f64 {
    -surrogate + beta_v * value_loss - beta_h * entropy
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_objective: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Adam over the model's named arrays, with global-norm gradient clipping
/// applied by the caller before `step`.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &ActorCritic, lr: f64) -> Self {
        let shapes: Vec<usize> = model.arrays().iter().map(|(_, a)| a.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut ActorCritic, grads: &ActorCritic) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gs = grads.arrays();
        for (ai, (_, param)) in model.arrays_mut().into_iter().enumerate() {
            let g = gs[ai].1;
            let m = &mut self.m[ai];
            let v = &mut self.v[ai];
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                param[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients so the global L2 norm does not exceed `max_norm`.
fn clip_gradients(grads: &mut ActorCritic, max_norm: f64) -> f64 {
    let norm: f64 = grads
        .arrays()
        .iter()
        .map(|(_, a)| a.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, a) in grads.arrays_mut() {
            for g in a {
                *g *= scale;
            }
        }
    }
    norm
}

fn check_finite_grads(grads: &ActorCritic, detail: &str) -> Result<(), PpoError> {
    for (name, a) in grads.arrays() {
        if a.iter().any(|g| !g.is_finite()) {
            return Err(PpoError::NonFiniteGradient {
                array: name.to_string(),
                detail: detail.to_string(),
            });
        }
    }
    Ok(())
}

/// Runs E epochs of shuffled minibatch updates over the buffer.
/// Advantages are normalized once for the whole iteration batch.
pub fn update(
    model: &mut ActorCritic,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport, PpoError> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let est = compute_gae(buffer, cfg.gamma, cfg.lambda)?;
    let mut advantages = est.advantages;
    normalize_advantages(&mut advantages);
    let returns = est.returns;

    let n = buffer.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut report_acc = LossReport {
        surrogate: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        total_objective: 0.0,
        clip_fraction: 0.0,
        approx_kl: 0.0,
    };
    let mut batches = 0usize;

    for _epoch in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.minibatch_size) {
            let b = chunk.len() as f64;
            let mut grads = model.zeros_like();
            let mut surr = 0.0;
            let mut vloss = 0.0;
            let mut clipped = 0usize;
            let mut kl = 0.0;
            for &idx in chunk {
                let step = &buffer.steps[idx];
                let adv = advantages[idx];
                let ret = returns[idx];
                let (feature, cache) = model.backbone.forward_cached(&step.obs)?;
                let mu = policy::mean_action(&feature, &model.policy)?;
                let stds = model.policy.stds();
                let new_logp: f64 = step
                    .action
                    .iter()
                    .zip(&mu)
                    .zip(&stds)
                    .map(|((a, m), s)| {
                        let z = (a - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * 1.8378770664093453
                    })
                    .sum();
                let value_pred = policy::value_of(&feature, &model.value)?;

                let ratio = (new_logp - step.log_prob).exp();
                if !ratio.is_finite() {
                    return Err(PpoError::NonFinite);
                }
                let un = ratio * adv;
                let cl = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
                surr += un.min(cl);
                if (ratio - 1.0).abs() > cfg.clip_epsilon {
                    clipped += 1;
                }
                kl += step.log_prob - new_logp;
                let verr = value_pred - ret;
                vloss += 0.5 * verr * verr;

                // dJ/dlogp: the surrogate contributes -1/B * d(min)/dlogp
                let active = if un <= cl {
                    true
                } else {
                    ratio > 1.0 - cfg.clip_epsilon && ratio < 1.0 + cfg.clip_epsilon
                };
                let dj_dlogp = if active { -un / b } else { 0.0 };
                // dJ/dV: beta_V/B * (V - R)
                let dj_dv = cfg.value_coef * verr / b;

                let lp_grads = policy::log_prob_grads(&step.action, &mu, &model.policy);
                let dmu: Vec<f64> = lp_grads.dmu.iter().map(|d| dj_dlogp * d).collect();
                let mut dfeature = vec![0.0; feature.len()];
                model
                    .policy
                    .mean
                    .backward(&feature, &dmu, &mut grads.policy.mean, &mut dfeature);
                for (g, d) in grads.policy.log_std.iter_mut().zip(&lp_grads.dlog_std) {
                    *g += dj_dlogp * d;
                }
                model
                    .value
                    .head
                    .backward(&feature, &[dj_dv], &mut grads.value.head, &mut dfeature);
                model.backbone.backward(&cache, &dfeature, &mut grads.backbone)?;
            }
            // entropy bonus: J has -beta_H * H(params), independent of the batch
            let ent_grads = policy::entropy_grads(&model.policy);
            for (g, d) in grads.policy.log_std.iter_mut().zip(&ent_grads) {
                *g -= cfg.entropy_coef * d;
            }

            check_finite_grads(&grads, &format!("minibatch of {} samples", chunk.len()))?;
            clip_gradients(&mut grads, cfg.grad_clip_norm);
            optimizer.step(model, &grads);

            let ent = policy::entropy(&model.policy);
            let msur = surr / b;
            let mvl = vloss / b;
            report_acc.surrogate += msur;
            report_acc.value_loss += mvl;
            report_acc.entropy += ent;
            report_acc.total_objective += total_objective(msur, mvl, ent, cfg.value_coef, cfg.entropy_coef);
            report_acc.clip_fraction += clipped as f64 / b;
            report_acc.approx_kl += kl / b;
            batches += 1;
        }
    }

    let k = batches as f64;
    Ok(LossReport {
        surrogate: report_acc.surrogate / k,
        value_loss: report_acc.value_loss / k,
        entropy: report_acc.entropy / k,
        total_objective: report_acc.total_objective / k,
        clip_fraction: report_acc.clip_fraction / k,
        approx_kl: report_acc.approx_kl / k,
    })
}

/// Environment abstraction consumed by the trainer. Implementations enforce
/// their own horizon and signal it through `truncated`.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Samples per-episode randomization and returns the initial raw
    /// observation.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, PpoError>;
    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<EnvTransition, PpoError>;
}

pub struct EnvTransition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Per-iteration statistics logged to the training CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub samples: usize,
    pub cumulative_samples: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub mean_step_reward: f64,
    pub losses: LossReport,
}

/// Outer PPO loop: collect at least `samples_per_iteration` steps across
/// episodes (each reset draws fresh domain randomization), run `update`,
/// and report per-iteration statistics. Deterministic for a fixed seed.
pub fn train<E, F>(
    env: &mut E,
    model: &mut ActorCritic,
    normalizer: &mut ObsNormalizer,
    cfg: &PpoConfig,
    seed: u64,
    mut on_iteration: F,
) -> Result<Vec<IterationRecord>, PpoError>
where
    E: Environment,
    F: FnMut(&IterationRecord, &ActorCritic, &ObsNormalizer),
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = Adam::new(model, cfg.learning_rate);
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut cumulative = 0usize;

    for iteration in 1..=cfg.iterations {
        let mut buffer = RolloutBuffer::default();
        let mut episode_returns: Vec<f64> = Vec::new();
        let mut reward_sum = 0.0;
        let mut norm_obs = Vec::new();

        while buffer.len() < cfg.samples_per_iteration {
            let raw = env.reset(&mut rng)?;
            normalizer.observe(&raw, &mut norm_obs);
            let mut obs = norm_obs.clone();
            let mut ep_return = 0.0;
            let mut finished = false;
            while !finished {
                let (feature, _) = model.backbone.forward_cached(&obs)?;
                let sample = policy::act(&feature, &model.policy, &mut rng, false)?;
                let value = policy::value_of(&feature, &model.value)?;
                let tr = env.step(&sample.action, &mut rng)?;
                normalizer.observe(&tr.obs, &mut norm_obs);
                let next_obs = norm_obs.clone();
                ep_return += tr.reward;
                reward_sum += tr.reward;

                let budget_cut = buffer.len() + 1 >= cfg.samples_per_iteration && !tr.terminal && !tr.truncated;
                let truncated = tr.truncated || budget_cut;
                let next_value = if truncated {
                    let (nf, _) = model.backbone.forward_cached(&next_obs)?;
                    policy::value_of(&nf, &model.value)?
                } else {
                    0.0
                };
                buffer.steps.push(Transition {
                    obs: std::mem::replace(&mut obs, next_obs),
                    action: sample.action,
                    reward: tr.reward,
                    log_prob: sample.log_prob,
                    value,
                    terminal: tr.terminal,
                    truncated,
                    next_value,
                });
                if tr.terminal || tr.truncated {
                    episode_returns.push(ep_return);
                    finished = true;
                } else if budget_cut {
                    // iteration budget reached mid-episode
                    if episode_returns.is_empty() {
                        episode_returns.push(ep_return);
                    }
                    finished = true;
                }
            }
        }

        let samples = buffer.len();
        cumulative += samples;
        let losses = update(model, &mut optimizer, &buffer, cfg, &mut rng)?;
        let (mean_r, min_r, max_r) = if episode_returns.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let sum: f64 = episode_returns.iter().sum();
            let min = episode_returns.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = episode_returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (sum / episode_returns.len() as f64, min, max)
        };
        let record = IterationRecord {
            iteration,
            samples,
            cumulative_samples: cumulative,
            episodes: episode_returns.len(),
            mean_return: mean_r,
            min_return: min_r,
            max_return: max_r,
            mean_step_reward: reward_sum / samples as f64,
            losses,
        };
        on_iteration(&record, model, normalizer);
        records.push(record);
    }
    Ok(records)
}
