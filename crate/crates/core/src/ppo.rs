//! PPO training of per-embodiment expert policies in the surrogate
//! environment.
//!
//! The actor maps the expert observation to per-joint action means through
//! an ELU MLP; exploration uses a global learnable log-std vector. The
//! critic reads the privileged observation. Both share one flat parameter
//! vector and one Adam optimizer.

use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_table, Checkpoint};
use crate::embodiment::Embodiment;
use crate::env::{EnvConfig, Model, SurrogateEnv, CONTROL_DT, HORIZON};
use crate::randomization::CurriculumState;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Activation, AdamW, Layout, Mlp};
use crate::numfmt::fmt_f64;

pub const ACTION_MEAN_LIMIT: f64 = 10.0;
const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub envs: usize,
    pub steps_per_env: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub target_kl: f64,
    pub min_learning_rate: f64,
    pub max_learning_rate: f64,
    pub init_std: f64,
    pub seed: u64,
    /// Deterministic evaluation period in iterations; iteration 1 is always evaluated.
    pub eval_every: usize,
    pub eval_envs: usize,
    pub eval_steps: usize,
}

impl Default for PpoConfig {
    /// Desk scale: 64 environments, batch 8192, minibatch 2048, 200 iterations.
    fn default() -> Self {
        PpoConfig {
            hidden: vec![512, 256, 128],
            envs: 64,
            steps_per_env: 128,
            minibatch: 2048,
            epochs: 5,
            iterations: 200,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.002,
            value_coef: 1.0,
            max_grad_norm: 1.0,
            learning_rate: 1e-3,
            target_kl: 0.01,
            min_learning_rate: 1e-5,
            max_learning_rate: 1e-2,
            init_std: 1.0,
            seed: 0,
            eval_every: 50,
            eval_envs: 8,
            eval_steps: HORIZON,
        }
    }
}

impl PpoConfig {
    pub fn check(&self) -> Result<()> {
        if self.envs == 0
            || self.steps_per_env == 0
            || self.minibatch == 0
            || self.epochs == 0
            || self.eval_every == 0
            || self.eval_envs == 0
            || self.eval_steps == 0
        {
            return Err(Error::Config("envs, steps, minibatch and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) || self.init_std <= 0.0 {
            return Err(Error::Config("invalid discount, GAE lambda or initial std".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertShape {
    pub obs_dim: usize,
    pub critic_dim: usize,
    pub joints: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExpertNet {
    pub shape: ExpertShape,
    pub layout: Layout,
    actor: Mlp,
    critic: Mlp,
    log_std: Range<usize>,
}

impl ExpertNet {
    pub fn new(shape: ExpertShape) -> Self {
        let mut layout = Layout::default();
        let mut a = vec![shape.obs_dim];
        a.extend(&shape.hidden);
        a.push(shape.joints);
        let actor = layout.mlp("actor", &a, Activation::Elu, Activation::Identity);
        let log_std = layout.tensor("log_std", vec![shape.joints]);
        let mut c = vec![shape.critic_dim];
        c.extend(&shape.hidden);
        c.push(1);
        let critic = layout.mlp("critic", &c, Activation::Elu, Activation::Identity);
        ExpertNet { shape, layout, actor, critic, log_std }
    }
}

/// Actor-critic parameters of one expert.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    pub net: Arc<ExpertNet>,
    pub params: Vec<f64>,
}

impl ExpertPolicy {
    pub fn new(shape: ExpertShape, init_std: f64, seed: u64) -> Self {
        let net = ExpertNet::new(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; net.layout.len];
        net.actor.init(&mut params, &mut rng);
        net.critic.init(&mut params, &mut rng);
        params[net.log_std.clone()].fill(init_std.ln());
        ExpertPolicy { net: Arc::new(net), params }
    }

    pub fn joints(&self) -> usize {
        self.net.shape.joints
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.net.log_std.clone()]
    }

    /// Clipped action means for `n` stacked observations.
    pub fn act_mean(&self, obs: &[f64], n: usize) -> Vec<f64> {
        let mut m = self.net.actor.eval(&self.params, obs, n);
        for v in &mut m {
            *v = v.clamp(-ACTION_MEAN_LIMIT, ACTION_MEAN_LIMIT);
        }
        m
    }

    pub fn value(&self, critic_obs: &[f64], n: usize) -> Vec<f64> {
        self.net.critic.eval(&self.params, critic_obs, n)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_params("expert", config_table(&self.net.shape)?, &self.net.layout, &self.params).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != "expert" {
            return Err(Error::Format(format!("checkpoint kind {} is not expert", ck.kind)));
        }
        let shape: ExpertShape =
            toml::Value::Table(ck.config.clone()).try_into().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
        let net = ExpertNet::new(shape);
        let params = ck.to_params(&net.layout)?;
        Ok(ExpertPolicy { net: Arc::new(net), params })
    }
}

fn log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

/// Generalized advantage estimation over one environment's sequence.
/// `dones[t]` marks that the episode ended after step t; `last_value`
/// bootstraps the step after the sequence.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::ShapeMismatch("rewards, values and dones must align".into()));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Clipped surrogate of one sample.
pub fn surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Halves the rate when KL exceeds twice the target, doubles it below
/// half the target.
pub fn adapt_learning_rate(lr: f64, kl: f64, target: f64, bounds: (f64, f64)) -> f64 {
    if kl > 2.0 * target {
        (lr / 2.0).max(bounds.0.min(lr))
    } else if kl < 0.5 * target {
        (lr * 2.0).min(bounds.1)
    } else {
        lr
    }
}

/// Time-major rollout storage: index `t * envs + e`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub envs: usize,
    pub steps: usize,
    pub obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub means: Vec<f64>,
    pub log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills advantages and returns per environment.
    pub fn compute_advantages(&mut self, last_values: &[f64], gamma: f64, lambda: f64) -> Result<()> {
        let (n, t) = (self.envs, self.steps);
        self.advantages = vec![0.0; n * t];
        self.returns = vec![0.0; n * t];
        for e in 0..n {
            let idx: Vec<usize> = (0..t).map(|s| s * n + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (a, ret) = gae(&r, &v, &d, last_values[e], gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = a[k];
                self.returns[i] = ret[k];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub learning_rate: f64,
}

/// Clipped-surrogate update over `cfg.epochs` passes of shuffled minibatches.
pub fn ppo_update(
    policy: &mut ExpertPolicy,
    opt: &mut AdamW,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    lr: &mut f64,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let net = policy.net.clone();
    let (od, cd, j) = (net.shape.obs_dim, net.shape.critic_dim, net.shape.joints);
    let n = buf.len();
    let mean_a = buf.advantages.iter().sum::<f64>() / n as f64;
    let std_a = (buf.advantages.iter().map(|a| (a - mean_a).powi(2)).sum::<f64>() / n as f64).sqrt();
    let adv: Vec<f64> = buf.advantages.iter().map(|a| (a - mean_a) / (std_a + 1e-8)).collect();
    let mb = cfg.minibatch.min(n);
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(mb) {
            let b = chunk.len();
            let obs: Vec<f64> = chunk.iter().flat_map(|&i| buf.obs[i * od..(i + 1) * od].iter().copied()).collect();
            let cobs: Vec<f64> =
                chunk.iter().flat_map(|&i| buf.critic_obs[i * cd..(i + 1) * cd].iter().copied()).collect();
            let p = &policy.params;
            let actor = net.actor.forward(p, &obs, b);
            let critic = net.critic.forward(p, &cobs, b);
            let log_std = &p[net.log_std.clone()];
            let raw = actor.output();
            let mut g = vec![0.0; p.len()];
            let mut d_mean = vec![0.0; b * j];
            let mut d_log_std = vec![0.0; j];
            let mut d_value = vec![0.0; b];
            let (mut pl, mut vl, mut kl) = (0.0, 0.0, 0.0);
            for (k, &i) in chunk.iter().enumerate() {
                let mean: Vec<f64> = raw[k * j..(k + 1) * j].iter().map(|v| v.clamp(-ACTION_MEAN_LIMIT, ACTION_MEAN_LIMIT)).collect();
                let a = &buf.actions[i * j..(i + 1) * j];
                let lp = log_prob(a, &mean, log_std);
                let ratio = (lp - buf.log_probs[i]).exp();
                let s = surrogate(ratio, adv[i], cfg.clip);
                pl -= s / b as f64;
                let clipped = (adv[i] >= 0.0 && ratio > 1.0 + cfg.clip) || (adv[i] < 0.0 && ratio < 1.0 - cfg.clip);
                let d_lp = if clipped { 0.0 } else { -adv[i] * ratio / b as f64 };
                for jj in 0..j {
                    let var = (2.0 * log_std[jj]).exp();
                    let diff = a[jj] - mean[jj];
                    let inside = raw[k * j + jj].abs() < ACTION_MEAN_LIMIT;
                    if inside {
                        d_mean[k * j + jj] = d_lp * diff / var;
                    }
                    d_log_std[jj] += d_lp * (diff * diff / var - 1.0);
                    let old_m = buf.means[i * j + jj];
                    let old_ls = buf.log_std[jj];
                    let old_var = (2.0 * old_ls).exp();
                    kl += (log_std[jj] - old_ls + (old_var + (old_m - mean[jj]).powi(2)) / (2.0 * var) - 0.5) / b as f64;
                }
                let v = critic.output()[k];
                let err = v - buf.returns[i];
                vl += err * err / b as f64;
                d_value[k] = cfg.value_coef * 2.0 * err / b as f64;
            }
            let entropy: f64 = log_std.iter().map(|ls| ls + 0.5 * (LOG_2PI + 1.0)).sum();
            let loss = pl + cfg.value_coef * vl - cfg.entropy_coef * entropy;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            for (dl, gl) in d_log_std.iter().zip(&mut g[net.log_std.clone()]) {
                *gl = dl - cfg.entropy_coef;
            }
            net.actor.backward_params(p, &actor, &d_mean, &mut g);
            net.critic.backward_params(p, &critic, &d_value, &mut g);
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            *lr = adapt_learning_rate(*lr, kl, cfg.target_kl, (cfg.min_learning_rate, cfg.max_learning_rate));
            opt.step(&mut policy.params, &g, *lr, 0.0);
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.entropy += entropy;
            stats.kl += kl;
            count += 1.0;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.kl /= count;
    stats.learning_rate = *lr;
    Ok(stats)
}

/// Deterministic episode statistics: mean over environments of the
/// dt-weighted cumulative reward and of its T1 + T2 part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub reward: f64,
    pub tracking: f64,
    pub falls: usize,
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Mean per-step training reward over the rollout.
    pub mean_reward: f64,
    /// Mean per-step weighted T1 + T2 over the rollout.
    pub mean_tracking: f64,
    pub kl: f64,
    pub learning_rate: f64,
    pub curriculum_mean: f64,
    /// Evaluation of the parameters that collected this iteration's rollout.
    pub eval: Option<EvalStats>,
}

#[derive(Debug, Clone)]
pub struct TrainedExpert {
    /// Parameters that collected the rollout with the highest mean reward.
    pub policy: ExpertPolicy,
    pub best_iteration: usize,
    pub curve: Vec<IterationStats>,
}

impl TrainedExpert {
    pub fn best(&self) -> &IterationStats {
        &self.curve[self.best_iteration - 1]
    }

    pub fn initial(&self) -> &IterationStats {
        &self.curve[0]
    }
}

pub fn write_curve_csv(w: &mut impl Write, curve: &[IterationStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record([
        "iteration",
        "mean_reward",
        "mean_tracking",
        "kl",
        "lr",
        "curriculum_mean",
        "eval_reward",
        "eval_tracking",
    ])
    .map_err(err)?;
    for s in curve {
        let ev = |f: fn(&EvalStats) -> f64| s.eval.as_ref().map(|e| fmt_f64(f(e))).unwrap_or_default();
        out.write_record([
            s.iteration.to_string(),
            fmt_f64(s.mean_reward),
            fmt_f64(s.mean_tracking),
            fmt_f64(s.kl),
            fmt_f64(s.learning_rate),
            fmt_f64(s.curriculum_mean),
            ev(|e| e.reward),
            ev(|e| e.tracking),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Deterministic rollouts of the action mean at curriculum coefficient `k`
/// (held fixed). Each environment runs one episode of at most `steps` steps.
pub fn evaluate_expert(
    policy: &ExpertPolicy,
    model: &Arc<Model>,
    env_cfg: &EnvConfig,
    k: f64,
    envs: usize,
    steps: usize,
    seed: u64,
) -> Result<EvalStats> {
    let cfg = EnvConfig { curriculum: false, ..env_cfg.clone() };
    let mut pool: Vec<SurrogateEnv> = (0..envs)
        .map(|i| {
            let mut env = SurrogateEnv::with_model(model.clone(), cfg.clone(), seed.wrapping_add(i as u64))?;
            env.curriculum = CurriculumState::with_coefficient(k);
            env.reset();
            Ok(env)
        })
        .collect::<Result<_>>()?;
    let j = model.joints;
    let mut live = vec![true; envs];
    let (mut reward, mut tracking, mut falls) = (0.0, 0.0, 0);
    for _ in 0..steps.min(cfg.horizon) {
        let idx: Vec<usize> = (0..envs).filter(|&i| live[i]).collect();
        if idx.is_empty() {
            break;
        }
        let obs: Vec<f64> = idx.iter().flat_map(|&i| pool[i].expert_observation()).collect();
        let means = policy.act_mean(&obs, idx.len());
        for (k, &i) in idx.iter().enumerate() {
            let r = pool[i].step(&means[k * j..(k + 1) * j])?;
            reward += r.reward.total * CONTROL_DT;
            tracking += r.reward.tracking() * CONTROL_DT;
            if r.done {
                live[i] = false;
                falls += r.fell as usize;
            }
        }
    }
    Ok(EvalStats { reward: reward / envs as f64, tracking: tracking / envs as f64, falls })
}

/// Vectorized rollouts and PPO updates. Per-step rewards are weighted by
/// the control period. The returned policy is the one whose rollout had the
/// highest mean reward; deterministic evaluations are recorded every
/// `eval_every` iterations for the curve only.
pub fn train_expert(e: &Embodiment, env_cfg: &EnvConfig, cfg: &PpoConfig) -> Result<TrainedExpert> {
    cfg.check()?;
    let model = Arc::new(Model::new(e, env_cfg.control)?);
    let mut envs: Vec<SurrogateEnv> = (0..cfg.envs)
        .map(|i| SurrogateEnv::with_model(model.clone(), env_cfg.clone(), cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let shape = ExpertShape {
        obs_dim: model.expert_obs_len(),
        critic_dim: model.critic_obs_len(),
        joints: model.joints,
        hidden: cfg.hidden.clone(),
    };
    let (od, cd, j) = (shape.obs_dim, shape.critic_dim, shape.joints);
    let mut policy = ExpertPolicy::new(shape, cfg.init_std, cfg.seed);
    let mut opt = AdamW::new(policy.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0ff5);
    let mut lr = cfg.learning_rate;
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::NEG_INFINITY, 0, policy.params.clone());
    let mut obs: Vec<f64> = envs.iter().flat_map(|e| e.expert_observation()).collect();
    let mut cobs: Vec<f64> = envs.iter().flat_map(|e| e.critic_observation()).collect();

    for it in 1..=cfg.iterations {
        let params_before = policy.params.clone();
        let mut buf = RolloutBuffer { envs: cfg.envs, steps: cfg.steps_per_env, ..Default::default() };
        buf.log_std = policy.log_std().to_vec();
        let std: Vec<f64> = buf.log_std.iter().map(|l| l.exp()).collect();
        let (mut raw_reward, mut tracking) = (0.0, 0.0);
        for _ in 0..cfg.steps_per_env {
            let means = policy.act_mean(&obs, cfg.envs);
            let values = policy.value(&cobs, cfg.envs);
            let mut next_obs = Vec::with_capacity(obs.len());
            let mut next_cobs = Vec::with_capacity(cobs.len());
            for (ei, env) in envs.iter_mut().enumerate() {
                let mean = &means[ei * j..(ei + 1) * j];
                let a: Vec<f64> =
                    mean.iter().zip(&std).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
                let r = env.step(&a)?;
                let mut reward = r.reward.total * CONTROL_DT;
                raw_reward += reward;
                tracking += r.reward.tracking() * CONTROL_DT;
                if r.done && !r.fell {
                    // time-out: bootstrap through the truncation
                    reward += cfg.gamma * policy.value(&r.critic_obs, 1)[0];
                }
                buf.obs.extend_from_slice(&obs[ei * od..(ei + 1) * od]);
                buf.critic_obs.extend_from_slice(&cobs[ei * cd..(ei + 1) * cd]);
                buf.log_probs.push(log_prob(&a, mean, &buf.log_std));
                buf.means.extend_from_slice(mean);
                buf.actions.extend(a);
                buf.rewards.push(reward);
                buf.values.push(values[ei]);
                buf.dones.push(r.done);
                if r.done {
                    env.reset();
                    next_obs.extend(env.expert_observation());
                    next_cobs.extend(env.critic_observation());
                } else {
                    next_obs.extend(r.expert_obs);
                    next_cobs.extend(r.critic_obs);
                }
            }
            obs = next_obs;
            cobs = next_cobs;
        }
        let last = policy.value(&cobs, cfg.envs);
        buf.compute_advantages(&last, cfg.gamma, cfg.lambda)?;
        let mean_reward = raw_reward / buf.len() as f64;
        let mean_tracking = tracking / buf.len() as f64;
        if mean_reward > best.0 {
            best = (mean_reward, it, params_before.clone());
        }
        let eval = if it == 1 || it % cfg.eval_every == 0 || it == cfg.iterations {
            let probe = ExpertPolicy { net: policy.net.clone(), params: params_before.clone() };
            let k = envs.iter().map(|e| e.curriculum.k()).sum::<f64>() / envs.len() as f64;
            let ev = evaluate_expert(&probe, &model, env_cfg, k, cfg.eval_envs, cfg.eval_steps, cfg.seed ^ 0xe7a1)?;
            Some(ev)
        } else {
            None
        };
        let stats = ppo_update(&mut policy, &mut opt, &buf, cfg, &mut lr, &mut rng)?;
        let curriculum_mean = envs.iter().map(|e| e.curriculum.k()).sum::<f64>() / envs.len() as f64;
        log::info!("iteration {it}: reward {mean_reward:.4} tracking {mean_tracking:.4} kl {:.4} lr {lr:.2e}", stats.kl);
        curve.push(IterationStats {
            iteration: it,
            mean_reward,
            mean_tracking,
            kl: stats.kl,
            learning_rate: lr,
            curriculum_mean,
            eval,
        });
    }
    policy.params = best.2;
    Ok(TrainedExpert { policy, best_iteration: best.1, curve })
}
