//! Single-step (contextual bandit) PPO over the raw action vector.
//!
//! Each episode samples a channel instance, observes its normalized channel
//! coefficients, draws one raw action from a diagonal Gaussian policy and
//! receives the penalized EE computed with only the enforced constraint
//! kinds. Reported scores always use the full kind catalog.

mod net;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use formulink_core::formulation::OptimizationFormulation;

pub use net::MlpSpec;

use crate::env::{
    all_kinds, evaluate, project_power, sample_channels, sample_instance_with, Action, EnvError,
    KindSet, NetworkInstance, SystemParams, ALL_KINDS,
};

/// Instances used for observation statistics.
pub const OBS_STATS_SAMPLES: usize = 10_000;
const OBS_STATS_SEED: u64 = 0x0b5e_57a7;

pub const TRAIN_POOL_SIZE: usize = 2048;
pub const TRAIN_POOL_BASE: u64 = 1_000_000;
pub const HELD_OUT_SIZE: usize = 256;
pub const HELD_OUT_BASE: u64 = 2_000_000;

/// Raw actions for the random-search oracle are drawn uniformly from
/// `[-ORACLE_BOX, ORACLE_BOX]` per coordinate.
pub const ORACLE_BOX: f64 = 3.0;
pub const ORACLE_SAMPLES: usize = 5000;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_episodes: usize,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub clip_ratio: f64,
    pub learning_rate: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub max_grad_norm: f64,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch_episodes: 1024,
            ppo_epochs: 4,
            minibatch_size: 256,
            clip_ratio: 0.2,
            learning_rate: 3e-4,
            value_coeff: 0.5,
            entropy_coeff: 0.01,
            max_grad_norm: 0.5,
            hidden_layers: vec![128, 128],
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_owned()));
        if self.batch_episodes == 0 || self.ppo_epochs == 0 || self.minibatch_size == 0 {
            return bad("batch_episodes, ppo_epochs and minibatch_size must be positive");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.value_coeff < 0.0 || self.entropy_coeff < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad("hidden_layers must be non-empty and positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("cannot evaluate a policy on an empty instance set")]
    EmptyEvalSet,
    #[error("training pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Maps a raw policy output to an action: consecutive (re, im) pairs form
/// w_c then each w_k, then ρ_k = logistic, θ_m = 2π·logistic and
/// c_k = softplus; precoders are projected onto the power budget.
pub fn map_action(raw: &[f64], params: &SystemParams) -> Result<Action, EnvError> {
    let expected = params.action_dim();
    if raw.len() != expected {
        return Err(EnvError::DimensionMismatch {
            what: "raw action",
            expected,
            got: raw.len(),
        });
    }
    let nt = params.nt;
    let cplx = |s: &[f64]| -> Vec<Complex64> {
        s.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    };
    let mut at = 0;
    let mut take = |n: usize| {
        let s = &raw[at..at + n];
        at += n;
        s
    };
    let w_c = cplx(take(2 * nt));
    let w = (0..params.k).map(|_| cplx(take(2 * nt))).collect();
    let rho = take(params.k).iter().map(|&x| logistic(x)).collect();
    let theta = take(params.m)
        .iter()
        .map(|&x| std::f64::consts::TAU * logistic(x))
        .collect();
    let c = take(params.k).iter().map(|&x| softplus(x)).collect();
    let mut action = Action {
        w_c,
        w,
        rho,
        theta,
        c,
    };
    project_power(&mut action, params.p_max);
    Ok(action)
}

/// Per-coordinate mean and standard deviation of the channel observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsNormalizer {
    /// Statistics over `samples` channel draws from a fixed seed.
    pub fn fit(params: &SystemParams, samples: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(OBS_STATS_SEED);
        let dim = params.observation_dim();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..samples {
            let (g, h_r, h_d) = sample_channels(params, &mut rng);
            let mats = [g, h_r, h_d];
            let reals = mats.iter().flat_map(|m| m.data.iter().flat_map(|z| [z.re, z.im]));
            for (i, v) in reals.enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let n = samples as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(1e-12).sqrt())
            .collect();
        Self { mean, std }
    }

    /// Shared statistics for the default system parameters.
    pub fn standard() -> &'static ObsNormalizer {
        static STATS: OnceLock<ObsNormalizer> = OnceLock::new();
        STATS.get_or_init(|| ObsNormalizer::fit(&SystemParams::default(), OBS_STATS_SAMPLES))
    }

    pub fn observe(&self, inst: &NetworkInstance) -> Vec<f64> {
        inst.channel_reals()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i]) / self.std[i])
            .collect()
    }
}

/// Deterministic instance set `base, base + 1, …`.
pub fn instance_set(base: u64, n: usize) -> Vec<NetworkInstance> {
    (0..n as u64)
        .map(|i| sample_instance_with(SystemParams::default(), base + i))
        .collect()
}

/// The shared training pool.
pub fn training_pool() -> &'static [NetworkInstance] {
    static POOL: OnceLock<Vec<NetworkInstance>> = OnceLock::new();
    POOL.get_or_init(|| instance_set(TRAIN_POOL_BASE, TRAIN_POOL_SIZE))
}

/// The shared held-out evaluation set.
pub fn held_out_set() -> &'static [NetworkInstance] {
    static SET: OnceLock<Vec<NetworkInstance>> = OnceLock::new();
    SET.get_or_init(|| instance_set(HELD_OUT_BASE, HELD_OUT_SIZE))
}

/// Gaussian policy with a state-independent log standard deviation and a
/// separate value network. All parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub system: SystemParams,
    pub normalizer: ObsNormalizer,
    pub mean_net: MlpSpec,
    pub log_std_offset: usize,
    pub value_net: MlpSpec,
    pub params: Vec<f64>,
}

/// One frozen batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub raw: Array2<f64>,
    pub logp_old: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            obs: self.obs.select(Axis(0), idx),
            raw: self.raw.select(Axis(0), idx),
            logp_old: self.logp_old.select(Axis(0), idx),
            advantages: self.advantages.select(Axis(0), idx),
            returns: self.returns.select(Axis(0), idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

impl Policy {
    pub fn new(system: SystemParams, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let obs = system.observation_dim();
        let act = system.action_dim();
        let sizes = |out: usize| {
            let mut s = vec![obs];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let mean_net = MlpSpec::new(0, sizes(act));
        let log_std_offset = mean_net.end();
        let value_net = MlpSpec::new(log_std_offset + act, sizes(1));
        let mut params = vec![0.0; value_net.end()];
        mean_net.init(&mut params, rng, 0.01);
        value_net.init(&mut params, rng, 1.0);
        let normalizer = if system == SystemParams::default() {
            ObsNormalizer::standard().clone()
        } else {
            ObsNormalizer::fit(&system, OBS_STATS_SAMPLES)
        };
        Self {
            system,
            normalizer,
            mean_net,
            log_std_offset,
            value_net,
            params,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.system.action_dim()
    }

    /// Index range of the policy (mean network and log-std) parameters.
    pub fn policy_param_range(&self) -> std::ops::Range<usize> {
        0..self.log_std_offset + self.action_dim()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std_offset..self.log_std_offset + self.action_dim()]
    }

    pub fn observations(&self, instances: &[&NetworkInstance]) -> Array2<f64> {
        let dim = self.system.observation_dim();
        let mut obs = Array2::zeros((instances.len(), dim));
        for (mut row, inst) in obs.rows_mut().into_iter().zip(instances) {
            row.assign(&Array1::from(self.normalizer.observe(inst)));
        }
        obs
    }

    pub fn mean_actions(&self, obs: &Array2<f64>) -> Array2<f64> {
        self.mean_net.forward(&self.params, obs).pop().unwrap()
    }

    pub fn values(&self, obs: &Array2<f64>) -> Array1<f64> {
        self.value_net
            .forward(&self.params, obs)
            .pop()
            .unwrap()
            .index_axis_move(Axis(1), 0)
    }

    fn log_prob(&self, mean: &Array2<f64>, raw: &Array2<f64>) -> Array1<f64> {
        let log_std = self.log_std();
        let mut out = Array1::zeros(raw.nrows());
        for (i, (m, r)) in mean.rows().into_iter().zip(raw.rows()).enumerate() {
            let mut s = 0.0;
            for d in 0..log_std.len() {
                let z = (r[d] - m[d]) * (-log_std[d]).exp();
                s += -0.5 * z * z - log_std[d] - 0.5 * LOG_2PI;
            }
            out[i] = s;
        }
        out
    }

    /// Clipped-surrogate loss plus value and entropy terms, and its gradient
    /// with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &Batch, cfg: &TrainConfig) -> (LossParts, Vec<f64>) {
        let n = batch.len() as f64;
        let act = self.action_dim();
        let log_std = self.log_std().to_vec();
        let inv_var: Vec<f64> = log_std.iter().map(|l| (-2.0 * l).exp()).collect();

        let mean_acts = self.mean_net.forward(&self.params, &batch.obs);
        let mean = mean_acts.last().unwrap();
        let logp = self.log_prob(mean, &batch.raw);

        let (lo, hi) = (1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let mut policy_loss = 0.0;
        let mut d_logp = Array1::zeros(batch.len());
        for i in 0..batch.len() {
            let a = batch.advantages[i];
            let r = (logp[i] - batch.logp_old[i]).exp();
            let s1 = r * a;
            let s2 = r.clamp(lo, hi) * a;
            policy_loss -= s1.min(s2) / n;
            if s1 <= s2 {
                d_logp[i] = -a * r / n;
            }
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut d_mean = Array2::zeros(mean.raw_dim());
        let mut d_log_std = vec![0.0; act];
        for i in 0..batch.len() {
            let g = d_logp[i];
            if g == 0.0 {
                continue;
            }
            for d in 0..act {
                let diff = batch.raw[[i, d]] - mean[[i, d]];
                d_mean[[i, d]] = g * diff * inv_var[d];
                d_log_std[d] += g * (diff * diff * inv_var[d] - 1.0);
            }
        }
        let entropy: f64 = log_std.iter().map(|l| l + 0.5 * (LOG_2PI + 1.0)).sum();
        for (d, g) in d_log_std.iter_mut().enumerate() {
            grad[self.log_std_offset + d] = *g - cfg.entropy_coeff;
        }
        self.mean_net
            .backward(&self.params, &mean_acts, d_mean, &mut grad);

        let value_acts = self.value_net.forward(&self.params, &batch.obs);
        let v = value_acts.last().unwrap().column(0).to_owned();
        let err = &v - &batch.returns;
        let value_loss = cfg.value_coeff * err.mapv(|e| e * e).sum() / n;
        let d_v = (err * (2.0 * cfg.value_coeff / n)).insert_axis(Axis(1));
        self.value_net
            .backward(&self.params, &value_acts, d_v, &mut grad);

        let total = policy_loss + value_loss - cfg.entropy_coeff * entropy;
        (
            LossParts {
                policy: policy_loss,
                value: value_loss,
                entropy,
                total,
            },
            grad,
        )
    }
}

/// Adam with global-norm gradient clipping.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &mut [f64], lr: f64, max_norm: f64) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.t += 1;
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub seed: u64,
    pub enforced_kinds: Vec<String>,
    /// Mean true score of the sampled actions in each iteration.
    pub curve: Vec<f64>,
    /// Mean true score of the mean-action policy on the held-out set.
    pub final_score: f64,
    /// Training-reward evaluations that included each kind's violation term.
    pub term_counts: BTreeMap<String, u64>,
    pub wall_time_secs: f64,
}

/// Constraint kinds of `formulation` the environment can penalize.
pub fn enforced_kinds(formulation: &OptimizationFormulation) -> KindSet {
    formulation
        .kinds()
        .into_iter()
        .filter(|k| ALL_KINDS.contains(&k.as_str()))
        .collect()
}

/// Mean score of the deterministic (mean-action) policy, counting the
/// violation terms of `kinds`.
pub fn evaluate_policy(
    policy: &Policy,
    instances: &[NetworkInstance],
    kinds: &KindSet,
) -> Result<f64, SolverError> {
    if instances.is_empty() {
        return Err(SolverError::EmptyEvalSet);
    }
    let refs: Vec<&NetworkInstance> = instances.iter().collect();
    let mean = policy.mean_actions(&policy.observations(&refs));
    let mut total = 0.0;
    for (row, inst) in mean.rows().into_iter().zip(instances) {
        let action = map_action(row.as_slice().expect("contiguous row"), &inst.params)?;
        let report = evaluate(inst, &action, kinds)?;
        total += report.training_score;
    }
    Ok(total / instances.len() as f64)
}

/// Trains a fresh policy on `pool` with the kinds of `formulation` enforced
/// and reports its true score on `held_out`.
pub fn train(
    pool: &[NetworkInstance],
    held_out: &[NetworkInstance],
    formulation: &OptimizationFormulation,
    cfg: &TrainConfig,
) -> Result<(SolveReport, Policy), SolverError> {
    train_with_kinds(pool, held_out, &enforced_kinds(formulation), cfg)
}

pub fn train_with_kinds(
    pool: &[NetworkInstance],
    held_out: &[NetworkInstance],
    kinds: &KindSet,
    cfg: &TrainConfig,
) -> Result<(SolveReport, Policy), SolverError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(SolverError::EmptyPool);
    }
    if held_out.is_empty() {
        return Err(SolverError::EmptyEvalSet);
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = Policy::new(pool[0].params.clone(), &cfg.hidden_layers, &mut rng);
    let mut adam = Adam::new(policy.params.len());
    let act = policy.action_dim();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut term_counts: BTreeMap<String, u64> =
        kinds.iter().map(|k| (k.clone(), 0)).collect();

    for iteration in 0..cfg.iterations {
        let picks: Vec<&NetworkInstance> = (0..cfg.batch_episodes)
            .map(|_| &pool[rng.random_range(0..pool.len())])
            .collect();
        let obs = policy.observations(&picks);
        let mean = policy.mean_actions(&obs);
        let std: Vec<f64> = policy.log_std().iter().map(|l| l.exp()).collect();
        let mut raw = mean.clone();
        for mut row in raw.rows_mut() {
            for (d, x) in row.iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *x += std[d] * eps;
            }
        }
        debug_assert_eq!(raw.ncols(), act);
        let mut rewards = Array1::zeros(picks.len());
        let mut true_sum = 0.0;
        for (i, (row, inst)) in raw.rows().into_iter().zip(&picks).enumerate() {
            let action = map_action(row.as_slice().expect("contiguous row"), &inst.params)?;
            let report = evaluate(inst, &action, kinds)?;
            rewards[i] = report.training_score;
            true_sum += report.score;
            for c in term_counts.values_mut() {
                *c += 1;
            }
        }
        curve.push(true_sum / picks.len() as f64);

        let values = policy.values(&obs);
        let logp_old = policy.log_prob(&mean, &raw);
        let mut adv = &rewards - &values;
        let adv_mean = adv.mean().unwrap_or(0.0);
        let adv_std = adv.std(0.0);
        adv.mapv_inplace(|a| (a - adv_mean) / (adv_std + 1e-8));
        let batch = Batch {
            obs,
            raw,
            logp_old,
            advantages: adv,
            returns: rewards,
        };

        let mut order: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..cfg.ppo_epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(cfg.minibatch_size) {
                let mb = batch.select(idx);
                let (loss, mut grad) = policy.loss_and_grad(&mb, cfg);
                if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(SolverError::NonFiniteLoss {
                        iteration,
                        detail: format!(
                            "policy {} value {} entropy {}",
                            loss.policy, loss.value, loss.entropy
                        ),
                    });
                }
                adam.step(&mut policy.params, &mut grad, cfg.learning_rate, cfg.max_grad_norm);
            }
        }
    }

    let final_score = evaluate_policy(&policy, held_out, &all_kinds())?;
    Ok((
        SolveReport {
            seed: cfg.seed,
            enforced_kinds: kinds.iter().cloned().collect(),
            curve,
            final_score,
            term_counts,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
        policy,
    ))
}

/// Mean over `instances` of the best true score among `samples` raw
/// actions drawn uniformly from the oracle box and mapped.
pub fn random_search_oracle(instances: &[NetworkInstance], samples: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    for inst in instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ inst.seed.rotate_left(17));
        let dim = inst.params.action_dim();
        let mut raw = vec![0.0; dim];
        let mut best = f64::NEG_INFINITY;
        for _ in 0..samples {
            raw.iter_mut()
                .for_each(|x| *x = rng.random_range(-ORACLE_BOX..=ORACLE_BOX));
            let action = map_action(&raw, &inst.params).expect("raw has action dimension");
            let score = evaluate(inst, &action, &all_kinds())
                .expect("mapped action is well formed")
                .score;
            best = best.max(score);
        }
        total += best;
    }
    total / instances.len().max(1) as f64
}

/// A small frozen batch built from a fresh policy, for gradient checks.
pub fn frozen_batch(policy: &Policy, instances: &[NetworkInstance], seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<&NetworkInstance> = instances.iter().collect();
    let obs = policy.observations(&refs);
    let mean = policy.mean_actions(&obs);
    let std: Vec<f64> = policy.log_std().iter().map(|l| l.exp()).collect();
    let mut raw = mean.clone();
    for mut row in raw.rows_mut() {
        for (d, x) in row.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *x += std[d] * eps;
        }
    }
    let logp_old = policy.log_prob(&mean, &raw);
    let n = instances.len();
    Batch {
        obs,
        raw,
        logp_old,
        advantages: Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal)),
        returns: Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal)),
    }
}
