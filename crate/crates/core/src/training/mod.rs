//! PPO with GAE over the linear routing head, plus a least-squares value
//! baseline.

mod ppo;

pub use ppo::{
    clipped_term, normalize_advantages, ppo_update, surrogate_and_gradient, SurrogateSample, SurrogateStats,
    UpdateStats,
};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{episode_return, sample_task_family, Episode, EpisodeSplit, TaskFamily};
use crate::error::{Error, Result};
use crate::math::{mean, mix_seed, solve_linear};
use crate::policies::{LinearPolicy, PolicyParams, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    /// Linear weights over the feature vector; the bias slot carries the
    /// intercept.
    pub weights: Vec<f64>,
}

impl Default for ValueParams {
    fn default() -> Self {
        Self { weights: vec![0.0; FEATURE_DIM] }
    }
}

impl ValueParams {
    pub fn value(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    /// Learning rate used for LoRA-scale models; kept for reference, not
    /// applied to the linear head.
    pub reference_lr: f64,
    pub batch: usize,
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub iterations: usize,
    pub epochs: usize,
    pub entropy_coef: f64,
    /// Query-split diagnostics are logged every this many iterations
    /// (0 disables them).
    pub diag_every: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 5e-2,
            reference_lr: 1e-5,
            batch: 64,
            clip_eps: 0.2,
            gae_lambda: 0.95,
            iterations: 500,
            epochs: 4,
            entropy_coef: 0.01,
            diag_every: 50,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip epsilon {} must be in (0,1)", self.clip_eps)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!("GAE lambda {} must be in [0,1]", self.gae_lambda)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.entropy_coef < 0.0 {
            return Err(Error::Config("learning rate must be positive and entropy coefficient nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub features: [f64; FEATURE_DIM],
    pub action: usize,
    pub logprob: f64,
    pub reward: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_id: String,
    pub family: TaskFamily,
    pub split: EpisodeSplit,
    pub steps: Vec<TrajectoryStep>,
    pub ndcg10: f64,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Plays one episode to completion with `policy`, recording what PPO needs.
pub fn play_learned(
    ep: &mut Episode<'_>,
    policy: &LinearPolicy,
    value: &ValueParams,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut steps = Vec::new();
    while !ep.is_done() {
        let (decision, record) = policy.decide(&ep.view(), rng);
        let result = ep.step_with_rationale(decision.rationale, decision.action)?;
        steps.push(TrajectoryStep {
            value: value.value(&record.features),
            features: record.features,
            action: record.action,
            logprob: record.logprob,
            reward: result.reward,
        });
    }
    Ok(Trajectory {
        episode_id: ep.id().into(),
        family: ep.family(),
        split: ep.split(),
        steps,
        ndcg10: ep.outcome().map_or(0.0, |o| o.ndcg10),
    })
}

/// Where training episodes come from.
pub trait RolloutSource {
    /// A fresh support-split episode of `family`, chosen with `rng`.
    fn support_episode(&self, rng: &mut ChaCha8Rng, family: TaskFamily) -> Result<Episode<'_>>;

    /// Greedy mean NDCG@10 per family on query-split episodes.
    fn query_diagnostics(&self, params: &PolicyParams) -> Result<BTreeMap<TaskFamily, f64>>;
}

/// `n` trajectories with families drawn uniformly. Episode `i` of batch
/// `batch_index` uses its own rng stream, so results do not depend on
/// collection order.
pub fn collect_rollouts(
    source: &dyn RolloutSource,
    params: &PolicyParams,
    value: &ValueParams,
    n: usize,
    seed: u64,
    batch_index: u64,
) -> Result<Vec<Trajectory>> {
    let policy = LinearPolicy::new(params.clone(), false);
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, (batch_index << 20) | i as u64));
            let family = sample_task_family(&mut rng);
            let mut ep = source.support_episode(&mut rng, family)?;
            if ep.split() != EpisodeSplit::Support {
                return Err(Error::Integrity(format!("episode {} is not a support episode", ep.id())));
            }
            play_learned(&mut ep, &policy, value, &mut rng)
        })
        .collect()
}

/// GAE over one trajectory. `next_values[t]` is `V(H_{t+1})`, zero at the
/// terminal step. Returns `(advantages, returns = advantages + values)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != next_values.len() {
        return Err(Error::Usage(format!(
            "GAE inputs differ in length: {} rewards, {} values, {} next values",
            rewards.len(),
            values.len(),
            next_values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Next-state values for a trajectory: the following step's value, then 0.
pub fn next_values(values: &[f64]) -> Vec<f64> {
    values.iter().skip(1).copied().chain(core::iter::once(0.0)).take(values.len()).collect()
}

pub const RIDGE: f64 = 1e-6;
const FALLBACK_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueFit {
    /// Mean squared error of the previous parameters on the targets.
    pub loss_before: f64,
    pub loss_after: f64,
    /// The ridge system was singular and a gradient step was taken instead.
    pub fallback: bool,
}

/// Ridge regression of `targets` on `features`.
pub fn value_update(current: &ValueParams, features: &[[f64; FEATURE_DIM]], targets: &[f64]) -> Result<(ValueParams, ValueFit)> {
    if features.len() != targets.len() {
        return Err(Error::Usage("value regression inputs differ in length".into()));
    }
    let mse = |p: &ValueParams| {
        mean(&features.iter().zip(targets).map(|(x, y)| (p.value(x) - y) * (p.value(x) - y)).collect::<Vec<_>>())
    };
    let d = FEATURE_DIM;
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for (x, &y) in features.iter().zip(targets) {
        for i in 0..d {
            xty[i] += x[i] * y;
            for j in 0..d {
                xtx[i * d + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        xtx[i * d + i] += RIDGE;
    }
    let loss_before = mse(current);
    let (next, fallback) = match solve_linear(xtx, xty, d) {
        Some(w) if w.iter().all(|v| v.is_finite()) => (ValueParams { weights: w }, false),
        _ => {
            let n = features.len().max(1) as f64;
            let mut w = current.weights.clone();
            for (x, y) in features.iter().zip(targets) {
                let err = y - current.value(x);
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += FALLBACK_STEP * err * xi / n;
                }
            }
            (ValueParams { weights: w }, true)
        }
    };
    let loss_after = mse(&next);
    Ok((next, ValueFit { loss_before, loss_after, fallback }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub mean_return: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    /// Filled on diagnostic iterations only.
    pub per_family_ndcg10: BTreeMap<String, f64>,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub value: ValueParams,
    pub log: Vec<IterationLog>,
}

/// Surrogate samples plus the value-regression inputs and GAE returns.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub samples: Vec<SurrogateSample>,
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub returns: Vec<f64>,
}

/// Builds the PPO batch from trajectories: per-trajectory GAE, then
/// batch-level advantage normalization.
pub fn build_batch(trajectories: &[Trajectory], gamma: f64, lambda: f64) -> Result<Batch> {
    let mut samples = Vec::new();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for traj in trajectories {
        if traj.split != EpisodeSplit::Support {
            return Err(Error::Integrity(format!("{} is not a support episode", traj.episode_id)));
        }
        let values: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
        let (adv, ret) = compute_gae(&traj.rewards(), &values, &next_values(&values), gamma, lambda)?;
        for ((step, a), r) in traj.steps.iter().zip(adv).zip(ret) {
            samples.push(SurrogateSample {
                features: step.features,
                action: step.action,
                old_logprob: step.logprob,
                advantage: a,
            });
            features.push(step.features);
            targets.push(r);
        }
    }
    let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
    normalize_advantages(&mut adv);
    for (s, a) in samples.iter_mut().zip(adv) {
        s.advantage = a;
    }
    Ok(Batch { samples, features, returns: targets })
}

/// Collect, estimate advantages, update the routing head, refit the
/// value baseline; repeated `config.iterations` times.
pub fn train(
    source: &dyn RolloutSource,
    initial: PolicyParams,
    config: &PpoConfig,
    gamma: f64,
) -> Result<TrainOutput> {
    config.validate()?;
    initial.validate()?;
    let mut params = initial;
    let mut value = ValueParams::default();
    let mut log = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let trajectories = collect_rollouts(source, &params, &value, config.batch, config.seed, iter as u64)?;
        let mean_return = mean(&trajectories.iter().map(|t| episode_return(&t.rewards(), gamma)).collect::<Vec<_>>());
        let Batch { samples, features, returns } = build_batch(&trajectories, gamma, config.gae_lambda)?;
        let (clip_frac, aborted) =
            match ppo_update(&params, &samples, config.lr, config.epochs, config.clip_eps, config.entropy_coef) {
                Ok((next, stats)) => {
                    params = next;
                    (stats.clip_frac, false)
                }
                Err(Error::Numeric(_)) => (0.0, true),
                Err(e) => return Err(e),
            };
        let (next_value, fit) = value_update(&value, &features, &returns)?;
        value = next_value;
        let per_family_ndcg10 = if config.diag_every > 0 && (iter + 1) % config.diag_every == 0 {
            source.query_diagnostics(&params)?.into_iter().map(|(f, v)| (f.id().into(), v)).collect()
        } else {
            BTreeMap::new()
        };
        log.push(IterationLog { iter: iter + 1, mean_return, clip_frac, value_loss: fit.loss_before, per_family_ndcg10, aborted });
    }
    Ok(TrainOutput { params, value, log })
}
