use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, ln, masked_softmax, mean, std_dev};
use crate::policies::{PolicyParams, FEATURE_DIM, N_ACTIONS};

/// One decision as seen by the surrogate: features, taken action, the
/// behavior policy's log-probability and the (normalized) advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSample {
    pub features: [f64; FEATURE_DIM],
    pub action: usize,
    pub old_logprob: f64,
    pub advantage: f64,
}

/// Per-step clipped objective `min(rho A, clip(rho, 1-eps, 1+eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateStats {
    /// Mean clipped term plus the entropy bonus.
    pub objective: f64,
    pub mean_ratio: f64,
    /// Share of samples whose ratio lies outside `[1-eps, 1+eps]`.
    pub clip_frac: f64,
    pub entropy: f64,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|&q| q * ln(q)).sum::<f64>()
}

/// Objective value and its gradient with respect to `theta` (row-major,
/// same layout as [`PolicyParams::theta`]).
pub fn surrogate_and_gradient(
    params: &PolicyParams,
    samples: &[SurrogateSample],
    eps: f64,
    entropy_coef: f64,
) -> (SurrogateStats, Vec<f64>) {
    let mut grad = vec![0.0; N_ACTIONS * FEATURE_DIM];
    if samples.is_empty() {
        return (SurrogateStats::default(), grad);
    }
    let allowed = params.allowed();
    let n = samples.len() as f64;
    let (mut obj, mut ratio_sum, mut clipped, mut ent_sum) = (0.0, 0.0, 0_usize, 0.0);
    for s in samples {
        let p = masked_softmax(&params.logits(&s.features), &allowed);
        let ratio = exp(ln(p[s.action]) - s.old_logprob);
        let term = clipped_term(ratio, s.advantage, eps);
        let h = entropy(&p);
        obj += term;
        ent_sum += h;
        ratio_sum += ratio;
        if !(1.0 - eps..=1.0 + eps).contains(&ratio) {
            clipped += 1;
        }
        // d term / d logit_k: the unclipped branch is active whenever it
        // attains the min; otherwise the clipped branch is flat in theta.
        let unclipped_active = ratio * s.advantage <= term;
        for k in 0..N_ACTIONS {
            if !allowed[k] {
                continue;
            }
            let indicator = if k == s.action { 1.0 } else { 0.0 };
            let mut dz = 0.0;
            if unclipped_active {
                dz += s.advantage * ratio * (indicator - p[k]);
            }
            if p[k] > 0.0 {
                dz -= entropy_coef * p[k] * (ln(p[k]) + h);
            }
            if dz != 0.0 {
                let row = &mut grad[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
                for (g, x) in row.iter_mut().zip(&s.features) {
                    *g += dz * x / n;
                }
            }
        }
    }
    let stats = SurrogateStats {
        objective: obj / n + entropy_coef * ent_sum / n,
        mean_ratio: ratio_sum / n,
        clip_frac: clipped as f64 / n,
        entropy: ent_sum / n,
    };
    (stats, grad)
}

/// Shifts advantages to zero mean and scales to unit (population)
/// variance; a constant batch becomes all zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    let m = mean(adv);
    let s = std_dev(adv);
    for a in adv.iter_mut() {
        *a = if s > 1e-12 { (*a - m) / s } else { 0.0 };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub surrogate: f64,
    pub entropy: f64,
}

/// `epochs` full-batch gradient-ascent steps on the clipped surrogate.
/// Statistics are averaged over the epochs, each measured before its step.
pub fn ppo_update(
    params: &PolicyParams,
    samples: &[SurrogateSample],
    lr: f64,
    epochs: usize,
    eps: f64,
    entropy_coef: f64,
) -> Result<(PolicyParams, UpdateStats)> {
    let mut next = params.clone();
    let mut acc = UpdateStats::default();
    for _ in 0..epochs {
        let (stats, grad) = surrogate_and_gradient(&next, samples, eps, entropy_coef);
        if grad.iter().any(|g| !g.is_finite()) || !stats.objective.is_finite() {
            return Err(Error::Numeric("non-finite surrogate gradient".into()));
        }
        for (t, g) in next.theta.iter_mut().zip(&grad) {
            *t += lr * g;
        }
        acc.mean_ratio += stats.mean_ratio;
        acc.clip_frac += stats.clip_frac;
        acc.surrogate += stats.objective;
        acc.entropy += stats.entropy;
    }
    if epochs > 0 {
        let e = epochs as f64;
        acc = UpdateStats {
            mean_ratio: acc.mean_ratio / e,
            clip_frac: acc.clip_frac / e,
            surrogate: acc.surrogate / e,
            entropy: acc.entropy / e,
        };
    }
    Ok((next, acc))
}
