//! PPO pieces against direct references: GAE double sum, finite-difference
//! gradients, regression with known weights, and rollout hygiene.

use std::collections::BTreeSet;

use modalroute_core::corpus::{generate_synthetic_corpus, SyntheticConfig};
use modalroute_core::environment::{EpisodeSplit, Mode, TaskFamily};
use modalroute_core::experiment::{Workbench, WorkbenchConfig};
use modalroute_core::policies::{PolicyParams, FEATURE_DIM, N_ACTIONS};
use modalroute_core::training::{
    build_batch, clipped_term, collect_rollouts, compute_gae, next_values, surrogate_and_gradient, train,
    value_update, PpoConfig, SurrogateSample, ValueParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn double_sum_gae(r: &[f64], v: &[f64], nv: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let delta: Vec<f64> = (0..r.len()).map(|t| r[t] + gamma * nv[t] - v[t]).collect();
    (0..r.len())
        .map(|t| (t..r.len()).map(|u| (gamma * lambda).powi((u - t) as i32) * delta[u]).sum())
        .collect()
}

#[test]
fn gae_matches_double_sum_on_500_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.gen_range(1..=8);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = next_values(&v);
        assert_eq!(nv[n - 1], 0.0);
        let gamma = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.5..1.0) };
        let lambda = rng.gen_range(0.0..=1.0);
        let (adv, ret) = compute_gae(&r, &v, &nv, gamma, lambda).unwrap();
        let want = double_sum_gae(&r, &v, &nv, gamma, lambda);
        for t in 0..n {
            assert!((adv[t] - want[t]).abs() <= 1e-12, "t={t}: {} vs {}", adv[t], want[t]);
            assert_eq!(ret[t], adv[t] + v[t]);
        }
    }
}

#[test]
fn clip_arithmetic_examples() {
    assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
    assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    assert_eq!(clipped_term(1.0, 0.3, 0.2), 0.3);
}

fn random_params(rng: &mut ChaCha8Rng, scale: f64, mode: Mode) -> PolicyParams {
    PolicyParams {
        theta: (0..N_ACTIONS * FEATURE_DIM).map(|_| rng.gen_range(-scale..scale)).collect(),
        mode,
        ..PolicyParams::default()
    }
}

fn random_samples(rng: &mut ChaCha8Rng, behavior: &PolicyParams, n: usize) -> Vec<SurrogateSample> {
    (0..n)
        .map(|_| {
            let mut features = [0.0; FEATURE_DIM];
            features[0] = 1.0;
            for x in features.iter_mut().skip(1) {
                *x = rng.gen_range(0.0..1.0);
            }
            let p = behavior.probabilities(&features);
            let allowed: Vec<usize> = (0..N_ACTIONS).filter(|&a| p[a] > 0.0).collect();
            let action = allowed[rng.gen_range(0..allowed.len())];
            SurrogateSample { features, action, old_logprob: p[action].ln(), advantage: rng.gen_range(-2.0..2.0) }
        })
        .collect()
}

#[test]
fn surrogate_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    for draw in 0..20 {
        let mode = if draw % 2 == 0 { Mode::Auto } else { Mode::Interactive };
        let behavior = random_params(&mut rng, 0.5, mode);
        let samples = random_samples(&mut rng, &behavior, 32);
        // current params near the behavior policy so some ratios clip
        let mut params = behavior.clone();
        for t in params.theta.iter_mut() {
            *t += rng.gen_range(-0.3..0.3);
        }
        let entropy = if draw < 10 { 0.0 } else { 0.05 };
        let (_, grad) = surrogate_and_gradient(&params, &samples, 0.2, entropy);
        let mut fd = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up.theta[i] += h;
            down.theta[i] -= h;
            let fu = surrogate_and_gradient(&up, &samples, 0.2, entropy).0.objective;
            let fdn = surrogate_and_gradient(&down, &samples, 0.2, entropy).0.objective;
            fd[i] = (fu - fdn) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if norm > 0.0 { diff / norm } else { 0.0 };
        assert!(rel <= 1e-4, "draw {draw}: relative error {rel}");
    }
}

#[test]
fn value_regression_recovers_generating_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let w: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let feats: Vec<[f64; FEATURE_DIM]> = (0..400)
            .map(|_| {
                let mut x = [0.0; FEATURE_DIM];
                x[0] = 1.0;
                for v in x.iter_mut().skip(1) {
                    *v = rng.gen_range(-1.0..1.0);
                }
                x
            })
            .collect();
        let targets: Vec<f64> = feats.iter().map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let (fit, stats) = value_update(&ValueParams::default(), &feats, &targets).unwrap();
        assert!(!stats.fallback);
        for (a, b) in fit.weights.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        let (zero, _) = value_update(&fit, &feats, &vec![0.0; feats.len()]).unwrap();
        assert!(zero.weights.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn value_regression_on_degenerate_features_stays_finite() {
    // all-zero features: ridge keeps the system solvable, weights stay 0
    let feats = vec![[0.0; FEATURE_DIM]; 10];
    let (fit, _) = value_update(&ValueParams::default(), &feats, &[1.0; 10]).unwrap();
    assert!(fit.weights.iter().all(|v| *v == 0.0));
    assert!(value_update(&ValueParams::default(), &feats, &[1.0; 3]).is_err());
}

fn small_workbench(seed: u64) -> Workbench {
    let cfg = SyntheticConfig { n_items: 240, n_users: 120, seed, ..SyntheticConfig::default() };
    let corpus = generate_synthetic_corpus(&cfg).unwrap();
    Workbench::new(corpus.catalog, WorkbenchConfig::default()).unwrap()
}

fn full_workbench(seed: u64) -> Workbench {
    let cfg = SyntheticConfig { seed, ..SyntheticConfig::default() };
    Workbench::new(generate_synthetic_corpus(&cfg).unwrap().catalog, WorkbenchConfig::default()).unwrap()
}

#[test]
fn ratio_is_exactly_one_before_the_first_step() {
    let wb = small_workbench(1);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..3 {
        let params = random_params(&mut rng, 1.0, Mode::Auto);
        let trajs = collect_rollouts(&wb, &params, &ValueParams::default(), 64, 5, 0).unwrap();
        assert_eq!(trajs.len(), 64);
        for t in &trajs {
            assert!(!t.steps.is_empty() && t.steps.len() <= wb.env().reward.turn_budget);
            assert!(t.steps.iter().all(|s| s.logprob.is_finite() && s.logprob <= 0.0));
        }
        let batch = build_batch(&trajs, 1.0, 0.95).unwrap();
        for s in &batch.samples {
            let (one, _) = surrogate_and_gradient(&params, std::slice::from_ref(s), 0.2, 0.0);
            assert_eq!(one.mean_ratio, 1.0);
            assert!((params.probabilities(&s.features)[s.action].ln() - s.old_logprob).abs() < 1e-12);
        }
        let (stats, _) = surrogate_and_gradient(&params, &batch.samples, 0.2, 0.01);
        assert_eq!(stats.mean_ratio, 1.0);
        assert_eq!(stats.clip_frac, 0.0);
    }
}

#[test]
fn rollouts_come_from_support_pairs_only() {
    let wb = small_workbench(2);
    let world = wb.world(EpisodeSplit::Query);
    let mut query: BTreeSet<String> = BTreeSet::new();
    for family in TaskFamily::ALL {
        for &i in wb.query_indices(family) {
            query.insert(format!("{}:{}", wb.specs(EpisodeSplit::Query)[i].key(&world), family.id()));
        }
    }
    assert!(!query.is_empty());
    let params = PolicyParams::default();
    for batch_index in 0..10 {
        for t in collect_rollouts(&wb, &params, &ValueParams::default(), 64, 3, batch_index).unwrap() {
            assert_eq!(t.split, EpisodeSplit::Support);
            let pair = t.episode_id.strip_prefix("support:").expect("support id");
            assert!(!query.contains(pair), "{pair} is a query pair");
        }
    }
}

#[test]
fn collection_and_training_are_deterministic() {
    let wb = small_workbench(3);
    let params = PolicyParams::default();
    let a = collect_rollouts(&wb, &params, &ValueParams::default(), 32, 9, 4).unwrap();
    let b = collect_rollouts(&wb, &params, &ValueParams::default(), 32, 9, 4).unwrap();
    assert_eq!(a, b);

    let config = PpoConfig { iterations: 5, batch: 16, diag_every: 2, seed: 4, ..PpoConfig::default() };
    let x = train(&wb, PolicyParams::default(), &config, 1.0).unwrap();
    let y = train(&wb, PolicyParams::default(), &config, 1.0).unwrap();
    assert_eq!(x, y);
    assert_eq!(x.log.len(), 5);
    assert!(x.log[1].per_family_ndcg10.len() == 7 && x.log[0].per_family_ndcg10.is_empty());
    assert!(x.log.iter().all(|l| (0.0..=1.0).contains(&l.clip_frac) && !l.aborted));

    let initial = random_params(&mut ChaCha8Rng::seed_from_u64(5), 1.0, Mode::Auto);
    let none = train(&wb, initial.clone(), &PpoConfig { iterations: 0, ..config }, 1.0).unwrap();
    assert_eq!(none.params, initial);
    assert!(none.log.is_empty());
}

#[test]
fn family_draws_are_uniform() {
    let wb = small_workbench(6);
    let mut counts = [0u32; 7];
    // 7,000 draws through the rollout path
    for batch_index in 0..70 {
        for t in collect_rollouts(&wb, &PolicyParams::default(), &ValueParams::default(), 100, 8, batch_index).unwrap()
        {
            counts[TaskFamily::ALL.iter().position(|f| *f == t.family).unwrap()] += 1;
        }
    }
    let expected = 1000.0;
    let x: f64 = counts.iter().map(|&c| (f64::from(c) - expected).powi(2) / expected).sum();
    // df = 6 upper tail in closed form
    let h = x / 2.0;
    let p = (-h).exp() * (1.0 + h + h * h / 2.0);
    assert!(p > 0.001, "chi-square {x}, p {p}, counts {counts:?}");
}

/// Mean training return over consecutive 20-iteration windows at the
/// default PPO settings: the last window ends above the first.
#[test]
fn smoothed_training_return_increases_over_200_iterations() {
    let wb = full_workbench(0);
    let config = PpoConfig { iterations: 200, diag_every: 0, seed: 0, ..PpoConfig::default() };
    let out = train(&wb, PolicyParams::default(), &config, 1.0).unwrap();
    let windows: Vec<f64> =
        out.log.chunks(20).map(|c| c.iter().map(|l| l.mean_return).sum::<f64>() / c.len() as f64).collect();
    eprintln!("window means: {windows:?}");
    assert_eq!(windows.len(), 10);
    assert!(windows.last() > windows.first(), "{windows:?}");
}

proptest! {
    #[test]
    fn clipped_term_is_one_of_the_two_branches(ratio in 0.0f64..3.0, adv in -3.0f64..3.0, eps in 0.01f64..0.99) {
        let t = clipped_term(ratio, adv, eps);
        let a = ratio * adv;
        let b = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        prop_assert_eq!(t, a.min(b));
        prop_assert!(t <= a);
    }

    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), interactive in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if interactive { Mode::Interactive } else { Mode::Auto };
        let params = random_params(&mut rng, 5.0, mode);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(0.0..2.0)).collect();
        let p = params.probabilities(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(p[3] == 0.0, !interactive);
    }
}
