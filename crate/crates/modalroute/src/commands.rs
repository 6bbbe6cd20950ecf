//! What each subcommand does, minus argument parsing.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use modalroute_core::environment::{EnvConfig, EpisodeSplit};
use modalroute_core::experiment::{full_catalog_check, summarize, tune_on_validation, Workbench};
use modalroute_core::policies::{LinearPolicy, Policy, PolicyParams, RuleRouter, RuleRouterConfig};
use modalroute_core::training::{train, IterationLog, PpoConfig};
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeServer, EpisodeStatus, ServerConfig};
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, PolicyChoice};
use crate::error::{Error, Result};
use crate::io::{write_catalog, write_jsonl, LogRecord, ReportRecord};
use crate::report::{FullCatalogSummary, PolicyResults, Report, SeedResult, Significance};

pub fn data_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("data").join(format!("seed{seed}"))
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("checkpoint-seed{seed}.json"))
}

pub fn train_log_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("train-log-seed{seed}.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub config_hash: String,
    pub dataset: String,
    pub seed: u64,
    pub items: usize,
    pub users: usize,
    pub interactions: usize,
    pub train_episodes: usize,
    pub validation_episodes: usize,
    pub test_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: String,
    pub user_id: String,
    pub target: String,
    /// Visible history, oldest first.
    pub context: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes items, interactions, episode splits and a manifest for `seed`
/// under `dir`.
pub fn gen_data(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<DataManifest> {
    let catalog = config.catalog(seed)?;
    write_catalog(&catalog, &dir.join("items.jsonl"), &dir.join("interactions.jsonl"))?;
    let wb = Workbench::new(catalog, config.workbench.clone())?;
    let splits = [("train", EpisodeSplit::Support), ("validation", EpisodeSplit::Validation), ("test", EpisodeSplit::Test)];
    let mut records = Vec::new();
    for (name, split) in splits {
        let c = wb.catalog();
        for spec in wb.specs(split) {
            records.push(SplitRecord {
                split: name.into(),
                user_id: spec.user_id.clone(),
                target: c.item(spec.target).item_id.clone(),
                context: spec.context.iter().map(|&i| c.item(i).item_id.clone()).collect(),
            });
        }
    }
    write_jsonl(&dir.join("splits.jsonl"), &records)?;
    let manifest = DataManifest {
        config_hash: config.hash(),
        dataset: config.dataset.clone(),
        seed,
        items: wb.catalog().len(),
        users: wb.catalog().users().len(),
        interactions: wb.catalog().interactions().len(),
        train_episodes: wb.specs(EpisodeSplit::Support).len(),
        validation_episodes: wb.specs(EpisodeSplit::Validation).len(),
        test_episodes: wb.specs(EpisodeSplit::Test).len(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Trains the routing head, then tunes combiner weights and alpha on
/// validation with the greedy policy.
pub fn train_checkpoint(config: &ExperimentConfig, wb: &Workbench, seed: u64) -> Result<(Checkpoint, Vec<IterationLog>)> {
    let env = wb.env();
    let ppo = PpoConfig { seed, ..config.ppo.clone() };
    let initial = PolicyParams { mode: env.mode, ..PolicyParams::default() };
    let out = train(wb, initial, &ppo, env.reward.gamma)?;
    let mut greedy = LinearPolicy::new(out.params.clone(), true);
    let tuned = tune_on_validation(wb, &mut greedy, out.params.weights, true, seed)?;
    let ck = Checkpoint {
        config_hash: config.hash(),
        seed,
        params: PolicyParams { weights: tuned.weights, ..out.params },
        value: out.value,
        alpha: tuned.alpha,
    };
    Ok((ck, out.log))
}

pub fn write_train_outputs(out: &Path, ck: &Checkpoint, log: &[IterationLog]) -> Result<()> {
    ck.save(&checkpoint_path(out, ck.seed))?;
    let records = log.iter().map(|l| LogRecord { log: l.clone(), config_hash: ck.config_hash.clone() });
    write_jsonl(&train_log_path(out, ck.seed), records)
}

/// Test-split evaluation of one in-process policy on one workbench.
pub fn evaluate(
    config: &ExperimentConfig,
    wb: &Workbench,
    choice: PolicyChoice,
    checkpoint: Option<&Checkpoint>,
    seed: u64,
) -> Result<SeedResult> {
    let (mut policy, alpha): (Box<dyn Policy>, f64) = match choice {
        PolicyChoice::RuleRouter => {
            let mut rule = RuleRouter::default();
            let alpha = tune_on_validation(wb, &mut rule, RuleRouterConfig::default().weights, false, seed)?.alpha;
            (Box::new(rule), alpha)
        }
        PolicyChoice::Learned => {
            let ck = checkpoint.ok_or_else(|| Error::Config("the learned policy needs a checkpoint".into()))?;
            (Box::new(LinearPolicy::new(ck.params.clone(), true)), ck.alpha)
        }
        PolicyChoice::Bridge => {
            return Err(Error::Config("bridge policies are evaluated through serve-bridge".into()));
        }
    };
    let env = EnvConfig { alpha, ..wb.env().clone() };
    let episodes = wb.play_all(EpisodeSplit::Test, &config.families, &env, policy.as_mut(), seed)?;
    let eval = summarize(&episodes);
    let full_catalog = if config.full_catalog_episodes > 0 {
        let mut rows = Vec::new();
        for &family in &config.families {
            rows.extend(full_catalog_check(wb, policy.as_mut(), family, &env, config.full_catalog_episodes, seed)?);
        }
        Some(FullCatalogSummary::of(&rows))
    } else {
        None
    };
    Ok(SeedResult { seed, eval, full_catalog })
}

/// Checkpoint for `seed`: `path` may name a file or a directory holding
/// `checkpoint-seed{seed}.json`.
pub fn resolve_checkpoint(path: &Path, seed: u64, config_hash: &str) -> Result<Checkpoint> {
    let file = if path.is_dir() { checkpoint_path(path, seed) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::Config(format!("no checkpoint at {}", file.display())));
    }
    Checkpoint::load_for(&file, config_hash)
}

pub fn eval(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Report> {
    let hash = config.hash();
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let wb = config.workbench(seed)?;
        let ck = match config.policy {
            PolicyChoice::Learned => {
                let path = checkpoint.map_or_else(|| config.out.clone(), Path::to_path_buf);
                Some(resolve_checkpoint(&path, seed, &hash)?)
            }
            _ => None,
        };
        seeds.push(evaluate(config, &wb, config.policy, ck.as_ref(), seed)?);
    }
    Ok(Report {
        dataset: config.dataset.clone(),
        config_hash: hash,
        policies: vec![PolicyResults { policy: config.policy.as_str().into(), seeds }],
        significance: None,
    })
}

/// Trains and evaluates the learned router against the rule router on
/// every seed, writing checkpoints and logs on the way.
pub fn compare(config: &ExperimentConfig) -> Result<Report> {
    let mut learned = PolicyResults { policy: PolicyChoice::Learned.as_str().into(), seeds: Vec::new() };
    let mut rule = PolicyResults { policy: PolicyChoice::RuleRouter.as_str().into(), seeds: Vec::new() };
    for &seed in &config.seeds {
        let wb = config.workbench(seed)?;
        let (ck, log) = train_checkpoint(config, &wb, seed)?;
        write_train_outputs(&config.out, &ck, &log)?;
        learned.seeds.push(evaluate(config, &wb, PolicyChoice::Learned, Some(&ck), seed)?);
        rule.seeds.push(evaluate(config, &wb, PolicyChoice::RuleRouter, None, seed)?);
    }
    let significance = Some(Significance::paired(&learned, &rule)?);
    Ok(Report { dataset: config.dataset.clone(), config_hash: config.hash(), policies: vec![learned, rule], significance })
}

pub fn write_report(out: &Path, stem: &str, report: &Report) -> Result<()> {
    let text = out.join(format!("{stem}.txt"));
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(&text, report.render()).map_err(|e| Error::io(&text, e))?;
    let records: Vec<ReportRecord> = report.records();
    write_jsonl(&out.join(format!("{stem}.jsonl")), records)
}

/// Serves test episodes of the first configured seed's workbench.
pub fn serve_bridge(config: &ExperimentConfig, listener: &TcpListener) -> Result<Vec<EpisodeStatus>> {
    let seed = config.seeds[0];
    let wb = config.workbench(seed)?;
    let dir = config.out.join("bridge");
    let server = BridgeServer::new(
        &wb,
        ServerConfig {
            env: wb.env().clone(),
            families: config.families.clone(),
            timeout: Duration::from_secs_f64(config.bridge.timeout_secs),
            transcripts: dir.join("transcripts"),
            max_episodes: config.bridge.max_episodes,
            seed,
            log: Some(dir.join("episodes.jsonl")),
            config_hash: config.hash(),
        },
    )?;
    server.serve(listener)
}

