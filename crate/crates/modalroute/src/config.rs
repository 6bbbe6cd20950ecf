//! Experiment configuration: one TOML file per experiment, hashed into
//! every artifact it produces.

use std::path::{Path, PathBuf};

use modalroute_core::corpus::{generate_synthetic_corpus, Catalog, SyntheticConfig};
use modalroute_core::environment::TaskFamily;
use modalroute_core::experiment::{Workbench, WorkbenchConfig};
use modalroute_core::training::PpoConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::load_catalog;

/// Smallest pool size an experiment may use.
pub const MIN_POOL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorpusSource {
    /// Generated per run seed: the seed field is replaced by the run seed.
    Synthetic(SyntheticConfig),
    Files { items: PathBuf, interactions: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    RuleRouter,
    Learned,
    Bridge,
}

impl PolicyChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyChoice::RuleRouter => "rule-router",
            PolicyChoice::Learned => "learned",
            PolicyChoice::Bridge => "bridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSettings {
    pub listen: String,
    /// Seconds to wait for an `act` message before substituting Invalid.
    pub timeout_secs: f64,
    /// Stop after this many connections; unlimited when absent.
    pub max_episodes: Option<usize>,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        Self { listen: "127.0.0.1:7878".into(), timeout_secs: 30.0, max_episodes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in reports.
    pub dataset: String,
    pub corpus: CorpusSource,
    pub families: Vec<TaskFamily>,
    pub workbench: WorkbenchConfig,
    pub ppo: PpoConfig,
    pub seeds: Vec<u64>,
    pub policy: PolicyChoice,
    pub out: PathBuf,
    /// Retrieved (not target-positive) test pools reranked by `eval`.
    pub full_catalog_episodes: usize,
    pub bridge: BridgeSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            corpus: CorpusSource::Synthetic(SyntheticConfig::default()),
            families: TaskFamily::ALL.to_vec(),
            workbench: WorkbenchConfig::default(),
            ppo: PpoConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            policy: PolicyChoice::RuleRouter,
            out: PathBuf::from("out"),
            full_catalog_episodes: 200,
            bridge: BridgeSettings::default(),
        }
    }
}

/// The part of the configuration that determines data and models. Seeds,
/// output directory, policy selection and bridge settings are run
/// choices and stay out of the hash, so a checkpoint trained for one seed
/// list can be evaluated under another.
#[derive(Serialize)]
struct Hashed<'a> {
    dataset: &'a str,
    corpus: &'a CorpusSource,
    families: &'a [TaskFamily],
    workbench: &'a WorkbenchConfig,
    ppo: &'a PpoConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        // an unreadable experiment file is a configuration problem, not a runtime one
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("families must not be empty".into()));
        }
        if self.workbench.env.pool_size < MIN_POOL {
            return Err(Error::Config(format!(
                "pool size {} is below the minimum of {MIN_POOL}",
                self.workbench.env.pool_size
            )));
        }
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.validate()?;
            if s.n_items < self.workbench.env.pool_size {
                return Err(Error::Config(format!(
                    "n_items {} is smaller than the pool size {}",
                    s.n_items, self.workbench.env.pool_size
                )));
            }
        }
        if !(self.bridge.timeout_secs > 0.0 && self.bridge.timeout_secs.is_finite()) {
            return Err(Error::Config("bridge timeout must be positive".into()));
        }
        self.workbench.validate()?;
        self.ppo.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the data- and model-determining keys.
    pub fn hash(&self) -> String {
        let hashed = Hashed {
            dataset: &self.dataset,
            corpus: &self.corpus,
            families: &self.families,
            workbench: &self.workbench,
            ppo: &self.ppo,
        };
        let bytes = serde_json::to_vec(&hashed).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Catalog for one run seed.
    pub fn catalog(&self, seed: u64) -> Result<Catalog> {
        match &self.corpus {
            CorpusSource::Synthetic(s) => {
                Ok(generate_synthetic_corpus(&SyntheticConfig { seed, ..s.clone() })?.catalog)
            }
            CorpusSource::Files { items, interactions } => load_catalog(items, interactions),
        }
    }

    pub fn workbench(&self, seed: u64) -> Result<Workbench> {
        Ok(Workbench::new(self.catalog(seed)?, self.workbench.clone())?)
    }
}
