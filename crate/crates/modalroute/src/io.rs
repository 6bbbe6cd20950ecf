//! Line-delimited JSON files: items, interactions, pool audits,
//! transcripts, training logs and report records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use modalroute_core::corpus::{Catalog, Interaction, ItemRecord};
use modalroute_core::environment::Episode;
use modalroute_core::retrieval::CandidatePool;
use modalroute_core::training::IterationLog;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::wire::{encode_action, observation_payload};

/// One record per non-blank line; errors name the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Items file record. Missing keys leave that payload empty; unknown keys
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawItem {
    pub item_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub image_tags: Vec<String>,
}

impl RawItem {
    pub fn from_record(r: &ItemRecord) -> Self {
        Self {
            item_id: r.item_id.clone(),
            title: r.title.join(" "),
            category: r.category.join(" "),
            description: r.description.join(" "),
            image_tags: r.image_tags.clone(),
        }
    }

    pub fn to_record(&self) -> ItemRecord {
        ItemRecord::from_raw(self.item_id.clone(), &self.title, &self.category, &self.description, &self.image_tags)
    }
}

pub fn load_catalog(items: &Path, interactions: &Path) -> Result<Catalog> {
    let items: Vec<RawItem> = read_jsonl(items)?;
    let interactions: Vec<Interaction> = read_jsonl(interactions)?;
    Ok(Catalog::new(items.iter().map(RawItem::to_record).collect(), interactions)?)
}

pub fn write_catalog(catalog: &Catalog, items: &Path, interactions: &Path) -> Result<()> {
    write_jsonl(items, catalog.items().iter().map(RawItem::from_record))?;
    write_jsonl(interactions, catalog.interactions())
}

/// Audit line for one pool entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub episode_id: String,
    pub item_id: String,
    pub rank: u32,
    pub s0: f64,
}

pub fn pool_records(pool: &CandidatePool, catalog: &Catalog) -> Vec<PoolRecord> {
    pool.entries
        .iter()
        .map(|e| PoolRecord {
            episode_id: pool.episode_id.clone(),
            item_id: catalog.item(e.item).item_id.clone(),
            rank: e.rank,
            s0: e.s0,
        })
        .collect()
}

/// One turn of an episode transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub t: usize,
    pub rationale: String,
    pub action_kind: String,
    pub args: Value,
    pub obs_kind: String,
    pub obs_payload: Value,
    pub reward: f64,
}

pub fn transcript(ep: &Episode<'_>) -> Vec<TranscriptRecord> {
    ep.history()
        .iter()
        .map(|h| {
            let wire = encode_action(&h.action);
            TranscriptRecord {
                t: h.t,
                rationale: h.rationale.clone(),
                action_kind: wire.kind,
                args: wire.args,
                obs_kind: h.observation.kind_str().into(),
                obs_payload: observation_payload(&h.observation),
                reward: h.reward,
            }
        })
        .collect()
}

/// Training-log line: the iteration record plus the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(flatten)]
    pub log: IterationLog,
    pub config_hash: String,
}

/// Machine-readable report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub dataset: String,
    pub policy: String,
    pub family: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub config_hash: String,
}
