//! Episode server for external policies: one episode per TCP connection,
//! spoken in the line protocol of [`crate::wire`].

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use modalroute_core::environment::{episode_return, Action, EnvConfig, EpisodeSplit, EpisodeView, TaskFamily};
use modalroute_core::experiment::{play_episode, Workbench};
use modalroute_core::math::{fnv1a, mix_seed};
use modalroute_core::policies::{Decision, Policy};
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{transcript, write_jsonl};
use crate::wire::{decode_act_line, obs_message, EndMessage, Message};

/// Policy whose decisions come from the peer of a TCP connection.
///
/// A read timeout yields a non-terminal Invalid action. A closed or broken
/// connection marks the policy aborted and ends the episode; the caller
/// must then discard it.
pub struct BridgePolicy {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    aborted: Option<String>,
    timeouts: usize,
}

impl BridgePolicy {
    pub fn new(stream: TcpStream, timeout: Duration) -> std::io::Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        let writer = stream.try_clone()?;
        Ok(Self { reader: BufReader::new(stream), writer, aborted: None, timeouts: 0 })
    }

    pub fn aborted(&self) -> Option<&str> {
        self.aborted.as_deref()
    }

    pub fn timeouts(&self) -> usize {
        self.timeouts
    }

    pub fn send(&mut self, message: &Message) -> std::io::Result<()> {
        self.writer.write_all(message.to_line().as_bytes())?;
        self.writer.flush()
    }

    fn abort(&mut self, reason: String) -> Decision {
        self.aborted = Some(reason);
        Decision { rationale: "aborted".into(), action: Action::Invalid { raw: String::new(), terminal: true } }
    }
}

impl Policy for BridgePolicy {
    fn name(&self) -> &str {
        "bridge"
    }

    fn act(&mut self, view: &EpisodeView<'_, '_>, _rng: &mut dyn RngCore) -> Decision {
        if self.aborted.is_some() {
            return self.abort(self.aborted.clone().unwrap_or_default());
        }
        if let Err(e) = self.send(&Message::Obs(obs_message(view))) {
            return self.abort(format!("send failed: {e}"));
        }
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => self.abort("connection closed".into()),
            Ok(_) => {
                let (rationale, action) = decode_act_line(&line);
                Decision { rationale, action }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                self.timeouts += 1;
                Decision {
                    rationale: "timeout".into(),
                    action: Action::Invalid { raw: "timeout".into(), terminal: false },
                }
            }
            Err(e) => self.abort(format!("read failed: {e}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub env: EnvConfig,
    pub families: Vec<TaskFamily>,
    pub timeout: Duration,
    /// Transcripts go here, one file per completed episode.
    pub transcripts: PathBuf,
    pub max_episodes: Option<usize>,
    /// Episode rngs derive from this exactly as in `Workbench::play_all`.
    pub seed: u64,
    /// One status line per connection is appended here.
    pub log: Option<PathBuf>,
    pub config_hash: String,
}

#[derive(Serialize)]
struct StatusLine<'a> {
    #[serde(flatten)]
    status: &'a EpisodeStatus,
    config_hash: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EpisodeStatus {
    Completed { connection: usize, episode_id: String, reward: f64, ndcg10: f64, turns: usize },
    Aborted { connection: usize, episode_id: String, reason: String },
}

pub struct BridgeServer<'w> {
    wb: &'w Workbench,
    config: ServerConfig,
}

impl<'w> BridgeServer<'w> {
    pub fn new(wb: &'w Workbench, config: ServerConfig) -> Result<Self> {
        if config.families.is_empty() {
            return Err(Error::Config("bridge needs at least one family".into()));
        }
        Ok(Self { wb, config })
    }

    /// Test spec and family served on connection `k`, spec-major like
    /// `Workbench::play_all`, wrapping around.
    pub fn episode_for(&self, k: usize) -> (usize, TaskFamily) {
        let nf = self.config.families.len();
        let n = self.wb.specs(EpisodeSplit::Test).len() * nf;
        let k = k % n;
        (k / nf, self.config.families[k % nf])
    }

    pub fn transcript_path(&self, k: usize, episode_id: &str) -> PathBuf {
        let safe: String = episode_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        self.config.transcripts.join(format!("{k:06}-{safe}.jsonl"))
    }

    /// Plays one episode over `stream`.
    pub fn run_connection(&self, k: usize, stream: TcpStream) -> Result<EpisodeStatus> {
        let (index, family) = self.episode_for(k);
        let mut ep = self.wb.episode(EpisodeSplit::Test, index, family, &self.config.env)?;
        let mut policy = BridgePolicy::new(stream, self.config.timeout).map_err(|e| Error::Protocol(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, fnv1a(ep.id().as_bytes())));
        play_episode(&mut ep, &mut policy, &mut rng)?;
        if let Some(reason) = policy.aborted() {
            return Ok(EpisodeStatus::Aborted { connection: k, episode_id: ep.id().into(), reason: reason.into() });
        }
        let ndcg10 = ep.outcome().map_or(0.0, |o| o.ndcg10);
        let reward = episode_return(&ep.rewards(), self.config.env.reward.gamma);
        // a peer that leaves right after its final action still counts
        let _ = policy.send(&Message::End(EndMessage { reward, ndcg10 }));
        write_jsonl(&self.transcript_path(k, ep.id()), transcript(&ep))?;
        Ok(EpisodeStatus::Completed { connection: k, episode_id: ep.id().into(), reward, ndcg10, turns: ep.history().len() })
    }

    /// Accepts connections until `max_episodes` have been handled (forever
    /// when unset), serving each on its own thread.
    pub fn serve(&self, listener: &TcpListener) -> Result<Vec<EpisodeStatus>> {
        let next = AtomicUsize::new(0);
        let log = match &self.config.log {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        let log = &log;
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            loop {
                if self.config.max_episodes.is_some_and(|m| next.load(Ordering::SeqCst) >= m) {
                    break;
                }
                let stream = match listener.accept() {
                    Ok((s, _)) => s,
                    Err(e) => {
                        eprintln!("bridge: accept failed: {e}");
                        continue;
                    }
                };
                let k = next.fetch_add(1, Ordering::SeqCst);
                handles.push(scope.spawn(move || {
                    let status = self.run_connection(k, stream);
                    match &status {
                        Ok(EpisodeStatus::Aborted { episode_id, reason, .. }) => {
                            eprintln!("bridge: episode {episode_id} aborted ({reason}); excluded")
                        }
                        Err(e) => eprintln!("bridge: connection {k} failed: {e}"),
                        Ok(_) => {}
                    }
                    if let (Ok(st), Some(file)) = (&status, log) {
                        let line = serde_json::to_string(&StatusLine { status: st, config_hash: &self.config.config_hash })
                            .expect("status serializes");
                        let mut f = file.lock().expect("log lock");
                        if let Err(e) = writeln!(f, "{line}") {
                            eprintln!("bridge: cannot write episode log: {e}");
                        }
                    }
                    status
                }));
            }
            handles.into_iter().map(|h| h.join().expect("connection thread panicked")).collect::<Vec<_>>()
        });
        results.into_iter().collect()
    }
}
