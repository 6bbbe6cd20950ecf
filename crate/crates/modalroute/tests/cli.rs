//! Subcommands through the library and through the binary: determinism,
//! round trips, config-hash guards and exit codes.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use modalroute::checkpoint::Checkpoint;
use modalroute::commands;
use modalroute::config::{ExperimentConfig, PolicyChoice};
use modalroute::io::{load_catalog, read_jsonl, ReportRecord};
use modalroute::Error;
use serde_json::Value;

const SMALL: &str = r#"
dataset = "tiny"
seeds = [0]
full_catalog_episodes = 10
[corpus]
kind = "synthetic"
n_items = 240
n_users = 120
[workbench.env]
pool_size = 50
[ppo]
iterations = 20
lr = 0.3
"#;

fn small(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(SMALL).unwrap();
    c.out = out.to_path_buf();
    c
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modalroute")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    // content-addressed so several configs can coexist in one directory
    let p = dir.join(format!("{:016x}.toml", modalroute_core::math::fnv1a(text.as_bytes())));
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_deterministic_and_loads_back_loss_free() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = commands::gen_data(&c, 3, &a).unwrap();
    let mb = commands::gen_data(&c, 3, &b).unwrap();
    assert_eq!(ma, mb);
    for f in ["items.jsonl", "interactions.jsonl", "splits.jsonl", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let loaded = load_catalog(&a.join("items.jsonl"), &a.join("interactions.jsonl")).unwrap();
    assert_eq!(loaded, c.catalog(3).unwrap());
    assert_eq!(ma.config_hash, c.hash());
    assert_eq!(ma.items, 240);
    let splits: Vec<Value> = read_jsonl(&a.join("splits.jsonl")).unwrap();
    assert_eq!(splits.len(), ma.train_episodes + ma.validation_episodes + ma.test_episodes);
}

#[test]
fn a_file_corpus_reproduces_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let data = dir.path().join("data");
    commands::gen_data(&c, 0, &data).unwrap();
    let text = SMALL.replace(
        "kind = \"synthetic\"\nn_items = 240\nn_users = 120",
        &format!(
            "kind = \"files\"\nitems = {:?}\ninteractions = {:?}",
            data.join("items.jsonl"),
            data.join("interactions.jsonl")
        ),
    );
    let files = ExperimentConfig::from_toml(&text).unwrap();
    let a = commands::evaluate(&c, &c.workbench(0).unwrap(), PolicyChoice::RuleRouter, None, 0).unwrap();
    let b = commands::evaluate(&files, &files.workbench(0).unwrap(), PolicyChoice::RuleRouter, None, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_reload_reproduces_greedy_evaluation_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let wb = c.workbench(0).unwrap();
    let (ck, log) = commands::train_checkpoint(&c, &wb, 0).unwrap();
    assert_eq!(log.len(), 20);
    commands::write_train_outputs(dir.path(), &ck, &log).unwrap();
    let loaded = commands::resolve_checkpoint(dir.path(), 0, &c.hash()).unwrap();
    assert_eq!(loaded, ck);
    let fresh = commands::evaluate(&c, &wb, PolicyChoice::Learned, Some(&ck), 0).unwrap();
    let reloaded = commands::evaluate(&c, &wb, PolicyChoice::Learned, Some(&loaded), 0).unwrap();
    assert_eq!(fresh, reloaded);

    let log: Vec<Value> = read_jsonl(&commands::train_log_path(dir.path(), 0)).unwrap();
    for key in ["iter", "mean_return", "clip_frac", "value_loss", "per_family_ndcg10", "config_hash"] {
        assert!(log.iter().all(|l| l.get(key).is_some()), "{key}");
    }

    let mut other = c.clone();
    other.ppo.lr = 0.25;
    let err = Checkpoint::load_for(&commands::checkpoint_path(dir.path(), 0), &other.hash()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn rule_router_eval_is_deterministic_and_single_seed_std_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig { seeds: vec![1], ..small(dir.path()) };
    let a = commands::eval(&c, None).unwrap();
    let b = commands::eval(&c, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.render(), b.render());
    let recs = a.records();
    assert!(!recs.is_empty());
    assert!(recs.iter().all(|r| r.std == 0.0 && r.n_seeds == 1 && r.config_hash == c.hash()));
    assert!(a.render().contains("Full-catalog"));
    let pre = recs.iter().find(|r| r.family == "full-catalog" && r.metric == "recall_pre").unwrap();
    let post = recs.iter().find(|r| r.family == "full-catalog" && r.metric == "recall_post").unwrap();
    assert_eq!(pre.mean, post.mean);
}

#[test]
fn comparison_reports_diagnostics_and_significance() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig { seeds: vec![0, 1], ..small(dir.path()) };
    let r = commands::compare(&c).unwrap();
    let text = r.render();
    for col in ["failed-call", "turns", "recovery", "first-action", "Wilcoxon p", "Cliff's delta"] {
        assert!(text.contains(col), "{col}");
    }
    let recs = r.records();
    for policy in ["learned", "rule-router"] {
        for metric in ["failed_call_rate", "mean_turns", "ndcg10", "hr20"] {
            assert!(recs.iter().any(|x| x.policy == policy && x.family == "ooma" && x.metric == metric), "{policy} {metric}");
        }
    }
    let p = recs.iter().find(|x| x.metric == "wilcoxon_p").unwrap();
    assert!((0.0..=1.0).contains(&p.mean));
    assert!(commands::checkpoint_path(dir.path(), 1).is_file());
}

#[test]
fn binary_runs_the_pipeline_and_stamps_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let hash = ExperimentConfig::from_toml(SMALL).unwrap().hash();

    let o = bin(&["gen-data", "--config", &cfg, "--out", out_s, "--seed", "0", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [0, 2] {
        let m: Value = serde_json::from_str(&std::fs::read_to_string(commands::data_dir(&out, seed).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["config_hash"], hash);
    }
    let o = bin(&["train", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(Checkpoint::load(&commands::checkpoint_path(&out, 0)).unwrap().config_hash, hash);

    let o = bin(&["eval", "--config", &cfg, "--out", out_s, "--policy", "learned", "--checkpoint", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("OOMA average"));
    let recs: Vec<ReportRecord> = read_jsonl(&out.join("report-learned.jsonl")).unwrap();
    assert!(recs.iter().all(|r| r.config_hash == hash && r.dataset == "tiny"));
    assert!(std::fs::read_to_string(out.join("report-learned.txt")).unwrap().contains(&hash));

    // same seed list, different model keys: the checkpoint is refused
    let other = write_config(dir.path(), &SMALL.replace("lr = 0.3", "lr = 0.2"));
    let o = bin(&["eval", "--config", &other, "--out", out_s, "--policy", "learned"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    // no checkpoint for this seed
    let o = bin(&["eval", "--config", &cfg, "--out", out_s, "--policy", "learned", "--seed", "7"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn configuration_problems_exit_2_and_runtime_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = |text: &str| write_config(dir.path(), text);
    let missing = dir.path().join("missing.toml");
    for args in [
        vec!["gen-data".to_string(), "--config".into(), p("[corpus]\nkind = \"synthetic\"\nn_items = 50\n")],
        vec!["eval".into(), "--config".into(), p("typo = 1\n")],
        vec!["eval".into(), "--config".into(), missing.to_str().unwrap().into()],
        vec!["eval".into(), "--policy".into(), "oracle".into()],
        vec!["frobnicate".into()],
        vec!["eval".into(), "--policy".into(), "bridge".into(), "--config".into(), p(SMALL)],
    ] {
        let o = Command::new(env!("CARGO_BIN_EXE_modalroute")).args(&args).output().unwrap();
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let corrupt = dir.path().join("items.jsonl");
    std::fs::write(&corrupt, "{\"item_id\":\"a\"}\nnot json\n").unwrap();
    let text = SMALL.replace(
        "kind = \"synthetic\"\nn_items = 240\nn_users = 120",
        &format!("kind = \"files\"\nitems = {:?}\ninteractions = {:?}", corrupt, corrupt),
    );
    let o = bin(&["eval", "--config", &p(&text)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn serve_bridge_binary_records_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let cfg = write_config(dir.path(), &format!("{SMALL}[bridge]\nmax_episodes = 2\n"));
    let out = dir.path().join("out");
    let mut child = Command::new(env!("CARGO_BIN_EXE_modalroute"))
        .args(["serve-bridge", "--config", &cfg, "--out", out.to_str().unwrap(), "--listen", &addr])
        .spawn()
        .unwrap();
    let start = Instant::now();
    for _ in 0..2 {
        let stream = loop {
            match TcpStream::connect(&addr) {
                Ok(s) => break s,
                Err(_) if start.elapsed() < Duration::from_secs(20) => std::thread::sleep(Duration::from_millis(50)),
                Err(e) => panic!("server never came up: {e}"),
            }
        };
        let mut w = stream.try_clone().unwrap();
        let mut r = BufReader::new(stream);
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        assert!(line.starts_with("{\"type\":\"obs\""));
        w.write_all(b"{\"type\":\"act\",\"action\":{\"kind\":\"RetrieveGraph\"}}\n").unwrap();
        line.clear();
        r.read_line(&mut line).unwrap();
        w.write_all(b"{\"type\":\"act\",\"rationale\":\"go\",\"action\":{\"kind\":\"ScoreCandidates\",\"args\":{\"scores\":{}}}}\n").unwrap();
        line.clear();
        r.read_line(&mut line).unwrap();
        assert!(line.starts_with("{\"type\":\"end\""), "{line}");
    }
    assert!(child.wait().unwrap().success());
    assert_eq!(std::fs::read_dir(out.join("bridge/transcripts")).unwrap().count(), 2);
    let log: Vec<Value> = read_jsonl(&out.join("bridge/episodes.jsonl")).unwrap();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|l| l["status"] == "completed"));

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let busy = taken.local_addr().unwrap().to_string();
    let o = bin(&["serve-bridge", "--config", &cfg, "--listen", &busy, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
