#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asd_core::dataset::SynthSpec;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub fn asd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_asd"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn asd");
    assert!(
        out.status.success(),
        "command failed: {cmd:?}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn run_err(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn asd");
    assert!(!out.status.success(), "command unexpectedly succeeded: {cmd:?}");
    out
}

/// Two machine types, K = 2, short clips: enough for every stage to run in seconds.
pub fn tiny_spec(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::desk(seed);
    s.machine_types.truncate(2);
    for m in &mut s.machine_types {
        m.ids.truncate(2);
    }
    s.clip_seconds = 3.0;
    s.train_per_id = 8;
    s.eval_normal_per_id = 3;
    s.eval_anomaly_per_id = 3;
    s
}

pub fn tiny_config() -> serde_json::Value {
    serde_json::json!({
        "epochs": 2,
        "batch_size": 8,
        "encoder_channels": [4, 8],
        "head_hidden": 16,
        "n_segments": 3,
        "p_grid": [1, 2],
        "h_param": 1,
        "fit_set": "train"
    })
}

/// Writes the tiny corpus and config under `root`; returns (manifest, config) paths.
pub fn tiny_setup(root: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let corpus = root.join("corpus");
    let spec = root.join("spec.json");
    std::fs::write(&spec, serde_json::to_vec_pretty(&tiny_spec(seed)).unwrap()).unwrap();
    run_ok(asd().args(["synth", "--spec"]).arg(&spec).arg("--out").arg(&corpus));
    let cfg = root.join("config.json");
    std::fs::write(&cfg, serde_json::to_vec_pretty(&tiny_config()).unwrap()).unwrap();
    (corpus.join("manifest.json"), cfg)
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in WalkDir::new(dir).sort_by_file_name() {
        let e = e.unwrap();
        if e.file_type().is_file() {
            let rel = e.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(e.path()).unwrap();
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
    }
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
