//! Experiment harness: config parsing, the experiment registry, and the
//! run directory layout (config copy, CSVs, deterministic summary.json).

pub mod config;
pub mod experiments;
pub mod plot;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;
use config::ExperimentConfig;
use experiments::ExperimentOutput;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Where a finished run landed and whether its assertions held. `duration`
/// is the only non-reproducible field and is kept out of summary.json.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub input_hash: String,
    pub run_dir: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub assertions_pass: Option<bool>,
    #[serde(skip)]
    pub duration: Duration,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Git-style blob hash of the raw input file bytes.
pub fn input_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Hash of the canonical (re-serialized) config, so formatting and key
/// order don't change the run identity.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.to_toml().as_bytes())
}

/// Output root: NADD_OUTPUT_ROOT wins over the config's output_dir.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("NADD_OUTPUT_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

fn persist(
    cfg: &ExperimentConfig,
    raw_input: &[u8],
    out: &ExperimentOutput,
    elapsed: Duration,
) -> Result<RunRecord> {
    let chash = config_hash(cfg);
    let run_dir = output_root(cfg).join(format!("{}-{}", cfg.experiment, &chash[..8]));
    std::fs::create_dir_all(&run_dir)?;

    std::fs::write(run_dir.join("config.toml"), cfg.to_toml())?;
    let mut csv_paths = Vec::new();
    for (name, bytes) in &out.csv {
        let p = run_dir.join(name);
        std::fs::write(&p, bytes)?;
        csv_paths.push(p);
    }
    for (name, bytes) in &out.files {
        std::fs::write(run_dir.join(name), bytes)?;
    }

    let summary = serde_json::json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": chash,
        "assertions_pass": out.assertions_pass,
        "results": out.summary,
    });
    let summary_path = run_dir.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("json summary"),
    )?;

    Ok(RunRecord {
        experiment: cfg.experiment.clone(),
        config_hash: chash,
        input_hash: input_hash(raw_input),
        run_dir,
        csv_paths,
        summary_path,
        assertions_pass: out.assertions_pass,
        duration: elapsed,
    })
}

/// Validate, run, and persist an already-parsed config. `raw_input` is the
/// original file text (hashed into the record).
pub fn run_config(cfg: &ExperimentConfig, raw_input: &[u8]) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let out = experiments::run(cfg)?;
    persist(cfg, raw_input, &out, start.elapsed())
}

/// Load a config file and run it end to end.
pub fn run_experiment(path: &Path) -> Result<RunRecord> {
    let raw = std::fs::read(path)?;
    let cfg = ExperimentConfig::parse(std::str::from_utf8(&raw).map_err(|e| {
        crate::Error::ConfigParse(format!("config is not UTF-8: {e}"))
    })?)?;
    run_config(&cfg, &raw)
}
