//! Config-driven commands: each one turns a scenario (and optionally a
//! data file) into a JSON report plus plot-ready files, recorded in a run
//! manifest.

mod commands;
pub mod synth;

pub use commands::{
    analyze_heterodyne, cmd_budget, cmd_calibrate, cmd_characterize, cmd_design, cmd_fit, cmd_heterodyne, cmd_simulate,
    cmd_sweep, is_u_shaped, HeterodyneAnalysis, SweepPoint,
};

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{load, Scenario};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Budget,
    Simulate,
    Sweep,
    Fit,
    Heterodyne,
    Design,
    Calibrate,
    Characterize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Budget => "budget",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Fit => "fit",
            Command::Heterodyne => "heterodyne",
            Command::Design => "design",
            Command::Calibrate => "calibrate",
            Command::Characterize => "characterize",
        }
    }
}

/// Everything a command needs besides the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides `[sim].seed`.
    pub seed: Option<u64>,
    pub workers: usize,
    /// Data file for commands that can ingest one instead of synthesizing.
    pub input: Option<PathBuf>,
    /// Directory relative data paths in the config are resolved against.
    pub config_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: None, workers: 1, input: None, config_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

impl OutputFile {
    pub fn text(name: &str, contents: String) -> Self {
        OutputFile { name: name.to_string(), contents: contents.into_bytes() }
    }
}

/// Report and side files of one command, not yet written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: serde_json::Value,
    pub files: Vec<OutputFile>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: String,
    /// SHA-256 of the config bytes, hex.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub input: Option<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// True when `bytes` are the config this manifest was produced from.
    pub fn matches_config(&self, bytes: &[u8]) -> bool {
        sha256_hex(bytes) == self.config_sha256
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

fn pretty(v: &serde_json::Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Runs `command` on an already loaded scenario.
pub fn execute(command: Command, sc: &Scenario, opts: &RunOptions) -> Result<Outcome> {
    match command {
        Command::Budget => cmd_budget(sc),
        Command::Simulate => cmd_simulate(sc, opts),
        Command::Sweep => cmd_sweep(sc, opts),
        Command::Fit => cmd_fit(sc, opts),
        Command::Heterodyne => cmd_heterodyne(sc, opts),
        Command::Design => cmd_design(sc),
        Command::Calibrate => cmd_calibrate(sc, opts),
        Command::Characterize => cmd_characterize(sc, opts),
    }
}

/// A finished run: the report as written and the manifest describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub report: String,
    pub manifest: RunManifest,
}

/// Loads the config, runs the command and, with `out_dir`, writes the
/// report, side files and manifest there. The report names the manifest
/// and the config hash, so every output can be traced to its inputs.
pub fn run(command: Command, config: &Path, opts: &RunOptions, out_dir: Option<&Path>) -> Result<RunResult> {
    let started = now_unix();
    let (sc, path, bytes) = load(config)?;
    let hash = sha256_hex(&bytes);
    let mut opts = opts.clone();
    if opts.config_dir.is_none() {
        opts.config_dir = path.parent().map(Path::to_path_buf);
    }
    let opts = &opts;
    let outcome = execute(command, &sc, opts).map_err(|e| with_context(e, command, &path))?;
    let mut report = serde_json::json!({
        "command": command.name(),
        "scenario": sc.file.name,
        "config_sha256": hash,
        "manifest": MANIFEST_FILE,
    });
    if let (serde_json::Value::Object(dst), serde_json::Value::Object(src)) = (&mut report, outcome.report) {
        dst.extend(src);
    }
    let report_text = pretty(&report)?;
    let mut outputs = vec![REPORT_FILE.to_string()];
    outputs.extend(outcome.files.iter().map(|f| f.name.clone()));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORT_FILE), &report_text)?;
        // side files are written by one thread, after all jobs finished
        for f in &outcome.files {
            std::fs::write(dir.join(&f.name), &f.contents)?;
        }
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        config_path: path.display().to_string(),
        config_sha256: hash,
        seeds: outcome.seeds,
        workers: opts.workers,
        input: opts.input.as_ref().map(|p| p.display().to_string()),
        started_unix: started,
        finished_unix: now_unix(),
        outputs,
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join(MANIFEST_FILE), pretty(&to_json(&manifest)?)?)?;
    }
    Ok(RunResult { report: report_text, manifest })
}

fn with_context(e: Error, command: Command, path: &Path) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        Error::Io(m) => Error::Io(format!("{} ({}): {m}", command.name(), path.display())),
        other => other,
    }
}

/// Deterministic per-job seed.
pub(crate) fn job_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}
