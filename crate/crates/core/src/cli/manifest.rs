//! Run manifests: what was run, on which inputs, with which seeds, and the
//! digest of every output. Replaying a manifest re-runs the command and
//! checks the outputs byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::args::*;
use super::config::{run_pipeline, PipelineConfig};
use super::stages::{self, sidecar};
use super::plot;
use crate::analyze::{SIMILARITY_FILE, STATE_VALUES_FILE, SUMMARY_FILE};
use crate::ingest::{CLINICAL_FILE, COHORT_FILE, META_FILE};
use crate::io::{read_json, sha256_file, write_json};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub command: Command,
    /// Fully resolved configuration (the pipeline config after overrides, or
    /// the subcommand arguments).
    pub config: serde_json::Value,
    pub threads: usize,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, by path relative to the output root.
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

/// A command ready to run: pipeline configs are loaded and overridden.
#[derive(Debug, Clone)]
pub enum Resolved {
    Stage(Command),
    Pipeline { args: PipelineArgs, config: PipelineConfig, out: PathBuf },
}

fn writes_directory(cmd: &Command) -> bool {
    matches!(cmd, Command::Ingest(_) | Command::Analyze(_) | Command::Predict(_) | Command::Synth(_) | Command::PlotData(_))
}

fn out_of(cmd: &Command) -> Option<&Path> {
    Some(match cmd {
        Command::Ingest(a) => &a.out,
        Command::Preprocess(a) => &a.out,
        Command::Embed(a) => &a.out,
        Command::Triplets(a) => &a.out,
        Command::Reduce(a) => &a.out,
        Command::Cluster(a) => &a.out,
        Command::States(a) => &a.out,
        Command::Analyze(a) => &a.out,
        Command::Predict(a) => &a.out,
        Command::Synth(a) => &a.out,
        Command::PlotData(a) => &a.out,
        Command::Pipeline(_) | Command::Replay(_) => return None,
    })
}

fn set_out(cmd: &mut Command, out: PathBuf) {
    match cmd {
        Command::Ingest(a) => a.out = out,
        Command::Preprocess(a) => a.out = out,
        Command::Embed(a) => a.out = out,
        Command::Triplets(a) => a.out = out,
        Command::Reduce(a) => a.out = out,
        Command::Cluster(a) => a.out = out,
        Command::States(a) => a.out = out,
        Command::Analyze(a) => a.out = out,
        Command::Predict(a) => a.out = out,
        Command::Synth(a) => a.out = out,
        Command::PlotData(a) => a.out = out,
        Command::Pipeline(_) | Command::Replay(_) => {}
    }
}

fn stage_inputs(cmd: &Command) -> Vec<PathBuf> {
    let cohort = |d: &Path| [COHORT_FILE, CLINICAL_FILE, META_FILE].iter().map(|f| d.join(f)).collect::<Vec<_>>();
    match cmd {
        Command::Ingest(a) => [Some(a.events.clone()), a.clinical.clone()].into_iter().flatten().collect(),
        Command::Preprocess(a) => cohort(&a.cohort),
        Command::Embed(a) => [Some(a.days.clone()), a.import.clone()].into_iter().flatten().collect(),
        Command::Triplets(a) => vec![a.days.clone(), a.embeddings.clone()],
        Command::Reduce(a) => vec![a.embeddings.clone()],
        Command::Cluster(a) => [a.points.clone(), a.embeddings.clone()].into_iter().flatten().collect(),
        Command::States(a) => vec![a.points.clone(), a.labels.clone()],
        Command::Analyze(a) => vec![a.states.clone(), a.clinical.clone()],
        Command::Predict(a) => vec![a.days.clone(), a.states.clone(), a.clinical.clone()],
        Command::Synth(a) => a.archetypes.iter().cloned().collect(),
        Command::PlotData(a) => [STATE_VALUES_FILE, SIMILARITY_FILE, SUMMARY_FILE].iter().map(|f| a.analysis.join(f)).collect(),
        Command::Pipeline(_) | Command::Replay(_) => Vec::new(),
    }
}

fn stage_seeds(cmd: &Command) -> BTreeMap<String, u64> {
    let seed = match cmd {
        Command::Triplets(a) => Some(a.seed),
        Command::Reduce(a) => Some(a.seed),
        Command::Cluster(a) => Some(a.seed),
        Command::Analyze(a) => Some(a.seed),
        Command::Predict(a) => Some(a.seed),
        Command::Synth(a) => Some(a.seed),
        _ => None,
    };
    seed.into_iter().map(|s| ("root".to_string(), s)).collect()
}

impl Resolved {
    pub fn command(&self) -> Command {
        match self {
            Resolved::Stage(c) => c.clone(),
            Resolved::Pipeline { args, .. } => Command::Pipeline(args.clone()),
        }
    }

    /// Directory the recorded output paths are relative to.
    pub fn output_root(&self) -> PathBuf {
        match self {
            Resolved::Pipeline { out, .. } => out.clone(),
            Resolved::Stage(c) => {
                let out = out_of(c).expect("stage command has an output");
                if writes_directory(c) {
                    out.to_path_buf()
                } else {
                    out.parent().map(Path::to_path_buf).unwrap_or_default()
                }
            }
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Resolved::Pipeline { out, .. } => out.join(MANIFEST_FILE),
            Resolved::Stage(c) => {
                let out = out_of(c).expect("stage command has an output");
                if writes_directory(c) {
                    out.join(MANIFEST_FILE)
                } else {
                    sidecar(out, MANIFEST_FILE)
                }
            }
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Resolved::Stage(c) => stage_inputs(c),
            Resolved::Pipeline { config, .. } => config.inputs(),
        }
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        match self {
            Resolved::Stage(c) => stage_seeds(c),
            Resolved::Pipeline { config, .. } => config.seeds(),
        }
    }

    fn config(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Resolved::Stage(c) => serde_json::to_value(c)?,
            Resolved::Pipeline { config, .. } => serde_json::to_value(config)?,
        })
    }

    /// Runs the command without writing a manifest.
    pub fn execute(&self) -> Result<Vec<PathBuf>> {
        match self {
            Resolved::Pipeline { config, out, .. } => run_pipeline(config, out),
            Resolved::Stage(c) => match c {
                Command::Ingest(a) => stages::ingest(a),
                Command::Preprocess(a) => stages::preprocess(a),
                Command::Embed(a) => stages::embed(a),
                Command::Triplets(a) => stages::triplets(a),
                Command::Reduce(a) => stages::reduce(a),
                Command::Cluster(a) => stages::cluster(a),
                Command::States(a) => stages::states(a),
                Command::Analyze(a) => stages::analyze(a),
                Command::Predict(a) => stages::predict(a),
                Command::Synth(a) => stages::synth(a),
                Command::PlotData(a) => plot::emit_plot_data(&a.analysis, &a.out),
                Command::Pipeline(_) | Command::Replay(_) => Err(Error::Config("not a stage command".into())),
            },
        }
    }

    /// Runs the command and writes its manifest next to the outputs.
    pub fn run(&self) -> Result<RunManifest> {
        let started_at = now();
        let inputs = digests(&self.inputs())?;
        let outputs = self.execute()?;
        let root = self.output_root();
        let mut out_digests = BTreeMap::new();
        for p in &outputs {
            let rel = p.strip_prefix(&root).unwrap_or(p);
            out_digests.insert(rel.to_string_lossy().into_owned(), sha256_file(p)?);
        }
        let cmd = self.command();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: cmd.name().into(),
            command: cmd,
            config: self.config()?,
            threads: rayon::current_num_threads(),
            seeds: self.seeds(),
            inputs,
            outputs: out_digests,
            started_at,
            finished_at: now(),
        };
        write_json(&self.manifest_path(), &manifest)?;
        Ok(manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((p.to_string_lossy().into_owned(), sha256_file(p)?))).collect()
}

/// Loads the pipeline config named by `args` and applies flag overrides.
pub fn resolve_pipeline(args: &PipelineArgs) -> Result<Resolved> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    let out = config.out.clone().ok_or_else(|| Error::Config("out: no output directory (set `out` or pass --out)".into()))?;
    Ok(Resolved::Pipeline { args: args.clone(), config, out })
}

/// Outcome of a replay.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub manifest: RunManifest,
    /// Outputs whose digest differs from the recorded one, or that are
    /// missing from one side.
    pub mismatched: Vec<String>,
}

/// Re-runs the command recorded in `manifest`, optionally into another
/// output location, and compares output digests.
pub fn replay(args: &ReplayArgs) -> Result<ReplayReport> {
    let recorded: RunManifest = read_json(&args.manifest)?;
    for (path, digest) in &recorded.inputs {
        let now = sha256_file(Path::new(path))?;
        if &now != digest {
            return Err(Error::invalid(format!("input {path} changed since the recorded run")));
        }
    }
    let resolved = match &recorded.command {
        Command::Pipeline(a) => {
            let mut config: PipelineConfig = serde_json::from_value(recorded.config.clone())?;
            if let Some(out) = &args.out {
                config.out = Some(out.clone());
            }
            let out = config.out.clone().ok_or_else(|| Error::Config("manifest has no output directory".into()))?;
            Resolved::Pipeline { args: a.clone(), config, out }
        }
        Command::Replay(_) => return Err(Error::Config("cannot replay a replay".into())),
        other => {
            let mut cmd: Command = serde_json::from_value(recorded.config.clone())?;
            if cmd.name() != other.name() {
                return Err(Error::Config("manifest command and config disagree".into()));
            }
            if let Some(out) = &args.out {
                set_out(&mut cmd, out.clone());
            }
            Resolved::Stage(cmd)
        }
    };
    let manifest = resolved.run()?;
    let mut mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|(k, v)| manifest.outputs.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    mismatched.extend(manifest.outputs.keys().filter(|k| !recorded.outputs.contains_key(*k)).cloned());
    Ok(ReplayReport { manifest, mismatched })
}
