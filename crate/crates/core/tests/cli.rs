use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_latent-states");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).env_remove("LATENT_STATES_THREADS").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const CONFIG: &str = r#"seed = 11
out = "run"

[input]
events = "syn/events.csv"
clinical = "syn/clinical.csv"

[reduce]
perplexity = 15
iterations = 300

[cluster]
k = 4

[triplets]
enabled = true
n = 2000

[predict]
windows = [7, 30]
bootstrap_resamples = 100
"#;

/// A synthetic cohort plus a finished pipeline run in `run/`.
fn pipeline_run() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--participants", "6", "--days", "40", "--seed", "3", "--out", "syn"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    let out = run(&["--threads", "1", "pipeline", "--config", "cfg.toml"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    (header, rdr.records().map(Result::unwrap).collect())
}

#[test]
fn pipeline_writes_every_declared_output() {
    let dir = pipeline_run();
    let run_dir = dir.path().join("run");
    let m = manifest(&run_dir.join("manifest.json"));
    assert_eq!(m["subcommand"], "pipeline");
    assert_eq!(m["threads"], 1);
    let outputs: BTreeSet<String> = m["outputs"].as_object().unwrap().keys().cloned().collect();
    for expected in [
        "days.jsonl",
        "embeddings.csv",
        "triplets.json",
        "points.csv",
        "points.kl_trace.csv",
        "labels.csv",
        "labels.model.json",
        "states.csv",
        "window_states.csv",
        "predict/report.csv",
        "predict/report.json",
    ] {
        assert!(outputs.contains(expected), "{expected} missing from {outputs:?}");
    }
    for rel in &outputs {
        let path = run_dir.join(rel);
        let bytes = fs::read(&path).unwrap_or_else(|e| panic!("{rel}: {e}"));
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let (header, rows) = csv_rows(&path);
                assert!(!header.is_empty() && !rows.is_empty(), "{rel} is empty");
                assert!(rows.iter().all(|r| r.len() == header.len()), "{rel} is ragged");
            }
            Some("json") => {
                serde_json::from_slice::<serde_json::Value>(&bytes).unwrap_or_else(|e| panic!("{rel}: {e}"));
            }
            Some("jsonl") => {
                for line in String::from_utf8(bytes).unwrap().lines() {
                    serde_json::from_str::<serde_json::Value>(line).unwrap();
                }
            }
            _ => {}
        }
    }
    let (_, labels) = csv_rows(&run_dir.join("labels.csv"));
    assert_eq!(labels.len(), 6 * 40);
    assert!(labels.iter().all(|r| r[2].parse::<usize>().unwrap() < 4));
}

#[test]
fn replay_reproduces_outputs_and_flags_mismatches() {
    let dir = pipeline_run();
    let out = run(&["--threads", "1", "replay", "--manifest", "run/manifest.json", "--out", "again"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = manifest(&dir.path().join("run/manifest.json"));
    for rel in m["outputs"].as_object().unwrap().keys() {
        assert_eq!(fs::read(dir.path().join("run").join(rel)).unwrap(), fs::read(dir.path().join("again").join(rel)).unwrap(), "{rel}");
    }

    let mut tampered = m.clone();
    tampered["outputs"]["labels.csv"] = "0".repeat(64).into();
    fs::write(dir.path().join("tampered.json"), serde_json::to_vec(&tampered).unwrap()).unwrap();
    let out = run(&["--threads", "1", "replay", "--manifest", "tampered.json", "--out", "third"], dir.path());
    assert_eq!(code(&out), 8, "{}", stderr(&out));
    assert!(stderr(&out).contains("labels.csv differs"));

    fs::write(dir.path().join("syn/events.csv"), "participant_id,timestamp,location\n").unwrap();
    let out = run(&["replay", "--manifest", "run/manifest.json", "--out", "fourth"], dir.path());
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("changed since the recorded run"));
}

#[test]
fn stage_manifest_sits_next_to_file_output() {
    let dir = pipeline_run();
    let out = run(
        &["cluster", "--points", "run/points.csv", "--k", "3", "--seed", "1", "--out", "solo/labels.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = manifest(&dir.path().join("solo/labels.manifest.json"));
    assert_eq!(m["subcommand"], "cluster");
    assert!(m["outputs"].get("labels.csv").is_some());
    assert!(m["inputs"].as_object().unwrap().keys().any(|k| k.ends_with("points.csv")));
}

#[test]
fn plot_data_reshapes_analysis_tables() {
    let dir = pipeline_run();
    let out = run(&["plot-data", "--analysis", "run/analysis", "--out", "plots"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plots = dir.path().join("plots");

    let (header, states) = csv_rows(&plots.join("state_heatmap.csv"));
    assert_eq!(header, ["period", "participant", "state", "value"]);
    let periods: BTreeSet<&str> = states.iter().map(|r| r.get(0).unwrap()).collect();
    let participants: BTreeSet<&str> = states.iter().map(|r| r.get(1).unwrap()).collect();
    let (p, t) = (participants.len(), periods.len());
    assert_eq!(p, 6);
    assert_eq!(states.len(), 4 * p * t);

    let (_, sims) = csv_rows(&plots.join("similarity_heatmap.csv"));
    assert_eq!(sims.len(), t * p * p);

    let (_, source) = csv_rows(&dir.path().join("run/analysis/state_values.csv"));
    let original: BTreeMap<(String, String, String), String> = source
        .iter()
        .map(|r| ((format!("{}..{}", &r[0], &r[1]), r[2].to_string(), r[3].to_string()), r[4].to_string()))
        .collect();
    for r in &states {
        assert_eq!(original[&(r[0].to_string(), r[1].to_string(), r[2].to_string())], &r[3]);
    }

    let (header, trace) = csv_rows(&plots.join("silhouette_trace.csv"));
    assert_eq!(header, ["period", "k", "silhouette"]);
    assert!(trace.iter().all(|r| (-1.0..=1.0).contains(&r[2].parse::<f64>().unwrap())));
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\n[input]\nevents = \"x\"\n").unwrap();
    let out = run(&["pipeline", "--config", "bad.toml", "--out", "o"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("input: missing field `clinical`"), "{}", stderr(&out));

    fs::write(dir.path().join("typo.toml"), "seed = 1\n[reduce]\nperplexty = 5\n").unwrap();
    let out = run(&["pipeline", "--config", "typo.toml", "--out", "o"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("perplexty"), "{}", stderr(&out));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run(&["pipeline", "--config", "absent.toml"], d);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    write(d, "bad.csv", "participant_id,timestamp,location\nP1,notatime,kitchen\n");
    let out = run(&["ingest", "--events", "bad.csv", "--out", "cohort"], d);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains('2'), "line number expected: {}", stderr(&out));

    write(d, "emb.csv", "participant_id,date,e0,e1\nP1,2023-01-01,0,1\nP1,2023-01-02,1,0\nP1,2023-01-03,1,1\n");
    let out = run(&["reduce", "--embeddings", "emb.csv", "--seed", "1", "--out", "points.csv"], d);
    assert_eq!(code(&out), 5, "{}", stderr(&out));

    let out = run(&["--threads", "0", "synth", "--seed", "1", "--out", "s"], d);
    assert_eq!(code(&out), 2);

    let out = run(&["cluster", "--points", "p.csv", "--embeddings", "e.csv", "--seed", "1", "--out", "l.csv"], d);
    assert_eq!(code(&out), 2, "clap usage errors exit with 2");
}

#[test]
fn synth_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (threads, out) in [("1", "a"), ("4", "b")] {
        let o = run(&["--threads", threads, "synth", "--participants", "4", "--days", "10", "--seed", "9", "--out", out], d);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["events.csv", "clinical.csv", "truth.csv", "archetypes.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}
