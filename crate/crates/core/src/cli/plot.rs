//! Tidy, long-format tables for external plotting tools. Values are copied
//! verbatim from the analysis files.

use std::path::{Path, PathBuf};

use crate::analyze::{AnalysisSummary, SIMILARITY_FILE, STATE_VALUES_FILE, SUMMARY_FILE};
use crate::io::{csv_bytes, fmt_f64, open, read_json, write_atomic};
use crate::{Error, Result};

pub const STATE_HEATMAP_FILE: &str = "state_heatmap.csv";
pub const SIMILARITY_HEATMAP_FILE: &str = "similarity_heatmap.csv";
pub const SILHOUETTE_TRACE_FILE: &str = "silhouette_trace.csv";

fn rows(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(1, format!("{}: unexpected header", path.display())));
    }
    Ok(rdr.records().collect::<std::result::Result<Vec<_>, _>>()?)
}

fn period(start: &str, end: &str) -> String {
    format!("{start}..{end}")
}

/// Writes the state, similarity and silhouette tables under `out`.
pub fn emit_plot_data(analysis: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let states = rows(&analysis.join(STATE_VALUES_FILE), &["period_start", "period_end", "participant_id", "state", "value"])?;
    let sims = rows(
        &analysis.join(SIMILARITY_FILE),
        &["period_start", "period_end", "participant_i", "participant_j", "similarity"],
    )?;
    let summary: AnalysisSummary = read_json(&analysis.join(SUMMARY_FILE))?;

    let header = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let state_csv = csv_bytes(
        &header(&["period", "participant", "state", "value"]),
        states.iter().map(|r| vec![period(&r[0], &r[1]), r[2].to_string(), r[3].to_string(), r[4].to_string()]),
    )?;
    let sim_csv = csv_bytes(
        &header(&["period", "i", "j", "similarity"]),
        sims.iter().map(|r| vec![period(&r[0], &r[1]), r[2].to_string(), r[3].to_string(), r[4].to_string()]),
    )?;
    let sil_csv = csv_bytes(
        &header(&["period", "k", "silhouette"]),
        summary.clusterings.iter().flat_map(|c| {
            c.silhouettes.iter().map(move |(k, s)| vec![c.period.to_string(), k.to_string(), fmt_f64(*s)])
        }),
    )?;
    let files = [(STATE_HEATMAP_FILE, state_csv), (SIMILARITY_HEATMAP_FILE, sim_csv), (SILHOUETTE_TRACE_FILE, sil_csv)];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
