//! Latent behavioural state vectors from in-home location sensor streams.
//!
//! The pipeline turns raw room-level detections into one short, interpretable
//! vector per participant and period:
//!
//! 1. [`ingest`] parses and validates events and clinical records and splits
//!    them into participant-days.
//! 2. [`preprocess`] rectifies each day into fixed windows (72 slots of 20
//!    minutes by default) and renders it as a token sequence.
//! 3. [`embed`] maps days to vectors and implements cluster-based triplet
//!    selection and the Manhattan triplet loss.
//! 4. [`reduce`] projects embeddings to 2D with exact t-SNE.
//! 5. [`cluster`] finds latent states with k-means and silhouette scoring.
//! 6. [`transition`] builds per-participant transition matrices between latent
//!    states and reduces them to damped PageRank state vectors.
//! 7. [`analyze`] and [`predict`] relate state vectors to clinical scores.
//!
//! [`synth`] generates cohorts with planted structure and [`cli`] chains the
//! stages behind the `latent-states` binary.

pub mod analyze;
pub mod cli;
pub mod cluster;
pub mod embed;
mod error;
pub mod ingest;
pub mod io;
pub mod period;
pub mod predict;
pub mod preprocess;
pub mod reduce;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod transition;

pub use error::{Error, Result};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Identifies one participant-day across every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayKey {
    pub participant_id: String,
    pub date: NaiveDate,
}

impl DayKey {
    pub fn new(participant_id: impl Into<String>, date: NaiveDate) -> Self {
        Self {
            participant_id: participant_id.into(),
            date,
        }
    }
}

impl std::fmt::Display for DayKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.participant_id, self.date)
    }
}
