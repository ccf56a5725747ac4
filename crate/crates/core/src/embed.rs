//! Day embeddings, cluster-based triplet selection and the Manhattan triplet
//! loss used to score an embedding corpus.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::ops::RangeInclusive;

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{select_k, KMeansConfig};
use crate::ingest::NOWHERE;
use crate::io::fmt_f64;
use crate::preprocess::{one_hot_encode, DailyActivitySequence};
use crate::rng::seeded;
use crate::{DayKey, Error, Result};

pub const DEFAULT_DIM: usize = 384;
/// Time-of-day bands used by the occupancy histogram.
pub const BANDS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub participant_id: String,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn key(&self) -> DayKey {
        DayKey::new(self.participant_id.clone(), self.date)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic stand-in for a learned sentence encoder.
///
/// Layout of a `dim`-vector over an alphabet of `A` tokens:
/// `[0, A)` slot share per token, `[A, 7A)` per-token occupancy in six
/// four-hour bands, `[7A, dim)` hashed token-bigram counts. Each block sums
/// to one before the whole vector is scaled to unit L2 norm.
#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    alphabet: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl BuiltinEmbedder {
    pub fn new(alphabet: Vec<String>, dim: usize) -> Result<Self> {
        let fixed = alphabet.len() * (1 + BANDS);
        if dim < fixed {
            return Err(Error::Config(format!(
                "embedding dimension {dim} cannot hold the {fixed} count and band coordinates"
            )));
        }
        let index = alphabet
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self { alphabet, index, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    /// Index of `token`'s count coordinate.
    pub fn count_coordinate(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Embeds one day; the boolean flags an all-zero (unnormalizable) vector.
    pub fn embed(&self, seq: &DailyActivitySequence) -> Result<(EmbeddingVector, bool)> {
        let a = self.alphabet.len();
        let n = seq.slots.len();
        let mut v = vec![0.0; self.dim];
        let ids: Vec<usize> = seq
            .slots
            .iter()
            .map(|t| {
                self.index
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("{}: unknown token `{t}`", seq.key())))
            })
            .collect::<Result<_>>()?;
        if n > 0 {
            let band_slots = n.div_ceil(BANDS) as f64;
            for (slot, &id) in ids.iter().enumerate() {
                v[id] += 1.0 / n as f64;
                let band = slot * BANDS / n;
                v[a + id * BANDS + band] += 1.0 / (band_slots * BANDS as f64);
            }
        }
        let hashed = self.dim - a * (1 + BANDS);
        if hashed > 0 && n > 1 {
            let w = 1.0 / (n - 1) as f64;
            for pair in seq.slots.windows(2) {
                let key = format!("{}\u{1f}{}", pair[0], pair[1]);
                let bucket = (fnv1a(key.as_bytes()) % hashed as u64) as usize;
                v[a * (1 + BANDS) + bucket] += w;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let degenerate = norm == 0.0;
        if !degenerate {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok((
            EmbeddingVector {
                participant_id: seq.participant_id.clone(),
                date: seq.date,
                values: v,
            },
            degenerate,
        ))
    }

    /// Embeds a corpus in parallel; returns the vectors and the count of
    /// degenerate (zero) vectors.
    pub fn embed_all(&self, days: &[DailyActivitySequence]) -> Result<(Vec<EmbeddingVector>, usize)> {
        let out: Vec<(EmbeddingVector, bool)> = days
            .par_iter()
            .map(|d| self.embed(d))
            .collect::<Result<_>>()?;
        let degenerate = out.iter().filter(|(_, d)| *d).count();
        Ok((out.into_iter().map(|(v, _)| v).collect(), degenerate))
    }
}

/// Reads `participant_id,date,v0..v{d-1}` and rejects ragged rows and
/// non-finite entries.
pub fn import_embeddings<R: Read>(reader: R) -> Result<Vec<EmbeddingVector>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("participant_id") || headers.get(1) != Some("date") {
        return Err(Error::parse(1, "header must start with participant_id,date"));
    }
    let dim = headers.len().saturating_sub(2);
    if dim == 0 {
        return Err(Error::parse(1, "no vector columns"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != dim + 2 {
            return Err(Error::parse(
                line,
                format!("dimension mismatch: expected {dim} values, found {}", row.len().saturating_sub(2)),
            ));
        }
        let date = NaiveDate::parse_from_str(&row[1], "%Y-%m-%d")
            .map_err(|e| Error::parse(line, format!("date: {e}")))?;
        let values = row
            .iter()
            .skip(2)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(line, format!("non-finite or malformed value {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(EmbeddingVector {
            participant_id: row[0].to_string(),
            date,
            values,
        });
    }
    Ok(out)
}

pub fn embeddings_to_csv(vectors: &[EmbeddingVector]) -> Result<Vec<u8>> {
    let dim = vectors.first().map_or(0, |v| v.values.len());
    if vectors.iter().any(|v| v.values.len() != dim) {
        return Err(Error::invalid("embedding corpus has ragged dimensions"));
    }
    let mut header = vec!["participant_id".to_string(), "date".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    let rows = vectors.iter().map(|v| {
        let mut row = vec![v.participant_id.clone(), v.date.to_string()];
        row.extend(v.values.iter().map(|x| fmt_f64(*x)));
        row
    });
    crate::io::csv_bytes(&header, rows)
}

/// Anchor, positive and negative day of one training triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: DayKey,
    pub positive: DayKey,
    pub negative: DayKey,
}

/// A day with its one-hot pre-cluster label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDay {
    pub key: DayKey,
    pub cluster: usize,
}

/// Positive-pair rule: same participant, at most `window_days` apart (and not
/// the same day), same cluster.
pub fn is_positive(anchor: &LabeledDay, other: &LabeledDay, window_days: i64) -> bool {
    anchor.key.participant_id == other.key.participant_id
        && anchor.key.date != other.key.date
        && (anchor.key.date - other.key.date).num_days().abs() <= window_days
        && anchor.cluster == other.cluster
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSelection {
    pub triplets: Vec<Triplet>,
    /// Days that have no eligible positive (or no eligible negative).
    pub skipped_anchors: usize,
    pub eligible_anchors: usize,
}

/// Samples `n` triplets: the anchor uniformly among days with at least one
/// positive, the positive uniformly among its positives, the negative
/// uniformly among all other days that are not positives.
pub fn select_triplets(days: &[LabeledDay], window_days: i64, n: usize, seed: u64) -> Result<TripletSelection> {
    if n == 0 {
        return Err(Error::invalid("number of triplets must be positive"));
    }
    if days.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let mut by_participant: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in days.iter().enumerate() {
        by_participant.entry(d.key.participant_id.as_str()).or_default().push(i);
    }
    // positives[i] is sorted by corpus index.
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); days.len()];
    for members in by_participant.values() {
        for &i in members {
            positives[i] = members
                .iter()
                .copied()
                .filter(|&j| is_positive(&days[i], &days[j], window_days))
                .collect();
        }
    }
    let eligible: Vec<usize> = (0..days.len())
        .filter(|&i| !positives[i].is_empty() && positives[i].len() + 1 < days.len())
        .collect();
    let skipped_anchors = days.len() - eligible.len();
    let mut triplets = Vec::new();
    if !eligible.is_empty() {
        let mut rng = seeded(seed);
        triplets.reserve(n);
        for _ in 0..n {
            let a = eligible[rng.gen_range(0..eligible.len())];
            let pos = &positives[a];
            let p = pos[rng.gen_range(0..pos.len())];
            let neg = loop {
                let c = rng.gen_range(0..days.len());
                if c != a && pos.binary_search(&c).is_err() {
                    break c;
                }
            };
            triplets.push(Triplet {
                anchor: days[a].key.clone(),
                positive: days[p].key.clone(),
                negative: days[neg].key.clone(),
            });
        }
    }
    Ok(TripletSelection {
        triplets,
        skipped_anchors,
        eligible_anchors: eligible.len(),
    })
}

pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `max(0, d1(a, p) - d1(a, n) + margin)` with Manhattan distance `d1`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::invalid("triplet vectors differ in dimension"));
    }
    Ok((manhattan(anchor, positive) - manhattan(anchor, negative) + margin).max(0.0))
}

/// Mean triplet loss over a corpus.
pub fn corpus_loss(triplets: &[Triplet], vectors: &HashMap<DayKey, Vec<f64>>, margin: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets to evaluate"));
    }
    let get = |k: &DayKey| {
        vectors
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no embedding for {k}")))
    };
    let mut total = 0.0;
    for t in triplets {
        total += triplet_loss(get(&t.anchor)?, get(&t.positive)?, get(&t.negative)?, margin)?;
    }
    Ok(total / triplets.len() as f64)
}

/// k-means on one-hot encoded days, k chosen by silhouette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreClustering {
    pub k: usize,
    pub silhouettes: Vec<(usize, f64)>,
    pub labels: Vec<usize>,
}

pub fn pre_cluster(
    days: &[DailyActivitySequence],
    alphabet: &[String],
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<PreClustering> {
    let vectors: Vec<Vec<f64>> = days
        .iter()
        .map(|d| one_hot_encode(d, alphabet).map(|h| h.vector))
        .collect::<Result<_>>()?;
    let sel = select_k(&vectors, k_range, &KMeansConfig::new(2, seed))?;
    Ok(PreClustering {
        k: sel.best_k,
        silhouettes: sel.scores,
        labels: sel.model.assignments,
    })
}

/// Summary written by the `triplets` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletReport {
    pub requested: usize,
    pub generated: usize,
    pub skipped_anchors: usize,
    pub eligible_anchors: usize,
    pub window_days: i64,
    pub margin: f64,
    pub mean_loss: Option<f64>,
    pub onehot_k: usize,
    pub onehot_silhouettes: Vec<(usize, f64)>,
    pub seed: u64,
}

/// Whether `token` counts as presence (not the empty-window token).
pub fn is_presence(token: &str) -> bool {
    token != NOWHERE
}
