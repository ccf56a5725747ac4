//! Synthetic cohorts with planted behavioural archetypes.
//!
//! Each archetype is a Markov chain over locations stepped once per 20-minute
//! slot, with an optional wake/sleep schedule that produces sleep-mat
//! markers. Every participant has a primary archetype (round-robin) and a
//! personal mixing rate; each day is drawn from another archetype with that
//! probability. Clinical means are the archetype profiles weighted by the
//! share of days a participant actually spent in each archetype, so scores are
//! a noisy linear function of behaviour.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{clinical_to_csv, events_to_csv, ClinicalRecord, SensorEvent, Vocabulary, BED_IN, BED_OUT, NOWHERE};
use crate::io::{csv_bytes, write_atomic};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

const SLOT_SECONDS: u32 = 1200;
const SLOTS: u32 = 72;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub wake_hour: f64,
    pub sleep_hour: f64,
    /// Uniform jitter applied to both times, in minutes.
    #[serde(default = "default_jitter")]
    pub jitter_minutes: f64,
}

fn default_jitter() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalProfile {
    pub mmse_mean: f64,
    pub mmse_sd: f64,
    pub adas_mean: f64,
    pub adas_sd: f64,
    /// Expected change over the year before the current assessment.
    #[serde(default)]
    pub mmse_drift: f64,
    #[serde(default)]
    pub adas_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub id: String,
    /// Chain states; rooms of the vocabulary or `nowhere` (away, no events).
    pub locations: Vec<String>,
    /// Row-stochastic slot-to-slot transition probabilities.
    pub transitions: Vec<Vec<f64>>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    /// Mean detections per occupied slot (at least 1).
    pub events_per_slot: f64,
    pub clinical: ClinicalProfile,
}

impl ArchetypeSpec {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("archetype `{}`: {m}", self.id)));
        let n = self.locations.len();
        if n == 0 {
            return bad("no locations".into());
        }
        let mut seen = BTreeSet::new();
        for l in &self.locations {
            if l != NOWHERE && !vocab.rooms().contains(l) {
                return bad(format!("location `{l}` is not in the vocabulary"));
            }
            if !seen.insert(l) {
                return bad(format!("duplicate location `{l}`"));
            }
        }
        if self.transitions.len() != n || self.transitions.iter().any(|r| r.len() != n) {
            return bad(format!("transition matrix must be {n}x{n}"));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return bad(format!("row {i} has a negative or non-finite probability"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("row {i} sums to {s}"));
            }
        }
        if !(self.events_per_slot >= 1.0) {
            return bad("events_per_slot must be at least 1".into());
        }
        if let Some(s) = &self.schedule {
            if !vocab.sleep_mat() {
                return bad("a schedule needs a sleep-mat vocabulary".into());
            }
            if !(0.0 < s.wake_hour && s.wake_hour < s.sleep_hour && s.sleep_hour < 24.0) {
                return bad("schedule must satisfy 0 < wake_hour < sleep_hour < 24".into());
            }
            if !(s.jitter_minutes >= 0.0) || s.jitter_minutes / 60.0 >= s.wake_hour.min(24.0 - s.sleep_hour) {
                return bad("schedule jitter must keep both times inside the day".into());
            }
        }
        let c = &self.clinical;
        if !(c.mmse_sd >= 0.0 && c.adas_sd >= 0.0) {
            return bad("clinical standard deviations must be non-negative".into());
        }
        Ok(())
    }

    /// Stationary distribution of the chain by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.locations.len();
        let mut p = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, t) in row.iter().enumerate() {
                    next[j] += p[i] * t;
                }
            }
            let step: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if step < 1e-15 {
                break;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSet {
    /// Upper bound of each participant's rate of days drawn from another
    /// archetype.
    #[serde(default = "default_mixing")]
    pub day_mixing: f64,
    pub archetypes: Vec<ArchetypeSpec>,
}

fn default_mixing() -> f64 {
    0.3
}

impl ArchetypeSet {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::Config("at least one archetype is required".into()));
        }
        if !(0.0..=1.0).contains(&self.day_mixing) {
            return Err(Error::Config(format!("day_mixing must lie in [0, 1], got {}", self.day_mixing)));
        }
        let mut ids = BTreeSet::new();
        for a in &self.archetypes {
            if !ids.insert(&a.id) {
                return Err(Error::Config(format!("duplicate archetype id `{}`", a.id)));
            }
            a.validate(vocab)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("archetypes: {}: {}", e.path(), e.inner())))
    }
}

/// Chain whose rows mix "stay put" with a common target distribution; the
/// target is then the stationary distribution.
pub fn sticky_chain(target: &[f64], stay: f64) -> Vec<Vec<f64>> {
    (0..target.len())
        .map(|i| target.iter().enumerate().map(|(j, t)| (1.0 - stay) * t + if i == j { stay } else { 0.0 }).collect())
        .collect()
}

/// Kitchen-heavy, lounge-heavy and low-activity archetypes.
pub fn default_archetypes() -> ArchetypeSet {
    let locations: Vec<String> = ["kitchen", "lounge", "bedroom", "bathroom", "hallway", NOWHERE].map(String::from).to_vec();
    let day = |wake: f64, sleep: f64| Some(Schedule { wake_hour: wake, sleep_hour: sleep, jitter_minutes: 20.0 });
    let profile = |mmse: f64, adas: f64, mmse_drift: f64, adas_drift: f64| ClinicalProfile {
        mmse_mean: mmse,
        mmse_sd: 2.0,
        adas_mean: adas,
        adas_sd: 3.0,
        mmse_drift,
        adas_drift,
    };
    ArchetypeSet {
        day_mixing: 0.3,
        archetypes: vec![
            ArchetypeSpec {
                id: "kitchen-heavy".into(),
                locations: locations.clone(),
                transitions: sticky_chain(&[0.60, 0.08, 0.10, 0.09, 0.08, 0.05], 0.5),
                schedule: day(7.0, 22.0),
                events_per_slot: 3.0,
                clinical: profile(26.0, 12.0, -0.5, 1.0),
            },
            ArchetypeSpec {
                id: "lounge-heavy".into(),
                locations: locations.clone(),
                transitions: sticky_chain(&[0.08, 0.60, 0.10, 0.09, 0.08, 0.05], 0.5),
                schedule: day(7.5, 22.5),
                events_per_slot: 3.0,
                clinical: profile(23.0, 18.0, -1.5, 2.5),
            },
            ArchetypeSpec {
                id: "low-activity".into(),
                locations,
                transitions: sticky_chain(&[0.06, 0.07, 0.40, 0.07, 0.05, 0.35], 0.5),
                schedule: day(9.0, 20.0),
                events_per_slot: 1.5,
                clinical: profile(19.0, 26.0, -2.5, 4.0),
            },
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub participants: usize,
    pub days: usize,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participants: 30,
            days: 180,
            start_date: NaiveDate::from_ymd_opt(2023, 8, 1).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub participant_id: String,
    pub date: NaiveDate,
    /// Archetype the day was drawn from.
    pub archetype: String,
    pub primary_archetype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub events: Vec<SensorEvent>,
    pub clinical: Vec<ClinicalRecord>,
    pub truth: Vec<TruthRow>,
}

pub fn participant_id(index: usize) -> String {
    format!("P{:03}", index + 1)
}

fn epoch_seconds(date: NaiveDate) -> i64 {
    (date - NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch")).num_seconds()
}

/// Detections at random seconds inside `[from, to)`.
fn emit(rng: &mut ChaCha8Rng, arch: &ArchetypeSpec, location: &str, from: u32, to: u32, base: i64, pid: &str, out: &mut Vec<SensorEvent>) {
    if from >= to || location == NOWHERE {
        return;
    }
    let extra = if arch.events_per_slot > 1.0 {
        Poisson::new(arch.events_per_slot - 1.0).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    let mut seconds: Vec<u32> = (0..1 + extra).map(|_| rng.gen_range(from..to)).collect();
    seconds.sort_unstable();
    seconds.dedup();
    out.extend(seconds.into_iter().map(|s| SensorEvent {
        participant_id: pid.to_string(),
        timestamp: base + i64::from(s),
        location: location.to_string(),
    }));
}

fn jittered(rng: &mut ChaCha8Rng, hour: f64, jitter_minutes: f64) -> u32 {
    let j = if jitter_minutes > 0.0 { rng.gen_range(-jitter_minutes..jitter_minutes) } else { 0.0 };
    ((hour * 60.0 + j) * 60.0).round() as u32
}

/// One day of events drawn from `arch`.
pub fn simulate_day(rng: &mut ChaCha8Rng, arch: &ArchetypeSpec, stationary: &[f64], pid: &str, date: NaiveDate) -> Vec<SensorEvent> {
    let base = epoch_seconds(date);
    let (wake, sleep) = match &arch.schedule {
        Some(s) => (jittered(rng, s.wake_hour, s.jitter_minutes), jittered(rng, s.sleep_hour, s.jitter_minutes)),
        None => (0, SLOTS * SLOT_SECONDS),
    };
    let mut out = Vec::new();
    if arch.schedule.is_some() {
        out.push(SensorEvent { participant_id: pid.into(), timestamp: base + i64::from(wake), location: BED_OUT.into() });
    }
    let start = WeightedIndex::new(stationary).expect("valid stationary distribution");
    let mut state = start.sample(rng);
    let rows: Vec<WeightedIndex<f64>> =
        arch.transitions.iter().map(|r| WeightedIndex::new(r).expect("validated row")).collect();
    let first_slot = wake / SLOT_SECONDS;
    for slot in first_slot..SLOTS {
        let (a, b) = (slot * SLOT_SECONDS, (slot + 1) * SLOT_SECONDS);
        if a >= sleep {
            break;
        }
        if slot > first_slot {
            state = rows[state].sample(rng);
        }
        emit(rng, arch, &arch.locations[state], a.max(wake), b.min(sleep), base, pid, &mut out);
    }
    if arch.schedule.is_some() {
        out.push(SensorEvent { participant_id: pid.into(), timestamp: base + i64::from(sleep), location: BED_IN.into() });
    }
    out
}

/// Share-weighted average of the archetype clinical profiles.
fn blend(set: &ArchetypeSet, share: &[f64]) -> ClinicalProfile {
    let avg = |f: fn(&ClinicalProfile) -> f64| set.archetypes.iter().zip(share).map(|(a, w)| w * f(&a.clinical)).sum();
    ClinicalProfile {
        mmse_mean: avg(|c| c.mmse_mean),
        mmse_sd: avg(|c| c.mmse_sd),
        adas_mean: avg(|c| c.adas_mean),
        adas_sd: avg(|c| c.adas_sd),
        mmse_drift: avg(|c| c.mmse_drift),
        adas_drift: avg(|c| c.adas_drift),
    }
}

fn clinical_for(rng: &mut ChaCha8Rng, profile: &ClinicalProfile, pid: &str, start: NaiveDate, end: NaiveDate) -> Vec<ClinicalRecord> {
    let normal = |rng: &mut ChaCha8Rng, m: f64, sd: f64| if sd > 0.0 { Normal::new(m, sd).expect("sd > 0").sample(rng) } else { m };
    let mmse = normal(rng, profile.mmse_mean, profile.mmse_sd).round().clamp(0.0, 30.0);
    let adas = normal(rng, profile.adas_mean, profile.adas_sd).max(0.0);
    let prior_mmse = (mmse - normal(rng, profile.mmse_drift, 1.0)).round().clamp(0.0, 30.0);
    let prior_adas = (adas - normal(rng, profile.adas_drift, 1.5)).max(0.0);
    let age = rng.gen_range(65.0..92.0f64).round();
    let hads_depression = rng.gen_range(0..=14u8);
    let hads_anxiety = rng.gen_range(0..=14u8);
    let gender = if rng.gen_bool(0.5) { "female" } else { "male" };
    let lives_alone = rng.gen_bool(0.4);
    let diagnosis = ["mci", "ad", "mixed"][rng.gen_range(0..3)];
    let record = |date: NaiveDate, mmse: f64, adas: f64, deltas: Option<(f64, f64)>| ClinicalRecord {
        participant_id: pid.to_string(),
        assessment_date: date,
        mmse: mmse as u8,
        adas_cog: (adas * 10.0).round() / 10.0,
        hads_depression,
        hads_anxiety,
        age,
        gender: gender.to_string(),
        lives_alone,
        diagnosis: diagnosis.to_string(),
        delta_mmse: deltas.map(|d| d.0),
        delta_adas: deltas.map(|d| d.1),
    };
    let prior = record(start - Duration::days(365), prior_mmse, prior_adas, None);
    let adas_now = (adas * 10.0).round() / 10.0;
    let adas_then = (prior_adas * 10.0).round() / 10.0;
    let delta_adas = ((adas_now - adas_then) * 10.0).round() / 10.0;
    let current = record(end, mmse, adas, Some((mmse - prior_mmse, delta_adas)));
    vec![prior, current]
}

/// Generates a cohort. Participants are simulated in parallel from their own
/// derived seeds, so the output does not depend on the thread count.
pub fn generate_cohort(cfg: &SynthConfig, set: &ArchetypeSet, vocab: &Vocabulary, seed: u64) -> Result<SynthCohort> {
    set.validate(vocab)?;
    if cfg.participants == 0 || cfg.days == 0 {
        return Err(Error::Config("synth needs at least one participant and one day".into()));
    }
    let stationary: Vec<Vec<f64>> = set.archetypes.iter().map(ArchetypeSpec::stationary).collect();
    let n_arch = set.archetypes.len();
    let parts: Vec<(Vec<SensorEvent>, Vec<ClinicalRecord>, Vec<TruthRow>)> = (0..cfg.participants)
        .into_par_iter()
        .map(|i| {
            let pid = participant_id(i);
            let mut rng = seeded(derive_seed(seed, &format!("participant/{pid}")));
            let primary = i % n_arch;
            let mixing = if set.day_mixing > 0.0 && n_arch > 1 { rng.gen_range(0.0..set.day_mixing) } else { 0.0 };
            let mut events = Vec::new();
            let mut truth = Vec::with_capacity(cfg.days);
            let mut share = vec![0.0; n_arch];
            for d in 0..cfg.days {
                let date = cfg.start_date + Duration::days(d as i64);
                let arch = if mixing > 0.0 && rng.gen_bool(mixing) {
                    let other = rng.gen_range(0..n_arch - 1);
                    if other >= primary { other + 1 } else { other }
                } else {
                    primary
                };
                share[arch] += 1.0 / cfg.days as f64;
                events.extend(simulate_day(&mut rng, &set.archetypes[arch], &stationary[arch], &pid, date));
                truth.push(TruthRow {
                    participant_id: pid.clone(),
                    date,
                    archetype: set.archetypes[arch].id.clone(),
                    primary_archetype: set.archetypes[primary].id.clone(),
                });
            }
            let end = cfg.start_date + Duration::days(cfg.days as i64 - 1);
            let profile = blend(set, &share);
            let clinical = clinical_for(&mut rng, &profile, &pid, cfg.start_date, end);
            (events, clinical, truth)
        })
        .collect();
    let mut cohort = SynthCohort { events: Vec::new(), clinical: Vec::new(), truth: Vec::new() };
    for (e, c, t) in parts {
        cohort.events.extend(e);
        cohort.clinical.extend(c);
        cohort.truth.extend(t);
    }
    Ok(cohort)
}

pub fn truth_to_csv(rows: &[TruthRow]) -> Result<Vec<u8>> {
    let header = ["participant_id", "date", "archetype", "primary_archetype"].map(String::from);
    csv_bytes(
        &header,
        rows.iter().map(|r| vec![r.participant_id.clone(), r.date.to_string(), r.archetype.clone(), r.primary_archetype.clone()]),
    )
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let mut rdr = csv::Reader::from_reader(crate::io::open(path)?);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<TruthRow>, _>>()?)
}

pub const EVENTS_FILE: &str = "events.csv";
pub const CLINICAL_FILE: &str = "clinical.csv";
pub const TRUTH_FILE: &str = "truth.csv";

pub fn write_synth(dir: &Path, cohort: &SynthCohort) -> Result<()> {
    write_atomic(&dir.join(EVENTS_FILE), &events_to_csv(&cohort.events))?;
    write_atomic(&dir.join(CLINICAL_FILE), &clinical_to_csv(&cohort.clinical)?)?;
    write_atomic(&dir.join(TRUTH_FILE), &truth_to_csv(&cohort.truth)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_clinical, parse_events, segment_days, EventFormat};
    use crate::preprocess::{rectify_cohort, RectifyConfig};

    fn small() -> SynthConfig {
        SynthConfig { participants: 6, days: 5, ..Default::default() }
    }

    #[test]
    fn output_passes_ingest_and_is_deterministic() {
        let vocab = Vocabulary::default();
        let set = default_archetypes();
        let a = generate_cohort(&small(), &set, &vocab, 3).unwrap();
        assert_eq!(a, generate_cohort(&small(), &set, &vocab, 3).unwrap());
        assert_ne!(a.events, generate_cohort(&small(), &set, &vocab, 4).unwrap().events);
        let bytes = events_to_csv(&a.events);
        let parsed = parse_events(&bytes[..], EventFormat::Csv, &vocab, false).unwrap();
        assert_eq!(parsed.events.len(), a.events.len());
        let clinical = parse_clinical(&clinical_to_csv(&a.clinical).unwrap()[..]).unwrap();
        assert_eq!(clinical.len(), 12);
        assert_eq!(a.truth.len(), 30);
        assert_eq!(a.truth[0].participant_id, "P001");
        assert_eq!(a.truth[5].primary_archetype, "lounge-heavy");
    }

    #[test]
    fn bedroom_only_archetype() {
        let vocab = Vocabulary::default();
        let mut set = default_archetypes();
        set.day_mixing = 0.0;
        set.archetypes.truncate(1);
        let a = &mut set.archetypes[0];
        a.locations = vec!["bedroom".into()];
        a.transitions = vec![vec![1.0]];
        a.schedule = None;
        let cohort = generate_cohort(&SynthConfig { participants: 2, days: 3, ..Default::default() }, &set, &vocab, 1).unwrap();
        let days = rectify_cohort(&segment_days(cohort.events, 0), &RectifyConfig::default());
        assert_eq!(days.len(), 6);
        assert!(days.iter().flat_map(|d| &d.slots).all(|t| t == "bedroom" || t == NOWHERE));
    }

    #[test]
    fn slot_frequencies_converge_to_stationary() {
        let vocab = Vocabulary::default();
        let mut set = default_archetypes();
        set.day_mixing = 0.0;
        set.archetypes.truncate(1);
        set.archetypes[0].schedule = None;
        let cfg = SynthConfig { participants: 30, days: 90, ..Default::default() };
        let cohort = generate_cohort(&cfg, &set, &vocab, 5).unwrap();
        let days = rectify_cohort(&segment_days(cohort.events, 0), &RectifyConfig::default());
        // Days without a single detection are absent from the cohort.
        let total = (cfg.participants * cfg.days * 72) as f64;
        let present: usize = days.iter().map(|d| d.slots.len()).sum();
        let arch = &set.archetypes[0];
        for (loc, p) in arch.locations.iter().zip(arch.stationary()) {
            let count = days.iter().flat_map(|d| &d.slots).filter(|t| *t == loc).count() as f64;
            let count = if loc == NOWHERE { count + total - present as f64 } else { count };
            let freq = count / total;
            assert!((freq - p).abs() / p < 0.05, "{loc}: {freq} vs {p}");
        }
    }

    #[test]
    fn invalid_archetypes_are_rejected() {
        let vocab = Vocabulary::default();
        let mut set = default_archetypes();
        set.archetypes[0].transitions[0][0] += 0.1;
        assert!(set.validate(&vocab).is_err());
        let mut set = default_archetypes();
        set.archetypes[1].locations[0] = "garage".into();
        assert!(set.validate(&vocab).is_err());
        let mut set = default_archetypes();
        set.archetypes.clear();
        assert!(set.validate(&vocab).is_err());
        let err = ArchetypeSet::from_json(r#"{"archetypes": [{"id": "x", "locations": ["kitchen"]}]}"#).unwrap_err();
        assert!(err.to_string().contains("archetypes[0]"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let set = default_archetypes();
        let text = serde_json::to_string(&set).unwrap();
        assert_eq!(ArchetypeSet::from_json(&text).unwrap(), set);
    }

    #[test]
    fn stationary_of_sticky_chain_is_its_target() {
        let set = default_archetypes();
        let p = set.archetypes[0].stationary();
        for (a, b) in p.iter().zip([0.60, 0.08, 0.10, 0.09, 0.08, 0.05]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
