//! Parsing, validation and day segmentation of raw sensor events and clinical
//! records.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::{DayKey, Error, Result};

/// Slot token for a window with no detections.
pub const NOWHERE: &str = "nowhere";
/// Slot token for time spent on the sleep mat.
pub const SLEEP: &str = "sleep";
pub const BED_IN: &str = "bed-in";
pub const BED_OUT: &str = "bed-out";

/// Location tokens accepted in raw events.
///
/// Rooms come from configuration. When `sleep_mat` is set the `bed-in` and
/// `bed-out` markers are accepted too; they never appear in rectified days,
/// where in-bed spans become the `sleep` token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    rooms: Vec<String>,
    sleep_mat: bool,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            rooms: ["bathroom", "bedroom", "hallway", "kitchen", "lounge"]
                .map(String::from)
                .to_vec(),
            sleep_mat: true,
        }
    }
}

impl Vocabulary {
    pub fn new(rooms: Vec<String>, sleep_mat: bool) -> Result<Self> {
        if rooms.is_empty() {
            return Err(Error::Config("location vocabulary is empty".into()));
        }
        let mut seen = HashSet::new();
        for room in &rooms {
            if [NOWHERE, SLEEP, BED_IN, BED_OUT].contains(&room.as_str()) {
                return Err(Error::Config(format!("`{room}` is reserved")));
            }
            if room.is_empty() || room.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid location token {room:?}")));
            }
            if !seen.insert(room.as_str()) {
                return Err(Error::Config(format!("duplicate location `{room}`")));
            }
        }
        Ok(Self { rooms, sleep_mat })
    }

    pub fn rooms(&self) -> &[String] {
        &self.rooms
    }

    pub fn sleep_mat(&self) -> bool {
        self.sleep_mat
    }

    /// Whether `token` may appear in a raw event.
    pub fn accepts(&self, token: &str) -> bool {
        self.rooms.iter().any(|r| r == token)
            || (self.sleep_mat && (token == BED_IN || token == BED_OUT))
    }

    /// Tokens that can appear in a rectified day, in a fixed order: rooms,
    /// then `sleep` (with a sleep mat), then `nowhere`.
    pub fn slot_alphabet(&self) -> Vec<String> {
        let mut alphabet = self.rooms.clone();
        if self.sleep_mat {
            alphabet.push(SLEEP.to_string());
        }
        alphabet.push(NOWHERE.to_string());
        alphabet
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub participant_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub location: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Jsonl,
}

impl EventFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => EventFormat::Jsonl,
            _ => EventFormat::Csv,
        }
    }
}

/// Events that parsed, plus the rows skipped in lenient mode.
#[derive(Debug, Default, Clone)]
pub struct ParsedEvents {
    pub events: Vec<SensorEvent>,
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

fn validate_event(
    participant_id: Option<&str>,
    timestamp: Option<&str>,
    location: Option<&str>,
    vocab: &Vocabulary,
) -> std::result::Result<SensorEvent, String> {
    let participant_id = match participant_id.map(str::trim) {
        Some(p) if !p.is_empty() => p.to_string(),
        _ => return Err("missing field `participant_id`".into()),
    };
    let raw_ts = match timestamp.map(str::trim) {
        Some(t) if !t.is_empty() => t,
        _ => return Err("missing field `timestamp`".into()),
    };
    let timestamp: i64 = raw_ts
        .parse()
        .ok()
        .filter(|t| *t >= 0)
        .ok_or_else(|| format!("malformed timestamp {raw_ts:?}"))?;
    let location = match location.map(str::trim) {
        Some(l) if !l.is_empty() => l,
        _ => return Err("missing field `location`".into()),
    };
    if !vocab.accepts(location) {
        return Err(format!("unknown location token `{location}`"));
    }
    Ok(SensorEvent {
        participant_id,
        timestamp,
        location: location.to_string(),
    })
}

/// Parses an event stream. In strict mode the first bad row aborts with its
/// 1-based line number (the CSV header is line 1); in lenient mode bad rows
/// are skipped and reported.
pub fn parse_events<R: Read>(
    reader: R,
    format: EventFormat,
    vocab: &Vocabulary,
    lenient: bool,
) -> Result<ParsedEvents> {
    let mut out = ParsedEvents::default();
    let mut handle = |line: usize, row: std::result::Result<SensorEvent, String>| match row {
        Ok(ev) => {
            out.events.push(ev);
            Ok(())
        }
        Err(reason) if lenient => {
            out.skipped.push(SkippedRow { line, reason });
            Ok(())
        }
        Err(reason) => Err(Error::parse(line, reason)),
    };
    match format {
        EventFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(reader);
            let headers = match rdr.headers() {
                Ok(h) => h.clone(),
                Err(e) if e.is_io_error() => return Err(e.into()),
                Err(e) => return Err(Error::parse(1, e.to_string())),
            };
            if headers.is_empty() {
                return Ok(out);
            }
            let col = |name: &str| headers.iter().position(|h| h == name);
            let (pid, ts, loc) = match (col("participant_id"), col("timestamp"), col("location")) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::parse(
                        1,
                        "header must contain participant_id,timestamp,location",
                    ))
                }
            };
            for record in rdr.records() {
                let record = match record {
                    Ok(r) => r,
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line() as usize);
                        handle(line, Err(e.to_string()))?;
                        continue;
                    }
                };
                let line = record.position().map_or(0, |p| p.line() as usize);
                handle(line, validate_event(record.get(pid), record.get(ts), record.get(loc), vocab))?;
            }
        }
        EventFormat::Jsonl => {
            for (i, line) in std::io::BufReader::new(reader).lines().enumerate() {
                let line_no = i + 1;
                let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row = match serde_json::from_str::<serde_json::Value>(&line) {
                    Ok(v) => {
                        let field = |k: &str| match v.get(k) {
                            Some(serde_json::Value::String(s)) => Some(s.clone()),
                            Some(serde_json::Value::Number(n)) => Some(n.to_string()),
                            _ => None,
                        };
                        validate_event(
                            field("participant_id").as_deref(),
                            field("timestamp").as_deref(),
                            field("location").as_deref(),
                            vocab,
                        )
                    }
                    Err(e) => Err(format!("invalid JSON: {e}")),
                };
                handle(line_no, row)?;
            }
        }
    }
    Ok(out)
}

/// Normalized CSV rendering of events, the inverse of [`parse_events`].
pub fn events_to_csv(events: &[SensorEvent]) -> Vec<u8> {
    let mut out = String::from("participant_id,timestamp,location\n");
    for ev in events {
        out.push_str(&format!("{},{},{}\n", ev.participant_id, ev.timestamp, ev.location));
    }
    out.into_bytes()
}

/// Parses `±HH:MM` into seconds east of UTC.
pub fn parse_utc_offset(s: &str) -> Result<i32> {
    let bad = || Error::Config(format!("invalid UTC offset {s:?}, expected ±HH:MM"));
    let (sign, rest) = match s.as_bytes().first() {
        Some(b'+') => (1, &s[1..]),
        Some(b'-') => (-1, &s[1..]),
        _ => return Err(bad()),
    };
    let (h, m) = rest.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: i32 = h.parse().map_err(|_| bad())?;
    let m: i32 = m.parse().map_err(|_| bad())?;
    if h > 14 || m > 59 {
        return Err(bad());
    }
    Ok(sign * (h * 3600 + m * 60))
}

pub fn format_utc_offset(seconds: i32) -> String {
    let sign = if seconds < 0 { '-' } else { '+' };
    let s = seconds.abs();
    format!("{sign}{:02}:{:02}", s / 3600, (s % 3600) / 60)
}

/// Local calendar date and second-of-day of a UTC timestamp.
pub fn local_day(timestamp: i64, utc_offset: i32) -> (NaiveDate, u32) {
    let local = timestamp + i64::from(utc_offset);
    let day = local.div_euclid(86_400);
    let second = local.rem_euclid(86_400) as u32;
    let date = NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch")
        + chrono::Duration::days(day);
    (date, second)
}

/// One detection inside a participant-day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayEvent {
    pub timestamp: i64,
    pub location: String,
}

/// One line of the cohort index file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRecord {
    pub participant_id: String,
    pub date: NaiveDate,
    pub events: Vec<DayEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub participant_id: String,
    pub assessment_date: NaiveDate,
    pub mmse: u8,
    pub adas_cog: f64,
    pub hads_depression: u8,
    pub hads_anxiety: u8,
    pub age: f64,
    pub gender: String,
    pub lives_alone: bool,
    pub diagnosis: String,
    pub delta_mmse: Option<f64>,
    pub delta_adas: Option<f64>,
}

pub const CLINICAL_HEADER: [&str; 12] = [
    "participant_id",
    "assessment_date",
    "mmse",
    "adas_cog",
    "hads_depression",
    "hads_anxiety",
    "age",
    "gender",
    "lives_alone",
    "diagnosis",
    "delta_mmse",
    "delta_adas",
];

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" => Some(true),
        "false" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Parses a clinical CSV and checks every record's ranges. A record may carry
/// score deltas only when an earlier record of the same participant exists.
pub fn parse_clinical<R: Read>(reader: R) -> Result<Vec<ClinicalRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 12];
    for (slot, name) in cols.iter_mut().zip(CLINICAL_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(1, format!("clinical header is missing `{name}`")))?;
    }
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| row.get(cols[i]).unwrap_or("");
        let need = |i: usize| {
            let v = get(i);
            if v.is_empty() {
                Err(Error::parse(line, format!("missing field `{}`", CLINICAL_HEADER[i])))
            } else {
                Ok(v)
            }
        };
        let num = |i: usize| -> Result<f64> {
            let raw = need(i)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("`{}`: not a number: {raw:?}", CLINICAL_HEADER[i])))
        };
        let score = |i: usize, max: u8| -> Result<u8> {
            let raw = need(i)?;
            raw.parse::<u8>()
                .ok()
                .filter(|v| *v <= max)
                .ok_or_else(|| Error::parse(line, format!("`{}` must be an integer in 0..={max}, got {raw:?}", CLINICAL_HEADER[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if get(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let assessment_date = NaiveDate::parse_from_str(need(1)?, "%Y-%m-%d")
            .map_err(|e| Error::parse(line, format!("`assessment_date`: {e}")))?;
        let adas_cog = num(3)?;
        if adas_cog < 0.0 {
            return Err(Error::parse(line, "`adas_cog` must be non-negative"));
        }
        let lives_alone = parse_bool(need(8)?)
            .ok_or_else(|| Error::parse(line, format!("`lives_alone`: not a boolean: {:?}", get(8))))?;
        records.push(ClinicalRecord {
            participant_id: need(0)?.to_string(),
            assessment_date,
            mmse: score(2, 30)?,
            adas_cog,
            hads_depression: score(4, 21)?,
            hads_anxiety: score(5, 21)?,
            age: num(6)?,
            gender: need(7)?.to_ascii_lowercase(),
            lives_alone,
            diagnosis: need(9)?.to_string(),
            delta_mmse: opt(10)?,
            delta_adas: opt(11)?,
        });
        lines.push(line);
    }
    for (rec, line) in records.iter().zip(&lines) {
        if rec.delta_mmse.is_some() || rec.delta_adas.is_some() {
            let has_prior = records.iter().any(|r| {
                r.participant_id == rec.participant_id && r.assessment_date < rec.assessment_date
            });
            if !has_prior {
                return Err(Error::parse(
                    *line,
                    format!("score deltas for {} without an earlier record", rec.participant_id),
                ));
            }
        }
    }
    Ok(records)
}

pub fn clinical_to_csv(records: &[ClinicalRecord]) -> Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let rows = records.iter().map(|r| {
        vec![
            r.participant_id.clone(),
            r.assessment_date.to_string(),
            r.mmse.to_string(),
            r.adas_cog.to_string(),
            r.hads_depression.to_string(),
            r.hads_anxiety.to_string(),
            r.age.to_string(),
            r.gender.clone(),
            r.lives_alone.to_string(),
            r.diagnosis.clone(),
            opt(r.delta_mmse),
            opt(r.delta_adas),
        ]
    });
    crate::io::csv_bytes(&CLINICAL_HEADER.map(String::from), rows)
}

/// Latest record per participant.
pub fn latest_clinical(records: &[ClinicalRecord]) -> BTreeMap<String, ClinicalRecord> {
    let mut out: BTreeMap<String, ClinicalRecord> = BTreeMap::new();
    for r in records {
        match out.get(&r.participant_id) {
            Some(prev) if prev.assessment_date >= r.assessment_date => {}
            _ => {
                out.insert(r.participant_id.clone(), r.clone());
            }
        }
    }
    out
}

/// Events grouped by participant and local calendar date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortIndex {
    pub utc_offset: i32,
    pub days: BTreeMap<String, BTreeMap<NaiveDate, Vec<DayEvent>>>,
    pub clinical: BTreeMap<String, Vec<ClinicalRecord>>,
    /// Exact (participant, timestamp, location) repeats; kept, only counted.
    pub duplicate_events: usize,
}

impl CohortIndex {
    pub fn participants(&self) -> impl Iterator<Item = &String> {
        self.days.keys()
    }

    pub fn dates(&self, participant_id: &str) -> Vec<NaiveDate> {
        self.days
            .get(participant_id)
            .map(|d| d.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn event_count(&self) -> usize {
        self.days.values().flat_map(|d| d.values()).map(Vec::len).sum()
    }

    pub fn day_count(&self) -> usize {
        self.days.values().map(BTreeMap::len).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = DayRecord> + '_ {
        self.days.iter().flat_map(|(pid, days)| {
            days.iter().map(move |(date, events)| DayRecord {
                participant_id: pid.clone(),
                date: *date,
                events: events.clone(),
            })
        })
    }

    /// Attaches clinical records; records of participants without any event
    /// day are dropped and their count returned.
    pub fn attach_clinical(&mut self, records: Vec<ClinicalRecord>) -> usize {
        let mut dropped = 0;
        for r in records {
            if self.days.contains_key(&r.participant_id) {
                self.clinical.entry(r.participant_id.clone()).or_default().push(r);
            } else {
                dropped += 1;
            }
        }
        for list in self.clinical.values_mut() {
            list.sort_by_key(|r| r.assessment_date);
        }
        dropped
    }

    pub fn day_keys(&self) -> Vec<DayKey> {
        self.days
            .iter()
            .flat_map(|(p, d)| d.keys().map(move |date| DayKey::new(p.clone(), *date)))
            .collect()
    }
}

/// Assigns every event to the participant-day of its local calendar date
/// under a fixed UTC offset. Within a day events are sorted by timestamp,
/// stable on ties.
pub fn segment_days(events: Vec<SensorEvent>, utc_offset: i32) -> CohortIndex {
    let mut index = CohortIndex {
        utc_offset,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for ev in events {
        if !seen.insert((ev.participant_id.clone(), ev.timestamp, ev.location.clone())) {
            index.duplicate_events += 1;
        }
        let (date, _) = local_day(ev.timestamp, utc_offset);
        index
            .days
            .entry(ev.participant_id)
            .or_default()
            .entry(date)
            .or_default()
            .push(DayEvent {
                timestamp: ev.timestamp,
                location: ev.location,
            });
    }
    for days in index.days.values_mut() {
        for events in days.values_mut() {
            events.sort_by_key(|e| e.timestamp);
        }
    }
    index
}

/// Summary written next to the cohort index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub utc_offset: String,
    pub vocabulary: Vocabulary,
    pub participants: usize,
    pub days: usize,
    pub events: usize,
    pub duplicate_events: usize,
    pub skipped_rows: Vec<SkippedRow>,
    pub clinical_records: usize,
    pub clinical_dropped: usize,
}

pub const COHORT_FILE: &str = "cohort.jsonl";
pub const META_FILE: &str = "cohort_meta.json";
pub const CLINICAL_FILE: &str = "clinical.jsonl";

pub fn write_cohort(dir: &Path, index: &CohortIndex, meta: &CohortMeta) -> Result<()> {
    let records: Vec<DayRecord> = index.records().collect();
    write_jsonl(&dir.join(COHORT_FILE), &records)?;
    let clinical: Vec<&ClinicalRecord> = index.clinical.values().flatten().collect();
    write_jsonl(&dir.join(CLINICAL_FILE), clinical)?;
    write_json(&dir.join(META_FILE), meta)
}

pub fn read_cohort(dir: &Path) -> Result<(CohortIndex, CohortMeta)> {
    let meta: CohortMeta = crate::io::read_json(&dir.join(META_FILE))?;
    let mut index = CohortIndex {
        utc_offset: parse_utc_offset(&meta.utc_offset)?,
        duplicate_events: meta.duplicate_events,
        ..Default::default()
    };
    for rec in read_jsonl::<DayRecord>(&dir.join(COHORT_FILE))? {
        index
            .days
            .entry(rec.participant_id)
            .or_default()
            .insert(rec.date, rec.events);
    }
    let clinical_path = dir.join(CLINICAL_FILE);
    if clinical_path.exists() {
        let records = read_jsonl::<ClinicalRecord>(&clinical_path)?;
        index.attach_clinical(records);
    }
    Ok((index, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_csv(text: &str) -> Result<ParsedEvents> {
        parse_events(text.as_bytes(), EventFormat::Csv, &Vocabulary::default(), false)
    }

    #[test]
    fn csv_row_maps_fields() {
        let parsed = parse_csv("participant_id,timestamp,location\np1,1625097600,kitchen\n").unwrap();
        assert_eq!(
            parsed.events,
            vec![SensorEvent {
                participant_id: "p1".into(),
                timestamp: 1_625_097_600,
                location: "kitchen".into()
            }]
        );
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_csv("").unwrap().events.is_empty());
        assert!(parse_csv("participant_id,timestamp,location\n").unwrap().events.is_empty());
        let j = parse_events(&b""[..], EventFormat::Jsonl, &Vocabulary::default(), false).unwrap();
        assert!(j.events.is_empty());
    }

    #[test]
    fn errors_cite_line_numbers() {
        let text = "participant_id,timestamp,location\np1,10,kitchen\np1,11,garage\n";
        match parse_csv(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("garage"));
            }
            other => panic!("{other:?}"),
        }
        let text = "participant_id,timestamp,location\np1,abc,kitchen\n";
        assert!(matches!(parse_csv(text), Err(Error::Parse { line: 2, .. })));
        let text = "participant_id,timestamp,location\np1,-5,kitchen\n";
        assert!(matches!(parse_csv(text), Err(Error::Parse { line: 2, .. })));
        let text = "participant_id,timestamp,location\np1,5\n";
        match parse_csv(text) {
            Err(Error::Parse { line: 2, message }) => assert!(message.contains("location")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lenient_mode_skips_and_counts() {
        let text = "participant_id,timestamp,location\np1,10,kitchen\np1,x,kitchen\np1,12,garage\np1,13,lounge\n";
        let parsed =
            parse_events(text.as_bytes(), EventFormat::Csv, &Vocabulary::default(), true).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn jsonl_accepts_numeric_and_string_timestamps() {
        let text = "{\"participant_id\":\"p1\",\"timestamp\":5,\"location\":\"kitchen\"}\n\n{\"participant_id\":\"p1\",\"timestamp\":\"6\",\"location\":\"bed-in\"}\n{\"participant_id\":\"p1\",\"location\":\"kitchen\"}\n";
        let err = parse_events(text.as_bytes(), EventFormat::Jsonl, &Vocabulary::default(), false)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let ok = parse_events(text.as_bytes(), EventFormat::Jsonl, &Vocabulary::default(), true).unwrap();
        assert_eq!(ok.events.len(), 2);
        assert_eq!(ok.events[1].location, BED_IN);
    }

    #[test]
    fn vocabulary_rules() {
        assert!(Vocabulary::new(vec!["nowhere".into()], false).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], false).is_err());
        let v = Vocabulary::new(vec!["a".into(), "b".into()], false).unwrap();
        assert!(!v.accepts(BED_IN));
        assert_eq!(v.slot_alphabet(), vec!["a", "b", "nowhere"]);
        assert_eq!(
            Vocabulary::default().slot_alphabet(),
            vec!["bathroom", "bedroom", "hallway", "kitchen", "lounge", "sleep", "nowhere"]
        );
    }

    #[test]
    fn utc_offsets() {
        assert_eq!(parse_utc_offset("+01:30").unwrap(), 5400);
        assert_eq!(parse_utc_offset("-05:00").unwrap(), -18000);
        assert!(parse_utc_offset("0100").is_err());
        assert_eq!(format_utc_offset(-18000), "-05:00");
    }

    #[test]
    fn midnight_splits_days() {
        // 2021-07-01 23:59 and 2021-07-02 00:01 local at +01:00.
        let base = 1_625_097_600; // 2021-07-01T00:00:00Z
        let off = 3600;
        let ev = |t: i64| SensorEvent {
            participant_id: "p".into(),
            timestamp: t,
            location: "kitchen".into(),
        };
        let idx = segment_days(vec![ev(base + 86_400 - i64::from(off) - 60), ev(base + 86_400 - i64::from(off) + 60)], off);
        let dates = idx.dates("p");
        assert_eq!(dates.len(), 2);
        assert_eq!(dates[0].to_string(), "2021-07-01");
        assert_eq!(dates[1].to_string(), "2021-07-02");
    }

    #[test]
    fn full_day_of_seconds_is_one_bucket() {
        let base = 1_625_097_600;
        let events: Vec<SensorEvent> = (0..86_400)
            .map(|s| SensorEvent {
                participant_id: "p".into(),
                timestamp: base + s,
                location: "lounge".into(),
            })
            .collect();
        let idx = segment_days(events, 0);
        assert_eq!(idx.day_count(), 1);
        assert_eq!(idx.event_count(), 86_400);
    }

    #[test]
    fn duplicates_are_kept_and_counted() {
        let ev = SensorEvent {
            participant_id: "p".into(),
            timestamp: 100,
            location: "kitchen".into(),
        };
        let idx = segment_days(vec![ev.clone(), ev.clone(), ev], 0);
        assert_eq!(idx.duplicate_events, 2);
        assert_eq!(idx.event_count(), 3);
    }

    #[test]
    fn clinical_validation() {
        let header = CLINICAL_HEADER.join(",");
        let ok = format!(
            "{header}\np1,2022-08-01,25,10.5,3,4,81.2,female,true,AD,,\np1,2023-08-01,24,12,5,6,82.2,female,yes,AD,-1,1.5\n"
        );
        let recs = parse_clinical(ok.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].delta_mmse, Some(-1.0));
        let latest = latest_clinical(&recs);
        assert_eq!(latest["p1"].mmse, 24);

        let bad_mmse = format!("{header}\np1,2022-08-01,31,10,3,4,81,female,true,AD,,\n");
        assert!(matches!(parse_clinical(bad_mmse.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let bad_hads = format!("{header}\np1,2022-08-01,20,10,22,4,81,female,true,AD,,\n");
        assert!(parse_clinical(bad_hads.as_bytes()).is_err());
        let orphan_delta = format!("{header}\np1,2022-08-01,20,10,2,4,81,female,true,AD,-1,\n");
        assert!(parse_clinical(orphan_delta.as_bytes()).is_err());
    }

    fn arb_event() -> impl Strategy<Value = SensorEvent> {
        (
            "[a-z][a-z0-9]{0,4}",
            0i64..4_000_000_000,
            prop::sample::select(vec!["kitchen", "lounge", "bed-in", "bed-out", "hallway"]),
        )
            .prop_map(|(p, t, l)| SensorEvent {
                participant_id: p,
                timestamp: t,
                location: l.to_string(),
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(events in prop::collection::vec(arb_event(), 0..40)) {
            let bytes = events_to_csv(&events);
            let parsed = parse_events(&bytes[..], EventFormat::Csv, &Vocabulary::default(), false).unwrap();
            prop_assert_eq!(&parsed.events, &events);
            prop_assert_eq!(events_to_csv(&parsed.events), bytes);
        }

        #[test]
        fn segmentation_is_a_partition(events in prop::collection::vec(arb_event(), 0..60), off in -43_200i32..50_400) {
            let n = events.len();
            let idx = segment_days(events, off);
            prop_assert_eq!(idx.event_count(), n);
            for (_, days) in &idx.days {
                for (date, evs) in days {
                    prop_assert!(evs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
                    prop_assert!(evs.iter().all(|e| local_day(e.timestamp, off).0 == *date));
                }
            }
        }
    }
}
