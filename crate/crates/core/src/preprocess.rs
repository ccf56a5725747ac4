//! Rectification of participant-days into fixed windows and their text and
//! one-hot renderings.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{local_day, CohortIndex, DayEvent, Vocabulary, BED_IN, BED_OUT, NOWHERE, SLEEP};
use crate::{DayKey, Error, Result};

pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectifyConfig {
    pub window_minutes: u32,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        Self { window_minutes: 20 }
    }
}

impl RectifyConfig {
    pub fn new(window_minutes: u32) -> Result<Self> {
        if window_minutes == 0 || 1440 % window_minutes != 0 {
            return Err(Error::Config(format!(
                "window of {window_minutes} minutes does not divide a day"
            )));
        }
        Ok(Self { window_minutes })
    }

    pub fn window_seconds(&self) -> u32 {
        self.window_minutes * 60
    }

    pub fn slots_per_day(&self) -> usize {
        (1440 / self.window_minutes) as usize
    }
}

/// One rectified participant-day: one location token per window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyActivitySequence {
    pub participant_id: String,
    pub date: NaiveDate,
    pub slots: Vec<String>,
}

impl DailyActivitySequence {
    pub fn key(&self) -> DayKey {
        DayKey::new(self.participant_id.clone(), self.date)
    }
}

/// Whether the participant was on the sleep mat when a day began.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SleepCarry {
    Awake,
    InBed,
    /// No previous day to look at (first day or after a gap).
    #[default]
    Unknown,
}

/// A detection positioned within its local day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalEvent {
    pub second_of_day: u32,
    pub location: String,
}

impl LocalEvent {
    pub fn new(second_of_day: u32, location: impl Into<String>) -> Self {
        Self {
            second_of_day,
            location: location.into(),
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    count: u64,
    first: u32,
}

fn vote(tallies: &mut BTreeMap<&str, Tally>, token: &'static str, weight: u64, at: u32) {
    let t = tallies.entry(token).or_insert(Tally { count: 0, first: at });
    t.count += weight;
    t.first = t.first.min(at);
}

/// In-bed spans `[start, end)` in seconds of the day, plus the carry into the
/// next day.
///
/// A `bed-out` with no known earlier `bed-in` is read as in bed since
/// midnight; a repeated marker in the same state is ignored.
fn sleep_spans(events: &[LocalEvent], carry: SleepCarry) -> (Vec<(u32, u32)>, SleepCarry) {
    let mut spans = Vec::new();
    let mut state = carry;
    let mut bed_since = 0u32;
    let mut markers: Vec<&LocalEvent> = events
        .iter()
        .filter(|e| e.location == BED_IN || e.location == BED_OUT)
        .collect();
    markers.sort_by_key(|e| e.second_of_day);
    for m in markers {
        match (m.location.as_str(), state) {
            (BED_IN, SleepCarry::InBed) => {}
            (BED_IN, _) => {
                state = SleepCarry::InBed;
                bed_since = m.second_of_day;
            }
            (_, SleepCarry::InBed) | (_, SleepCarry::Unknown) => {
                if m.second_of_day > bed_since {
                    spans.push((bed_since, m.second_of_day));
                }
                state = SleepCarry::Awake;
            }
            (_, SleepCarry::Awake) => {}
        }
    }
    if state == SleepCarry::InBed && bed_since < SECONDS_PER_DAY {
        spans.push((bed_since, SECONDS_PER_DAY));
    }
    (spans, state)
}

/// Rectifies one participant-day.
///
/// Each window holds the location with the most detections in
/// `[t * w, (t + 1) * w)`. Ties go to the location detected first in the
/// window, then to the lexicographically smaller token. In-bed time counts as
/// one `sleep` detection per second. Windows without detections are
/// `nowhere`.
pub fn rectify_day(
    participant_id: &str,
    date: NaiveDate,
    events: &[LocalEvent],
    config: &RectifyConfig,
    carry: SleepCarry,
) -> (DailyActivitySequence, SleepCarry) {
    let width = config.window_seconds();
    let n_slots = config.slots_per_day();
    let (spans, carry_out) = sleep_spans(events, carry);

    let mut windows: Vec<BTreeMap<&str, Tally>> = vec![BTreeMap::new(); n_slots];
    for ev in events {
        if ev.location == BED_IN || ev.location == BED_OUT || ev.second_of_day >= SECONDS_PER_DAY {
            continue;
        }
        let w = (ev.second_of_day / width) as usize;
        let t = windows[w]
            .entry(ev.location.as_str())
            .or_insert(Tally { count: 0, first: ev.second_of_day });
        t.count += 1;
        t.first = t.first.min(ev.second_of_day);
    }
    for &(start, end) in &spans {
        let first_w = (start / width) as usize;
        let last_w = ((end - 1) / width) as usize;
        for (w, tallies) in windows.iter_mut().enumerate().take(last_w + 1).skip(first_w) {
            let lo = start.max(w as u32 * width);
            let hi = end.min((w as u32 + 1) * width);
            if hi > lo {
                vote(tallies, SLEEP, u64::from(hi - lo), lo);
            }
        }
    }

    let slots = windows
        .iter()
        .map(|tallies| {
            tallies
                .iter()
                .filter(|(token, _)| **token != NOWHERE)
                .min_by(|(ta, a), (tb, b)| {
                    b.count
                        .cmp(&a.count)
                        .then(a.first.cmp(&b.first))
                        .then(ta.cmp(tb))
                })
                .map_or_else(|| NOWHERE.to_string(), |(token, _)| token.to_string())
        })
        .collect();
    (
        DailyActivitySequence {
            participant_id: participant_id.to_string(),
            date,
            slots,
        },
        carry_out,
    )
}

fn to_local(events: &[DayEvent], utc_offset: i32) -> Vec<LocalEvent> {
    events
        .iter()
        .map(|e| LocalEvent {
            second_of_day: local_day(e.timestamp, utc_offset).1,
            location: e.location.clone(),
        })
        .collect()
}

/// Rectifies every day of a cohort. Sleep state carries across consecutive
/// dates of the same participant; a missing day resets it.
pub fn rectify_cohort(index: &CohortIndex, config: &RectifyConfig) -> Vec<DailyActivitySequence> {
    let participants: Vec<(&String, &BTreeMap<NaiveDate, Vec<DayEvent>>)> = index.days.iter().collect();
    participants
        .par_iter()
        .map(|(pid, days)| {
            let mut out = Vec::with_capacity(days.len());
            let mut carry = SleepCarry::Unknown;
            let mut prev: Option<NaiveDate> = None;
            for (date, events) in days.iter() {
                if prev.and_then(|p| p.succ_opt()) != Some(*date) {
                    carry = SleepCarry::Unknown;
                }
                let (seq, next) = rectify_day(pid, *date, &to_local(events, index.utc_offset), config, carry);
                out.push(seq);
                carry = next;
                prev = Some(*date);
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Space-delimited rendering of a day's slots.
pub fn render_text(sequence: &DailyActivitySequence) -> String {
    sequence.slots.join(" ")
}

/// Inverse of [`render_text`], validating tokens against `alphabet`.
pub fn parse_text(text: &str, alphabet: &[String], expected_slots: usize) -> Result<Vec<String>> {
    let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
    if tokens.len() != expected_slots {
        return Err(Error::invalid(format!(
            "expected {expected_slots} tokens, found {}",
            tokens.len()
        )));
    }
    if let Some(bad) = tokens.iter().find(|t| !alphabet.contains(t)) {
        return Err(Error::invalid(format!("unknown token `{bad}`")));
    }
    Ok(tokens)
}

/// Block one-hot encoding: one block of `alphabet.len()` entries per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotDay {
    pub participant_id: String,
    pub date: NaiveDate,
    pub vector: Vec<f64>,
}

pub fn one_hot_encode(sequence: &DailyActivitySequence, alphabet: &[String]) -> Result<OneHotDay> {
    let width = alphabet.len();
    let mut vector = vec![0.0; width * sequence.slots.len()];
    for (slot, token) in sequence.slots.iter().enumerate() {
        let idx = alphabet
            .iter()
            .position(|a| a == token)
            .ok_or_else(|| Error::invalid(format!("token `{token}` outside the vocabulary")))?;
        vector[slot * width + idx] = 1.0;
    }
    Ok(OneHotDay {
        participant_id: sequence.participant_id.clone(),
        date: sequence.date,
        vector,
    })
}

/// Checks slot count and tokens of a day read from disk.
pub fn validate_sequence(
    sequence: &DailyActivitySequence,
    alphabet: &[String],
    slots: usize,
) -> Result<()> {
    if sequence.slots.len() != slots {
        return Err(Error::invalid(format!(
            "{}: {} slots, expected {slots}",
            sequence.key(),
            sequence.slots.len()
        )));
    }
    if let Some(bad) = sequence.slots.iter().find(|t| !alphabet.contains(t)) {
        return Err(Error::invalid(format!("{}: unknown token `{bad}`", sequence.key())));
    }
    Ok(())
}

/// Recovers the slot alphabet from rectified days when no vocabulary file is
/// at hand: rooms sorted, then `sleep` if present, then `nowhere`.
pub fn infer_alphabet(days: &[DailyActivitySequence]) -> Vec<String> {
    let mut rooms: Vec<String> = days
        .iter()
        .flat_map(|d| d.slots.iter())
        .filter(|t| *t != NOWHERE && *t != SLEEP)
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if days.iter().any(|d| d.slots.iter().any(|t| t == SLEEP)) {
        rooms.push(SLEEP.to_string());
    }
    rooms.push(NOWHERE.to_string());
    rooms
}

pub fn vocabulary_alphabet(vocab: &Vocabulary) -> Vec<String> {
    vocab.slot_alphabet()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 8, 1).unwrap()
    }

    fn rect(events: &[LocalEvent]) -> Vec<String> {
        rectify_day("p", date(), events, &RectifyConfig::default(), SleepCarry::Unknown)
            .0
            .slots
    }

    #[test]
    fn window_size_must_divide_the_day() {
        assert!(RectifyConfig::new(7).is_err());
        assert!(RectifyConfig::new(0).is_err());
        assert_eq!(RectifyConfig::new(20).unwrap().slots_per_day(), 72);
        assert_eq!(RectifyConfig::new(30).unwrap().slots_per_day(), 48);
    }

    #[test]
    fn most_frequent_location_wins() {
        let ev = [
            LocalEvent::new(10, "lounge"),
            LocalEvent::new(20, "kitchen"),
            LocalEvent::new(30, "kitchen"),
            LocalEvent::new(40, "kitchen"),
        ];
        let slots = rect(&ev);
        assert_eq!(slots[0], "kitchen");
        assert!(slots[1..].iter().all(|s| s == NOWHERE));
    }

    #[test]
    fn empty_day_is_all_nowhere() {
        let slots = rect(&[]);
        assert_eq!(slots.len(), 72);
        assert!(slots.iter().all(|s| s == NOWHERE));
    }

    #[test]
    fn ties_go_to_first_occurrence_in_every_ordering() {
        // {kitchen x2, lounge x2} with kitchen firing first; the input order of
        // the four events must not matter.
        let base = [
            LocalEvent::new(100, "kitchen"),
            LocalEvent::new(200, "lounge"),
            LocalEvent::new(300, "kitchen"),
            LocalEvent::new(400, "lounge"),
        ];
        let mut perms = 0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let idx = [a, b, c, d];
                        let mut s = idx.to_vec();
                        s.sort_unstable();
                        s.dedup();
                        if s.len() != 4 {
                            continue;
                        }
                        let ev: Vec<LocalEvent> = idx.iter().map(|&i| base[i].clone()).collect();
                        assert_eq!(rect(&ev)[0], "kitchen");
                        perms += 1;
                    }
                }
            }
        }
        assert_eq!(perms, 24);
    }

    #[test]
    fn simultaneous_ties_fall_back_to_token_order() {
        let ev = [LocalEvent::new(50, "lounge"), LocalEvent::new(50, "kitchen")];
        assert_eq!(rect(&ev)[0], "kitchen");
    }

    #[test]
    fn boundary_event_goes_to_later_window() {
        let slots = rect(&[LocalEvent::new(1200, "kitchen")]);
        assert_eq!(slots[0], NOWHERE);
        assert_eq!(slots[1], "kitchen");
        let slots = rect(&[LocalEvent::new(1199, "kitchen")]);
        assert_eq!(slots[0], "kitchen");
    }

    #[test]
    fn sleep_span_dominates_its_windows() {
        let ev = [
            LocalEvent::new(3600, "bedroom"),
            LocalEvent::new(3700, BED_IN),
            LocalEvent::new(3800, "bedroom"),
            LocalEvent::new(7200, BED_OUT),
        ];
        let (seq, carry) = rectify_day("p", date(), &ev, &RectifyConfig::default(), SleepCarry::Awake);
        assert_eq!(carry, SleepCarry::Awake);
        // Window 3 covers [3600, 4800): 1100 s asleep beats 2 bedroom hits.
        assert_eq!(seq.slots[3], SLEEP);
        assert_eq!(seq.slots[4], SLEEP);
        assert_eq!(seq.slots[5], SLEEP);
        assert_eq!(seq.slots[6], NOWHERE);
    }

    #[test]
    fn sleep_carries_over_midnight() {
        let cfg = RectifyConfig::default();
        let (_, carry) = rectify_day("p", date(), &[LocalEvent::new(80_000, BED_IN)], &cfg, SleepCarry::Awake);
        assert_eq!(carry, SleepCarry::InBed);
        let (next, carry) = rectify_day("p", date(), &[LocalEvent::new(25_200, BED_OUT)], &cfg, carry);
        assert_eq!(carry, SleepCarry::Awake);
        assert!(next.slots[..21].iter().all(|s| s == SLEEP));
        assert_eq!(next.slots[21], NOWHERE);
        // A stray bed-out while known to be awake is ignored.
        let (stray, _) = rectify_day("p", date(), &[LocalEvent::new(600, BED_OUT)], &cfg, SleepCarry::Awake);
        assert!(stray.slots.iter().all(|s| s == NOWHERE));
        // Without history, a bed-out means in bed since midnight.
        let (fresh, _) = rectify_day("p", date(), &[LocalEvent::new(600, BED_OUT)], &cfg, SleepCarry::Unknown);
        assert_eq!(fresh.slots[0], SLEEP);
    }

    #[test]
    fn one_hot_counts() {
        let alphabet: Vec<String> = ["a", "b", "c", "d", "e", NOWHERE].map(String::from).to_vec();
        let mut seq = DailyActivitySequence {
            participant_id: "p".into(),
            date: date(),
            slots: vec![NOWHERE.to_string(); 72],
        };
        let hot = one_hot_encode(&seq, &alphabet).unwrap();
        assert_eq!(hot.vector.len(), 432);
        assert_eq!(hot.vector.iter().sum::<f64>(), 72.0);
        for block in hot.vector.chunks(6) {
            assert_eq!(block, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        }
        seq.slots[5] = "z".into();
        assert!(one_hot_encode(&seq, &alphabet).is_err());
    }

    fn arb_sequence() -> impl Strategy<Value = DailyActivitySequence> {
        let tokens = Vocabulary::default().slot_alphabet();
        prop::collection::vec(prop::sample::select(tokens), 72).prop_map(|slots| {
            DailyActivitySequence {
                participant_id: "p".into(),
                date: NaiveDate::from_ymd_opt(2023, 8, 1).unwrap(),
                slots,
            }
        })
    }

    proptest! {
        #[test]
        fn text_round_trip(seq in arb_sequence()) {
            let alphabet = Vocabulary::default().slot_alphabet();
            let text = render_text(&seq);
            prop_assert_eq!(text.split_whitespace().count(), 72);
            prop_assert_eq!(parse_text(&text, &alphabet, 72).unwrap(), seq.slots.clone());
        }

        #[test]
        fn one_hot_is_injective_and_block_structured(a in arb_sequence(), b in arb_sequence()) {
            let alphabet = Vocabulary::default().slot_alphabet();
            let ha = one_hot_encode(&a, &alphabet).unwrap();
            let hb = one_hot_encode(&b, &alphabet).unwrap();
            prop_assert_eq!(ha.vector.iter().sum::<f64>(), 72.0);
            prop_assert!(ha.vector.chunks(alphabet.len()).all(|blk| blk.iter().sum::<f64>() == 1.0));
            prop_assert_eq!(a.slots == b.slots, ha.vector == hb.vector);
        }

        #[test]
        fn rectification_ignores_input_order(
            mut events in prop::collection::vec(
                (0u32..86_400, prop::sample::select(vec!["kitchen", "lounge", "hallway"])),
                0..80,
            ),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            // Distinct timestamps so the first-occurrence rule is total.
            events.sort_by_key(|e| e.0);
            events.dedup_by_key(|e| e.0);
            let ev: Vec<LocalEvent> = events.iter().map(|(s, l)| LocalEvent::new(*s, *l)).collect();
            let mut shuffled = ev.clone();
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            prop_assert_eq!(rect(&ev), rect(&shuffled));
        }
    }
}
