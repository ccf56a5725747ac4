//! Feature sets and design-matrix assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{ClinicalRecord, NOWHERE};
use crate::period::Period;
use crate::preprocess::DailyActivitySequence;
use crate::rng::seeded;
use crate::stats::{mean, variance};
use crate::transition::StateVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Baseline,
    ProportionBaseline,
    RandomWord,
    State,
    Characteristics,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::ProportionBaseline => "proportion_baseline",
            Self::RandomWord => "random_word",
            Self::State => "state",
            Self::Characteristics => "characteristics",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Self::Baseline),
            "proportion_baseline" | "proportion" => Ok(Self::ProportionBaseline),
            "random_word" | "randomword" => Ok(Self::RandomWord),
            "state" => Ok(Self::State),
            "characteristics" => Ok(Self::Characteristics),
            other => Err(Error::Config(format!("unknown feature set `{other}`"))),
        }
    }
}

/// A union of feature kinds, written `state+characteristics`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub kinds: Vec<FeatureKind>,
    pub include_current_scores: bool,
}

impl FeatureSetSpec {
    pub fn new(mut kinds: Vec<FeatureKind>, include_current_scores: bool) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("empty feature set".into()));
        }
        kinds.sort();
        kinds.dedup();
        Ok(Self { kinds, include_current_scores })
    }

    pub fn has(&self, kind: FeatureKind) -> bool {
        self.kinds.contains(&kind)
    }
}

impl FromStr for FeatureSetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
        Self::new(kinds, false)
    }
}

impl fmt::Display for FeatureSetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        write!(f, "{}", names.join("+"))?;
        if self.include_current_scores {
            write!(f, "+current_scores")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Mmse,
    Adascog,
    DeltaMmse,
    DeltaAdascog,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Mmse, Target::Adascog, Target::DeltaMmse, Target::DeltaAdascog];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mmse => "mmse",
            Self::Adascog => "adascog",
            Self::DeltaMmse => "delta_mmse",
            Self::DeltaAdascog => "delta_adascog",
        }
    }

    pub fn is_delta(self) -> bool {
        matches!(self, Self::DeltaMmse | Self::DeltaAdascog)
    }

    pub fn value(self, r: &ClinicalRecord) -> Option<f64> {
        match self {
            Self::Mmse => Some(f64::from(r.mmse)),
            Self::Adascog => Some(r.adas_cog),
            Self::DeltaMmse => r.delta_mmse,
            Self::DeltaAdascog => r.delta_adas,
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mmse" => Ok(Self::Mmse),
            "adascog" | "adas_cog" => Ok(Self::Adascog),
            "delta_mmse" => Ok(Self::DeltaMmse),
            "delta_adascog" | "delta_adas" | "delta_adas_cog" => Ok(Self::DeltaAdascog),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

/// Everything feature assembly may draw on.
#[derive(Debug, Clone)]
pub struct FeatureInputs {
    /// Each participant's rectified days in date order.
    pub days: BTreeMap<String, Vec<DailyActivitySequence>>,
    /// Trailing-window state vectors.
    pub window_states: Vec<StateVector>,
    /// Latest clinical record per participant.
    pub clinical: BTreeMap<String, ClinicalRecord>,
    pub alphabet: Vec<String>,
    /// Token value map for the RandomWord baseline.
    pub random_word: BTreeMap<String, f64>,
}

impl FeatureInputs {
    pub fn new(
        days: &[DailyActivitySequence],
        window_states: Vec<StateVector>,
        clinical: BTreeMap<String, ClinicalRecord>,
        alphabet: Vec<String>,
        random_word_seed: u64,
    ) -> Self {
        let mut by_pid: BTreeMap<String, Vec<DailyActivitySequence>> = BTreeMap::new();
        for d in days {
            by_pid.entry(d.participant_id.clone()).or_default().push(d.clone());
        }
        for v in by_pid.values_mut() {
            v.sort_by_key(|d| d.date);
        }
        let random_word = random_word_map(&alphabet, random_word_seed);
        Self { days: by_pid, window_states, clinical, alphabet, random_word }
    }

    /// The participant's days inside the `window`-day span ending at their
    /// last observed day.
    pub fn window_days(&self, pid: &str, window: u32) -> Option<(Period, Vec<&DailyActivitySequence>)> {
        let days = self.days.get(pid)?;
        let period = Period::trailing(days.last()?.date, window);
        Some((period, days.iter().filter(|d| period.contains(d.date)).collect()))
    }
}

/// Seeded `U(0, 1)` value per token, drawn in alphabet order.
pub fn random_word_map(alphabet: &[String], seed: u64) -> BTreeMap<String, f64> {
    let mut rng = seeded(seed);
    alphabet.iter().map(|t| (t.clone(), rng.gen::<f64>())).collect()
}

/// Visits per location: maximal runs of the same non-`nowhere` token.
pub fn visit_counts(day: &DailyActivitySequence) -> BTreeMap<&str, f64> {
    let mut out: BTreeMap<&str, f64> = BTreeMap::new();
    let mut prev: Option<&str> = None;
    for tok in &day.slots {
        if prev != Some(tok.as_str()) && tok != NOWHERE {
            *out.entry(tok.as_str()).or_default() += 1.0;
        }
        prev = Some(tok);
    }
    out
}

/// Share of the day's slots spent on each token (including `nowhere`).
pub fn slot_fractions(day: &DailyActivitySequence) -> BTreeMap<&str, f64> {
    let mut out: BTreeMap<&str, f64> = BTreeMap::new();
    let n = day.slots.len() as f64;
    for tok in &day.slots {
        *out.entry(tok.as_str()).or_default() += 1.0 / n;
    }
    out
}

fn mean_var(values: &[f64]) -> [f64; 2] {
    [mean(values), variance(values)]
}

fn baseline_features(days: &[&DailyActivitySequence], alphabet: &[String], names: &mut Vec<String>, row: &mut Vec<f64>) {
    let counts: Vec<_> = days.iter().map(|d| visit_counts(d)).collect();
    for tok in alphabet.iter().filter(|t| *t != NOWHERE) {
        let series: Vec<f64> = counts.iter().map(|c| c.get(tok.as_str()).copied().unwrap_or(0.0)).collect();
        let [m, v] = mean_var(&series);
        names.extend([format!("visits_{tok}_mean"), format!("visits_{tok}_var")]);
        row.extend([m, v]);
    }
}

fn proportion_features(days: &[&DailyActivitySequence], alphabet: &[String], names: &mut Vec<String>, row: &mut Vec<f64>) {
    let fractions: Vec<_> = days.iter().map(|d| slot_fractions(d)).collect();
    for tok in alphabet {
        let series: Vec<f64> = fractions.iter().map(|c| c.get(tok.as_str()).copied().unwrap_or(0.0)).collect();
        let [m, v] = mean_var(&series);
        names.extend([format!("share_{tok}_mean"), format!("share_{tok}_var")]);
        row.extend([m, v]);
    }
}

fn random_word_features(days: &[&DailyActivitySequence], map: &BTreeMap<String, f64>, names: &mut Vec<String>, row: &mut Vec<f64>) {
    let per_day: Vec<f64> = days
        .iter()
        .map(|d| mean(&d.slots.iter().map(|t| map.get(t).copied().unwrap_or(0.0)).collect::<Vec<_>>()))
        .collect();
    let [m, v] = mean_var(&per_day);
    names.extend(["random_word_mean".to_string(), "random_word_var".to_string()]);
    row.extend([m, v]);
}

fn level_names(inputs: &FeatureInputs, field: fn(&ClinicalRecord) -> &str) -> Vec<String> {
    let levels: BTreeSet<&str> = inputs.clinical.values().map(field).collect();
    // The first level is the reference category.
    levels.into_iter().skip(1).map(String::from).collect()
}

fn characteristics(
    rec: &ClinicalRecord,
    genders: &[String],
    diagnoses: &[String],
    with_scores: bool,
    names: &mut Vec<String>,
    row: &mut Vec<f64>,
) {
    names.extend(["age", "hads_depression", "hads_anxiety", "lives_alone"].map(String::from));
    row.extend([
        rec.age,
        f64::from(rec.hads_depression),
        f64::from(rec.hads_anxiety),
        f64::from(u8::from(rec.lives_alone)),
    ]);
    for g in genders {
        names.push(format!("gender_{g}"));
        row.push(f64::from(u8::from(&rec.gender == g)));
    }
    for d in diagnoses {
        names.push(format!("diagnosis_{d}"));
        row.push(f64::from(u8::from(&rec.diagnosis == d)));
    }
    if with_scores {
        names.extend(["current_mmse".to_string(), "current_adas_cog".to_string()]);
        row.extend([f64::from(rec.mmse), rec.adas_cog]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub participants: Vec<String>,
    pub columns: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Participants left out, with the missing input.
    pub excluded: Vec<(String, String)>,
}

/// Builds one row per participant with every input `spec` requires over the
/// trailing `window`-day span. Participants lacking an input are listed in
/// `excluded`, never imputed.
pub fn assemble_features(inputs: &FeatureInputs, spec: &FeatureSetSpec, target: Target, window: u32) -> Result<DesignMatrix> {
    let with_scores = spec.include_current_scores && target.is_delta() && spec.has(FeatureKind::Characteristics);
    let genders = level_names(inputs, |r| &r.gender);
    let diagnoses = level_names(inputs, |r| &r.diagnosis);
    let mut states: BTreeMap<&str, &StateVector> = BTreeMap::new();
    for s in &inputs.window_states {
        if s.period.days() == i64::from(window) {
            states.insert(&s.participant_id, s);
        }
    }
    let mut dm = DesignMatrix { participants: Vec::new(), columns: Vec::new(), x: Vec::new(), y: Vec::new(), excluded: Vec::new() };
    let pids: BTreeSet<&String> = inputs.days.keys().chain(inputs.clinical.keys()).collect();
    for pid in pids {
        let Some(rec) = inputs.clinical.get(pid.as_str()) else {
            dm.excluded.push((pid.clone(), "clinical record".into()));
            continue;
        };
        let Some(y) = target.value(rec) else {
            dm.excluded.push((pid.clone(), format!("{} target", target.name())));
            continue;
        };
        let window_days = inputs.window_days(pid, window);
        let needs_days = spec.has(FeatureKind::Baseline) || spec.has(FeatureKind::ProportionBaseline) || spec.has(FeatureKind::RandomWord);
        let days = match window_days {
            Some((_, d)) if !d.is_empty() => d,
            _ if needs_days => {
                dm.excluded.push((pid.clone(), "activity days".into()));
                continue;
            }
            _ => Vec::new(),
        };
        let state = states.get(pid.as_str());
        if spec.has(FeatureKind::State) && state.is_none() {
            dm.excluded.push((pid.clone(), format!("{window}-day state vector")));
            continue;
        }
        let mut names = Vec::new();
        let mut row = Vec::new();
        for kind in &spec.kinds {
            match kind {
                FeatureKind::Baseline => baseline_features(&days, &inputs.alphabet, &mut names, &mut row),
                FeatureKind::ProportionBaseline => proportion_features(&days, &inputs.alphabet, &mut names, &mut row),
                FeatureKind::RandomWord => random_word_features(&days, &inputs.random_word, &mut names, &mut row),
                FeatureKind::State => {
                    let s = state.expect("checked above");
                    names.extend((1..=s.values.len()).map(|i| format!("state{i}")));
                    row.extend(&s.values);
                }
                FeatureKind::Characteristics => characteristics(rec, &genders, &diagnoses, with_scores, &mut names, &mut row),
            }
        }
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{pid}: non-finite feature `{}`", names[bad])));
        }
        if dm.columns.is_empty() {
            dm.columns = names;
        } else if dm.columns != names {
            return Err(Error::invalid(format!("{pid}: inconsistent feature layout")));
        }
        dm.participants.push(pid.clone());
        dm.x.push(row);
        dm.y.push(y);
    }
    Ok(dm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn day(pid: &str, n: u32, slots: Vec<&str>) -> DailyActivitySequence {
        DailyActivitySequence {
            participant_id: pid.into(),
            date: NaiveDate::from_ymd_opt(2023, 8, 1).unwrap() + chrono::Duration::days(i64::from(n)),
            slots: slots.into_iter().map(String::from).collect(),
        }
    }

    fn three_kitchen_visits() -> Vec<&'static str> {
        let mut s = vec!["lounge"; 72];
        for i in [5, 20, 40] {
            s[i] = "kitchen";
        }
        s[41] = "kitchen";
        s[70] = NOWHERE;
        s
    }

    fn record(pid: &str, gender: &str) -> ClinicalRecord {
        ClinicalRecord {
            participant_id: pid.into(),
            assessment_date: NaiveDate::from_ymd_opt(2023, 12, 1).unwrap(),
            mmse: 24,
            adas_cog: 12.5,
            hads_depression: 5,
            hads_anxiety: 6,
            age: 79.0,
            gender: gender.into(),
            lives_alone: true,
            diagnosis: "mci".into(),
            delta_mmse: Some(-1.0),
            delta_adas: None,
        }
    }

    fn alphabet() -> Vec<String> {
        ["kitchen", "lounge", NOWHERE].map(String::from).to_vec()
    }

    fn inputs() -> FeatureInputs {
        let days: Vec<_> = (0..10).map(|n| day("a", n, three_kitchen_visits())).chain((0..10).map(|n| day("b", n, vec!["lounge"; 72]))).collect();
        let clinical = [("a", "female"), ("b", "male")].iter().map(|(p, g)| (p.to_string(), record(p, g))).collect();
        FeatureInputs::new(&days, Vec::new(), clinical, alphabet(), 7)
    }

    #[test]
    fn constant_visits_have_zero_variance() {
        let inp = inputs();
        let spec: FeatureSetSpec = "baseline".parse().unwrap();
        let dm = assemble_features(&inp, &spec, Target::Mmse, 7).unwrap();
        assert_eq!(dm.columns, vec!["visits_kitchen_mean", "visits_kitchen_var", "visits_lounge_mean", "visits_lounge_var"]);
        assert_eq!(dm.x[0][..2], [3.0, 0.0]);
        assert_eq!(dm.x[0][2], 5.0);
        assert_eq!(dm.x[1], vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn proportions_sum_to_one() {
        let d = day("a", 0, three_kitchen_visits());
        let f = slot_fractions(&d);
        assert!((f.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((f[NOWHERE] - 1.0 / 72.0).abs() < 1e-15);
    }

    #[test]
    fn random_word_is_seeded() {
        let a = assemble_features(&inputs(), &"random_word".parse().unwrap(), Target::Mmse, 30).unwrap();
        let b = assemble_features(&inputs(), &"random_word".parse().unwrap(), Target::Mmse, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.columns.len(), 2);
        assert_ne!(random_word_map(&alphabet(), 7), random_word_map(&alphabet(), 8));
    }

    #[test]
    fn characteristics_and_current_scores() {
        let mut spec: FeatureSetSpec = "characteristics".parse().unwrap();
        let dm = assemble_features(&inputs(), &spec, Target::Mmse, 30).unwrap();
        assert_eq!(dm.columns, vec!["age", "hads_depression", "hads_anxiety", "lives_alone", "gender_male"]);
        assert_eq!(dm.x[1][4], 1.0);
        spec.include_current_scores = true;
        // Current scores never enter current-score targets.
        let dm = assemble_features(&inputs(), &spec, Target::Mmse, 30).unwrap();
        assert!(!dm.columns.iter().any(|c| c.starts_with("current_")));
        let dm = assemble_features(&inputs(), &spec, Target::DeltaMmse, 30).unwrap();
        assert!(dm.columns.contains(&"current_mmse".to_string()));
        assert_eq!(spec.to_string(), "characteristics+current_scores");
    }

    #[test]
    fn missing_inputs_are_reported() {
        let inp = inputs();
        let dm = assemble_features(&inp, &"state".parse().unwrap(), Target::Mmse, 30).unwrap();
        assert!(dm.participants.is_empty());
        assert_eq!(dm.excluded.len(), 2);
        let dm = assemble_features(&inp, &"baseline".parse().unwrap(), Target::DeltaAdascog, 30).unwrap();
        assert_eq!(dm.excluded.len(), 2);
        assert!(dm.excluded[0].1.contains("delta_adascog"));
    }

    #[test]
    fn parse_specs() {
        let s: FeatureSetSpec = "characteristics+state".parse().unwrap();
        assert_eq!(s.to_string(), "state+characteristics");
        assert!("state+bogus".parse::<FeatureSetSpec>().is_err());
        assert_eq!("adas_cog".parse::<Target>().unwrap(), Target::Adascog);
    }
}
