//! Outcome labels from event timelines under a declarative outcome config,
//! with first-24h exclusions and post-24h measurement requirements.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{Admission, Event, OBSERVATION_WINDOW_SECS};
use crate::io;

pub const DEFAULT_OUTCOMES_TOML: &str = include_str!("../data/outcomes.toml");

pub const ICU_ADMISSION_CODE: &str = "ICU_ADMISSION";
pub const ICU_DISCHARGE_CODE: &str = "ICU_DISCHARGE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Binary,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Max,
    Min,
    /// Union over component specs.
    Any,
    Duration,
    Exists,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregate::Max),
            "min" => Ok(Aggregate::Min),
            "any" => Ok(Aggregate::Any),
            "duration" => Ok(Aggregate::Duration),
            "exists" => Ok(Aggregate::Exists),
            _ => Err(Error::config(format!("unknown aggregate {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    #[serde(rename = "post_24h")]
    Post24h,
    WholeStay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Direction {
    pub fn test(self, v: f64, threshold: f64) -> bool {
        match self {
            Direction::Gt => v > threshold,
            Direction::Ge => v >= threshold,
            Direction::Lt => v < threshold,
            Direction::Le => v <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationSource {
    #[default]
    Hospital,
    /// Summed ICU admission-to-discharge segments.
    Icu,
}

/// Thresholded extremum over one code group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub code_group: Vec<String>,
    pub aggregate: String,
    pub threshold: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub name: String,
    pub kind: OutcomeKind,
    /// Parsed with [`OutcomeSpec::aggregate`] so unknown names are config errors.
    pub aggregate: String,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub code_group: Vec<String>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub exclusion_24h: bool,
    #[serde(default)]
    pub require_post24h_measurement: bool,
    #[serde(default)]
    pub duration: DurationSource,
    #[serde(default)]
    pub components: Vec<Component>,
    /// Case-insensitive substrings of the discharge type that mark a positive.
    #[serde(default)]
    pub discharge_contains: Vec<String>,
    #[serde(default)]
    pub discharge_equals: Vec<String>,
    /// Experiments that use this outcome; empty means all.
    #[serde(default)]
    pub experiments: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct OutcomeFile {
    outcome: Vec<OutcomeSpec>,
}

impl OutcomeSpec {
    pub fn aggregate(&self) -> Result<Aggregate> {
        self.aggregate.parse()
    }

    pub fn used_in(&self, experiment: &str) -> bool {
        self.experiments.is_empty() || self.experiments.iter().any(|e| e == experiment)
    }

    pub fn validate(&self) -> Result<()> {
        let agg = self.aggregate()?;
        let fail = |msg: &str| Err(Error::config(format!("outcome {}: {msg}", self.name)));
        match (self.kind, agg) {
            (OutcomeKind::Regression, Aggregate::Max | Aggregate::Min | Aggregate::Duration) => {}
            (OutcomeKind::Regression, _) => return fail("regression needs max, min or duration"),
            (OutcomeKind::Binary, Aggregate::Max | Aggregate::Min | Aggregate::Duration) => {
                if self.threshold.is_none() || self.direction.is_none() {
                    return fail("threshold outcome needs threshold and direction");
                }
            }
            (OutcomeKind::Binary, Aggregate::Any) => {
                if self.components.is_empty() {
                    return fail("'any' needs components");
                }
                for c in &self.components {
                    let a: Aggregate = c.aggregate.parse()?;
                    if !matches!(a, Aggregate::Max | Aggregate::Min) {
                        return fail("components must use max or min");
                    }
                }
            }
            (OutcomeKind::Binary, Aggregate::Exists) => {}
        }
        if matches!(agg, Aggregate::Max | Aggregate::Min | Aggregate::Exists) && self.code_group.is_empty() {
            return fail("empty code group");
        }
        Ok(())
    }
}

pub fn parse_outcomes(toml_text: &str) -> Result<Vec<OutcomeSpec>> {
    let file: OutcomeFile = toml::from_str(toml_text)?;
    let mut seen = std::collections::BTreeSet::new();
    for s in &file.outcome {
        s.validate()?;
        if !seen.insert(s.name.clone()) {
            return Err(Error::config(format!("duplicate outcome {}", s.name)));
        }
    }
    Ok(file.outcome)
}

pub fn load_outcomes(path: &Path) -> Result<Vec<OutcomeSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_outcomes(&text)
}

pub fn default_outcomes() -> Vec<OutcomeSpec> {
    parse_outcomes(DEFAULT_OUTCOMES_TOML).expect("shipped outcome config is valid")
}

/// `code == entry` or `code` starts with `entry//`.
pub fn in_group(code: &str, group: &[String]) -> bool {
    group.iter().any(|g| {
        code.strip_prefix(g.as_str())
            .is_some_and(|rest| rest.is_empty() || rest.starts_with("//"))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Span {
    First24h,
    Post24h,
    WholeStay,
}

fn in_span(a: &Admission, e: &Event, span: Span) -> bool {
    let cut = a.admit_time + OBSERVATION_WINDOW_SECS;
    match span {
        Span::First24h => e.time >= a.admit_time && e.time <= cut,
        Span::Post24h => e.time > cut && e.time <= a.discharge_time,
        Span::WholeStay => e.time >= a.admit_time && e.time <= a.discharge_time,
    }
}

fn extremum(a: &Admission, group: &[String], span: Span, agg: Aggregate) -> Option<f64> {
    let vals = a
        .events
        .iter()
        .filter(|e| in_span(a, e, span) && in_group(&e.code, group))
        .filter_map(|e| e.numeric_value);
    match agg {
        Aggregate::Max => vals.reduce(f64::max),
        Aggregate::Min => vals.reduce(f64::min),
        _ => None,
    }
}

fn exists(a: &Admission, group: &[String], span: Span) -> bool {
    a.events
        .iter()
        .any(|e| in_span(a, e, span) && in_group(&e.code, group))
}

/// Total hours across ICU segments; an open segment ends at discharge.
pub fn icu_hours(a: &Admission) -> f64 {
    let mut events: Vec<&Event> = a
        .events
        .iter()
        .filter(|e| e.code == ICU_ADMISSION_CODE || e.code == ICU_DISCHARGE_CODE)
        .collect();
    events.sort_by_key(|e| e.time);
    let mut total = 0i64;
    let mut open: Option<i64> = None;
    for e in events {
        if e.code == ICU_ADMISSION_CODE {
            open.get_or_insert(e.time);
        } else if let Some(start) = open.take() {
            total += (e.time - start).max(0);
        }
    }
    if let Some(start) = open {
        total += (a.discharge_time - start).max(0);
    }
    total as f64 / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub admission_id: String,
    pub outcome: String,
    pub eligible: bool,
    pub label: Option<f64>,
}

fn row(a: &Admission, spec: &OutcomeSpec, label: Option<f64>) -> LabelRow {
    LabelRow {
        admission_id: a.admission_id.clone(),
        outcome: spec.name.clone(),
        eligible: label.is_some(),
        label,
    }
}

fn flag(b: bool) -> Option<f64> {
    Some(if b { 1.0 } else { 0.0 })
}

fn discharge_positive(a: &Admission, spec: &OutcomeSpec) -> bool {
    let Some(d) = a.demographics.get("discharge_type") else {
        return false;
    };
    let d = d.to_lowercase();
    spec.discharge_contains.iter().any(|s| d.contains(&s.to_lowercase()))
        || spec.discharge_equals.iter().any(|s| d == s.to_lowercase())
}

fn main_span(spec: &OutcomeSpec) -> Span {
    match spec.window {
        Window::Post24h => Span::Post24h,
        Window::WholeStay => Span::WholeStay,
    }
}

/// Labels one admission. Ineligible rows carry no label.
pub fn label(a: &Admission, spec: &OutcomeSpec) -> Result<LabelRow> {
    let agg = spec.aggregate()?;
    let span = main_span(spec);
    let out = match agg {
        Aggregate::Duration => {
            let hours = match spec.duration {
                DurationSource::Hospital => a.los_hours(),
                DurationSource::Icu => icu_hours(a),
            };
            match spec.kind {
                OutcomeKind::Regression => Some(hours),
                OutcomeKind::Binary => {
                    let (t, d) = threshold(spec)?;
                    flag(d.test(hours, t))
                }
            }
        }
        Aggregate::Exists => {
            if spec.exclusion_24h && exists(a, &spec.code_group, Span::First24h) {
                None
            } else {
                flag(exists(a, &spec.code_group, span) || discharge_positive(a, spec))
            }
        }
        Aggregate::Max | Aggregate::Min => {
            let post = extremum(a, &spec.code_group, span, agg);
            match spec.kind {
                OutcomeKind::Regression => post,
                OutcomeKind::Binary => {
                    let (t, d) = threshold(spec)?;
                    let early = extremum(a, &spec.code_group, Span::First24h, agg);
                    if spec.exclusion_24h && early.is_some_and(|v| d.test(v, t)) {
                        None
                    } else {
                        match post {
                            Some(v) => flag(d.test(v, t)),
                            None if spec.require_post24h_measurement => None,
                            None => flag(false),
                        }
                    }
                }
            }
        }
        Aggregate::Any => {
            let mut met_early = false;
            let mut met = false;
            let mut measured = false;
            for c in &spec.components {
                let cagg: Aggregate = c.aggregate.parse()?;
                if let Some(v) = extremum(a, &c.code_group, Span::First24h, cagg) {
                    met_early |= c.direction.test(v, c.threshold);
                }
                if let Some(v) = extremum(a, &c.code_group, span, cagg) {
                    measured = true;
                    met |= c.direction.test(v, c.threshold);
                }
            }
            if spec.exclusion_24h && met_early {
                None
            } else if !measured && spec.require_post24h_measurement {
                None
            } else {
                flag(met)
            }
        }
    };
    Ok(row(a, spec, out))
}

fn threshold(spec: &OutcomeSpec) -> Result<(f64, Direction)> {
    match (spec.threshold, spec.direction) {
        (Some(t), Some(d)) => Ok((t, d)),
        _ => Err(Error::config(format!("outcome {} lacks a threshold", spec.name))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub outcome: String,
    pub kind: OutcomeKind,
    pub eligible: usize,
    pub positives: Option<usize>,
    pub negatives: Option<usize>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortLabels {
    /// Outcome-major: all admissions for the first outcome, then the next.
    pub rows: Vec<LabelRow>,
    pub summaries: Vec<OutcomeSummary>,
}

impl CohortLabels {
    pub fn for_outcome<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a LabelRow> + 'a {
        self.rows.iter().filter(move |r| r.outcome == name)
    }
}

pub fn summarize(spec: &OutcomeSpec, rows: &[LabelRow]) -> OutcomeSummary {
    let labels: Vec<f64> = rows.iter().filter(|r| r.eligible).filter_map(|r| r.label).collect();
    let n = labels.len();
    match spec.kind {
        OutcomeKind::Binary => {
            let pos = labels.iter().filter(|&&v| v == 1.0).count();
            OutcomeSummary {
                outcome: spec.name.clone(),
                kind: spec.kind,
                eligible: n,
                positives: Some(pos),
                negatives: Some(n - pos),
                mean: None,
                sd: None,
            }
        }
        OutcomeKind::Regression => {
            let mean = (n > 0).then(|| labels.iter().sum::<f64>() / n as f64);
            let sd = (n > 1).then(|| {
                let m = mean.unwrap_or(0.0);
                (labels.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            OutcomeSummary {
                outcome: spec.name.clone(),
                kind: spec.kind,
                eligible: n,
                positives: None,
                negatives: None,
                mean,
                sd,
            }
        }
    }
}

pub fn label_cohort(admissions: &[Admission], specs: &[OutcomeSpec]) -> Result<CohortLabels> {
    let mut rows = Vec::with_capacity(admissions.len() * specs.len());
    let mut summaries = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let r: Vec<LabelRow> = admissions
            .par_iter()
            .map(|a| label(a, spec))
            .collect::<Result<_>>()?;
        summaries.push(summarize(spec, &r));
        rows.extend(r);
    }
    Ok(CohortLabels { rows, summaries })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    admission_id: String,
    outcome: String,
    eligible: u8,
    label: Option<f64>,
}

pub fn write_labels_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    for r in rows {
        w.serialize(CsvRow {
            admission_id: r.admission_id.clone(),
            outcome: r.outcome.clone(),
            eligible: u8::from(r.eligible),
            label: r.label,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_reader(io::open(path)?);
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(LabelRow {
                admission_id: row.admission_id,
                outcome: row.outcome,
                eligible: row.eligible == 1,
                label: row.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    const H: i64 = 3600;

    fn ev(t: i64, code: &str, v: Option<f64>) -> Event {
        Event {
            subject_id: "s".into(),
            admission_id: "a".into(),
            time: t,
            code: code.into(),
            numeric_value: v,
            ref_lo: None,
            ref_hi: None,
        }
    }

    fn adm(events: Vec<Event>, los_h: i64) -> Admission {
        Admission {
            admission_id: "a".into(),
            subject_id: "s".into(),
            admit_time: 0,
            discharge_time: los_h * H,
            demographics: BTreeMap::new(),
            events,
            truncated_at: None,
        }
    }

    fn spec(name: &str) -> OutcomeSpec {
        default_outcomes().into_iter().find(|s| s.name == name).unwrap()
    }

    #[test]
    fn shipped_config_has_thirty_outcomes() {
        let all = default_outcomes();
        assert_eq!(all.len(), 30);
        assert_eq!(all.iter().filter(|s| s.kind == OutcomeKind::Binary).count(), 17);
        assert_eq!(all.iter().filter(|s| s.used_in("exp1")).count(), 29);
        assert_eq!(all.iter().filter(|s| s.used_in("exp3")).count(), 29);
    }

    #[test]
    fn group_matching() {
        let g = vec!["LAB//50971".to_string()];
        assert!(in_group("LAB//50971//mEq/L", &g));
        assert!(in_group("LAB//50971", &g));
        assert!(!in_group("LAB//509710//mEq/L", &g));
    }

    #[test]
    fn hyperkalemia_cases() {
        let s = spec("hyperkalemia");
        let a = adm(vec![ev(30 * H, "LAB//50971//mEq/L", Some(6.7))], 60);
        assert_eq!(label(&a, &s).unwrap().label, Some(1.0));
        let early = adm(vec![ev(10 * H, "LAB//50971//mEq/L", Some(6.6)), ev(30 * H, "LAB//50971//mEq/L", Some(4.0))], 60);
        assert!(!label(&early, &s).unwrap().eligible);
        let none = adm(vec![ev(10 * H, "LAB//50971//mEq/L", Some(4.0))], 60);
        assert!(!label(&none, &s).unwrap().eligible);
        let boundary = adm(vec![ev(24 * H, "LAB//50971//mEq/L", Some(7.0)), ev(25 * H, "LAB//50971//mEq/L", Some(4.0))], 60);
        assert!(!label(&boundary, &s).unwrap().eligible);
    }

    #[test]
    fn los_regression() {
        let r = label(&adm(vec![], 60), &spec("los_hours")).unwrap();
        assert_eq!(r.label, Some(60.0));
        assert_eq!(label(&adm(vec![], 169), &spec("los_gt_7d")).unwrap().label, Some(1.0));
        assert_eq!(label(&adm(vec![], 168), &spec("los_gt_7d")).unwrap().label, Some(0.0));
    }

    #[test]
    fn interventions_absent_are_negative() {
        let s = spec("vasopressor");
        assert_eq!(label(&adm(vec![], 60), &s).unwrap().label, Some(0.0));
        let early = adm(vec![ev(3 * H, "INFUSION_START//221906", None)], 60);
        assert!(!label(&early, &s).unwrap().eligible);
        let late = adm(vec![ev(40 * H, "INFUSION_START//221906//mcg/kg/min", Some(0.1))], 60);
        assert_eq!(label(&late, &s).unwrap().label, Some(1.0));
    }

    #[test]
    fn composite_union() {
        let s = spec("severe_hypertension");
        let sbp = adm(vec![ev(30 * H, "VITAL//220050//mmHg", Some(185.0))], 60);
        let dbp = adm(vec![ev(30 * H, "VITAL//220051//mmHg", Some(125.0))], 60);
        let neither = adm(vec![ev(30 * H, "VITAL//220050//mmHg", Some(150.0)), ev(30 * H, "VITAL//220051//mmHg", Some(90.0))], 60);
        assert_eq!(label(&sbp, &s).unwrap().label, Some(1.0));
        assert_eq!(label(&dbp, &s).unwrap().label, Some(1.0));
        assert_eq!(label(&neither, &s).unwrap().label, Some(0.0));
        assert!(!label(&adm(vec![], 60), &s).unwrap().eligible);
    }

    #[test]
    fn mortality_from_discharge_or_event() {
        let s = spec("mortality");
        let mut a = adm(vec![], 60);
        a.demographics.insert("discharge_type".into(), "DIED".into());
        assert_eq!(label(&a, &s).unwrap().label, Some(1.0));
        let b = adm(vec![ev(50 * H, "MEDS_DEATH", None)], 60);
        assert_eq!(label(&b, &s).unwrap().label, Some(1.0));
        assert_eq!(label(&adm(vec![], 60), &s).unwrap().label, Some(0.0));
    }

    #[test]
    fn icu_duration_sums_segments() {
        let a = adm(
            vec![
                ev(2 * H, "ICU_ADMISSION", None),
                ev(22 * H, "ICU_DISCHARGE", None),
                ev(40 * H, "ICU_ADMISSION", None),
            ],
            80,
        );
        assert_eq!(icu_hours(&a), 60.0);
        assert_eq!(label(&a, &spec("icu_los_gt_48h")).unwrap().label, Some(1.0));
    }

    #[test]
    fn unknown_aggregate_is_config_error() {
        let text = "[[outcome]]\nname = \"x\"\nkind = \"binary\"\naggregate = \"median\"\ncode_group = [\"LAB//1\"]\n";
        assert!(matches!(parse_outcomes(text), Err(Error::Config(_))));
    }

    #[test]
    fn threshold_monotone() {
        let admissions: Vec<Admission> = (0..50)
            .map(|i| adm(vec![ev(30 * H, "LAB//50971//mEq/L", Some(3.0 + 0.1 * f64::from(i)))], 60))
            .collect();
        let mut s = spec("hyperkalemia");
        let mut last = usize::MAX;
        for t in [4.0, 5.0, 6.0, 6.5, 7.0, 9.0] {
            s.threshold = Some(t);
            let c = label_cohort(&admissions, std::slice::from_ref(&s)).unwrap();
            let pos = c.summaries[0].positives.unwrap();
            assert!(pos <= last);
            last = pos;
        }
    }

    #[test]
    fn labels_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let rows = vec![
            LabelRow { admission_id: "a".into(), outcome: "o".into(), eligible: true, label: Some(1.0) },
            LabelRow { admission_id: "b".into(), outcome: "o".into(), eligible: false, label: None },
        ];
        write_labels_csv(&p, &rows).unwrap();
        assert_eq!(read_labels_csv(&p).unwrap(), rows);
    }
}
