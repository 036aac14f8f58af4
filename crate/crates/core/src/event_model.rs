//! Event and admission data model, event-file ingestion, patient-level
//! splitting and the first-24h observation cut.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io;
use crate::rng::SplitMix64;

/// Seconds in the observation window used for first-24h timelines.
pub const OBSERVATION_WINDOW_SECS: i64 = 24 * 3600;

/// Code families recognised by default. Numeric-ness is decided per event by
/// the presence of a value, not by family.
pub const DEFAULT_FAMILIES: &[&str] = &[
    "LAB",
    "VITAL",
    "INFUSION_START",
    "SUBJECT_WEIGHT_AT_INFUSION",
    "FLUID_OUTPUT",
    "MEDICATION",
    "INFUSION_END",
    "TRANSFER",
    "ICU_ADMISSION",
    "ICU_DISCHARGE",
    "PROCEDURE",
    "PROCEDURE_END",
    "MEDS_DEATH",
];

/// Demographic attributes emitted before the events, in this order.
pub const PREFIX_SCAFFOLD: &[&str] = &[
    "race",
    "language",
    "sex",
    "age",
    "insurance",
    "marital",
    "admission_type",
];

/// Attributes emitted after the events of a full timeline.
pub const SUFFIX_SCAFFOLD: &[&str] = &["discharge_type"];

pub fn default_families() -> Vec<String> {
    DEFAULT_FAMILIES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub subject_id: String,
    pub admission_id: String,
    /// UTC epoch seconds.
    pub time: i64,
    pub code: String,
    #[serde(default)]
    pub numeric_value: Option<f64>,
    #[serde(default)]
    pub ref_lo: Option<f64>,
    #[serde(default)]
    pub ref_hi: Option<f64>,
}

impl Event {
    pub fn is_numeric(&self) -> bool {
        self.numeric_value.is_some()
    }

    /// Leading `//`-separated segment of the code.
    pub fn family(&self) -> &str {
        code_family(&self.code)
    }

    pub fn reference_range(&self) -> Option<(f64, f64)> {
        match (self.ref_lo, self.ref_hi) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        }
    }

    pub fn validate(&self, families: &[String]) -> Result<()> {
        if self.code.is_empty() {
            return Err(Error::invalid("empty code"));
        }
        let fam = self.family();
        if !families.iter().any(|f| f == fam) {
            return Err(Error::invalid(format!(
                "code {:?} has unknown family {fam:?}",
                self.code
            )));
        }
        if let Some(v) = self.numeric_value {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite numeric_value"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.ref_lo, self.ref_hi) {
            if lo > hi {
                return Err(Error::invalid(format!("ref_lo {lo} > ref_hi {hi}")));
            }
        }
        Ok(())
    }
}

pub fn code_family(code: &str) -> &str {
    code.split("//").next().unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub admission_id: String,
    pub subject_id: String,
    pub admit_time: i64,
    pub discharge_time: i64,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    pub events: Vec<Event>,
    /// Set when the timeline has been cut to an observation window; the
    /// discharge scaffold is then withheld by the tokenizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_at: Option<i64>,
}

impl Admission {
    pub fn los_hours(&self) -> f64 {
        (self.discharge_time - self.admit_time) as f64 / 3600.0
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated_at.is_some()
    }

    /// Stable sort by time; equal timestamps keep input order.
    pub fn sort_events(&mut self) {
        self.events.sort_by_key(|e| e.time);
    }
}

/// Keeps events with `time <= admit_time + 24h` (closed boundary).
pub fn cut_first_24h(a: &Admission) -> Admission {
    let cut = a.admit_time + OBSERVATION_WINDOW_SECS;
    Admission {
        events: a.events.iter().filter(|e| e.time <= cut).cloned().collect(),
        truncated_at: Some(a.truncated_at.map_or(cut, |t| t.min(cut))),
        ..a.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val", alias = "validation")]
    Validation,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub subjects: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, subject_id: &str) -> Option<Split> {
        self.subjects.get(subject_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.subjects.values().filter(|s| **s == split).count()
    }

    pub fn filter<'a>(&self, admissions: &'a [Admission], split: Split) -> Vec<&'a Admission> {
        admissions
            .iter()
            .filter(|a| self.get(&a.subject_id) == Some(split))
            .collect()
    }
}

/// Assigns subjects to train/validation/test.
///
/// Unique subjects are sorted, shuffled with a seeded SplitMix64 stream and
/// cut at `round(r_train * n)` and `round(r_val * n)`; the remainder is test.
pub fn split_subjects<S: AsRef<str>>(
    subjects: &[S],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || ((rt + rv + rs) - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split ratios must be in [0,1] and sum to 1, got {ratios:?}"
        )));
    }
    let unique: BTreeSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
    if unique.is_empty() {
        return Err(Error::invalid("no subjects to split"));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    let mut out = SplitAssignment::default();
    if order.len() < 3 {
        log::warn!(
            "only {} subject(s); assigning everything to train",
            order.len()
        );
        for s in order {
            out.subjects.insert(s.to_string(), Split::Train);
        }
        return Ok(out);
    }
    let mut rng = SplitMix64::new(seed);
    order.shuffle(&mut rng);
    let n = order.len();
    let n_train = ((rt * n as f64).round() as usize).min(n);
    let n_val = ((rv * n as f64).round() as usize).min(n - n_train);
    for (i, s) in order.into_iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        out.subjects.insert(s.to_string(), split);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(EventFormat::Jsonl),
            "csv" => Ok(EventFormat::Csv),
            other => Err(Error::invalid(format!("unknown event format {other:?}"))),
        }
    }
}

/// Fixed CSV header for event files.
pub const CSV_HEADER: [&str; 7] = [
    "subject_id",
    "admission_id",
    "time",
    "code",
    "numeric_value",
    "ref_lo",
    "ref_hi",
];

/// Companion row carrying the admission scaffold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionInfo {
    pub admission_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    pub admit_time: Value,
    pub discharge_time: Value,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_accepted: usize,
    pub rejected: Vec<RejectedRow>,
    pub admissions: usize,
    pub admissions_without_scaffold: usize,
}

/// Parses ISO-8601 (with or without offset, date-only allowed) or integer
/// epoch seconds into UTC epoch seconds.
pub fn parse_time(raw: &str) -> Result<i64> {
    let s = raw.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(Error::invalid(format!("unparseable timestamp {raw:?}")))
}

fn time_from_value(v: &Value) -> Result<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .ok_or_else(|| Error::invalid(format!("non-integer epoch time {n}"))),
        Value::String(s) => parse_time(s),
        other => Err(Error::invalid(format!("bad time value {other}"))),
    }
}

fn id_from_value(v: Option<&Value>, field: &str) -> Result<String> {
    match v {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::invalid(format!("missing {field}"))),
    }
}

fn opt_real_from_value(v: Option<&Value>, field: &str) -> Result<Option<f64>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(Value::String(s)) => opt_real_from_str(s, field),
        Some(other) => Err(Error::invalid(format!("bad {field} value {other}"))),
    }
}

fn opt_real_from_str(s: &str, field: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("null") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::invalid(format!("bad {field} value {s:?}")))
}

fn event_from_json(line: &str) -> Result<Event> {
    let v: Value = serde_json::from_str(line)?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::invalid("row is not a JSON object"))?;
    let subject_id = id_from_value(obj.get("subject_id"), "subject_id")?;
    let admission_id = id_from_value(obj.get("admission_id"), "admission_id")?;
    let time = match obj.get("time") {
        Some(Value::Null) | None => return Err(Error::invalid("missing time")),
        Some(t) => time_from_value(t)?,
    };
    let code = match obj.get("code") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        _ => return Err(Error::invalid("missing code")),
    };
    Ok(Event {
        subject_id,
        admission_id,
        time,
        code,
        numeric_value: opt_real_from_value(obj.get("numeric_value"), "numeric_value")?,
        ref_lo: opt_real_from_value(obj.get("ref_lo"), "ref_lo")?,
        ref_hi: opt_real_from_value(obj.get("ref_hi"), "ref_hi")?,
    })
}

fn event_from_csv(rec: &csv::StringRecord) -> Result<Event> {
    let field = |i: usize| rec.get(i).unwrap_or("").trim();
    let required = |i: usize| -> Result<String> {
        let s = field(i);
        if s.is_empty() {
            Err(Error::invalid(format!("missing {}", CSV_HEADER[i])))
        } else {
            Ok(s.to_string())
        }
    };
    Ok(Event {
        subject_id: required(0)?,
        admission_id: required(1)?,
        time: parse_time(&required(2)?)?,
        code: required(3)?,
        numeric_value: opt_real_from_str(field(4), "numeric_value")?,
        ref_lo: opt_real_from_str(field(5), "ref_lo")?,
        ref_hi: opt_real_from_str(field(6), "ref_hi")?,
    })
}

/// Reads event rows, returning accepted events in input order together with
/// the rejection log. Only an unreadable source is fatal.
pub fn read_events<R: BufRead>(
    reader: R,
    format: EventFormat,
    families: &[String],
) -> Result<(Vec<Event>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut events = Vec::new();
    let mut accept = |line: usize, parsed: Result<Event>, report: &mut IngestReport| {
        report.rows_read += 1;
        match parsed.and_then(|e| e.validate(families).map(|_| e)) {
            Ok(e) => {
                report.rows_accepted += 1;
                events.push(e);
            }
            Err(err) => report.rejected.push(RejectedRow {
                line,
                reason: err.to_string(),
            }),
        }
    };
    match format {
        EventFormat::Jsonl => {
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io("<events>", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                accept(i + 1, event_from_json(&line), &mut report);
            }
        }
        EventFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(reader);
            let header = rdr.headers()?.clone();
            let got: Vec<&str> = header.iter().map(str::trim).collect();
            if got != CSV_HEADER {
                return Err(Error::invalid(format!(
                    "unexpected CSV header {got:?}, expected {CSV_HEADER:?}"
                )));
            }
            for rec in rdr.records() {
                let rec = rec?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                accept(line, event_from_csv(&rec), &mut report);
            }
        }
    }
    Ok((events, report))
}

pub fn read_admission_info<R: BufRead>(reader: R) -> Result<HashMap<String, AdmissionInfo>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<demographics>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let info: AdmissionInfo = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("demographics line {}: {e}", i + 1)))?;
        out.insert(info.admission_id.clone(), info);
    }
    Ok(out)
}

/// Groups events into admissions ordered by admission id. Events of one
/// admission are stably sorted by time. Admissions without a companion row
/// take their span from the first and last event.
pub fn assemble(
    events: Vec<Event>,
    info: &HashMap<String, AdmissionInfo>,
    report: &mut IngestReport,
) -> Result<Vec<Admission>> {
    let mut groups: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for e in events {
        groups.entry(e.admission_id.clone()).or_default().push(e);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (admission_id, mut evs) in groups {
        let subject_id = evs[0].subject_id.clone();
        if let Some(bad) = evs.iter().find(|e| e.subject_id != subject_id) {
            return Err(Error::invalid(format!(
                "admission {admission_id} spans subjects {subject_id} and {}",
                bad.subject_id
            )));
        }
        evs.sort_by_key(|e| e.time);
        let (admit_time, discharge_time, demographics) = match info.get(&admission_id) {
            Some(i) => (
                time_from_value(&i.admit_time)?,
                time_from_value(&i.discharge_time)?,
                i.demographics.clone(),
            ),
            None => {
                report.admissions_without_scaffold += 1;
                (evs[0].time, evs[evs.len() - 1].time, BTreeMap::new())
            }
        };
        if discharge_time < admit_time {
            return Err(Error::invalid(format!(
                "admission {admission_id}: discharge before admit"
            )));
        }
        out.push(Admission {
            admission_id,
            subject_id,
            admit_time,
            discharge_time,
            demographics,
            events: evs,
            truncated_at: None,
        });
    }
    report.admissions = out.len();
    Ok(out)
}

/// Reads an event file (and optional companion scaffold file) into admissions.
pub fn ingest(
    path: &Path,
    format: EventFormat,
    demographics: Option<&Path>,
    families: &[String],
) -> Result<(Vec<Admission>, IngestReport)> {
    let (events, mut report) = read_events(io::open(path)?, format, families)?;
    let info = match demographics {
        Some(p) => read_admission_info(io::open(p)?)?,
        None => HashMap::new(),
    };
    let admissions = assemble(events, &info, &mut report)?;
    Ok((admissions, report))
}

/// Flattens admissions back to their event rows and companion rows.
pub fn to_event_rows(admissions: &[Admission]) -> (Vec<Event>, Vec<AdmissionInfo>) {
    let mut events = Vec::new();
    let mut infos = Vec::with_capacity(admissions.len());
    for a in admissions {
        events.extend(a.events.iter().cloned());
        infos.push(AdmissionInfo {
            admission_id: a.admission_id.clone(),
            subject_id: Some(a.subject_id.clone()),
            admit_time: Value::from(a.admit_time),
            discharge_time: Value::from(a.discharge_time),
            demographics: a.demographics.clone(),
        });
    }
    (events, infos)
}

pub fn write_events_csv(path: &Path, events: &[Event]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    w.write_record(CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in events {
        w.write_record([
            e.subject_id.clone(),
            e.admission_id.clone(),
            e.time.to_string(),
            e.code.clone(),
            opt(e.numeric_value),
            opt(e.ref_lo),
            opt(e.ref_hi),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fams() -> Vec<String> {
        default_families()
    }

    fn ev(adm: &str, t: i64, code: &str) -> Event {
        Event {
            subject_id: "s1".into(),
            admission_id: adm.into(),
            time: t,
            code: code.into(),
            numeric_value: None,
            ref_lo: None,
            ref_hi: None,
        }
    }

    fn adm(events: Vec<Event>) -> Admission {
        Admission {
            admission_id: "a1".into(),
            subject_id: "s1".into(),
            admit_time: 0,
            discharge_time: 100 * 3600,
            demographics: BTreeMap::new(),
            events,
            truncated_at: None,
        }
    }

    #[test]
    fn unsorted_rows_become_sorted_admission() {
        let data = r#"{"subject_id":"s1","admission_id":"a1","time":200,"code":"LAB//1//mg","numeric_value":1.5,"ref_lo":null,"ref_hi":null}
{"subject_id":"s1","admission_id":"a1","time":"1970-01-01T00:01:40Z","code":"TRANSFER//ICU","numeric_value":null,"ref_lo":null,"ref_hi":null}
"#;
        let (events, mut report) = read_events(data.as_bytes(), EventFormat::Jsonl, &fams()).unwrap();
        let adms = assemble(events, &HashMap::new(), &mut report).unwrap();
        assert_eq!(adms.len(), 1);
        let times: Vec<i64> = adms[0].events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![100, 200]);
        assert_eq!(report.admissions_without_scaffold, 1);
    }

    #[test]
    fn empty_numeric_value_is_categorical() {
        let data = "subject_id,admission_id,time,code,numeric_value,ref_lo,ref_hi\n\
                    s1,a1,10,LAB//50971//mEq/L,,,\n";
        let (events, report) = read_events(data.as_bytes(), EventFormat::Csv, &fams()).unwrap();
        assert_eq!(report.rows_accepted, 1);
        assert!(!events[0].is_numeric());
    }

    #[test]
    fn rows_missing_required_fields_are_rejected_with_line() {
        let data = "subject_id,admission_id,time,code,numeric_value,ref_lo,ref_hi\n\
                    s1,a1,10,LAB//1//x,1,,\n\
                    s1,,10,LAB//1//x,1,,\n\
                    s1,a1,,LAB//1//x,1,,\n\
                    s1,a1,10,BOGUS//1,1,,\n\
                    s1,a1,10,LAB//1//x,1,5,2\n";
        let (events, report) = read_events(data.as_bytes(), EventFormat::Csv, &fams()).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(report.rejected.len(), 4);
        let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6]);
    }

    #[test]
    fn groups_by_admission() {
        let mut rows = String::new();
        for s in 0..3 {
            for a in 0..2 {
                for t in 0..3 {
                    rows.push_str(&format!(
                        "{{\"subject_id\":\"s{s}\",\"admission_id\":\"s{s}a{a}\",\"time\":{t},\"code\":\"VITAL//220045//bpm\",\"numeric_value\":80}}\n"
                    ));
                }
            }
        }
        let (events, mut report) = read_events(rows.as_bytes(), EventFormat::Jsonl, &fams()).unwrap();
        let adms = assemble(events, &HashMap::new(), &mut report).unwrap();
        let subjects: BTreeSet<&str> = adms.iter().map(|a| a.subject_id.as_str()).collect();
        assert_eq!(subjects.len(), 3);
        assert_eq!(adms.len(), 6);
    }

    #[test]
    fn timestamps_parse() {
        assert_eq!(parse_time("86400").unwrap(), 86400);
        assert_eq!(parse_time("1970-01-02").unwrap(), 86400);
        assert_eq!(parse_time("1970-01-02T00:00:00").unwrap(), 86400);
        assert_eq!(parse_time("1970-01-02 01:00:00").unwrap(), 90000);
        assert_eq!(parse_time("1970-01-02T02:00:00+01:00").unwrap(), 90000);
        assert!(parse_time("yesterday").is_err());
    }

    #[test]
    fn split_ten_subjects() {
        let subjects: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let a = split_subjects(&subjects, (0.7, 0.1, 0.2), 42).unwrap();
        assert_eq!(
            (a.count(Split::Train), a.count(Split::Validation), a.count(Split::Test)),
            (7, 1, 2)
        );
        let b = split_subjects(&subjects, (0.7, 0.1, 0.2), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_hundred_subjects() {
        let subjects: Vec<String> = (0..100).map(|i| format!("s{i}")).collect();
        let a = split_subjects(&subjects, (0.7, 0.1, 0.2), 1).unwrap();
        let mut counts = [0usize; 3];
        for s in a.subjects.values() {
            counts[*s as usize] += 1;
        }
        assert_eq!(counts, [70, 10, 20]);
    }

    #[test]
    fn split_few_subjects_goes_to_train() {
        let a = split_subjects(&["x", "y"], (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!(a.count(Split::Train), 2);
        assert!(split_subjects::<&str>(&[], (0.7, 0.1, 0.2), 1).is_err());
        assert!(split_subjects(&["x"], (0.5, 0.1, 0.2), 1).is_err());
    }

    #[test]
    fn cut_boundary_is_closed() {
        let h = 3600;
        let a = adm(vec![
            ev("a1", 23 * h + 59 * 60, "LAB//1//x"),
            ev("a1", 24 * h, "LAB//2//x"),
            ev("a1", 24 * h + 60, "LAB//3//x"),
        ]);
        let cut = cut_first_24h(&a);
        let codes: Vec<&str> = cut.events.iter().map(|e| e.code.as_str()).collect();
        assert_eq!(codes, vec!["LAB//1//x", "LAB//2//x"]);
        assert_eq!(cut_first_24h(&cut), cut);
    }

    #[test]
    fn cut_keeps_pre_cut_events() {
        let h = 3600;
        let mut evs: Vec<Event> = (0..5).map(|i| ev("a1", i * 4 * h, "LAB//1//x")).collect();
        evs.extend((0..3).map(|i| ev("a1", 30 * h + i * h, "LAB//1//x")));
        let a = adm(evs);
        let expected = a.events.iter().filter(|e| e.time <= 24 * h).count();
        let cut = cut_first_24h(&a);
        assert_eq!(cut.events.len(), expected);
        assert_eq!(cut.events.len(), 5);
        assert_eq!(cut.demographics, a.demographics);
    }
}
