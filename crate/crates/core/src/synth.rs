//! Seeded synthetic cohort with planted value distributions, threshold
//! crossings and interventions, plus a per-admission ledger of what was
//! planted.
use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{to_event_rows, Admission, Event, OBSERVATION_WINDOW_SECS};
use crate::io;
use crate::outcomes::{
    Aggregate, DurationSource, OutcomeKind, OutcomeSpec, Window, ICU_ADMISSION_CODE,
    ICU_DISCHARGE_CODE,
};
use crate::rng::SplitMix64;

pub const DEATH_CODE: &str = "MEDS_DEATH";
/// 2100-01-01T00:00:00Z.
const BASE_TIME: i64 = 4_102_444_800;
const HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDist {
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// `lo + k * step`, `k in 0..n`. Half the draws are uniform over the
    /// lattice and half a rounded normal around its centre, so every point
    /// keeps at least `1 / (2n)` of the mass.
    Lattice { lo: f64, step: f64, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Vitals,
    Labs,
    /// Only the first lab draw of the stay.
    FirstLabs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub code: String,
    #[serde(default)]
    pub ref_range: Option<(f64, f64)>,
    pub dist: ValueDist,
    /// Location shift per unit of latent severity (log scale for log-normal).
    #[serde(default)]
    pub severity_shift: f64,
    pub clamp: (f64, f64),
    pub decimals: u32,
    pub schedule: Schedule,
    /// Chance the code is drawn at each round of its schedule.
    #[serde(default = "one")]
    pub prob: f64,
}

/// A planted event: numeric crossing when `value` is set, otherwise a bare
/// categorical event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub name: String,
    pub code: String,
    #[serde(default)]
    pub value: Option<(f64, f64)>,
    #[serde(default)]
    pub decimals: u32,
    /// Chance of a plant after the first 24h.
    pub rate: f64,
    /// Chance of a plant inside the first 24h.
    #[serde(default)]
    pub early_rate: f64,
    #[serde(default)]
    pub severity_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub code: String,
    pub per_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LosSpec {
    pub base_hours: f64,
    pub mu: f64,
    pub sigma: f64,
    pub severity_mu: f64,
    pub max_hours: f64,
}

impl Default for LosSpec {
    fn default() -> Self {
        LosSpec {
            base_hours: 4.0,
            mu: 0.8,
            sigma: 0.7,
            severity_mu: 0.5,
            max_hours: 720.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_subjects: usize,
    /// Weights for 1, 2, 3, ... admissions per subject.
    pub admissions_per_subject: Vec<f64>,
    /// Keep only the first admissions in subject order.
    pub max_admissions: Option<usize>,
    pub vitals_interval_hours: (f64, f64),
    pub lab_interval_hours: f64,
    pub los: LosSpec,
    pub mortality_rate: f64,
    pub mortality_slope: f64,
    pub icu_rate: f64,
    pub icu_slope: f64,
    /// Share of ICU stays that start inside the first 24h.
    pub icu_early_fraction: f64,
    pub icu_hours: (f64, f64),
    pub codes: Vec<CodeSpec>,
    pub plants: Vec<PlantSpec>,
    pub background: Vec<BackgroundSpec>,
}

fn one() -> f64 {
    1.0
}

fn code(
    code: &str,
    ref_range: Option<(f64, f64)>,
    dist: ValueDist,
    severity_shift: f64,
    clamp: (f64, f64),
    decimals: u32,
    schedule: Schedule,
    prob: f64,
) -> CodeSpec {
    CodeSpec {
        code: code.to_string(),
        ref_range,
        dist,
        severity_shift,
        clamp,
        decimals,
        schedule,
        prob,
    }
}

fn plant(name: &str, code: &str, value: Option<(f64, f64)>, decimals: u32, rate: f64, early: f64, slope: f64) -> PlantSpec {
    PlantSpec {
        name: name.to_string(),
        code: code.to_string(),
        value,
        decimals,
        rate,
        early_rate: early,
        severity_slope: slope,
    }
}

pub fn default_codes() -> Vec<CodeSpec> {
    use Schedule::*;
    use ValueDist::*;
    let n = |mean, sd| Normal { mean, sd };
    let ln = |mu, sigma| LogNormal { mu, sigma };
    vec![
        code("VITAL//220045//bpm", None, n(86.0, 12.0), 10.0, (40.0, 129.0), 0, Vitals, 1.0),
        code("VITAL//220179//mmHg", None, n(124.0, 16.0), -8.0, (90.0, 179.0), 0, Vitals, 1.0),
        code("VITAL//220180//mmHg", None, n(68.0, 11.0), -4.0, (35.0, 119.0), 0, Vitals, 1.0),
        code("VITAL//220181//mmHg", None, n(84.0, 10.0), -6.0, (65.0, 130.0), 0, Vitals, 1.0),
        code("VITAL//220210//insp/min", None, n(18.0, 4.0), 3.0, (8.0, 40.0), 0, Vitals, 1.0),
        code("VITAL//220277//%", None, n(96.0, 2.0), -1.5, (82.0, 100.0), 0, Vitals, 1.0),
        code("VITAL//223761//degF", None, n(98.4, 0.9), 0.6, (94.0, 104.0), 1, Vitals, 0.5),
        code("FLUID_OUTPUT//226559//mL", None, ln(5.3, 0.6), -0.3, (0.0, 3000.0), 0, Vitals, 0.3),
        code(
            "LAB//50971//mEq/L",
            Some((3.3, 5.1)),
            Lattice { lo: 3.0, step: 0.1, n: 27 },
            0.2,
            (3.0, 5.6),
            1,
            Labs,
            1.0,
        ),
        code("LAB//50983//mEq/L", Some((133.0, 145.0)), n(139.0, 3.5), -2.0, (121.0, 159.0), 0, Labs, 1.0),
        code("LAB//50912//mg/dL", Some((0.5, 1.2)), ln(0.0, 0.45), 0.45, (0.2, 14.0), 1, Labs, 1.0),
        code("LAB//51006//mg/dL", Some((6.0, 20.0)), ln(2.9, 0.5), 0.4, (2.0, 180.0), 0, Labs, 1.0),
        code("LAB//50931//mg/dL", Some((70.0, 100.0)), n(128.0, 35.0), 15.0, (55.0, 450.0), 0, Labs, 1.0),
        code("LAB//51222//g/dL", Some((12.0, 16.0)), n(11.2, 1.8), -1.0, (7.0, 18.0), 1, Labs, 1.0),
        code("LAB//51301//K/uL", Some((4.0, 11.0)), ln(2.2, 0.4), 0.3, (0.5, 60.0), 1, Labs, 1.0),
        code("LAB//51265//K/uL", Some((150.0, 440.0)), n(220.0, 70.0), -30.0, (10.0, 700.0), 0, Labs, 1.0),
        code("LAB//50902//mEq/L", Some((96.0, 108.0)), n(103.0, 4.0), 0.0, (85.0, 125.0), 0, Labs, 1.0),
        code("LAB//50882//mEq/L", Some((22.0, 32.0)), n(24.0, 3.5), -2.5, (8.0, 45.0), 0, Labs, 1.0),
        code("LAB//50822//mEq/L", Some((3.5, 5.3)), n(4.1, 0.5), 0.2, (2.6, 6.4), 1, Labs, 0.3),
        code("LAB//50963//pg/mL", Some((0.0, 353.0)), ln(6.5, 1.2), 0.8, (5.0, 70000.0), 0, Labs, 0.15),
        code("LAB//50813//mmol/L", Some((0.5, 2.0)), ln(0.5, 0.4), 0.5, (0.3, 20.0), 1, FirstLabs, 1.0),
        code("LAB//51003//ng/mL", Some((0.0, 0.01)), ln(-3.5, 1.0), 0.8, (0.01, 25.0), 2, FirstLabs, 0.4),
    ]
}

pub fn default_plants() -> Vec<PlantSpec> {
    vec![
        plant("hyperkalemia", "LAB//50822//mEq/L", Some((6.5, 7.5)), 1, 0.05, 0.01, 0.5),
        plant("severe_hypokalemia", "LAB//50822//mEq/L", Some((1.8, 2.4)), 1, 0.02, 0.005, 0.0),
        plant("severe_anemia", "LAB//51222//g/dL", Some((5.0, 6.9)), 1, 0.04, 0.01, 0.6),
        plant("hypoglycemia", "LAB//50931//mg/dL", Some((35.0, 53.0)), 0, 0.04, 0.01, 0.3),
        plant("profound_hyponatremia", "LAB//50983//mEq/L", Some((110.0, 119.0)), 0, 0.02, 0.005, 0.3),
        plant("severe_hypernatremia", "LAB//50983//mEq/L", Some((160.0, 168.0)), 0, 0.015, 0.005, 0.5),
        plant("tachycardia", "VITAL//220045//bpm", Some((130.0, 170.0)), 0, 0.08, 0.03, 0.6),
        plant("severe_hypertension", "VITAL//220179//mmHg", Some((180.0, 220.0)), 0, 0.05, 0.02, 0.0),
        plant("hypotension", "VITAL//220181//mmHg", Some((45.0, 64.0)), 0, 0.10, 0.04, 0.7),
        plant("imv", "PROCEDURE//225792", None, 0, 0.08, 0.04, 0.8),
        plant("vasopressor", "INFUSION_START//221906", None, 0, 0.10, 0.04, 0.8),
        plant("crrt", "PROCEDURE//225802", None, 0, 0.03, 0.01, 0.8),
        plant("hemodialysis", "PROCEDURE//225441", None, 0, 0.04, 0.01, 0.5),
    ]
}

pub fn default_background() -> Vec<BackgroundSpec> {
    [
        ("MEDICATION//Heparin", 0.8),
        ("MEDICATION//Insulin", 0.5),
        ("MEDICATION//Acetaminophen", 0.6),
        ("PROCEDURE//225459", 0.2),
        ("TRANSFER//Medicine", 0.1),
    ]
    .into_iter()
    .map(|(c, r)| BackgroundSpec {
        code: c.to_string(),
        per_day: r,
    })
    .collect()
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            n_subjects: 1400,
            admissions_per_subject: vec![0.6, 0.25, 0.15],
            max_admissions: Some(2000),
            vitals_interval_hours: (6.0, 10.0),
            lab_interval_hours: 24.0,
            los: LosSpec::default(),
            mortality_rate: 0.08,
            mortality_slope: 0.9,
            icu_rate: 0.25,
            icu_slope: 0.6,
            icu_early_fraction: 0.5,
            icu_hours: (12.0, 144.0),
            codes: default_codes(),
            plants: default_plants(),
            background: default_background(),
        }
    }
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(format!("{name} = {r} is not a probability")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.admissions_per_subject.is_empty()
            || self.admissions_per_subject.iter().any(|w| !(*w >= 0.0))
            || self.admissions_per_subject.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::config("admissions_per_subject needs non-negative weights"));
        }
        let (lo, hi) = self.vitals_interval_hours;
        if !(lo > 0.0 && hi >= lo) || !(self.lab_interval_hours > 2.0) {
            return Err(Error::config("sampling intervals must be positive"));
        }
        let (lo, hi) = self.icu_hours;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config("icu_hours must be a positive range"));
        }
        if !(self.los.sigma >= 0.0 && self.los.base_hours >= 0.0 && self.los.max_hours > 0.0) {
            return Err(Error::config("invalid length-of-stay distribution"));
        }
        check_rate("mortality_rate", self.mortality_rate)?;
        check_rate("icu_rate", self.icu_rate)?;
        check_rate("icu_early_fraction", self.icu_early_fraction)?;
        for c in &self.codes {
            check_rate(&c.code, c.prob)?;
            let ok = match c.dist {
                ValueDist::Normal { sd, .. } => sd >= 0.0,
                ValueDist::LogNormal { sigma, .. } => sigma >= 0.0,
                ValueDist::Lattice { step, n, .. } => step > 0.0 && n > 0,
            };
            if !ok || c.clamp.0 > c.clamp.1 {
                return Err(Error::config(format!("invalid distribution for {}", c.code)));
            }
        }
        for p in &self.plants {
            check_rate(&p.name, p.rate)?;
            check_rate(&p.name, p.early_rate)?;
        }
        for b in &self.background {
            if !(b.per_day >= 0.0) {
                return Err(Error::config(format!("negative rate for {}", b.code)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub n: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl WindowStats {
    fn add(&mut self, v: Option<f64>) {
        self.n += 1;
        if let Some(v) = v {
            self.min = Some(self.min.map_or(v, |m| m.min(v)));
            self.max = Some(self.max.map_or(v, |m| m.max(v)));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeLedger {
    pub first_24h: WindowStats,
    pub post_24h: WindowStats,
}

/// What the generator put into one admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub admission_id: String,
    pub subject_id: String,
    pub severity: f64,
    pub los_hours: f64,
    pub icu_hours: f64,
    pub died: bool,
    pub discharge_type: String,
    /// Plant names; early plants carry an `@24h` suffix.
    pub planted: Vec<String>,
    pub codes: BTreeMap<String, CodeLedger>,
}

fn scaled_rate(rate: f64, slope: f64, severity: f64) -> f64 {
    (rate * (1.0 + slope * severity)).clamp(0.0, 1.0)
}

fn round_to(v: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (v * f).round() / f
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.unit()
}

fn gauss(rng: &mut SplitMix64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).map_or(mean, |d| d.sample(rng))
}

fn draw_value(spec: &CodeSpec, severity: f64, rng: &mut SplitMix64) -> f64 {
    let shift = spec.severity_shift * severity;
    let v = match spec.dist {
        ValueDist::Normal { mean, sd } => gauss(rng, mean + shift, sd),
        ValueDist::LogNormal { mu, sigma } => gauss(rng, mu + shift, sigma).exp(),
        ValueDist::Lattice { lo, step, n } => {
            let k = if rng.unit() < 0.5 {
                rng.below(n)
            } else {
                let centre = (n - 1) as f64 / 2.0 + shift / step;
                gauss(rng, centre, n as f64 / 6.0).round().clamp(0.0, (n - 1) as f64) as usize
            };
            lo + k as f64 * step
        }
    };
    round_to(v.clamp(spec.clamp.0, spec.clamp.1), spec.decimals)
}

const RACES: &[&str] = &["WHITE", "BLACK/AFRICAN AMERICAN", "HISPANIC/LATINO", "ASIAN", "OTHER", "UNKNOWN"];
const RACE_W: &[f64] = &[0.62, 0.16, 0.07, 0.05, 0.06, 0.04];
const LANGUAGES: &[&str] = &["ENGLISH", "SPANISH", "OTHER"];
const LANGUAGE_W: &[f64] = &[0.88, 0.06, 0.06];
const AGE_BANDS: &[&str] = &["18-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80-89", "90+"];
const INSURANCE: &[&str] = &["Medicare", "Medicaid", "Private", "Other"];
const MARITAL: &[&str] = &["MARRIED", "SINGLE", "WIDOWED", "DIVORCED"];
const ADMISSION_TYPES: &[&str] = &["EW EMER.", "URGENT", "ELECTIVE", "OBSERVATION ADMIT"];
const ADMISSION_TYPE_W: &[f64] = &[0.55, 0.2, 0.15, 0.1];
const DISCHARGES: &[&str] = &["HOME", "HOME HEALTH CARE", "SKILLED NURSING FACILITY", "REHAB"];

fn pick<'a>(rng: &mut SplitMix64, items: &[&'a str], weights: Option<&[f64]>) -> &'a str {
    match weights {
        None => items[rng.below(items.len())],
        Some(w) => items[weighted(rng, w)],
    }
}

fn weighted(rng: &mut SplitMix64, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.unit() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.len() - 1
}

struct Builder {
    admission: Admission,
    ledger: LedgerEntry,
    cut: i64,
    ref_ranges: BTreeMap<String, (f64, f64)>,
}

impl Builder {
    fn push(&mut self, code: &str, time: i64, value: Option<f64>) {
        debug_assert!(time >= self.admission.admit_time && time <= self.admission.discharge_time);
        let rr = value.and(self.ref_ranges.get(code).copied());
        self.admission.events.push(Event {
            subject_id: self.admission.subject_id.clone(),
            admission_id: self.admission.admission_id.clone(),
            time,
            code: code.to_string(),
            numeric_value: value,
            ref_lo: rr.map(|r| r.0),
            ref_hi: rr.map(|r| r.1),
        });
        let slot = self.ledger.codes.entry(code.to_string()).or_default();
        if time <= self.cut {
            slot.first_24h.add(value);
        } else {
            slot.post_24h.add(value);
        }
    }
}

fn secs(hours: f64) -> i64 {
    (hours * HOUR).round() as i64
}

/// Uniform second in `[lo, hi]`.
fn time_in(rng: &mut SplitMix64, lo: i64, hi: i64) -> i64 {
    lo + rng.below((hi - lo + 1) as usize) as i64
}

fn generate_admission(
    cfg: &GeneratorConfig,
    rng: &mut SplitMix64,
    subject_id: &str,
    admission_id: String,
    admit: i64,
    demo: &BTreeMap<String, String>,
) -> (Admission, LedgerEntry) {
    let s = 2.0 * rng.unit() - 1.0;
    let los = &cfg.los;
    let los_h = (los.base_hours + 24.0 * gauss(rng, los.mu + los.severity_mu * s, los.sigma).exp())
        .min(los.max_hours);
    // Whole minutes keep timestamps readable.
    let discharge = admit + (los_h * 60.0).round().max(1.0) as i64 * 60;
    let died = rng.unit() < scaled_rate(cfg.mortality_rate, cfg.mortality_slope, s);
    let mut demographics = demo.clone();
    demographics.insert(
        "admission_type".into(),
        pick(rng, ADMISSION_TYPES, Some(ADMISSION_TYPE_W)).into(),
    );
    let discharge_type = if died {
        "DIED".to_string()
    } else {
        pick(rng, DISCHARGES, None).to_string()
    };
    demographics.insert("discharge_type".into(), discharge_type.clone());
    let cut = admit + OBSERVATION_WINDOW_SECS;
    let mut b = Builder {
        admission: Admission {
            admission_id: admission_id.clone(),
            subject_id: subject_id.to_string(),
            admit_time: admit,
            discharge_time: discharge,
            demographics,
            events: Vec::new(),
            truncated_at: None,
        },
        ledger: LedgerEntry {
            admission_id,
            subject_id: subject_id.to_string(),
            severity: s,
            los_hours: (discharge - admit) as f64 / HOUR,
            icu_hours: 0.0,
            died,
            discharge_type,
            planted: Vec::new(),
            codes: BTreeMap::new(),
        },
        cut,
        ref_ranges: cfg
            .codes
            .iter()
            .filter_map(|c| Some((c.code.clone(), c.ref_range?)))
            .collect(),
    };

    let (vlo, vhi) = cfg.vitals_interval_hours;
    let mut t = admit + secs(uniform(rng, 0.0, 1.0));
    while t <= discharge {
        for c in cfg.codes.iter().filter(|c| c.schedule == Schedule::Vitals) {
            if rng.unit() < c.prob {
                let v = draw_value(c, s, rng);
                b.push(&c.code, t, Some(v));
            }
        }
        t += secs(uniform(rng, vlo, vhi));
    }
    let mut t = admit + secs(uniform(rng, 0.5, 3.0));
    let mut first = true;
    while t <= discharge {
        for c in &cfg.codes {
            let due = match c.schedule {
                Schedule::Labs => true,
                Schedule::FirstLabs => first,
                Schedule::Vitals => false,
            };
            if due && rng.unit() < c.prob {
                let v = draw_value(c, s, rng);
                b.push(&c.code, t, Some(v));
            }
        }
        first = false;
        t += secs(cfg.lab_interval_hours + uniform(rng, -2.0, 2.0));
    }
    let days = (discharge - admit) as f64 / 86_400.0;
    for bg in &cfg.background {
        let n = match Poisson::new(bg.per_day * days) {
            Ok(d) => d.sample(rng) as usize,
            Err(_) => 0,
        };
        for _ in 0..n {
            let t = time_in(rng, admit, discharge);
            b.push(&bg.code, t, None);
        }
    }
    let early_end = cut.min(discharge);
    for p in &cfg.plants {
        let post = rng.unit() < scaled_rate(p.rate, p.severity_slope, s);
        let early = rng.unit() < scaled_rate(p.early_rate, p.severity_slope, s);
        let value = |rng: &mut SplitMix64| p.value.map(|(lo, hi)| round_to(uniform(rng, lo, hi), p.decimals));
        if post && discharge > cut {
            let t = time_in(rng, cut + 1, discharge);
            let v = value(rng);
            b.push(&p.code, t, v);
            b.ledger.planted.push(p.name.clone());
        }
        if early {
            let t = time_in(rng, admit, early_end);
            let v = value(rng);
            b.push(&p.code, t, v);
            b.ledger.planted.push(format!("{}@24h", p.name));
        }
    }
    if rng.unit() < scaled_rate(cfg.icu_rate, cfg.icu_slope, s) {
        let start = if rng.unit() < cfg.icu_early_fraction || discharge <= cut {
            time_in(rng, admit, early_end)
        } else {
            time_in(rng, cut + 1, discharge)
        };
        let end = start + secs(uniform(rng, cfg.icu_hours.0, cfg.icu_hours.1));
        b.push(ICU_ADMISSION_CODE, start, None);
        let stop = if end < discharge {
            b.push(ICU_DISCHARGE_CODE, end, None);
            end
        } else {
            discharge
        };
        b.ledger.icu_hours = (stop - start) as f64 / HOUR;
    }
    if died {
        b.push(DEATH_CODE, discharge, None);
    }
    b.admission.sort_events();
    (b.admission, b.ledger)
}

fn generate_subject(cfg: &GeneratorConfig, index: usize) -> Vec<(Admission, LedgerEntry)> {
    let mut rng = SplitMix64::for_stream(cfg.seed, index as u64);
    let subject_id = format!("{}", 10_000_000 + index);
    let mut demo = BTreeMap::new();
    demo.insert("race".to_string(), pick(&mut rng, RACES, Some(RACE_W)).to_string());
    demo.insert("language".to_string(), pick(&mut rng, LANGUAGES, Some(LANGUAGE_W)).to_string());
    demo.insert("sex".to_string(), pick(&mut rng, &["F", "M"], None).to_string());
    demo.insert("age".to_string(), pick(&mut rng, AGE_BANDS, None).to_string());
    demo.insert("insurance".to_string(), pick(&mut rng, INSURANCE, None).to_string());
    demo.insert("marital".to_string(), pick(&mut rng, MARITAL, None).to_string());
    let n_adm = weighted(&mut rng, &cfg.admissions_per_subject) + 1;
    let mut admit = BASE_TIME + rng.below(730) as i64 * 86_400 + rng.below(86_400) as i64;
    let mut out = Vec::with_capacity(n_adm);
    for k in 0..n_adm {
        let id = format!("{}", 20_000_000 + index * 10 + k);
        let (a, l) = generate_admission(cfg, &mut rng, &subject_id, id, admit, &demo);
        admit = a.discharge_time + (10 + rng.below(190)) as i64 * 86_400 + rng.below(86_400) as i64;
        out.push((a, l));
    }
    out
}

/// Deterministic in `cfg`; subjects are generated in parallel from
/// per-subject streams.
pub fn generate(cfg: &GeneratorConfig) -> Result<(Vec<Admission>, Vec<LedgerEntry>)> {
    cfg.validate()?;
    let per_subject: Vec<Vec<(Admission, LedgerEntry)>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(cfg, i))
        .collect();
    let limit = cfg.max_admissions.unwrap_or(usize::MAX);
    Ok(per_subject.into_iter().flatten().take(limit).unzip())
}

fn group_match(code: &str, group: &[String]) -> bool {
    group
        .iter()
        .any(|g| code == g || (code.starts_with(g.as_str()) && code[g.len()..].starts_with("//")))
}

#[derive(Clone, Copy)]
enum Part {
    First,
    Post,
    Whole,
}

fn ledger_stats(e: &LedgerEntry, group: &[String], part: Part) -> WindowStats {
    let mut out = WindowStats::default();
    for (code, c) in &e.codes {
        if !group_match(code, group) {
            continue;
        }
        let parts: &[&WindowStats] = match part {
            Part::First => &[&c.first_24h],
            Part::Post => &[&c.post_24h],
            Part::Whole => &[&c.first_24h, &c.post_24h],
        };
        for w in parts {
            out.n += w.n;
            for v in [w.min, w.max].into_iter().flatten() {
                out.min = Some(out.min.map_or(v, |m: f64| m.min(v)));
                out.max = Some(out.max.map_or(v, |m: f64| m.max(v)));
            }
        }
    }
    out
}

fn pick_extreme(w: &WindowStats, agg: Aggregate) -> Option<f64> {
    match agg {
        Aggregate::Max => w.max,
        Aggregate::Min => w.min,
        _ => None,
    }
}

fn bit(b: bool) -> Option<f64> {
    Some(f64::from(u8::from(b)))
}

/// Label of one outcome read off the ledger alone.
pub fn ledger_label(e: &LedgerEntry, spec: &OutcomeSpec) -> Result<Option<f64>> {
    let agg = spec.aggregate()?;
    let main = match spec.window {
        Window::Post24h => Part::Post,
        Window::WholeStay => Part::Whole,
    };
    let thr = || {
        spec.threshold
            .zip(spec.direction)
            .ok_or_else(|| Error::config(format!("outcome {} lacks a threshold", spec.name)))
    };
    Ok(match agg {
        Aggregate::Duration => {
            let h = match spec.duration {
                DurationSource::Hospital => e.los_hours,
                DurationSource::Icu => e.icu_hours,
            };
            match spec.kind {
                OutcomeKind::Regression => Some(h),
                OutcomeKind::Binary => {
                    let (t, d) = thr()?;
                    bit(d.test(h, t))
                }
            }
        }
        Aggregate::Exists => {
            let dt = e.discharge_type.to_lowercase();
            let by_discharge = spec.discharge_contains.iter().any(|s| dt.contains(&s.to_lowercase()))
                || spec.discharge_equals.iter().any(|s| dt == s.to_lowercase());
            if spec.exclusion_24h && ledger_stats(e, &spec.code_group, Part::First).n > 0 {
                None
            } else {
                bit(ledger_stats(e, &spec.code_group, main).n > 0 || by_discharge)
            }
        }
        Aggregate::Max | Aggregate::Min => {
            let post = pick_extreme(&ledger_stats(e, &spec.code_group, main), agg);
            if spec.kind == OutcomeKind::Regression {
                post
            } else {
                let (t, d) = thr()?;
                let early = pick_extreme(&ledger_stats(e, &spec.code_group, Part::First), agg);
                if spec.exclusion_24h && early.is_some_and(|v| d.test(v, t)) {
                    None
                } else if post.is_none() {
                    if spec.require_post24h_measurement {
                        None
                    } else {
                        bit(false)
                    }
                } else {
                    bit(post.is_some_and(|v| d.test(v, t)))
                }
            }
        }
        Aggregate::Any => {
            let (mut early, mut met, mut measured) = (false, false, false);
            for c in &spec.components {
                let cagg: Aggregate = c.aggregate.parse()?;
                if let Some(v) = pick_extreme(&ledger_stats(e, &c.code_group, Part::First), cagg) {
                    early |= c.direction.test(v, c.threshold);
                }
                if let Some(v) = pick_extreme(&ledger_stats(e, &c.code_group, main), cagg) {
                    measured = true;
                    met |= c.direction.test(v, c.threshold);
                }
            }
            if (spec.exclusion_24h && early) || (!measured && spec.require_post24h_measurement) {
                None
            } else {
                bit(met)
            }
        }
    })
}

pub const EVENTS_FILE: &str = "events.jsonl";
pub const ADMISSIONS_FILE: &str = "admissions.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";

/// Writes events, the admission scaffold companion and the ledger as JSONL.
pub fn write_cohort(dir: &Path, admissions: &[Admission], ledger: &[LedgerEntry]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (events, infos) = to_event_rows(admissions);
    io::write_jsonl(&dir.join(EVENTS_FILE), &events)?;
    io::write_jsonl(&dir.join(ADMISSIONS_FILE), &infos)?;
    io::write_jsonl(&dir.join(LEDGER_FILE), ledger)
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerEntry>> {
    io::read_jsonl(path)
}
