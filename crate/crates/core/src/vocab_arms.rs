//! Vocabulary remapping arms: mapping-table rewrite, randomized
//! within-domain assignment and frequency-matched greedy assignment. Only
//! code strings change; times and values are carried over untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{code_family, Admission, RejectedRow};
use crate::io;
use crate::rng::SplitMix64;

/// LAB/VITAL itemid inventory shipped with the crate.
pub const DEFAULT_MAPPING_CSV: &str = include_str!("../data/clif_mapping.csv");

/// Per-domain `source_code -> target_category`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingTable {
    pub domains: BTreeMap<String, BTreeMap<String, String>>,
    /// Keep the `//<unit>` tail of rewritten codes.
    pub preserve_units: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingLoad {
    pub table: MappingTable,
    pub rejected: Vec<RejectedRow>,
}

/// Splits `FAMILY//source//unit...` into its three parts.
pub fn split_code(code: &str) -> (&str, Option<&str>, Option<&str>) {
    let mut parts = code.splitn(3, "//");
    let family = parts.next().unwrap_or("");
    (family, parts.next(), parts.next())
}

impl MappingTable {
    /// Reads `domain,source_code,target_category` rows. Malformed rows and
    /// conflicting duplicates are skipped and reported.
    pub fn from_reader<R: Read>(reader: R) -> Result<MappingLoad> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("mapping table lacks column {name:?}")))
        };
        let (di, si, ti) = (col("domain")?, col("source_code")?, col("target_category")?);
        let mut table = MappingTable {
            domains: BTreeMap::new(),
            preserve_units: true,
        };
        let mut rejected = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    rejected.push(RejectedRow { line, reason: e.to_string() });
                    continue;
                }
            };
            if rec.len() != headers.len() {
                rejected.push(RejectedRow {
                    line,
                    reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
                continue;
            }
            let (d, s, t) = (&rec[di], &rec[si], &rec[ti]);
            if d.is_empty() || s.is_empty() || t.is_empty() {
                rejected.push(RejectedRow { line, reason: "empty field".into() });
                continue;
            }
            if s.contains("//") || d.contains("//") {
                rejected.push(RejectedRow { line, reason: "field contains '//'".into() });
                continue;
            }
            let dom = table.domains.entry(d.to_string()).or_default();
            match dom.get(s) {
                Some(prev) if prev != t => rejected.push(RejectedRow {
                    line,
                    reason: format!("{d}/{s} already maps to {prev:?}"),
                }),
                Some(_) => {}
                None => {
                    dom.insert(s.to_string(), t.to_string());
                }
            }
        }
        Ok(MappingLoad { table, rejected })
    }

    pub fn default_table() -> MappingTable {
        MappingTable::from_reader(DEFAULT_MAPPING_CSV.as_bytes())
            .expect("shipped mapping table parses")
            .table
    }

    pub fn load(path: &Path) -> Result<MappingLoad> {
        MappingTable::from_reader(io::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.domains.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rewritten code, or `None` when the code is not covered.
    pub fn rewrite(&self, code: &str) -> Option<String> {
        let (family, source, unit) = split_code(code);
        let target = self.domains.get(family)?.get(source?)?;
        Some(match unit {
            Some(u) if self.preserve_units => format!("{family}//{target}//{u}"),
            _ => format!("{family}//{target}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub domain: String,
    pub mapped_events: usize,
    pub total_events: usize,
    pub fraction: f64,
}

/// Per-domain share of events whose code is covered by `table`, over the
/// domains the table names.
pub fn coverage<'a, I>(admissions: I, table: &MappingTable) -> Vec<CoverageRow>
where
    I: IntoIterator<Item = &'a Admission>,
{
    let mut counts: BTreeMap<&str, (usize, usize)> =
        table.domains.keys().map(|d| (d.as_str(), (0, 0))).collect();
    for a in admissions {
        for e in &a.events {
            if let Some(c) = counts.get_mut(code_family(&e.code)) {
                c.1 += 1;
                if table.rewrite(&e.code).is_some() {
                    c.0 += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(d, (m, t))| CoverageRow {
            domain: d.to_string(),
            mapped_events: m,
            total_events: t,
            fraction: if t == 0 { 0.0 } else { m as f64 / t as f64 },
        })
        .collect()
}

/// Rewrites covered codes in place of the originals and reports coverage.
pub fn apply_mapping(admissions: &[Admission], table: &MappingTable) -> (Vec<Admission>, Vec<CoverageRow>) {
    let out = admissions
        .par_iter()
        .map(|a| {
            let mut a = a.clone();
            for e in &mut a.events {
                if let Some(c) = table.rewrite(&e.code) {
                    e.code = c;
                }
            }
            a
        })
        .collect();
    (out, coverage(admissions, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    Native,
    Mapped,
    Randomized,
    #[serde(rename = "freqmatch", alias = "frequency_matched")]
    FrequencyMatched,
}

impl ArmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArmKind::Native => "native",
            ArmKind::Mapped => "mapped",
            ArmKind::Randomized => "randomized",
            ArmKind::FrequencyMatched => "freqmatch",
        }
    }
}

impl std::str::FromStr for ArmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" | "meds" => Ok(ArmKind::Native),
            "mapped" | "clif" => Ok(ArmKind::Mapped),
            "randomized" | "random" => Ok(ArmKind::Randomized),
            "freqmatch" | "frequency_matched" => Ok(ArmKind::FrequencyMatched),
            _ => Err(Error::config(format!("unknown arm {s:?}"))),
        }
    }
}

/// Realized per-domain `source code -> target code` rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmAssignment {
    pub arm: ArmKind,
    pub seed: Option<u64>,
    pub map: BTreeMap<String, BTreeMap<String, String>>,
}

impl ArmAssignment {
    pub fn native() -> Self {
        ArmAssignment {
            arm: ArmKind::Native,
            seed: None,
            map: BTreeMap::new(),
        }
    }

    pub fn lookup(&self, code: &str) -> Option<&str> {
        self.map
            .get(code_family(code))
            .and_then(|m| m.get(code))
            .map(String::as_str)
    }

    pub fn targets(&self) -> BTreeSet<&str> {
        self.map
            .values()
            .flat_map(|m| m.values().map(String::as_str))
            .collect()
    }

    pub fn apply(&self, admissions: &[Admission]) -> Vec<Admission> {
        admissions
            .par_iter()
            .map(|a| {
                let mut a = a.clone();
                for e in &mut a.events {
                    if let Some(t) = self.lookup(&e.code) {
                        e.code = t.to_string();
                    }
                }
                a
            })
            .collect()
    }
}

/// Shuffles each domain's target list once and assigns lexicographically
/// sorted sources while cycling through the shuffled targets.
pub fn randomized_arm(
    targets: &BTreeMap<String, Vec<String>>,
    sources: &BTreeMap<String, Vec<String>>,
    seed: u64,
) -> Result<ArmAssignment> {
    let mut rng = SplitMix64::new(seed);
    let mut map = BTreeMap::new();
    for (domain, tlist) in targets {
        let Some(srcs) = sources.get(domain) else {
            continue;
        };
        if tlist.is_empty() {
            return Err(Error::invalid(format!("domain {domain} has no targets")));
        }
        let mut shuffled = tlist.clone();
        shuffled.shuffle(&mut rng);
        map.insert(domain.clone(), cycle_assign(srcs, &shuffled));
    }
    Ok(ArmAssignment {
        arm: ArmKind::Randomized,
        seed: Some(seed),
        map,
    })
}

/// `sorted(sources)[k] -> targets[k mod |targets|]`.
pub fn cycle_assign(sources: &[String], targets: &[String]) -> BTreeMap<String, String> {
    let mut srcs = sources.to_vec();
    srcs.sort();
    srcs.dedup();
    srcs.into_iter()
        .enumerate()
        .map(|(k, s)| (s, targets[k % targets.len()].clone()))
        .collect()
}

/// Greedy frequency matching within one domain. Sources go in descending
/// count order (ties by code); each takes the target with the largest
/// remaining count (ties to the earlier target in `targets`), whose
/// remaining count then drops by the source count, possibly below zero.
pub fn greedy_assign(sources: &[(String, u64)], targets: &[(String, u64)]) -> Result<Vec<(String, String)>> {
    if targets.is_empty() {
        return Err(Error::invalid("frequency matching needs at least one target"));
    }
    let mut order: Vec<&(String, u64)> = sources.iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut remaining: Vec<i128> = targets.iter().map(|t| i128::from(t.1)).collect();
    let mut out = Vec::with_capacity(order.len());
    for (src, count) in order {
        let mut best = 0;
        for (j, &r) in remaining.iter().enumerate().skip(1) {
            if r > remaining[best] {
                best = j;
            }
        }
        remaining[best] -= i128::from(*count);
        out.push((src.clone(), targets[best].0.clone()));
    }
    Ok(out)
}

/// Per-domain greedy frequency matching of source codes to mapped targets.
pub fn frequency_matched_arm(
    source_freqs: &BTreeMap<String, Vec<(String, u64)>>,
    target_freqs: &BTreeMap<String, Vec<(String, u64)>>,
) -> Result<ArmAssignment> {
    let mut map = BTreeMap::new();
    for (domain, srcs) in source_freqs {
        let targets = target_freqs
            .get(domain)
            .ok_or_else(|| Error::invalid(format!("domain {domain} has no targets")))?;
        map.insert(domain.clone(), greedy_assign(srcs, targets)?.into_iter().collect());
    }
    Ok(ArmAssignment {
        arm: ArmKind::FrequencyMatched,
        seed: None,
        map,
    })
}

fn count_codes<'a, I>(admissions: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a Admission>,
{
    let mut counts = BTreeMap::new();
    for a in admissions {
        for e in &a.events {
            *counts.entry(e.code.clone()).or_insert(0u64) += 1;
        }
    }
    counts
}

/// Realizes an arm over a cohort. Sources are the covered native codes seen
/// anywhere in `all`; targets and all frequencies come from `train`.
/// Domains without train targets keep their native codes.
pub fn build_arm(
    kind: ArmKind,
    table: &MappingTable,
    train: &[&Admission],
    all: &[Admission],
    seed: u64,
) -> Result<ArmAssignment> {
    if kind == ArmKind::Native {
        return Ok(ArmAssignment::native());
    }
    let train_counts = count_codes(train.iter().copied());
    let all_codes: BTreeSet<String> = count_codes(all).into_keys().chain(train_counts.keys().cloned()).collect();
    let mut mapped: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for code in &all_codes {
        if let Some(t) = table.rewrite(code) {
            mapped
                .entry(code_family(code).to_string())
                .or_default()
                .insert(code.clone(), t);
        }
    }
    if kind == ArmKind::Mapped {
        return Ok(ArmAssignment {
            arm: kind,
            seed: None,
            map: mapped,
        });
    }
    // Mapped-arm target set and counts on the train split.
    let mut target_counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (code, &n) in &train_counts {
        if let Some(t) = table.rewrite(code) {
            *target_counts
                .entry(code_family(code).to_string())
                .or_default()
                .entry(t)
                .or_insert(0) += n;
        }
    }
    let sources: BTreeMap<String, Vec<String>> = mapped
        .iter()
        .filter(|(d, _)| target_counts.contains_key(*d))
        .map(|(d, m)| (d.clone(), m.keys().cloned().collect()))
        .collect();
    match kind {
        ArmKind::Randomized => {
            let targets = target_counts
                .iter()
                .map(|(d, m)| (d.clone(), m.keys().cloned().collect()))
                .collect();
            randomized_arm(&targets, &sources, seed)
        }
        ArmKind::FrequencyMatched => {
            let source_freqs = sources
                .iter()
                .map(|(d, codes)| {
                    let f = codes
                        .iter()
                        .map(|c| (c.clone(), train_counts.get(c).copied().unwrap_or(0)))
                        .collect();
                    (d.clone(), f)
                })
                .collect();
            let target_freqs = target_counts
                .into_iter()
                .map(|(d, m)| (d, m.into_iter().collect()))
                .collect();
            frequency_matched_arm(&source_freqs, &target_freqs)
        }
        ArmKind::Native | ArmKind::Mapped => unreachable!(),
    }
}
