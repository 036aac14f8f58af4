use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::metrics_stats::{adjust_families, evaluate_grid, Metric, MetricReport, PairedTest, ReportRecord, StatsOptions};
use crate::outcomes::{LabelRow, OutcomeKind, OutcomeSpec};
use crate::tokenizer::{LengthReport, LENGTH_THRESHOLDS};

/// One probe prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub admission_id: String,
    pub outcome: String,
    pub score: f64,
}

pub fn write_predictions_csv(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    for p in preds {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_reader(io::open(path)?);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let p: Prediction = rec?;
        if !p.score.is_finite() {
            return Err(Error::invalid(format!("{}: non-finite score for {}", path.display(), p.admission_id)));
        }
        out.push(p);
    }
    Ok(out)
}

/// `outcome -> admission_id -> score`.
pub type PredictionTable = BTreeMap<String, BTreeMap<String, f64>>;

pub fn prediction_table(preds: &[Prediction]) -> Result<PredictionTable> {
    let mut out = PredictionTable::new();
    for p in preds {
        if out
            .entry(p.outcome.clone())
            .or_default()
            .insert(p.admission_id.clone(), p.score)
            .is_some()
        {
            return Err(Error::invalid(format!("duplicate prediction for {} / {}", p.outcome, p.admission_id)));
        }
    }
    Ok(out)
}

pub fn metrics_for(kind: OutcomeKind) -> Vec<Metric> {
    match kind {
        OutcomeKind::Binary => Metric::BINARY.to_vec(),
        OutcomeKind::Regression => vec![Metric::Spearman],
    }
}

/// Scores every outcome over the admissions in `ids` that are eligible and
/// labeled. Every configuration must predict each of those admissions.
/// Paired tests are BH-adjusted within `<family_prefix>/<metric>`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_predictions(
    outcomes: &[(String, OutcomeKind)],
    labels: &[LabelRow],
    ids: Option<&BTreeSet<String>>,
    names: &[String],
    tables: &[PredictionTable],
    reference: usize,
    family_prefix: &str,
    opts: &StatsOptions,
) -> Result<(Vec<MetricReport>, Vec<PairedTest>)> {
    let mut reports = Vec::new();
    let mut tests = Vec::new();
    for (outcome, kind) in outcomes {
        let target: BTreeMap<&str, f64> = labels
            .iter()
            .filter(|r| &r.outcome == outcome && r.eligible)
            .filter(|r| ids.is_none_or(|s| s.contains(&r.admission_id)))
            .filter_map(|r| r.label.map(|l| (r.admission_id.as_str(), l)))
            .collect();
        if target.is_empty() {
            log::warn!("{outcome}: no eligible labeled admissions to score");
            continue;
        }
        if tables.iter().all(|t| !t.contains_key(outcome)) {
            log::warn!("{outcome}: no configuration has predictions; skipped");
            continue;
        }
        let mut arms: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        for (name, table) in names.iter().zip(tables) {
            let preds = table.get(outcome);
            let mut v = Vec::with_capacity(target.len());
            for id in target.keys() {
                match preds.and_then(|p| p.get(*id)) {
                    Some(&s) => v.push(s),
                    None => {
                        return Err(Error::invalid(format!(
                            "{name} has no {outcome} prediction for admission {id}"
                        )))
                    }
                }
            }
            arms.push(v);
        }
        let y: Vec<f64> = target.values().copied().collect();
        let refs: Vec<&[f64]> = arms.iter().map(Vec::as_slice).collect();
        let (r, t) = evaluate_grid(outcome, names, &refs, &y, &metrics_for(*kind), reference, family_prefix, opts)?;
        reports.extend(r);
        tests.extend(t);
    }
    adjust_families(&mut tests)?;
    Ok((reports, tests))
}

pub fn records(reports: &[MetricReport], tests: &[PairedTest]) -> Vec<ReportRecord> {
    reports
        .iter()
        .cloned()
        .map(ReportRecord::Metric)
        .chain(tests.iter().cloned().map(ReportRecord::Paired))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(io::f64_17).unwrap_or_default()
}

/// One row per (configuration, outcome, metric) with the paired test
/// against the reference where there is one.
pub fn write_summary_csv(path: &Path, reports: &[MetricReport], tests: &[PairedTest]) -> Result<()> {
    let paired: BTreeMap<(&str, &str, Metric), &PairedTest> = tests
        .iter()
        .map(|t| ((t.configuration.as_str(), t.outcome.as_str(), t.metric), t))
        .collect();
    let mut w = csv::Writer::from_writer(io::create(path)?);
    w.write_record([
        "configuration", "outcome", "metric", "n", "point", "ci_lo", "ci_hi", "reference", "delta",
        "delta_ci_lo", "delta_ci_hi", "p_raw", "p_adjusted",
    ])?;
    for r in reports {
        let t = paired.get(&(r.configuration.as_str(), r.outcome.as_str(), r.metric));
        w.write_record([
            r.configuration.clone(),
            r.outcome.clone(),
            r.metric.as_str().to_string(),
            r.n.to_string(),
            opt(r.point),
            opt(r.ci_lo),
            opt(r.ci_hi),
            t.map(|t| t.reference.clone()).unwrap_or_default(),
            opt(t.map(|t| t.delta)),
            opt(t.and_then(|t| t.delta_ci_lo)),
            opt(t.and_then(|t| t.delta_ci_hi)),
            opt(t.map(|t| t.p_raw)),
            opt(t.and_then(|t| t.p_adjusted)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Forest-plot data: Δ with its interval per paired test.
pub fn write_forest_csv(path: &Path, tests: &[PairedTest], alpha: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    w.write_record([
        "family", "outcome", "configuration", "reference", "delta", "lo", "hi", "p_adjusted", "significant",
    ])?;
    for t in tests {
        w.write_record([
            t.family.clone(),
            t.outcome.clone(),
            t.configuration.clone(),
            t.reference.clone(),
            io::f64_17(t.delta),
            opt(t.delta_ci_lo),
            opt(t.delta_ci_hi),
            opt(t.p_adjusted),
            t.p_adjusted.is_some_and(|p| p < alpha).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_lengths_csv(path: &Path, reports: &[LengthReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    let mut header = vec!["configuration", "n", "median", "mean", "min", "max"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(LENGTH_THRESHOLDS.iter().map(|t| format!("frac_over_{t}")));
    w.write_record(&header)?;
    for r in reports {
        let mut rec = vec![
            r.config.clone(),
            r.n.to_string(),
            io::f64_17(r.median),
            io::f64_17(r.mean),
            r.min.to_string(),
            r.max.to_string(),
        ];
        rec.extend(LENGTH_THRESHOLDS.iter().map(|t| opt(r.frac_over.get(t).copied())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Length-histogram plot data.
pub fn write_histogram_csv(path: &Path, reports: &[LengthReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    w.write_record(["configuration", "lo", "hi", "count"])?;
    for r in reports {
        for b in &r.histogram {
            w.write_record([
                r.config.clone(),
                b.lo.to_string(),
                b.hi.map(|h| h.to_string()).unwrap_or_default(),
                b.count.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Outcome kinds by name from the given specs; outcomes missing there are
/// binary when every label is 0 or 1.
pub fn outcome_kinds(labels: &[LabelRow], specs: &[OutcomeSpec]) -> Vec<(String, OutcomeKind)> {
    let mut order: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for r in labels {
        if seen.insert(r.outcome.as_str()) {
            order.push(r.outcome.clone());
        }
    }
    order
        .into_iter()
        .map(|name| {
            let kind = specs.iter().find(|s| s.name == name).map(|s| s.kind).unwrap_or_else(|| {
                let binary = labels
                    .iter()
                    .filter(|r| r.outcome == name)
                    .filter_map(|r| r.label)
                    .all(|v| v == 0.0 || v == 1.0);
                if binary {
                    OutcomeKind::Binary
                } else {
                    OutcomeKind::Regression
                }
            });
            (name, kind)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr(id: &str, outcome: &str, label: Option<f64>) -> LabelRow {
        LabelRow {
            admission_id: id.into(),
            outcome: outcome.into(),
            eligible: label.is_some(),
            label,
        }
    }

    #[test]
    fn predictions_round_trip_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let preds = vec![
            Prediction { admission_id: "1".into(), outcome: "m".into(), score: 0.1 + 0.2 },
            Prediction { admission_id: "2".into(), outcome: "m".into(), score: 1e-300 },
        ];
        write_predictions_csv(&p, &preds).unwrap();
        assert_eq!(read_predictions_csv(&p).unwrap(), preds);
        let dup = vec![preds[0].clone(), preds[0].clone()];
        assert!(prediction_table(&dup).is_err());
    }

    #[test]
    fn evaluation_skips_ineligible_and_requires_full_coverage() {
        let labels = vec![lr("a", "m", Some(1.0)), lr("b", "m", Some(0.0)), lr("c", "m", None), lr("d", "m", Some(0.0))];
        let preds = |bump: f64| {
            prediction_table(&[
                Prediction { admission_id: "a".into(), outcome: "m".into(), score: 0.9 },
                Prediction { admission_id: "b".into(), outcome: "m".into(), score: 0.2 + bump },
                Prediction { admission_id: "d".into(), outcome: "m".into(), score: 0.4 },
            ])
            .unwrap()
        };
        let names = vec!["r".to_string(), "x".to_string()];
        let opts = StatsOptions { n_boot: 50, n_perm: 100, ..Default::default() };
        let kinds = vec![("m".to_string(), OutcomeKind::Binary)];
        let (reports, tests) =
            evaluate_predictions(&kinds, &labels, None, &names, &[preds(0.0), preds(0.5)], 0, "e", &opts).unwrap();
        assert!(reports.iter().all(|r| r.n == 3));
        assert_eq!(reports.len(), 8);
        // N = 3 is enumerated exhaustively.
        assert!(tests.iter().all(|t| t.exhaustive && t.p_adjusted.is_some()));
        let mut partial = preds(0.0);
        partial.get_mut("m").unwrap().remove("d");
        assert!(evaluate_predictions(&kinds, &labels, None, &names, &[preds(0.0), partial], 0, "e", &opts).is_err());
    }

    #[test]
    fn kinds_fall_back_to_label_values() {
        let labels = vec![lr("a", "x", Some(1.0)), lr("a", "y", Some(2.5))];
        let k = outcome_kinds(&labels, &[]);
        assert_eq!(k, vec![("x".into(), OutcomeKind::Binary), ("y".into(), OutcomeKind::Regression)]);
    }
}
