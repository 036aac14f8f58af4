//! Metrics, bootstrap intervals, paired permutation tests and BH adjustment.
mod fast;
mod metrics;
mod resample;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fast::{
    bootstrap_arms, delta_bootstrap, metric_bootstrap, metric_permutation, permutation_metrics,
    ArmsBootstrap,
};
pub use metrics::*;
pub use resample::*;

use crate::error::{Error, Result};

/// Point estimate and percentile interval for one
/// (configuration, outcome, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub configuration: String,
    pub outcome: String,
    pub metric: Metric,
    pub n: usize,
    pub point: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_resamples: usize,
    pub n_undefined: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub configuration: String,
    pub reference: String,
    pub outcome: String,
    pub metric: Metric,
    pub family: String,
    pub delta: f64,
    pub delta_ci_lo: Option<f64>,
    pub delta_ci_hi: Option<f64>,
    pub p_raw: f64,
    pub p_adjusted: Option<f64>,
    pub n_perm: usize,
    pub exhaustive: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Metric(MetricReport),
    Paired(PairedTest),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsOptions {
    pub n_boot: usize,
    pub boot_seed: u64,
    pub n_perm: usize,
    pub perm_seed: u64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            n_boot: DEFAULT_BOOTSTRAP,
            boot_seed: DEFAULT_BOOTSTRAP_SEED,
            n_perm: DEFAULT_PERMUTATIONS,
            perm_seed: DEFAULT_BOOTSTRAP_SEED,
        }
    }
}

/// Point metric plus its bootstrap interval, resampling admissions.
pub fn metric_report(
    configuration: &str,
    outcome: &str,
    metric: Metric,
    scores: &[f64],
    target: &[f64],
    opts: &StatsOptions,
) -> Result<MetricReport> {
    if scores.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: scores.len(),
        });
    }
    let point = metric.eval(scores, target);
    let ci = metric_bootstrap(metric, scores, target, opts.n_boot, opts.boot_seed)?;
    Ok(MetricReport {
        configuration: configuration.to_string(),
        outcome: outcome.to_string(),
        metric,
        n: scores.len(),
        point,
        ci_lo: ci.lo,
        ci_hi: ci.hi,
        n_resamples: ci.n_resamples,
        n_undefined: ci.n_undefined,
        seed: opts.boot_seed,
    })
}

/// Scores of one arm keyed by admission id.
pub type ScoreMap = BTreeMap<String, f64>;

/// Aligns two arms and the target on the shared id set; ids present in
/// only one arm are an error.
pub fn align(
    a: &ScoreMap,
    b: &ScoreMap,
    target: &ScoreMap,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let missing = a
            .keys()
            .find(|k| !b.contains_key(*k))
            .or_else(|| b.keys().find(|k| !a.contains_key(*k)));
        return Err(Error::invalid(format!(
            "paired arms score different admissions (e.g. {:?})",
            missing.map(String::as_str).unwrap_or("")
        )));
    }
    let mut va = Vec::with_capacity(a.len());
    let mut vb = Vec::with_capacity(a.len());
    let mut vt = Vec::with_capacity(a.len());
    for (id, &s) in a {
        let t = target
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no label for admission {id:?}")))?;
        va.push(s);
        vb.push(b[id]);
        vt.push(*t);
    }
    Ok((va, vb, vt))
}

#[allow(clippy::too_many_arguments)]
pub fn paired_test(
    configuration: &str,
    reference: &str,
    outcome: &str,
    metric: Metric,
    family: &str,
    a: &[f64],
    b: &[f64],
    target: &[f64],
    opts: &StatsOptions,
) -> Result<PairedTest> {
    let perm = metric_permutation(metric, a, b, target, opts.n_perm, opts.perm_seed)?;
    let ci = delta_bootstrap(metric, a, b, target, opts.n_boot, opts.boot_seed)?;
    Ok(PairedTest {
        configuration: configuration.to_string(),
        reference: reference.to_string(),
        outcome: outcome.to_string(),
        metric,
        family: family.to_string(),
        delta: perm.delta,
        delta_ci_lo: ci.lo,
        delta_ci_hi: ci.hi,
        p_raw: perm.p,
        p_adjusted: None,
        n_perm: perm.n_null,
        exhaustive: perm.exhaustive,
        seed: opts.perm_seed,
    })
}

/// Metric reports for every configuration scored on the same admissions,
/// and paired tests of each configuration against `reference`. Paired tests
/// are emitted only for metrics defined on both arms; their family is
/// `<family_prefix>/<metric>`. `p_adjusted` is left for
/// [`adjust_families`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_grid(
    outcome: &str,
    names: &[String],
    scores: &[&[f64]],
    target: &[f64],
    metrics: &[Metric],
    reference: usize,
    family_prefix: &str,
    opts: &StatsOptions,
) -> Result<(Vec<MetricReport>, Vec<PairedTest>)> {
    if names.len() != scores.len() || reference >= scores.len() {
        return Err(Error::invalid("configuration names, score arms and reference disagree"));
    }
    let boot = bootstrap_arms(metrics, scores, Some(reference), target, opts.n_boot, opts.boot_seed)?;
    let points: Vec<Vec<Option<f64>>> = scores
        .iter()
        .map(|s| metrics.iter().map(|m| m.eval(s, target)).collect())
        .collect();
    let mut reports = Vec::with_capacity(names.len() * metrics.len());
    for (c, name) in names.iter().enumerate() {
        for (k, &metric) in metrics.iter().enumerate() {
            let ci = boot.ci[c][k];
            reports.push(MetricReport {
                configuration: name.clone(),
                outcome: outcome.to_string(),
                metric,
                n: target.len(),
                point: points[c][k],
                ci_lo: ci.lo,
                ci_hi: ci.hi,
                n_resamples: ci.n_resamples,
                n_undefined: ci.n_undefined,
                seed: opts.boot_seed,
            });
        }
    }
    let delta = boot.delta.expect("reference given");
    let mut tests = Vec::new();
    for c in (0..names.len()).filter(|&c| c != reference) {
        let defined: Vec<usize> = (0..metrics.len())
            .filter(|&k| points[c][k].is_some() && points[reference][k].is_some())
            .collect();
        let ms: Vec<Metric> = defined.iter().map(|&k| metrics[k]).collect();
        let perms = permutation_metrics(&ms, scores[c], scores[reference], target, opts.n_perm, opts.perm_seed)?;
        for (&k, perm) in defined.iter().zip(perms) {
            tests.push(PairedTest {
                configuration: names[c].clone(),
                reference: names[reference].clone(),
                outcome: outcome.to_string(),
                metric: metrics[k],
                family: format!("{family_prefix}/{}", metrics[k].as_str()),
                delta: perm.delta,
                delta_ci_lo: delta[c][k].lo,
                delta_ci_hi: delta[c][k].hi,
                p_raw: perm.p,
                p_adjusted: None,
                n_perm: perm.n_null,
                exhaustive: perm.exhaustive,
                seed: opts.perm_seed,
            });
        }
    }
    Ok((reports, tests))
}

/// Fills `p_adjusted` by BH within each family.
pub fn adjust_families(tests: &mut [PairedTest]) -> Result<()> {
    let mut families: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in tests.iter().enumerate() {
        families.entry(t.family.clone()).or_default().push(i);
    }
    for idx in families.values() {
        let p: Vec<f64> = idx.iter().map(|&i| tests[i].p_raw).collect();
        for (&i, q) in idx.iter().zip(bh_adjust(&p)?) {
            tests[i].p_adjusted = Some(q);
        }
    }
    Ok(())
}

pub fn write_report_jsonl(path: &Path, records: &[ReportRecord]) -> Result<()> {
    crate::io::write_jsonl(path, records)
}

pub fn read_report_jsonl(path: &Path) -> Result<Vec<ReportRecord>> {
    crate::io::read_jsonl(path)
}

/// Reads an `admission_id,<column>` CSV into a score map.
pub fn read_scores_csv(path: &Path, column: &str) -> Result<ScoreMap> {
    let mut rdr = csv::Reader::from_reader(crate::io::open(path)?);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "admission_id")
        .ok_or_else(|| Error::invalid(format!("{}: no admission_id column", path.display())))?;
    let val_col = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::invalid(format!("{}: no {column} column", path.display())))?;
    let mut out = ScoreMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(val_col).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| {
            Error::invalid(format!("{}:{}: bad value {raw:?}", path.display(), line + 2))
        })?;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if out.insert(id.clone(), v).is_some() {
            return Err(Error::invalid(format!("duplicate admission {id:?}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn pairwise_auroc(s: &[f64], y: &[bool]) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn auroc_trivial_cases() {
        let y = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &y), Some(1.0));
        assert_eq!(auroc(&[0.5; 4], &y), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn auroc_matches_pairwise_on_random_50() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let s: Vec<f64> = (0..50).map(|_| (rng.below(12) as f64) / 4.0).collect();
            let y: Vec<bool> = (0..50).map(|_| rng.below(3) == 0).collect();
            assert_eq!(auroc(&s, &y), pairwise_auroc(&s, &y));
        }
    }

    #[test]
    fn auprc_cases() {
        let y = [true, false, true, false, false];
        assert_eq!(auprc(&[0.9, 0.1, 0.8, 0.2, 0.3], &y), Some(1.0));
        assert!((auprc(&[0.4; 5], &y).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(auprc(&[0.1, 0.2], &[false, false]), None);
        // 10 samples, distinct scores; hits at ranks 1, 3, 4, 8.
        let s: Vec<f64> = (0..10).rev().map(f64::from).collect();
        let y = [true, false, true, true, false, false, false, true, false, false];
        let expect = (1.0 / 1.0 + 2.0 / 3.0 + 3.0 / 4.0 + 4.0 / 8.0) / 4.0;
        assert!((auprc(&s, &y).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn brier_and_ece_cases() {
        assert_eq!(brier(&[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.25);
        assert_eq!(ece15(&[1.0, 1.0], &[true, true]).unwrap(), 0.0);
        assert_eq!(ece15(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.0);
        assert!(brier(&[1.5], &[true]).is_err());
        assert_eq!(ece_bin(1.0), 14);
        assert_eq!(ece_bin(0.0), 0);
        // Two bins: {0.1, 0.1} with one positive, {0.9} positive.
        let e = ece15(&[0.1, 0.1, 0.9], &[true, false, true]).unwrap();
        let expect = (2.0 / 3.0) * (0.5f64 - 0.1).abs() + (1.0 / 3.0) * (1.0f64 - 0.9).abs();
        assert!((e - expect).abs() < 1e-15);
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[2.0, 5.0, 7.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&x, &[9.0, 7.0, 5.0, 2.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0; 4]), None);
        // Ties: y ranks [1.5, 1.5, 3, 4].
        let r = spearman(&x, &[1.0, 1.0, 2.0, 3.0]).unwrap();
        let ry = [1.5, 1.5, 3.0, 4.0];
        let m = 2.5;
        let sxy: f64 = (0..4).map(|i| (x[i] - m) * (ry[i] - m)).sum();
        let sxx: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let syy: f64 = ry.iter().map(|v| (v - m).powi(2)).sum();
        assert!((r - sxy / (sxx * syy).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_adjust(&[0.04]).unwrap(), vec![0.04]);
        assert_eq!(bh_adjust(&[0.01, 0.02, 0.03]).unwrap(), vec![0.03, 0.03, 0.03]);
        assert_eq!(bh_adjust(&[0.03, 0.01, 0.02]).unwrap(), vec![0.03, 0.03, 0.03]);
        assert!(bh_adjust(&[0.1, 1.2]).is_err());
        assert!(bh_adjust(&[f64::NAN]).is_err());
    }

    #[test]
    fn bootstrap_constant_metric_degenerates() {
        let ci = bootstrap_ci(10, 200, 123, |_| Some(0.7)).unwrap();
        assert_eq!((ci.lo, ci.hi), (Some(0.7), Some(0.7)));
    }

    #[test]
    fn bootstrap_mostly_undefined_is_missing() {
        // Defined only when units 0 and 1 are both drawn: 1 - 2(0.9)^10 + 0.8^10 ~ 0.41.
        let ci = bootstrap_ci(10, 500, 123, |idx| {
            (idx.contains(&0) && idx.contains(&1)).then_some(1.0)
        })
        .unwrap();
        assert!(ci.n_undefined > 250);
        assert_eq!((ci.lo, ci.hi), (None, None));
    }

    #[test]
    fn permutation_identical_arms() {
        let a = [0.1, 0.4, 0.35, 0.8];
        let t = [0.0, 0.0, 1.0, 1.0];
        let r = paired_permutation(&a, &a, &t, 10_000, 1, |s, t| Metric::Auroc.eval(s, t)).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.p, 1.0);
        assert!(r.exhaustive);
        let r = paired_permutation(&a, &a, &t, 4, 1, |s, t| Metric::Auroc.eval(s, t)).unwrap();
        assert!(!r.exhaustive);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn permutation_n3_matches_enumeration() {
        let a = [0.9, 0.2, 0.6];
        let b = [0.3, 0.5, 0.1];
        let t = [1.0, 0.0, 1.0];
        let mean_diff = |s: &[f64], t: &[f64]| {
            Some(s.iter().zip(t).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        };
        let r = paired_permutation(&a, &b, &t, 8, 0, mean_diff).unwrap();
        let obs = (mean_diff(&a, &t).unwrap() - mean_diff(&b, &t).unwrap()).abs();
        let mut hits = 0;
        for mask in 0..8u32 {
            let (mut sa, mut sb) = (a, b);
            for i in 0..3 {
                if mask & (1 << i) != 0 {
                    std::mem::swap(&mut sa[i], &mut sb[i]);
                }
            }
            let d = (mean_diff(&sa, &t).unwrap() - mean_diff(&sb, &t).unwrap()).abs();
            if d >= obs - 1e-12 {
                hits += 1;
            }
        }
        assert_eq!(r.p, hits as f64 / 8.0);
        assert!(r.exhaustive);
    }

    #[test]
    fn permutation_rejects_mismatch() {
        let e = paired_permutation(&[0.1, 0.2], &[0.1], &[0.0, 1.0], 10, 0, |s, t| {
            Metric::Auroc.eval(s, t)
        });
        assert!(e.is_err());
        let mut a = ScoreMap::new();
        a.insert("x".into(), 0.1);
        let mut b = ScoreMap::new();
        b.insert("y".into(), 0.1);
        assert!(align(&a, &b, &a).is_err());
    }

    #[test]
    fn families_adjusted_separately() {
        let mk = |fam: &str, p: f64| PairedTest {
            configuration: "c".into(),
            reference: "r".into(),
            outcome: "o".into(),
            metric: Metric::Auroc,
            family: fam.into(),
            delta: 0.0,
            delta_ci_lo: None,
            delta_ci_hi: None,
            p_raw: p,
            p_adjusted: None,
            n_perm: 0,
            exhaustive: false,
            seed: 0,
        };
        let mut t = vec![mk("a", 0.01), mk("b", 0.01), mk("a", 0.02)];
        adjust_families(&mut t).unwrap();
        assert_eq!(t[0].p_adjusted, Some(0.02));
        assert_eq!(t[1].p_adjusted, Some(0.01));
        assert_eq!(t[2].p_adjusted, Some(0.02));
    }

    #[test]
    fn report_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let s = [0.2, 0.7, 0.4, 0.9, 0.1];
        let t = [0.0, 1.0, 0.0, 1.0, 1.0];
        let opts = StatsOptions {
            n_boot: 100,
            n_perm: 64,
            ..StatsOptions::default()
        };
        let m = metric_report("cfg", "death", Metric::Auroc, &s, &t, &opts).unwrap();
        let pt = paired_test("cfg", "ref", "death", Metric::Auroc, "exp1/auroc", &s, &t, &t, &opts)
            .unwrap();
        let recs = vec![ReportRecord::Metric(m), ReportRecord::Paired(pt)];
        write_report_jsonl(&p, &recs).unwrap();
        assert_eq!(read_report_jsonl(&p).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn auroc_order_and_transform_invariant(
            s in proptest::collection::vec(-5.0f64..5.0, 4..40),
            seed in any::<u64>(),
        ) {
            let mut rng = SplitMix64::new(seed);
            let y: Vec<bool> = (0..s.len()).map(|i| i % 2 == 0 || rng.below(2) == 0).collect();
            let base = auroc(&s, &y);
            let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(auroc(&exp, &y), base);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == s.len() {
                if let (Some(a), Some(b)) = (base, auroc(&neg, &y)) {
                    prop_assert!((a - (1.0 - b)).abs() < 1e-12);
                }
            }
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.reverse();
            let rs: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let ry: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
            prop_assert_eq!(auroc(&rs, &ry), base);
            prop_assert_eq!(auprc(&rs, &ry), auprc(&s, &y));
        }

        #[test]
        fn bh_bounds(p in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
            let q = bh_adjust(&p).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!(b >= a && *b <= 1.0);
            }
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
            for w in order.windows(2) {
                prop_assert!(q[w[0]] <= q[w[1]]);
            }
        }

        #[test]
        fn permutation_p_in_unit_interval(
            a in proptest::collection::vec(0.0f64..1.0, 6..20),
            seed in any::<u64>(),
        ) {
            let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
            let t: Vec<f64> = (0..a.len()).map(|i| (i % 2) as f64).collect();
            let r = paired_permutation(&a, &b, &t, 50, seed, |s, t| Metric::Brier.eval(s, t)).unwrap();
            prop_assert!(r.p > 0.0 && r.p <= 1.0);
        }
    }

    #[test]
    fn grid_evaluation_matches_pairwise_calls() {
        let mut rng = SplitMix64::new(31);
        let n = 60;
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.unit() < 0.3))).collect();
        let arms: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.unit()).collect()).collect();
        let refs: Vec<&[f64]> = arms.iter().map(Vec::as_slice).collect();
        let names: Vec<String> = ["r", "a", "b"].iter().map(|s| s.to_string()).collect();
        let opts = StatsOptions { n_boot: 200, n_perm: 300, ..Default::default() };
        let (reports, tests) = evaluate_grid("o", &names, &refs, &y, &Metric::BINARY, 0, "exp", &opts).unwrap();
        assert_eq!(reports.len(), 12);
        assert_eq!(tests.len(), 8);
        for r in &reports {
            let c = names.iter().position(|x| *x == r.configuration).unwrap();
            assert_eq!(*r, metric_report(&r.configuration, "o", r.metric, &arms[c], &y, &opts).unwrap());
        }
        for t in &tests {
            let c = names.iter().position(|x| *x == t.configuration).unwrap();
            let one = paired_test(&t.configuration, "r", "o", t.metric, &t.family, &arms[c], &arms[0], &y, &opts).unwrap();
            assert_eq!(*t, one);
            assert_eq!(t.family, format!("exp/{}", t.metric.as_str()));
        }
    }
}
