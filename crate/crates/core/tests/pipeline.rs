use std::path::Path;

use medrep::metrics_stats::{read_report_jsonl, ReportRecord};
use medrep::pipeline::{self, Experiment, PipelineConfig};
use medrep::synth::GeneratorConfig;

fn small(exp: Experiment, dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(exp);
    cfg.out_dir = dir.to_path_buf();
    cfg.cohort.synth = Some(GeneratorConfig {
        n_subjects: 80,
        ..GeneratorConfig::default()
    });
    cfg.stats.n_boot = 40;
    cfg.stats.n_perm = 50;
    cfg
}

fn has_stage(names: &[String], prefix: &str) -> usize {
    names.iter().filter(|n| n.starts_with(prefix)).count()
}

#[test]
fn exp2_grid_runs_every_encoder_and_temporal_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let s = pipeline::run(&small(Experiment::Exp2, tmp.path())).unwrap();
    assert_eq!(has_stage(&s.ran, "tokenize/"), 12);
    assert_eq!(has_stage(&s.ran, "probe/"), 12);
    let recs = read_report_jsonl(&tmp.path().join(pipeline::REPORT_FILE)).unwrap();
    let paired: Vec<_> = recs
        .iter()
        .filter_map(|r| match r {
            ReportRecord::Paired(t) => Some(t),
            ReportRecord::Metric(_) => None,
        })
        .collect();
    assert!(!paired.is_empty());
    assert!(paired.iter().all(|t| t.reference == "discrete_none" && t.family.starts_with("exp2/")));
    assert!(paired.iter().all(|t| t.p_adjusted.is_some_and(|p| p >= t.p_raw)));
}

#[test]
fn exp3_scores_icu_stays_only() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline::run(&small(Experiment::Exp3, tmp.path())).unwrap();
    let labels = std::fs::read_to_string(tmp.path().join(pipeline::LABELS_FILE)).unwrap();
    let cohort = pipeline::load_cohort(&tmp.path().join(pipeline::COHORT_DIR), &medrep::event_model::default_families()).unwrap();
    let icu = pipeline::experiment_cohort(Experiment::Exp3, &cohort);
    assert!(!icu.is_empty() && icu.len() < cohort.len());
    let labeled: std::collections::BTreeSet<&str> =
        labels.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labeled.len(), icu.len());
    for arm in ["meds", "clif", "random", "freqmatch"] {
        assert!(tmp.path().join(format!("configs/{arm}/arm.json")).exists());
    }
}

#[test]
fn reruns_skip_fresh_stages_and_redo_tampered_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Experiment::Exp1, tmp.path());
    let first = pipeline::run(&cfg).unwrap();
    assert!(first.skipped.is_empty());

    let again = pipeline::run(&cfg).unwrap();
    assert!(again.ran.is_empty());
    assert_eq!(again.run_hash, first.run_hash);

    // A damaged artifact reruns its stage only; the rewrite restores the hash.
    let preds = tmp.path().join("configs/centiles_fused").join(pipeline::PREDICTIONS_FILE);
    std::fs::write(&preds, "admission_id,outcome,score\n").unwrap();
    let repaired = pipeline::run(&cfg).unwrap();
    assert_eq!(repaired.ran, vec!["probe/centiles_fused".to_string()]);
    assert_eq!(repaired.run_hash, first.run_hash);

    // New stats options rerun evaluation alone.
    cfg.stats.n_boot = 41;
    let restat = pipeline::run(&cfg).unwrap();
    assert_eq!(restat.ran, vec!["evaluate".to_string()]);
    assert_ne!(restat.run_hash, first.run_hash);
}

#[test]
fn separate_directories_agree_bitwise() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small(Experiment::Exp1, a.path());
    cfg.configs = pipeline::default_grid(Experiment::Exp1).0.into_iter().take(3).collect();
    let ra = pipeline::run(&cfg).unwrap();
    cfg.out_dir = b.path().to_path_buf();
    let rb = pipeline::run(&cfg).unwrap();
    assert_eq!(ra.artifacts, rb.artifacts);
    assert_eq!(ra.run_hash, rb.run_hash);
    // A different seed changes the cohort.
    cfg.seed = 43;
    cfg.out_dir = a.path().join("other");
    assert_ne!(pipeline::run(&cfg).unwrap().run_hash, ra.run_hash);
}

#[test]
fn configs_outside_the_valid_grid_are_rejected() {
    let cases = [
        ("experiment = \"custom\"\n[[config]]\nname = \"x\"\nencoder = \"xval\"\nfusion = \"fused\"\n", "requires unfused"),
        (
            "experiment = \"custom\"\n[[config]]\nname = \"x\"\narm = \"mapped\"\ntemporal = \"time_tokens\"\n",
            "vocabulary arms require",
        ),
        ("experiment = \"exp2\"\n[[config]]\nname = \"x\"\ngranularity = 20\n", "exp2"),
        ("experiment = \"exp1\"\nreference = \"nope\"\n", "reference"),
        ("experiment = \"exp1\"\nbogus = 1\n", "bogus"),
    ];
    for (text, needle) in cases {
        let err = PipelineConfig::from_toml(text).and_then(|c| c.validate().map(|_| c)).unwrap_err();
        assert!(err.to_string().contains(needle), "{text}: {err}");
    }
}
