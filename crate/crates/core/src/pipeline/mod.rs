//! End-to-end runs from one config: cohort, split, labels, per-configuration
//! arms, fitting, tokenization, features and probes, then evaluation and
//! reports. Every stage records its outputs' hashes in `manifest.json` and
//! is skipped on rerun when its inputs and outputs are unchanged.

mod config;
mod features;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    default_grid, CohortConfig, Experiment, PipelineConfig, ProbeConfig, RepConfig, SplitConfig, ValueEncoder,
};
pub use features::{
    embedding_table, read_features_csv, stream_features, synthetic_features, write_features_csv, FeatureOptions,
    ValueInjection,
};
pub use report::{
    evaluate_predictions, metrics_for, outcome_kinds, prediction_table, read_predictions_csv, records,
    write_forest_csv, write_histogram_csv, write_lengths_csv, write_predictions_csv, write_summary_csv, Prediction,
    PredictionTable,
};

use crate::error::{Error, Result};
use crate::event_model::{
    cut_first_24h, default_families, ingest, split_subjects, to_event_rows, Admission, EventFormat, Split,
    SplitAssignment,
};
use crate::io;
use crate::metrics_stats::write_report_jsonl;
use crate::outcomes::{
    label_cohort, parse_outcomes, read_labels_csv, write_labels_csv, LabelRow, OutcomeKind, OutcomeSpec,
    DEFAULT_OUTCOMES_TOML, ICU_ADMISSION_CODE,
};
use crate::probes::{fit_logistic_with, fit_ridge, predict, FeatureMatrix, LogisticOptions, ProbeModel, Standardizer};
use crate::rng::derive_seed;
use crate::stats_fit::{fit_all, FitOptions};
use crate::synth::{self, GeneratorConfig};
use crate::tokenizer::{build_vocab, length_report, read_streams, tokenize_all, write_streams, TokenStream, TokenizerConfig, Vocabulary};
use crate::vocab_arms::{build_arm, ArmKind, MappingTable, DEFAULT_MAPPING_CSV};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COHORT_DIR: &str = "cohort";
pub const SPLIT_FILE: &str = "split.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const OUTCOME_SUMMARY_FILE: &str = "outcomes.json";
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FOREST_FILE: &str = "forest.csv";
pub const LENGTHS_FILE: &str = "lengths.csv";
pub const HISTOGRAM_FILE: &str = "length_histogram.csv";
pub const STREAMS_FILE: &str = "streams.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SPECS_FILE: &str = "specs.json";
pub const ARM_FILE: &str = "arm.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const PROBES_FILE: &str = "probes.jsonl";

/// Significance level for the forest-plot flag.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    /// Output path (relative to the run directory) to its sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
    /// sha256 over the outputs of the stages of the last run.
    pub run_hash: String,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        io::read_json(&dir.join(MANIFEST_FILE))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
    pub artifacts: BTreeMap<String, String>,
    pub run_hash: String,
}

struct Runner {
    dir: PathBuf,
    manifest: Manifest,
    order: Vec<String>,
    ran: Vec<String>,
    skipped: Vec<String>,
}

fn key_of<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    Ok(io::sha256_hex(&serde_json::to_vec(v)?))
}

impl Runner {
    fn open(dir: &Path) -> Result<Runner> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = match Manifest::load(dir) {
            Ok(m) => m,
            Err(_) => Manifest::default(),
        };
        Ok(Runner {
            dir: dir.to_path_buf(),
            manifest,
            order: Vec::new(),
            ran: Vec::new(),
            skipped: Vec::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Runs `compute` unless the stage's key and recorded output hashes
    /// still match; returns whether it ran.
    fn stage(&mut self, name: &str, key: &str, outputs: &[String], compute: impl FnOnce(&Path) -> Result<()>) -> Result<bool> {
        self.order.push(name.to_string());
        let fresh = self.manifest.stages.get(name).is_some_and(|r| {
            r.key == key
                && r.outputs.len() == outputs.len()
                && outputs.iter().all(|o| {
                    r.outputs
                        .get(o)
                        .is_some_and(|h| io::file_sha256(&self.dir.join(o)).is_ok_and(|x| &x == h))
                })
        });
        if fresh {
            log::info!("stage {name}: up to date");
            self.skipped.push(name.to_string());
            return Ok(false);
        }
        log::info!("stage {name}: running");
        compute(&self.dir)?;
        let mut hashes = BTreeMap::new();
        for o in outputs {
            hashes.insert(o.clone(), io::file_sha256(&self.dir.join(o))?);
        }
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord {
                key: key.to_string(),
                outputs: hashes,
            },
        );
        io::write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        self.ran.push(name.to_string());
        Ok(true)
    }

    fn hash(&self, stage: &str, output: &str) -> String {
        self.manifest.stages[stage].outputs[output].clone()
    }

    fn outputs(&self, stage: &str) -> &BTreeMap<String, String> {
        &self.manifest.stages[stage].outputs
    }

    fn finish(mut self) -> Result<RunSummary> {
        let mut artifacts = BTreeMap::new();
        for s in &self.order {
            artifacts.extend(self.outputs(s).clone());
        }
        let lines: String = artifacts.iter().map(|(p, h)| format!("{p} {h}\n")).collect();
        let run_hash = io::sha256_hex(lines.as_bytes());
        self.manifest.run_hash = run_hash.clone();
        self.manifest.stages.retain(|k, _| self.order.contains(k));
        io::write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(RunSummary {
            out_dir: self.dir,
            ran: self.ran,
            skipped: self.skipped,
            artifacts,
            run_hash,
        })
    }
}

/// Writes a cohort as the JSONL event file plus admission companion.
pub fn write_cohort_files(dir: &Path, admissions: &[Admission]) -> Result<()> {
    let (events, infos) = to_event_rows(admissions);
    io::write_jsonl(&dir.join(synth::EVENTS_FILE), &events)?;
    io::write_jsonl(&dir.join(synth::ADMISSIONS_FILE), &infos)
}

/// Reads a cohort directory written by [`write_cohort_files`] or
/// [`synth::write_cohort`].
pub fn load_cohort(dir: &Path, families: &[String]) -> Result<Vec<Admission>> {
    let (admissions, report) = ingest(
        &dir.join(synth::EVENTS_FILE),
        EventFormat::Jsonl,
        Some(&dir.join(synth::ADMISSIONS_FILE)),
        families,
    )?;
    if !report.rejected.is_empty() {
        return Err(Error::invalid(format!(
            "{}: {} event rows rejected, first: {:?}",
            dir.display(),
            report.rejected.len(),
            report.rejected[0]
        )));
    }
    Ok(admissions)
}

/// Admissions an experiment scores: exp3 keeps stays with an ICU admission.
pub fn experiment_cohort(exp: Experiment, admissions: &[Admission]) -> Vec<Admission> {
    match exp {
        Experiment::Exp3 => admissions
            .iter()
            .filter(|a| a.events.iter().any(|e| e.code == ICU_ADMISSION_CODE))
            .cloned()
            .collect(),
        _ => admissions.to_vec(),
    }
}

pub fn outcome_specs(path: Option<&Path>, exp: Experiment) -> Result<(Vec<OutcomeSpec>, String)> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => DEFAULT_OUTCOMES_TOML.to_string(),
    };
    let specs = parse_outcomes(&text)?
        .into_iter()
        .filter(|s| s.used_in(exp.as_str()))
        .collect();
    Ok((specs, text))
}

pub fn mapping_table(path: Option<&Path>) -> Result<(MappingTable, String)> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => DEFAULT_MAPPING_CSV.to_string(),
    };
    let load = MappingTable::from_reader(text.as_bytes())?;
    for r in &load.rejected {
        log::warn!("mapping table line {}: {}", r.line, r.reason);
    }
    Ok((load.table, text))
}

/// Arm, specs, vocabulary and first-24h streams of one configuration.
pub struct Tokenized {
    pub arm: crate::vocab_arms::ArmAssignment,
    pub specs: crate::stats_fit::SpecSet,
    pub vocab: Vocabulary,
    pub streams: Vec<TokenStream>,
}

/// Builds the configuration's arm over `cohort`, fits quantiles and the
/// vocabulary on the rewritten train split, and tokenizes every admission's
/// first 24 hours.
pub fn tokenize_config(
    rep: &RepConfig,
    cohort: &[Admission],
    split: &SplitAssignment,
    table: &MappingTable,
    arm_seed: u64,
) -> Result<Tokenized> {
    let train = split.filter(cohort, Split::Train);
    let arm = build_arm(rep.arm, table, &train, cohort, arm_seed)?;
    let rewritten = if rep.arm == ArmKind::Native {
        cohort.to_vec()
    } else {
        arm.apply(cohort)
    };
    let train = split.filter(&rewritten, Split::Train);
    let specs = fit_all(
        train.iter().copied(),
        &FitOptions {
            granularity: rep.granularity,
            anchored: rep.anchored,
            layout: None,
        },
    )?;
    let tcfg = TokenizerConfig::new(rep.fusion, rep.encoder.mode(), rep.temporal);
    let vocab = build_vocab(train.iter().copied(), &specs, &tcfg)?;
    let cut: Vec<Admission> = rewritten.par_iter().map(cut_first_24h).collect();
    let streams = tokenize_all(&cut, &vocab, &specs, &tcfg)?;
    Ok(Tokenized {
        arm,
        specs,
        vocab,
        streams,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub outcome: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub model: ProbeModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

/// Fits one probe per outcome on train rows (z-scored with train
/// statistics), choosing ridge λ on validation rows, and predicts the test
/// rows. Outcomes whose train rows are unusable are skipped with a warning.
pub fn probe_outcomes(
    x: &FeatureMatrix,
    split_of: &HashMap<String, Split>,
    labels: &[LabelRow],
    outcomes: &[(String, OutcomeKind)],
    lambda_grid: &[f64],
) -> Result<(Vec<Prediction>, Vec<ProbeRecord>)> {
    let rows_in = |s: Split| -> Vec<usize> {
        (0..x.rows())
            .filter(|&i| split_of.get(&x.ids[i]) == Some(&s))
            .collect()
    };
    let train_all = x.select(&rows_in(Split::Train));
    if train_all.rows() == 0 {
        return Err(Error::invalid("no train admissions to fit probes on"));
    }
    let z = Standardizer::fit(&train_all)?.apply(x)?;
    let row_of: HashMap<&str, usize> = x.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let per_outcome: Vec<Option<(Vec<Prediction>, ProbeRecord)>> = outcomes
        .par_iter()
        .map(|(name, kind)| -> Result<_> {
            let mut parts: BTreeMap<Split, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
            for r in labels.iter().filter(|r| &r.outcome == name && r.eligible) {
                let (Some(&i), Some(l)) = (row_of.get(r.admission_id.as_str()), r.label) else {
                    continue;
                };
                if let Some(&s) = split_of.get(&r.admission_id) {
                    let e = parts.entry(s).or_default();
                    e.0.push(i);
                    e.1.push(l);
                }
            }
            let take = |s: Split| parts.get(&s).cloned().unwrap_or_default();
            let (tr, ytr) = take(Split::Train);
            let (va, yva) = take(Split::Validation);
            let (te, _) = take(Split::Test);
            let (xtr, xva, xte) = (z.select(&tr), z.select(&va), z.select(&te));
            let (model, iterations, converged) = match kind {
                OutcomeKind::Binary => {
                    let pos = ytr.iter().filter(|&&v| v > 0.5).count();
                    if pos == 0 || pos == ytr.len() {
                        log::warn!("{name}: train split has a single class; no probe");
                        return Ok(None);
                    }
                    let (m, d) = fit_logistic_with(&xtr, &ytr, &LogisticOptions::default())?;
                    if !d.converged {
                        log::warn!("{name}: logistic probe stopped at the iteration cap (gradient {:.2e})", d.grad_norm);
                    }
                    (m, Some(d.iterations), Some(d.converged))
                }
                OutcomeKind::Regression => {
                    if ytr.len() < 2 {
                        log::warn!("{name}: fewer than two train rows; no probe");
                        return Ok(None);
                    }
                    (fit_ridge(&xtr, &ytr, lambda_grid, &xva, &yva)?.model, None, None)
                }
            };
            let scores = predict(&model, &xte)?;
            let preds = xte
                .ids
                .iter()
                .zip(scores)
                .map(|(id, score)| Prediction {
                    admission_id: id.clone(),
                    outcome: name.clone(),
                    score,
                })
                .collect();
            let rec = ProbeRecord {
                outcome: name.clone(),
                n_train: tr.len(),
                n_val: va.len(),
                n_test: te.len(),
                model,
                iterations,
                converged,
            };
            Ok(Some((preds, rec)))
        })
        .collect::<Result<_>>()?;
    let mut preds = Vec::new();
    let mut recs = Vec::new();
    for (p, r) in per_outcome.into_iter().flatten() {
        preds.extend(p);
        recs.push(r);
    }
    Ok((preds, recs))
}

/// Runs (or resumes) a pipeline and returns what ran and the artifact hashes.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (grid, reference) = cfg.resolved_grid()?;
    let exp = cfg.experiment;
    let families = cfg.cohort.families.clone().unwrap_or_else(default_families);
    let mut r = Runner::open(&cfg.out_dir)?;

    // Cohort
    let ev = format!("{COHORT_DIR}/{}", synth::EVENTS_FILE);
    let adm = format!("{COHORT_DIR}/{}", synth::ADMISSIONS_FILE);
    let led = format!("{COHORT_DIR}/{}", synth::LEDGER_FILE);
    let synth_cfg = cfg.cohort.events.is_none().then(|| GeneratorConfig {
        seed: cfg.seed,
        ..cfg.cohort.synth.clone().unwrap_or_default()
    });
    let (key, outputs) = match (&synth_cfg, &cfg.cohort.events) {
        (Some(g), _) => (key_of(&("synth", g))?, vec![ev.clone(), adm.clone(), led.clone()]),
        (None, Some(p)) => {
            let companion = cfg.cohort.admissions.as_deref().map(io::file_sha256).transpose()?;
            (
                key_of(&("files", io::file_sha256(p)?, companion, cfg.cohort.format, &families))?,
                vec![ev.clone(), adm.clone()],
            )
        }
        (None, None) => unreachable!("synth config is set without an event file"),
    };
    r.stage("cohort", &key, &outputs, |dir| {
        let cdir = dir.join(COHORT_DIR);
        match &synth_cfg {
            Some(g) => {
                let (a, l) = synth::generate(g)?;
                synth::write_cohort(&cdir, &a, &l)
            }
            None => {
                let (a, rep) = ingest(
                    cfg.cohort.events.as_deref().expect("event file"),
                    cfg.cohort.format,
                    cfg.cohort.admissions.as_deref(),
                    &families,
                )?;
                if !rep.rejected.is_empty() {
                    log::warn!("ingest rejected {} rows", rep.rejected.len());
                }
                write_cohort_files(&cdir, &a)
            }
        }
    })?;
    let cohort_hash = key_of(r.outputs("cohort"))?;
    let all = load_cohort(&r.path(COHORT_DIR), &families)?;

    // Split
    let split_seed = cfg.split.seed.unwrap_or_else(|| derive_seed(cfg.seed, 1));
    let key = key_of(&(&cohort_hash, cfg.split.ratios, split_seed))?;
    r.stage("split", &key, &[SPLIT_FILE.into()], |dir| {
        let subjects: Vec<&str> = all.iter().map(|a| a.subject_id.as_str()).collect();
        let s = split_subjects(&subjects, cfg.split.ratios, split_seed)?;
        io::write_json(&dir.join(SPLIT_FILE), &s)
    })?;
    let split: SplitAssignment = io::read_json(&r.path(SPLIT_FILE))?;
    let split_hash = r.hash("split", SPLIT_FILE);

    let cohort = experiment_cohort(exp, &all);
    drop(all);
    let split_of: HashMap<String, Split> = cohort
        .iter()
        .filter_map(|a| split.get(&a.subject_id).map(|s| (a.admission_id.clone(), s)))
        .collect();

    // Labels
    let (specs, specs_text) = outcome_specs(cfg.outcomes.as_deref(), exp)?;
    let key = key_of(&(&cohort_hash, exp, io::sha256_hex(specs_text.as_bytes())))?;
    r.stage("labels", &key, &[LABELS_FILE.into(), OUTCOME_SUMMARY_FILE.into()], |dir| {
        let l = label_cohort(&cohort, &specs)?;
        write_labels_csv(&dir.join(LABELS_FILE), &l.rows)?;
        io::write_json(&dir.join(OUTCOME_SUMMARY_FILE), &l.summaries)
    })?;
    let labels = read_labels_csv(&r.path(LABELS_FILE))?;
    let labels_hash = r.hash("labels", LABELS_FILE);
    let kinds: Vec<(String, OutcomeKind)> = specs.iter().map(|s| (s.name.clone(), s.kind)).collect();

    let (table, table_text) = mapping_table(cfg.mapping.as_deref())?;
    let table_hash = io::sha256_hex(table_text.as_bytes());
    let arm_seed = derive_seed(cfg.seed, 2);

    let mut prediction_tables = Vec::with_capacity(grid.len());
    let mut length_reports = Vec::with_capacity(grid.len());
    let mut prediction_hashes = Vec::with_capacity(grid.len());
    for rep in &grid {
        let cdir = format!("configs/{}", rep.name);
        let out = |f: &str| format!("{cdir}/{f}");
        let tok_stage = format!("tokenize/{}", rep.name);
        let mapping = (rep.arm != ArmKind::Native).then_some(&table_hash);
        let key = key_of(&(&cohort_hash, &split_hash, exp, rep, arm_seed, mapping))?;
        let tok_outputs = [SPECS_FILE, ARM_FILE, VOCAB_FILE, STREAMS_FILE].map(out);
        let mut fresh: Option<Tokenized> = None;
        r.stage(&tok_stage, &key, &tok_outputs, |dir| {
            let t = tokenize_config(rep, &cohort, &split, &table, arm_seed)?;
            io::write_json(&dir.join(out(SPECS_FILE)), &t.specs)?;
            io::write_json(&dir.join(out(ARM_FILE)), &t.arm)?;
            t.vocab.save(&dir.join(out(VOCAB_FILE)))?;
            write_streams(&dir.join(out(STREAMS_FILE)), &t.streams)?;
            fresh = Some(t);
            Ok(())
        })?;
        let tok_hash = key_of(r.outputs(&tok_stage))?;

        let external = cfg
            .external_features
            .as_ref()
            .map(|d| d.join(format!("{}.csv", rep.name)));
        let external_hash = external.as_deref().map(io::file_sha256).transpose()?;
        let probe_stage = format!("probe/{}", rep.name);
        let key = key_of(&(
            &tok_hash,
            &labels_hash,
            &split_hash,
            &cfg.features,
            rep.encoder,
            &cfg.probe,
            &external_hash,
        ))?;
        let probe_outputs = [FEATURES_FILE, PREDICTIONS_FILE, PROBES_FILE].map(out);
        let mut streams_for_lengths: Option<Vec<TokenStream>> = None;
        r.stage(&probe_stage, &key, &probe_outputs, |dir| {
            let (vocab, streams) = match fresh.take() {
                Some(t) => (t.vocab, t.streams),
                None => (
                    Vocabulary::load(&dir.join(out(VOCAB_FILE)))?,
                    read_streams(&dir.join(out(STREAMS_FILE)))?,
                ),
            };
            let x = match &external {
                Some(p) => read_features_csv(p)?,
                None => synthetic_features(&streams, &vocab, rep.encoder.injection(), &cfg.features)?,
            };
            write_features_csv(&dir.join(out(FEATURES_FILE)), &x)?;
            let (preds, recs) = probe_outcomes(&x, &split_of, &labels, &kinds, &cfg.probe.lambda_grid)?;
            write_predictions_csv(&dir.join(out(PREDICTIONS_FILE)), &preds)?;
            io::write_jsonl(&dir.join(out(PROBES_FILE)), &recs)?;
            streams_for_lengths = Some(streams);
            Ok(())
        })?;
        let streams = match (streams_for_lengths, fresh) {
            (Some(s), _) => s,
            (None, Some(t)) => t.streams,
            (None, None) => read_streams(&r.path(&out(STREAMS_FILE)))?,
        };
        length_reports.push(length_report(&rep.name, &streams));
        prediction_hashes.push(r.hash(&probe_stage, &out(PREDICTIONS_FILE)));
        prediction_tables.push(prediction_table(&read_predictions_csv(&r.path(&out(PREDICTIONS_FILE)))?)?);
    }

    // Lengths
    let stream_hashes: Vec<String> = grid
        .iter()
        .map(|c| r.hash(&format!("tokenize/{}", c.name), &format!("configs/{}/{STREAMS_FILE}", c.name)))
        .collect();
    let key = key_of(&stream_hashes)?;
    r.stage("lengths", &key, &[LENGTHS_FILE.into(), HISTOGRAM_FILE.into()], |dir| {
        write_lengths_csv(&dir.join(LENGTHS_FILE), &length_reports)?;
        write_histogram_csv(&dir.join(HISTOGRAM_FILE), &length_reports)
    })?;

    // Evaluation
    let names: Vec<String> = grid.iter().map(|c| c.name.clone()).collect();
    let key = key_of(&(&prediction_hashes, &names, reference, &labels_hash, &split_hash, &cfg.stats, exp, &kinds))?;
    r.stage("evaluate", &key, &[REPORT_FILE.into(), SUMMARY_FILE.into(), FOREST_FILE.into()], |dir| {
        let test_ids: BTreeSet<String> = split_of
            .iter()
            .filter(|(_, s)| **s == Split::Test)
            .map(|(id, _)| id.clone())
            .collect();
        let (reports, tests) = evaluate_predictions(
            &kinds,
            &labels,
            Some(&test_ids),
            &names,
            &prediction_tables,
            reference,
            exp.as_str(),
            &cfg.stats,
        )?;
        write_report_jsonl(&dir.join(REPORT_FILE), &records(&reports, &tests))?;
        write_summary_csv(&dir.join(SUMMARY_FILE), &reports, &tests)?;
        write_forest_csv(&dir.join(FOREST_FILE), &tests, ALPHA)
    })?;
    r.finish()
}
