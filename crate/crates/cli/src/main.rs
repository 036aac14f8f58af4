use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use medrep::event_model::{default_families, ingest, split_subjects, Admission, EventFormat, Split, SplitAssignment};
use medrep::io;
use medrep::metrics_stats::{write_report_jsonl, StatsOptions};
use medrep::outcomes::{label_cohort, parse_outcomes, read_labels_csv, write_labels_csv, LabelRow, OutcomeKind};
use medrep::pipeline::{
    self, evaluate_predictions, experiment_cohort, load_cohort, mapping_table, outcome_specs, outcome_kinds,
    prediction_table, probe_outcomes, read_features_csv, read_predictions_csv, records, synthetic_features,
    tokenize_config, write_cohort_files, write_features_csv, write_forest_csv, write_histogram_csv,
    write_lengths_csv, write_predictions_csv, write_summary_csv, Experiment, FeatureOptions, PipelineConfig,
    RepConfig, ValueEncoder,
};
use medrep::probes::DEFAULT_LAMBDA_GRID;
use medrep::stats_fit::{fit_all, FitOptions};
use medrep::synth::{self, GeneratorConfig};
use medrep::tokenizer::{length_report, read_streams, write_streams, Vocabulary};
use medrep::vocab_arms::{build_arm, ArmKind};

#[derive(Parser)]
#[command(name = "medrep", version, about = "Clinical event-stream representations and their evaluation")]
struct Cli {
    /// Seed for the command's random choices.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MEDREP_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort with its ground-truth ledger.
    Synth(SynthArgs),
    /// Read an event file and admission companion into a cohort directory.
    Ingest(IngestArgs),
    /// Assign subjects to train/val/test.
    Split(SplitArgs),
    /// Fit per-code quantile specs on the train split.
    Fit(FitArgs),
    /// Build a vocabulary arm.
    Arm(ArmArgs),
    /// Tokenize the first 24 hours of each admission for one configuration.
    Tokenize(TokenizeArgs),
    /// Sequence-length statistics and histograms.
    Lengths(LengthsArgs),
    /// Label outcomes.
    Label(LabelArgs),
    /// Fit linear probes and predict the test split.
    Probe(ProbeArgs),
    /// Metrics, bootstrap intervals and paired tests against a reference.
    Evaluate(EvaluateArgs),
    /// Run a whole experiment from one config.
    Run(RunArgs),
}

#[derive(Args)]
struct CohortIn {
    /// Cohort directory (events.jsonl + admissions.jsonl).
    #[arg(long)]
    cohort: PathBuf,
    /// Comma-separated code families accepted on load.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
}

impl CohortIn {
    fn load(&self) -> Result<Vec<Admission>> {
        let fam = self.families.clone().unwrap_or_else(default_families);
        load_cohort(&self.cohort, &fam).with_context(|| format!("loading cohort {}", self.cohort.display()))
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    max_admissions: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    /// Admission companion with demographics.
    #[arg(long)]
    demographics: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: EventFormat,
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    cohort: CohortIn,
    /// Train, validation and test shares.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    ratios: Vec<f64>,
    /// Output split file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    cohort: CohortIn,
    /// Split file from `split`.
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long, default_value_t = 10)]
    granularity: usize,
    #[arg(long)]
    anchored: bool,
    /// Output specs (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ArmArgs {
    #[command(flatten)]
    cohort: CohortIn,
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    kind: ArmKind,
    /// Mapping table CSV; the built-in table when absent.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TokenizeArgs {
    /// Representation config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    cohort: CohortIn,
    #[arg(long)]
    assignments: PathBuf,
    /// Only write streams of this split.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LengthsArgs {
    /// Stream files, as `name=path` or a path named by its parent directory.
    #[arg(long, required = true)]
    streams: Vec<String>,
    /// Output directory for lengths.csv and length_histogram.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    cohort: CohortIn,
    /// Outcome definitions (TOML); the built-in set when absent.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long, default_value = "exp1")]
    experiment: Experiment,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    cohort: CohortIn,
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Feature CSV (admission_id then columns).
    #[arg(long, conflicts_with = "streams")]
    features: Option<PathBuf>,
    /// Token streams to derive stand-in features from; needs `--vocab`.
    #[arg(long, requires = "vocab")]
    streams: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = "discrete")]
    encoder: ValueEncoder,
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Prediction CSVs, as `name=path` or a path named by its parent directory.
    #[arg(long, required = true)]
    pred: Vec<String>,
    /// Reference prediction CSV, same form.
    #[arg(long)]
    reference: String,
    #[arg(long)]
    labels: PathBuf,
    /// Test family id for the BH correction.
    #[arg(long, default_value = "eval")]
    family: String,
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long, conflicts_with = "experiment")]
    config: Option<PathBuf>,
    /// Run an experiment's default grid on the synthetic cohort.
    #[arg(long)]
    experiment: Option<Experiment>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn named(spec: &str) -> Result<(String, PathBuf)> {
    if let Some((n, p)) = spec.split_once('=') {
        return Ok((n.to_string(), PathBuf::from(p)));
    }
    let p = PathBuf::from(spec);
    let name = p
        .parent()
        .and_then(Path::file_name)
        .or_else(|| p.file_stem())
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .with_context(|| format!("cannot name {spec}; use name=path"))?
        .to_string();
    Ok((name, p))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_split(path: &Path) -> Result<SplitAssignment> {
    io::read_json(path).with_context(|| format!("reading split {}", path.display()))
}

fn train_of<'a>(cohort: &'a [Admission], split: &SplitAssignment) -> Vec<&'a Admission> {
    split.filter(cohort, Split::Train)
}

fn synth(args: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => GeneratorConfig::from_toml(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = args.subjects {
        cfg.n_subjects = n;
    }
    if args.max_admissions.is_some() {
        cfg.max_admissions = args.max_admissions;
    }
    let (adm, ledger) = synth::generate(&cfg)?;
    synth::write_cohort(&args.out, &adm, &ledger)?;
    let events: usize = adm.iter().map(|a| a.events.len()).sum();
    println!("{} admissions, {events} events -> {}", adm.len(), args.out.display());
    Ok(())
}

fn ingest_cmd(args: IngestArgs) -> Result<()> {
    let fam = args.families.unwrap_or_else(default_families);
    let (adm, report) = ingest(&args.events, args.format, args.demographics.as_deref(), &fam)?;
    mkdir(&args.out)?;
    write_cohort_files(&args.out, &adm)?;
    io::write_json(&args.out.join("ingest_report.json"), &report)?;
    println!(
        "{} of {} rows accepted, {} admissions -> {}",
        report.rows_accepted,
        report.rows_read,
        report.admissions,
        args.out.display()
    );
    Ok(())
}

fn split_cmd(args: SplitArgs, seed: Option<u64>) -> Result<()> {
    let adm = args.cohort.load()?;
    let subjects: Vec<&str> = adm.iter().map(|a| a.subject_id.as_str()).collect();
    let r = &args.ratios;
    let s = split_subjects(&subjects, (r[0], r[1], r[2]), seed.unwrap_or(0))?;
    io::write_json(&args.out, &s)?;
    for sp in [Split::Train, Split::Validation, Split::Test] {
        println!("{}: {} subjects", sp.as_str(), s.count(sp));
    }
    Ok(())
}

fn fit_cmd(args: FitArgs) -> Result<()> {
    let adm = args.cohort.load()?;
    let split = read_split(&args.assignments)?;
    let opts = FitOptions {
        granularity: args.granularity,
        anchored: args.anchored,
        layout: None,
    };
    let specs = fit_all(train_of(&adm, &split), &opts)?;
    io::write_json(&args.out, &specs)?;
    println!("{} numeric codes fitted -> {}", specs.len(), args.out.display());
    Ok(())
}

fn arm_cmd(args: ArmArgs, seed: Option<u64>) -> Result<()> {
    let adm = args.cohort.load()?;
    let split = read_split(&args.assignments)?;
    let (table, _) = mapping_table(args.mapping.as_deref())?;
    let arm = build_arm(args.kind, &table, &train_of(&adm, &split), &adm, seed.unwrap_or(0))?;
    io::write_json(&args.out, &arm)?;
    let n: usize = arm.map.values().map(|m| m.len()).sum();
    println!("{} arm rewrites {n} codes -> {}", args.kind.as_str(), args.out.display());
    Ok(())
}

fn tokenize_cmd(args: TokenizeArgs, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| args.config.display().to_string())?;
    let rep: RepConfig = toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    rep.validate()?;
    let adm = args.cohort.load()?;
    let split = read_split(&args.assignments)?;
    let (table, _) = mapping_table(args.mapping.as_deref())?;
    let t = tokenize_config(&rep, &adm, &split, &table, seed.unwrap_or(0))?;
    let streams = match args.split {
        None => t.streams,
        Some(s) => {
            let keep: BTreeSet<&str> = split.filter(&adm, s).iter().map(|a| a.admission_id.as_str()).collect();
            t.streams.into_iter().filter(|x| keep.contains(x.admission_id.as_str())).collect()
        }
    };
    mkdir(&args.out)?;
    io::write_json(&args.out.join(pipeline::SPECS_FILE), &t.specs)?;
    io::write_json(&args.out.join(pipeline::ARM_FILE), &t.arm)?;
    t.vocab.save(&args.out.join(pipeline::VOCAB_FILE))?;
    write_streams(&args.out.join(pipeline::STREAMS_FILE), &streams)?;
    println!("{}: vocabulary {}, {} streams -> {}", rep.name, t.vocab.len(), streams.len(), args.out.display());
    Ok(())
}

fn lengths_cmd(args: LengthsArgs) -> Result<()> {
    let mut reports = Vec::new();
    for s in &args.streams {
        let (name, path) = named(s)?;
        reports.push(length_report(&name, &read_streams(&path)?));
    }
    mkdir(&args.out)?;
    write_lengths_csv(&args.out.join(pipeline::LENGTHS_FILE), &reports)?;
    write_histogram_csv(&args.out.join(pipeline::HISTOGRAM_FILE), &reports)?;
    for r in &reports {
        println!("{}: n={} median={} max={}", r.config, r.n, r.median, r.max);
    }
    Ok(())
}

fn label_cmd(args: LabelArgs) -> Result<()> {
    let adm = experiment_cohort(args.experiment, &args.cohort.load()?);
    let (specs, _) = outcome_specs(args.outcomes.as_deref(), args.experiment)?;
    let l = label_cohort(&adm, &specs)?;
    mkdir(&args.out)?;
    write_labels_csv(&args.out.join(pipeline::LABELS_FILE), &l.rows)?;
    io::write_json(&args.out.join(pipeline::OUTCOME_SUMMARY_FILE), &l.summaries)?;
    println!("{} outcomes over {} admissions -> {}", specs.len(), adm.len(), args.out.display());
    Ok(())
}

/// Outcome kinds from every definition in the file, whatever its experiments.
fn kinds(labels: &[LabelRow], outcomes: Option<&Path>) -> Result<Vec<(String, OutcomeKind)>> {
    let (_, text) = outcome_specs(outcomes, Experiment::Custom)?;
    Ok(outcome_kinds(labels, &parse_outcomes(&text)?))
}

fn probe_cmd(args: ProbeArgs, seed: Option<u64>) -> Result<()> {
    let adm = args.cohort.load()?;
    let split = read_split(&args.assignments)?;
    let labels = read_labels_csv(&args.labels)?;
    let x = match (&args.features, &args.streams, &args.vocab) {
        (Some(f), _, _) => read_features_csv(f)?,
        (None, Some(s), Some(v)) => {
            let opts = FeatureOptions {
                seed: seed.unwrap_or(FeatureOptions::default().seed),
                ..FeatureOptions::default()
            };
            synthetic_features(&read_streams(s)?, &Vocabulary::load(v)?, args.encoder.injection(), &opts)?
        }
        _ => bail!("give --features or --streams with --vocab"),
    };
    let split_of: HashMap<String, Split> = adm
        .iter()
        .filter_map(|a| split.get(&a.subject_id).map(|s| (a.admission_id.clone(), s)))
        .collect();
    let kinds = kinds(&labels, args.outcomes.as_deref())?;
    let (preds, recs) = probe_outcomes(&x, &split_of, &labels, &kinds, &DEFAULT_LAMBDA_GRID)?;
    mkdir(&args.out)?;
    if args.features.is_none() {
        write_features_csv(&args.out.join(pipeline::FEATURES_FILE), &x)?;
    }
    write_predictions_csv(&args.out.join(pipeline::PREDICTIONS_FILE), &preds)?;
    io::write_jsonl(&args.out.join(pipeline::PROBES_FILE), &recs)?;
    println!("{} probes, {} predictions -> {}", recs.len(), preds.len(), args.out.display());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let labels = read_labels_csv(&args.labels)?;
    let mut names = Vec::new();
    let mut tables = Vec::new();
    for spec in std::iter::once(&args.reference).chain(&args.pred) {
        let (name, path) = named(spec)?;
        if names.contains(&name) {
            bail!("configuration name {name} given twice");
        }
        let t = prediction_table(&read_predictions_csv(&path)?).with_context(|| path.display().to_string())?;
        names.push(name);
        tables.push(t);
    }
    // Scored on the admissions the reference predicts.
    let ids: BTreeSet<String> = tables[0].values().flat_map(|m| m.keys().cloned()).collect();
    let mut opts = StatsOptions::default();
    if let Some(s) = seed {
        opts.boot_seed = s;
        opts.perm_seed = s;
    }
    if let Some(n) = args.n_boot {
        opts.n_boot = n;
    }
    if let Some(n) = args.n_perm {
        opts.n_perm = n;
    }
    let kinds = kinds(&labels, args.outcomes.as_deref())?;
    let (reports, tests) = evaluate_predictions(&kinds, &labels, Some(&ids), &names, &tables, 0, &args.family, &opts)?;
    mkdir(&args.out)?;
    write_report_jsonl(&args.out.join(pipeline::REPORT_FILE), &records(&reports, &tests))?;
    write_summary_csv(&args.out.join(pipeline::SUMMARY_FILE), &reports, &tests)?;
    write_forest_csv(&args.out.join(pipeline::FOREST_FILE), &tests, pipeline::ALPHA)?;
    println!("{} metric reports, {} paired tests -> {}", reports.len(), tests.len(), args.out.display());
    Ok(())
}

fn run_cmd(args: RunArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match (&args.config, args.experiment) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Some(e)) => PipelineConfig::new(e),
        (None, None) => bail!("give --config or --experiment"),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    let s = pipeline::run(&cfg)?;
    println!(
        "{} stages ran, {} up to date; run hash {} -> {}",
        s.ran.len(),
        s.skipped.len(),
        s.run_hash,
        s.out_dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Synth(a) => synth(a, seed),
        Cmd::Ingest(a) => ingest_cmd(a),
        Cmd::Split(a) => split_cmd(a, seed),
        Cmd::Fit(a) => fit_cmd(a),
        Cmd::Arm(a) => arm_cmd(a, seed),
        Cmd::Tokenize(a) => tokenize_cmd(a, seed),
        Cmd::Lengths(a) => lengths_cmd(a),
        Cmd::Label(a) => label_cmd(a),
        Cmd::Probe(a) => probe_cmd(a, seed),
        Cmd::Evaluate(a) => evaluate_cmd(a, seed),
        Cmd::Run(a) => run_cmd(a, seed),
    }
}
