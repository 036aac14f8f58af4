use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{FeatureOptions, ValueInjection};
use crate::error::{Error, Result};
use crate::event_model::EventFormat;
use crate::metrics_stats::StatsOptions;
use crate::probes::DEFAULT_LAMBDA_GRID;
use crate::synth::GeneratorConfig;
use crate::tokenizer::{EncoderMode, Fusion, TemporalMode};
use crate::value_encoders::XvalVariant;
use crate::vocab_arms::ArmKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    /// Any configurations within the generic axis constraints.
    Custom,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Experiment::Exp1),
            "exp2" => Ok(Experiment::Exp2),
            "exp3" => Ok(Experiment::Exp3),
            "custom" => Ok(Experiment::Custom),
            _ => Err(Error::config(format!("unknown experiment {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueEncoder {
    Discrete,
    Soft,
    Xval,
    XvalAffine,
}

impl ValueEncoder {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueEncoder::Discrete => "discrete",
            ValueEncoder::Soft => "soft",
            ValueEncoder::Xval => "xval",
            ValueEncoder::XvalAffine => "xval_affine",
        }
    }

    pub fn mode(self) -> EncoderMode {
        match self {
            ValueEncoder::Discrete => EncoderMode::Discrete,
            ValueEncoder::Soft => EncoderMode::Soft,
            ValueEncoder::Xval | ValueEncoder::XvalAffine => EncoderMode::Xval,
        }
    }

    pub fn injection(self) -> ValueInjection {
        match self {
            ValueEncoder::Discrete => ValueInjection::Discrete,
            ValueEncoder::Soft => ValueInjection::Soft,
            ValueEncoder::Xval => ValueInjection::Xval(XvalVariant::Multiplicative),
            ValueEncoder::XvalAffine => ValueInjection::Xval(XvalVariant::Affine),
        }
    }
}

impl std::str::FromStr for ValueEncoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(ValueEncoder::Discrete),
            "soft" => Ok(ValueEncoder::Soft),
            "xval" => Ok(ValueEncoder::Xval),
            "xval_affine" => Ok(ValueEncoder::XvalAffine),
            _ => Err(Error::config(format!("unknown value encoder {s:?}"))),
        }
    }
}

/// One representation configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepConfig {
    pub name: String,
    pub granularity: usize,
    pub anchored: bool,
    pub fusion: Fusion,
    pub encoder: ValueEncoder,
    pub temporal: TemporalMode,
    pub arm: ArmKind,
}

impl Default for RepConfig {
    fn default() -> Self {
        RepConfig {
            name: String::new(),
            granularity: 10,
            anchored: false,
            fusion: Fusion::Unfused,
            encoder: ValueEncoder::Discrete,
            temporal: TemporalMode::TimeTokens,
            arm: ArmKind::Native,
        }
    }
}

impl RepConfig {
    /// Constraints shared by every experiment.
    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(Error::config(format!(
                "configuration name {name:?} must be non-empty ASCII letters, digits, '_', '-' or '.'"
            )));
        }
        if self.granularity < 2 {
            return Err(Error::config(format!("{name}: granularity must be at least 2")));
        }
        if self.anchored && self.granularity < 3 {
            return Err(Error::config(format!("{name}: anchored binning needs granularity of at least 3")));
        }
        if self.encoder != ValueEncoder::Discrete && self.fusion == Fusion::Fused {
            return Err(Error::config(format!(
                "{name}: {} value encoding requires unfused tokenization",
                self.encoder.as_str()
            )));
        }
        if self.arm != ArmKind::Native
            && (self.encoder != ValueEncoder::Discrete || self.temporal != TemporalMode::AdmissionRelative)
        {
            return Err(Error::config(format!(
                "{name}: vocabulary arms require the discrete encoder with admission-relative positions"
            )));
        }
        Ok(())
    }

    fn check_experiment(&self, exp: Experiment) -> Result<()> {
        let name = &self.name;
        let deciles = self.granularity == 10 && !self.anchored && self.fusion == Fusion::Unfused;
        match exp {
            Experiment::Exp1 => {
                if self.encoder != ValueEncoder::Discrete
                    || self.temporal != TemporalMode::TimeTokens
                    || self.arm != ArmKind::Native
                {
                    return Err(Error::config(format!(
                        "{name}: exp1 varies quantization and fusion only (discrete encoder, time tokens, native codes)"
                    )));
                }
            }
            Experiment::Exp2 => {
                if !deciles || self.arm != ArmKind::Native {
                    return Err(Error::config(format!(
                        "{name}: exp2 varies value and temporal encoding only (unfused population deciles, native codes)"
                    )));
                }
            }
            Experiment::Exp3 => {
                if !deciles
                    || self.encoder != ValueEncoder::Discrete
                    || self.temporal != TemporalMode::AdmissionRelative
                {
                    return Err(Error::config(format!(
                        "{name}: exp3 arms require the discrete encoder with admission-relative positions over unfused population deciles"
                    )));
                }
            }
            Experiment::Custom => {}
        }
        Ok(())
    }
}

fn rep(name: String, granularity: usize, anchored: bool, fusion: Fusion, encoder: ValueEncoder, temporal: TemporalMode, arm: ArmKind) -> RepConfig {
    RepConfig {
        name,
        granularity,
        anchored,
        fusion,
        encoder,
        temporal,
        arm,
    }
}

/// Default configuration grid and reference name of an experiment.
pub fn default_grid(exp: Experiment) -> (Vec<RepConfig>, String) {
    use TemporalMode::*;
    match exp {
        Experiment::Exp1 | Experiment::Custom => {
            let mut out = Vec::new();
            for (label, g, anchored) in [
                ("deciles", 10, false),
                ("ventiles", 20, false),
                ("ventiles_clin", 20, true),
                ("trentiles", 30, false),
                ("trentiles_clin", 30, true),
                ("centiles", 100, false),
            ] {
                for (suffix, fusion) in [("unfused", Fusion::Unfused), ("fused", Fusion::Fused)] {
                    out.push(rep(format!("{label}_{suffix}"), g, anchored, fusion, ValueEncoder::Discrete, TimeTokens, ArmKind::Native));
                }
            }
            (out, "deciles_unfused".into())
        }
        Experiment::Exp2 => {
            let mut out = Vec::new();
            for enc in [ValueEncoder::Discrete, ValueEncoder::Soft, ValueEncoder::Xval, ValueEncoder::XvalAffine] {
                for (label, t) in [("none", EventOrder), ("tt", TimeTokens), ("rope", AdmissionRelative)] {
                    out.push(rep(format!("{}_{label}", enc.as_str()), 10, false, Fusion::Unfused, enc, t, ArmKind::Native));
                }
            }
            (out, "discrete_none".into())
        }
        Experiment::Exp3 => {
            let out = [
                ("meds", ArmKind::Native),
                ("clif", ArmKind::Mapped),
                ("random", ArmKind::Randomized),
                ("freqmatch", ArmKind::FrequencyMatched),
            ]
            .into_iter()
            .map(|(n, arm)| rep(n.into(), 10, false, Fusion::Unfused, ValueEncoder::Discrete, AdmissionRelative, arm))
            .collect();
            (out, "meds".into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    /// Generator settings; used when no event file is given.
    pub synth: Option<GeneratorConfig>,
    pub events: Option<PathBuf>,
    /// Companion file with admit/discharge times and scaffold attributes.
    pub admissions: Option<PathBuf>,
    pub format: EventFormat,
    pub families: Option<Vec<String>>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            synth: None,
            events: None,
            admissions: None,
            format: EventFormat::Jsonl,
            families: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: (0.7, 0.1, 0.2),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lambda_grid: Vec<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub experiment: Experiment,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Master seed for the cohort generator, split, arms and features.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Outcome definitions; the shipped set when absent.
    #[serde(default)]
    pub outcomes: Option<PathBuf>,
    /// Code mapping table for the mapped arms; the shipped table when absent.
    #[serde(default)]
    pub mapping: Option<PathBuf>,
    #[serde(default)]
    pub features: FeatureOptions,
    /// Directory of `<configuration>.csv` feature files replacing the
    /// synthetic features.
    #[serde(default)]
    pub external_features: Option<PathBuf>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub stats: StatsOptions,
    /// Empty means the experiment's default grid.
    #[serde(default, rename = "config")]
    pub configs: Vec<RepConfig>,
    #[serde(default)]
    pub reference: Option<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("medrep_run")
}

fn default_seed() -> u64 {
    42
}

impl PipelineConfig {
    pub fn new(experiment: Experiment) -> Self {
        PipelineConfig {
            experiment,
            out_dir: default_out_dir(),
            seed: default_seed(),
            cohort: CohortConfig::default(),
            split: SplitConfig::default(),
            outcomes: None,
            mapping: None,
            features: FeatureOptions::default(),
            external_features: None,
            probe: ProbeConfig::default(),
            stats: StatsOptions::default(),
            configs: Vec::new(),
            reference: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out_dir);
        for p in [
            &mut cfg.cohort.events,
            &mut cfg.cohort.admissions,
            &mut cfg.outcomes,
            &mut cfg.mapping,
            &mut cfg.external_features,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    /// Configurations to run and the index of the reference, after
    /// checking every axis constraint.
    pub fn resolved_grid(&self) -> Result<(Vec<RepConfig>, usize)> {
        let (configs, default_ref) = if self.configs.is_empty() {
            default_grid(self.experiment)
        } else {
            let first = self.configs[0].name.clone();
            (self.configs.clone(), first)
        };
        let reference = self.reference.clone().unwrap_or(default_ref);
        let mut seen = BTreeSet::new();
        for c in &configs {
            c.validate()?;
            c.check_experiment(self.experiment)?;
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("duplicate configuration name {:?}", c.name)));
            }
        }
        let r = configs
            .iter()
            .position(|c| c.name == reference)
            .ok_or_else(|| Error::config(format!("reference {reference:?} is not a configured name")))?;
        Ok((configs, r))
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_grid()?;
        let (a, b, c) = self.split.ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::config("split ratios must lie in [0, 1] and sum to 1"));
        }
        if self.features.dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if self.stats.n_boot == 0 || self.stats.n_perm == 0 {
            return Err(Error::config("n_boot and n_perm must be positive"));
        }
        if self.probe.lambda_grid.is_empty() || self.probe.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("lambda grid must be non-empty and non-negative"));
        }
        if self.cohort.events.is_none() && self.cohort.admissions.is_some() {
            return Err(Error::config("cohort.admissions given without cohort.events"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_have_expected_shape() {
        for (exp, n, r) in [(Experiment::Exp1, 12, "deciles_unfused"), (Experiment::Exp2, 12, "discrete_none"), (Experiment::Exp3, 4, "meds")] {
            let cfg = PipelineConfig::new(exp);
            let (grid, ri) = cfg.resolved_grid().unwrap();
            assert_eq!(grid.len(), n);
            assert_eq!(grid[ri].name, r);
        }
    }

    #[test]
    fn soft_fused_is_rejected_with_reason() {
        let text = r#"
            experiment = "custom"
            [[config]]
            name = "bad"
            fusion = "fused"
            encoder = "soft"
        "#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("requires unfused"), "{err}");
    }

    #[test]
    fn exp3_arms_need_discrete_rope() {
        let text = r#"
            experiment = "exp3"
            [[config]]
            name = "meds"
            temporal = "time_tokens"
        "#;
        let err = PipelineConfig::from_toml(text).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("admission-relative"), "{err}");
        let text = r#"
            experiment = "custom"
            [[config]]
            name = "x"
            arm = "randomized"
            encoder = "xval"
            temporal = "admission_relative"
        "#;
        let err = PipelineConfig::from_toml(text).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("vocabulary arms require"), "{err}");
    }

    #[test]
    fn exp1_rejects_other_axes_and_unknown_reference() {
        let mut cfg = PipelineConfig::new(Experiment::Exp1);
        cfg.configs = vec![RepConfig {
            name: "a".into(),
            temporal: TemporalMode::EventOrder,
            ..Default::default()
        }];
        assert!(cfg.validate().unwrap_err().to_string().contains("exp1"));
        cfg.configs[0].temporal = TemporalMode::TimeTokens;
        cfg.reference = Some("zzz".into());
        assert!(cfg.validate().unwrap_err().to_string().contains("reference"));
        cfg.reference = None;
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(PipelineConfig::from_toml("experiment = \"exp1\"\nbogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("experiment = \"exp9\"\n").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "experiment = \"exp2\"\nout_dir = \"out\"\noutcomes = \"o.toml\"\n").unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.out_dir, dir.path().join("out"));
        assert_eq!(cfg.outcomes.unwrap(), dir.path().join("o.toml"));
    }
}
