//! Run configuration: a TOML file with documented defaults for every field,
//! plus dotted-path command-line overrides (`distill.lambda_sdd=0.5`).
//! Each command echoes the fully resolved config next to its outputs so
//! every emitted number is reproducible from disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, gen_spirals, load_csv, load_idx, Dataset};
use crate::distill::DistillLossSpec;
use crate::error::{Error, Result};
use crate::metrics::{AttackConfig, CorruptionKind};
use crate::model::ModelSpec;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Blobs {
        #[serde(default = "default_n_per_class")]
        n_per_class: usize,
        #[serde(default = "default_num_classes")]
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    Spirals {
        #[serde(default = "default_n_per_class")]
        n_per_class: usize,
        #[serde(default = "default_num_classes")]
        num_classes: usize,
        #[serde(default = "default_spiral_noise")]
        noise: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_n_per_class() -> usize {
    500
}
fn default_num_classes() -> usize {
    4
}
fn default_dim() -> usize {
    16
}
fn default_sigma() -> f64 {
    0.9
}
fn default_data_seed() -> u64 {
    7
}
fn default_spiral_noise() -> f64 {
    0.2
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Blobs {
            n_per_class: default_n_per_class(),
            num_classes: default_num_classes(),
            dim: default_dim(),
            sigma: default_sigma(),
            seed: default_data_seed(),
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataConfig::Blobs {
                n_per_class,
                num_classes,
                dim,
                sigma,
                seed,
            } => gen_blobs(*n_per_class, *num_classes, *dim, *sigma, *seed),
            DataConfig::Spirals {
                n_per_class,
                num_classes,
                noise,
                seed,
            } => gen_spirals(*n_per_class, *num_classes, *noise, *seed),
            DataConfig::Idx { images, labels } => {
                require_file(images)?;
                require_file(labels)?;
                load_idx(images, labels)
            }
            DataConfig::Csv { path } => {
                require_file(path)?;
                load_csv(path)
            }
        }
    }

    /// Feature dimension when it is knowable without loading files.
    pub fn known_dim(&self) -> Option<usize> {
        match self {
            DataConfig::Blobs { dim, .. } => Some(*dim),
            DataConfig::Spirals { .. } => Some(2),
            _ => None,
        }
    }

    pub fn known_num_classes(&self) -> Option<usize> {
        match self {
            DataConfig::Blobs { num_classes, .. } | DataConfig::Spirals { num_classes, .. } => {
                Some(*num_classes)
            }
            _ => None,
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "referenced file does not exist: {}",
            path.display()
        )))
    }
}

/// Detector settings: the usual published defaults, epsilon interpreted on
/// the configured data range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdinConfig {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for OdinConfig {
    fn default() -> Self {
        OdinConfig {
            temperature: 1000.0,
            epsilon: 0.0014,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptConfig {
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub seed: u64,
}

impl Default for CorruptConfig {
    fn default() -> Self {
        CorruptConfig {
            kinds: vec![
                CorruptionKind::GaussianNoise,
                CorruptionKind::Brightness,
                CorruptionKind::Contrast,
            ],
            severities: vec![1, 2, 3, 4, 5],
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Reliability-diagram bin count.
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { bins: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Examples in the fixed probe batch for the assumption/direction report.
    pub probe_examples: usize,
    /// Seeds for the two probe masks.
    pub mask_seed_u: u64,
    pub mask_seed_v: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            probe_examples: 8,
            mask_seed_u: 1001,
            mask_seed_v: 1002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Seeds per arm of the comparison report.
    pub seeds: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { seeds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Checkpoint read by non-train commands; defaults to
    /// `<output_dir>/checkpoint.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub distill: DistillLossSpec,
    pub data: DataConfig,
    /// Out-distribution dataset for the detector command; defaults to a
    /// wider-noise variant of the in-distribution blobs.
    pub ood_data: DataConfig,
    pub attack: AttackConfig,
    pub odin: OdinConfig,
    pub corrupt: CorruptConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/out"),
            checkpoint: None,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            distill: DistillLossSpec::default(),
            data: DataConfig::default(),
            ood_data: DataConfig::Blobs {
                n_per_class: default_n_per_class(),
                num_classes: default_num_classes(),
                dim: default_dim(),
                sigma: 2.5,
                seed: 999,
            },
            attack: AttackConfig::default(),
            odin: OdinConfig::default(),
            corrupt: CorruptConfig::default(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    /// Assembled training configuration: the `[train]` section with the
    /// top-level `[distill]` section slotted in.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.distill = self.distill;
        t
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint.ckpt"))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(config_err)?;
        self.train_config().validate().map_err(config_err)?;
        if let Some(dim) = self.data.known_dim() {
            if dim != self.model.input_dim {
                return Err(Error::Config(format!(
                    "model input_dim {} does not match dataset dim {dim}",
                    self.model.input_dim
                )));
            }
        }
        if let Some(classes) = self.data.known_num_classes() {
            if classes > self.model.num_classes() {
                return Err(Error::Config(format!(
                    "dataset has {classes} classes but the model head emits {}",
                    self.model.num_classes()
                )));
            }
        }
        // ood_data is validated by the detector command, which is the only
        // consumer; other commands must not trip over its defaults.
        if self.eval.bins == 0 {
            return Err(Error::Config("eval.bins must be at least 1".into()));
        }
        if self.analysis.probe_examples == 0 || self.report.seeds == 0 {
            return Err(Error::Config(
                "analysis.probe_examples and report.seeds must be at least 1".into(),
            ));
        }
        if self.odin.temperature <= 0.0 || self.odin.epsilon < 0.0 {
            return Err(Error::Config(
                "odin.temperature must be > 0 and odin.epsilon >= 0".into(),
            ));
        }
        if self.attack.epsilon < 0.0 {
            return Err(Error::Config("attack.epsilon must be >= 0".into()));
        }
        if self.corrupt.kinds.is_empty()
            || self.corrupt.severities.is_empty()
            || self.corrupt.severities.iter().any(|s| !(1..=5).contains(s))
        {
            return Err(Error::Config(
                "corrupt needs at least one kind and severities within 1..=5".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config does not serialize: {e}")))
    }
}

fn config_err(e: Error) -> Error {
    Error::Config(e.to_string())
}

/// Load a config file (all fields optional, defaults documented in the
/// reference) and apply dotted-path overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let value: toml::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse()
                .map_err(|e| Error::Config(format!("cannot parse config {}: {e}", p.display())))?
        }
        None => toml::Value::Table(Default::default()),
    };
    finish_config(value, overrides)
}

/// Parse a config from TOML text; defaults fill anything missing.
pub fn from_toml_str(text: &str) -> Result<RunConfig> {
    let value: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
    finish_config(value, &[])
}

fn finish_config(mut value: toml::Value, overrides: &[String]) -> Result<RunConfig> {
    for raw in overrides {
        apply_override(&mut value, raw)?;
    }

    // A partial data table inherits the default source, so overrides like
    // `data.sigma=1.2` work without restating `data.source`.
    if let Some(root) = value.as_table_mut() {
        for section in ["data", "ood_data"] {
            if let Some(table) = root.get_mut(section).and_then(|v| v.as_table_mut()) {
                table
                    .entry("source".to_string())
                    .or_insert_with(|| toml::Value::String("blobs".into()));
            }
        }
    }

    let mut config: RunConfig = value
        .try_into()
        .map_err(|e| Error::Config(format!("bad config: {e}")))?;
    if config.output_dir.as_os_str().is_empty() {
        config.output_dir = PathBuf::from("runs/out");
    }
    config.validate()?;
    Ok(config)
}

/// `a.b.c=value` with the value parsed as TOML (falling back to a string).
fn apply_override(root: &mut toml::Value, raw: &str) -> Result<()> {
    let (path, value_text) = raw.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{raw}` is not of the form key.path=value"
        ))
    })?;
    let parsed: toml::Value = match format!("v = {value_text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value_text.trim().to_string()),
    };

    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!(
            "override `{raw}` has an empty key segment"
        )));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{raw}`: `{key}` is not a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{raw}` path does not end in a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::FlowMode;

    #[test]
    fn defaults_are_internally_consistent() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.model.input_dim, 16);
        assert_eq!(config.train.lr, 0.1);
        assert_eq!(config.train.milestones, vec![100, 150]);
        assert_eq!(config.train.beta, 0.5);
        assert_eq!(config.distill.lambda_sdd, 1.0);
        assert_eq!(config.attack.epsilon, 0.2);
        assert_eq!(config.eval.bins, 10);
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let config = RunConfig::default();
        let text = config.to_toml().unwrap();
        let back: RunConfig = text.parse::<toml::Value>().unwrap().try_into().unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let config = load_config(
            None,
            &[
                "distill.lambda_sdd=0.5".into(),
                "distill.flow_mode=\"forward\"".into(),
                "train.epochs=3".into(),
                "train.milestones=[1, 2]".into(),
                "output_dir=\"/tmp/sddrop_cfg\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.distill.lambda_sdd, 0.5);
        assert_eq!(config.distill.flow_mode, FlowMode::Forward);
        assert_eq!(config.train.epochs, 3);
        assert_eq!(config.train.milestones, vec![1, 2]);
        assert_eq!(config.train_config().distill.lambda_sdd, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_config(None, &["train.lerning_rate=0.1".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn missing_config_file_names_path() {
        let err = load_config(Some(Path::new("/nonexistent/config.toml")), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/nonexistent/config.toml"), "{msg}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = load_config(None, &["model.input_dim=5".into()]).unwrap_err();
        assert!(
            err.to_string().contains("does not match dataset dim"),
            "{err}"
        );
    }

    #[test]
    fn data_source_switches_and_validates() {
        let config = load_config(
            None,
            &[
                "data.source=\"spirals\"".into(),
                "data.num_classes=2".into(),
                "model.input_dim=2".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.data.known_dim(), Some(2));
        let data = config.data.load().unwrap();
        assert_eq!(data.dim(), 2);
    }
}
