//! Experiment configuration: one JSON file with named sections, every
//! field defaulted to the reference synthetic setup, plus dotted-path
//! `--set` overrides and a provenance digest.

use crate::episode::SettingFlag;
use crate::expfam::NigHyper;
use crate::simgen::bank::Split;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("override {spec:?} is invalid: {reason}")]
    BadOverride { spec: String, reason: String },
    #[error("config does not match the expected shape: {0}")]
    Shape(serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("feature bank not found: {path} (data.kind is \"bank\")")]
    MissingBank { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synthetic,
    Bank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrpSection {
    pub alpha: f64,
}

impl Default for CrpSection {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub dim: usize,
    pub nig: NigHyper,
    /// Base path of the feature-bank pair (`<base>.bin` + `<base>.json`).
    pub bank: Option<PathBuf>,
    pub split: Split,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic,
            dim: 2,
            nig: NigHyper {
                m: 0.0,
                lambda: 0.01,
                a: 2.0,
                b: 2.0,
            },
            bank: None,
            split: Split::MetaTrain,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfSection {
    pub particles: usize,
    pub ess_threshold: f64,
}

impl Default for PfSection {
    fn default() -> Self {
        Self {
            particles: 100,
            ess_threshold: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitSection {
    pub hidden: usize,
    pub layers: usize,
    pub max_classes: usize,
}

impl Default for CircuitSection {
    fn default() -> Self {
        Self {
            hidden: 1024,
            layers: 2,
            max_classes: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    /// Episode length.
    pub t: usize,
    pub lr: f64,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 128,
            t: 100,
            lr: 0.001,
            seed: 0,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_episodes: usize,
    pub setting: SettingFlag,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_episodes: 10_000,
            setting: SettingFlag::SequentialObservation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub fd_step: f64,
    pub n_episodes: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 128,
            lr: 0.1,
            fd_step: 1e-4,
            n_episodes: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub crp: CrpSection,
    pub data: DataSection,
    pub pf: PfSection,
    pub circuit: CircuitSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub fit: FitSection,
}

impl ExperimentConfig {
    /// Range checks that cut across sections; per-module constructors
    /// still enforce their own invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.crp.alpha > 0.0) {
            return bad(format!("crp.alpha must be positive, got {}", self.crp.alpha));
        }
        if self.data.dim == 0 {
            return bad("data.dim must be at least 1".into());
        }
        if self.pf.particles == 0 {
            return bad("pf.particles must be at least 1".into());
        }
        if self.pf.ess_threshold < 0.0 || self.pf.ess_threshold > self.pf.particles as f64 {
            return bad(format!(
                "pf.ess_threshold must lie in [0, particles], got {}",
                self.pf.ess_threshold
            ));
        }
        if self.circuit.hidden == 0 || self.circuit.layers == 0 || self.circuit.max_classes == 0 {
            return bad("circuit dimensions must be positive".into());
        }
        if self.train.t == 0 {
            return bad("train.t must be at least 1".into());
        }
        if self.train.t > self.circuit.max_classes {
            return bad(format!(
                "train.t ({}) exceeds circuit.max_classes ({}); the label head cannot address that many classes",
                self.train.t, self.circuit.max_classes
            ));
        }
        if self.train.batch == 0 {
            return bad("train.batch must be at least 1".into());
        }
        if !(self.train.lr > 0.0) {
            return bad(format!("train.lr must be positive, got {}", self.train.lr));
        }
        if self.eval.n_episodes == 0 {
            return bad("eval.n_episodes must be at least 1".into());
        }
        if self.fit.batch == 0 || self.fit.n_episodes == 0 {
            return bad("fit.batch and fit.n_episodes must be at least 1".into());
        }
        if !(self.fit.lr > 0.0) || !(self.fit.fd_step > 0.0) {
            return bad("fit.lr and fit.fd_step must be positive".into());
        }
        if self.data.kind == DataKind::Bank {
            let base = self.data.bank.as_ref().ok_or_else(|| {
                ConfigError::Invalid("data.kind is \"bank\" but data.bank is not set".into())
            })?;
            let sidecar = base.with_extension("json");
            if !sidecar.exists() {
                return Err(ConfigError::MissingBank { path: sidecar });
            }
            let bin = base.with_extension("bin");
            if !bin.exists() {
                return Err(ConfigError::MissingBank { path: bin });
            }
        }
        Ok(())
    }
}

/// Loads, overrides, and validates in one step. `path` of `None` starts
/// from the built-in defaults.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig, ConfigError> {
    let mut value = match path {
        None => serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize"),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: p.to_path_buf(),
                source,
            })?
        }
    };
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(ConfigError::Shape)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `section.key=value` override. The value side is parsed
/// as JSON when possible and falls back to a plain string, so
/// `--set train.lr=0.01` and `--set data.kind=bank` both work.
pub fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride {
        spec: spec.to_string(),
        reason: "expected key=value".into(),
    })?;
    if path.is_empty() {
        return Err(ConfigError::BadOverride {
            spec: spec.to_string(),
            reason: "empty key".into(),
        });
    }
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| ConfigError::BadOverride {
                spec: spec.to_string(),
                reason: format!("{} is not a section", segments[..i].join(".")),
            })?;
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}

/// FNV-1a over the canonical JSON of the resolved config plus the run
/// seed. Sixteen hex digits; stable across runs and thread counts.
pub fn config_digest(cfg: &ExperimentConfig, seed: u64) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.bytes().chain(seed.to_le_bytes()) {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.train.steps, 10_000);
        assert_eq!(cfg.pf.particles, 100);
        assert_eq!(cfg.data.nig.lambda, 0.01);
    }

    #[test]
    fn overrides_reach_nested_fields_and_keep_types() {
        let mut value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut value, "train.lr=0.05").unwrap();
        apply_override(&mut value, "data.kind=bank").unwrap();
        apply_override(&mut value, "data.bank=/tmp/nowhere").unwrap();
        apply_override(&mut value, "train.checkpoint_every=250").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(value).unwrap();
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!(cfg.data.kind, DataKind::Bank);
        assert_eq!(cfg.train.checkpoint_every, Some(250));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut value, "train.momentum=0.9").unwrap();
        let err = serde_json::from_value::<ExperimentConfig>(value).unwrap_err();
        assert!(err.to_string().contains("momentum"));
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        let mut value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        assert!(matches!(
            apply_override(&mut value, "no_equals_sign"),
            Err(ConfigError::BadOverride { .. })
        ));
        assert!(matches!(
            apply_override(&mut value, "=5"),
            Err(ConfigError::BadOverride { .. })
        ));
        assert!(matches!(
            apply_override(&mut value, "crp.alpha.deeper=1"),
            Err(ConfigError::BadOverride { .. })
        ));
    }

    #[test]
    fn validation_catches_cross_section_conflicts() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.t = 200;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("max_classes"));

        let mut cfg = ExperimentConfig::default();
        cfg.pf.ess_threshold = 200.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.data.kind = DataKind::Bank;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("data.bank"));

        let mut cfg = ExperimentConfig::default();
        cfg.data.kind = DataKind::Bank;
        cfg.data.bank = Some(PathBuf::from("/definitely/not/here/bank"));
        match cfg.validate().unwrap_err() {
            ConfigError::MissingBank { path } => {
                assert!(path.to_string_lossy().contains("/definitely/not/here/bank"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn digest_tracks_config_and_seed_changes() {
        let cfg = ExperimentConfig::default();
        let base = config_digest(&cfg, 0);
        assert_eq!(base.len(), 16);
        assert_eq!(base, config_digest(&cfg, 0));
        assert_ne!(base, config_digest(&cfg, 1));
        let mut other = cfg.clone();
        other.train.lr = 0.01;
        assert_ne!(base, config_digest(&other, 0));
    }
}
