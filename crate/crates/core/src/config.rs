//! Run configuration: one TOML file covering data, model, training and
//! evaluation, with a canonical hash embedded in every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::{DegradationConfig, LEVELS};
use crate::error::{ensure, Error, Result};
use crate::flow::FlowConfig;
use crate::model::ModelSpec;
use crate::prototype::PrototypeConfig;
use crate::train::TrainConfig;

/// Environment variable overriding `paths.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DEGMON_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorKind {
    Manifold,
    /// Single flow over all selected taps.
    Nf,
    /// One flow per tap.
    MultiNf,
}

impl MonitorKind {
    pub fn id(self) -> &'static str {
        match self {
            MonitorKind::Manifold => "manifold",
            MonitorKind::Nf => "nf",
            MonitorKind::MultiNf => "m-nf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub levels: Vec<usize>,
    pub monitors: Vec<MonitorKind>,
    /// Also emit one row per (corruption, severity).
    pub per_corruption: bool,
    /// Gate threshold on the degradation score.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            levels: (1..=LEVELS).collect(),
            monitors: vec![MonitorKind::Manifold, MonitorKind::Nf, MonitorKind::MultiNf],
            per_corruption: true,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root of the primary image collection (PNG/JPEG, searched recursively).
    pub data_root: Option<PathBuf>,
    /// Optional second collection for the mixed-pool protocol; used whole as
    /// validation data.
    pub secondary_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Fraction of the primary collection held out for validation.
    pub val_fraction: f64,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            secondary_root: None,
            output_dir: PathBuf::from("runs/default"),
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSpec,
    pub degradation: DegradationConfig,
    pub train: TrainConfig,
    pub prototype: PrototypeConfig,
    pub flow: FlowConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    /// Reads and validates a config file. Relative data paths are resolved
    /// against the file's directory; the output-dir override is applied.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.data_root, &mut cfg.paths.secondary_root].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.paths.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.degradation.validate()?;
        self.model.head.validate()?;
        self.train.validate()?;
        self.prototype.validate()?;
        self.flow.validate()?;
        ensure!(self.model.input_size >= 8, Config, "model.input_size must be at least 8");
        ensure!(self.model.backbone.taps.len() >= 2, Config, "model.backbone.taps needs at least two stages");
        ensure!(!self.eval.levels.is_empty(), Config, "eval.levels is empty");
        ensure!(
            self.eval.levels.iter().all(|l| (1..=LEVELS).contains(l)),
            Config,
            "eval.levels must lie in 1..={LEVELS}"
        );
        ensure!(self.eval.threshold.is_finite(), Config, "eval.threshold must be finite");
        ensure!(
            self.paths.val_fraction > 0.0 && self.paths.val_fraction < 1.0,
            Config,
            "paths.val_fraction must lie in (0, 1)"
        );
        for p in [&self.paths.data_root, &self.paths.secondary_root].into_iter().flatten() {
            ensure!(p.is_dir(), Config, "data directory {} does not exist", p.display());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form (sorted keys), output directory
    /// excluded; first 16 hex digits.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.output_dir = PathBuf::new();
        let value = serde_json::to_value(&canonical).expect("config is always serializable");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.train.epochs = 7;
        cfg.eval.monitors = vec![MonitorKind::Manifold];
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
        assert_eq!(cfg.config_hash().len(), 16);
    }

    #[test]
    fn hash_tracks_content_but_not_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.hard_negatives = false;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("sed = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nepoch = 3"), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.eval.levels = vec![6];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.paths.data_root = Some("/definitely/not/here".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn relative_data_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("imgs")).unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[paths]\ndata_root = \"imgs\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.data_root.unwrap(), dir.path().join("imgs"));
    }
}
