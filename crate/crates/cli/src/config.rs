//! Experiment configuration.
//!
//! Configs are TOML. Every key has a default, so an empty file is a valid
//! run of the default synthetic task. Sections:
//!
//! ```toml
//! name = "default"
//! out_dir = "runs"
//! seed = 0              # optional; overrides data and train seeds
//!
//! [data]
//! shared = 10
//! source_private = 5
//! target_private = 10
//!
//! [data.synthetic]      # or [data.files] with `source` and `target`
//! total_classes = 40
//! dim = 8
//!
//! [model]
//! hidden_dims = [64]
//! feature_dim = 32
//!
//! [train]
//! steps = 2000
//! lambda = 0.1
//!
//! [eval]
//! threshold = 0.5
//! n_bins = 20
//! reject_quantile = 0.5
//!
//! [sweep]
//! seeds = [0, 1, 2, 3, 4]
//! ```

use std::path::{Path, PathBuf};

use ovanet_core::{make_category_shift, CategoryShiftSpec, ModelSpec, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: PathBuf,
    /// When set, replaces both `data.synthetic.seed` and `train.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            out_dir: PathBuf::from("runs"),
            seed: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_shared")]
    pub shared: usize,
    #[serde(default = "default_source_private")]
    pub source_private: usize,
    #[serde(default = "default_target_private")]
    pub target_private: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<FileSource>,
}

fn default_shared() -> usize {
    10
}
fn default_source_private() -> usize {
    5
}
fn default_target_private() -> usize {
    10
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            shared: default_shared(),
            source_private: default_source_private(),
            target_private: default_target_private(),
            synthetic: Some(SynthConfig::default()),
            files: None,
        }
    }
}

/// Feature CSVs. Class ids in the files follow the split layout: shared
/// classes first, then source-private, then target-private.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub source: PathBuf,
    pub target: PathBuf,
}

impl DataConfig {
    pub fn total_classes(&self) -> usize {
        match &self.synthetic {
            Some(s) => s.total_classes,
            None => self.shared + self.source_private + self.target_private,
        }
    }

    pub fn split(&self) -> Result<CategoryShiftSpec> {
        Ok(make_category_shift(
            self.total_classes(),
            self.shared,
            self.source_private,
            self.target_private,
        )?)
    }

    pub fn num_known(&self) -> usize {
        self.shared + self.source_private
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128, 128],
            feature_dim: 32,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub n_bins: usize,
    /// Share of target samples the fixed-ratio baseline rejects.
    pub reject_quantile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: ovanet_core::eval::DEFAULT_THRESHOLD,
            n_bins: 20,
            reject_quantile: 0.5,
        }
    }
}

/// Grids used by the sweep subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    pub unknown_counts: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub known_counts: Vec<usize>,
    /// Run cells on the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            unknown_counts: vec![2, 5, 10, 15, 20],
            lambdas: vec![0.02, 0.05, 0.1, 0.2, 0.5],
            known_counts: vec![10, 20, 40],
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Errors name the offending key and its line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| key_error(text, "", &e))?;
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            key_error(text, &path, e.inner())
        })?;
        // a [data] table without any source still means the default task
        if cfg.data.synthetic.is_none() && cfg.data.files.is_none() {
            cfg.data.synthetic = Some(SynthConfig::default());
        }
        Ok(cfg)
    }

    /// Reads and parses a config file. Relative data file paths are taken
    /// relative to the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(files), Some(dir)) = (cfg.data.files.as_mut(), path.parent()) {
            if files.source.is_relative() {
                files.source = dir.join(&files.source);
            }
            if files.target.is_relative() {
                files.target = dir.join(&files.target);
            }
        }
        Ok(cfg)
    }

    /// Applies the root seed and checks everything that can be checked
    /// without touching data. The result is what `config.resolved` holds.
    pub fn resolve(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
            if let Some(s) = cfg.data.synthetic.as_mut() {
                s.seed = seed;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("invalid run name {:?}", self.name)));
        }
        match (&self.data.synthetic, &self.data.files) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "data: specify exactly one of [data.synthetic] and [data.files]".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "data: no data source; add [data.synthetic] or [data.files]".into(),
                ))
            }
            (None, Some(f)) => {
                for p in [&f.source, &f.target] {
                    if !p.is_file() {
                        return Err(CliError::Config(format!("data.files: {} does not exist", p.display())));
                    }
                }
            }
            (Some(s), None) => {
                s.validate(&self.data.split()?).map_err(config_err)?;
            }
        }
        self.data.split()?;
        self.train.validate().map_err(config_err)?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(CliError::Config("eval.threshold must lie in (0, 1)".into()));
        }
        if self.eval.n_bins < 2 {
            return Err(CliError::Config("eval.n_bins must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.reject_quantile) {
            return Err(CliError::Config("eval.reject_quantile must lie in [0, 1]".into()));
        }
        if self.data.num_known() < 2 {
            return Err(CliError::Config("data: at least two known classes are required".into()));
        }
        Ok(())
    }

    /// Model shape for a dataset of width `input_dim`.
    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            feature_dim: self.model.feature_dim,
            num_known_classes: self.data.num_known(),
            init_scale: self.model.init_scale,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}

fn config_err(e: ovanet_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn key_error(text: &str, path: &str, err: &toml::de::Error) -> CliError {
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    CliError::ConfigKey {
        path: if path.is_empty() || path == "." { "<root>".into() } else { path.into() },
        line,
        message: err.message().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.resolve().unwrap();
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig {
            seed: Some(7),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.data.synthetic.as_ref().unwrap().seed, 7);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_path_and_line() {
        let text = "name = \"x\"\n\n[train]\nsteps = 10\nlamda = 0.1\n";
        match ExperimentConfig::from_toml_str(text).unwrap_err() {
            CliError::ConfigKey { path, line, message } => {
                assert_eq!(line, 5, "{message}");
                assert!(path.starts_with("train"), "{path}");
                assert!(message.contains("lamda"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_reports_path() {
        let text = "[model]\nfeature_dim = \"wide\"\n";
        match ExperimentConfig::from_toml_str(text).unwrap_err() {
            CliError::ConfigKey { path, line, .. } => {
                assert_eq!(path, "model.feature_dim");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_sources_rejected() {
        let text = "[data.synthetic]\n[data.files]\nsource = \"a.csv\"\ntarget = \"b.csv\"\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_files_rejected() {
        let text = "[data.files]\nsource = \"/nonexistent/a.csv\"\ntarget = \"/nonexistent/b.csv\"\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn split_beyond_total_rejected() {
        let text = "[data]\nshared = 30\nsource_private = 5\ntarget_private = 10\n[data.synthetic]\ntotal_classes = 40\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(cfg.resolve().is_err());
    }
}
