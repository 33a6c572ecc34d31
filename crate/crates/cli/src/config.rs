//! Run configuration file (TOML).
//!
//! ```toml
//! dataset_dir = "data/texas"
//! output_dir = "runs/texas"
//! test_mode = false
//!
//! [train]
//! epochs = 500
//! seed = 0
//!
//! [eval]
//! task = "classify"
//! n_splits = 10
//!
//! [ablation]
//! disable_semantic_contrast = false
//! fixed_lambda = 1.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use muse::eval::EvalConfig;
use muse::model::FusionSpec;
use muse::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_semantic_contrast: bool,
    pub disable_context_contrast: bool,
    pub disable_fusion_contrast: bool,
    /// Replaces the learned controller with a constant weight.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

impl Ablation {
    fn is_noop(&self) -> bool {
        *self == Ablation::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Leaves wall-clock timing out of reports so reruns are byte-identical.
    pub test_mode: bool,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: Ablation,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|ConfigError(msg)| ConfigError(format!("{}: {msg}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let at = e.span().map(|s| {
                let line = text[..s.start].matches('\n').count() + 1;
                format!("line {line}: ")
            });
            ConfigError(format!("{}{}", at.unwrap_or_default(), e.message()))
        })
    }

    /// Folds the ablation flags into the training config and validates the
    /// result. The returned config has an empty ablation section, so it
    /// resolves to itself.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let a = std::mem::take(&mut self.ablation);
        if a.disable_semantic_contrast {
            self.train.terms.semantic = false;
        }
        if a.disable_context_contrast {
            self.train.terms.contextual = false;
        }
        if a.disable_fusion_contrast {
            self.train.terms.fusion = false;
        }
        if let Some(v) = a.fixed_lambda {
            if self.train.fusion != FusionSpec::default() && self.train.fusion != FusionSpec::fixed(v) {
                return Err(ConfigError(format!(
                    "ablation.fixed_lambda = {v} conflicts with train.fusion = {:?}",
                    self.train.fusion
                )));
            }
            self.train.fusion = FusionSpec::fixed(v);
        }
        debug_assert!(self.ablation.is_noop());
        self.train.validate().map_err(|e| ConfigError(format!("[train]: {e}")))?;
        self.eval.validate().map_err(|e| ConfigError(format!("[eval]: {e}")))?;
        muse::model::FusionRegistry::builtin()
            .create(&self.train.fusion)
            .map_err(|e| ConfigError(format!("[train.fusion]: {e}")))?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_field_is_named_with_its_line() {
        let err = RunConfig::parse("test_mode = true\n[train]\nepochz = 3\n").unwrap_err().0;
        assert!(err.contains("epochz") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn ablation_folds_into_train() {
        let cfg = RunConfig::parse("[ablation]\ndisable_semantic_contrast = true\nfixed_lambda = 1.0\n")
            .unwrap()
            .resolve()
            .unwrap();
        assert!(!cfg.train.terms.semantic);
        assert_eq!(cfg.train.fusion, FusionSpec::fixed(1.0));
        assert!(cfg.ablation.is_noop());
    }

    #[test]
    fn disabling_every_contrast_is_rejected() {
        let text = "[ablation]\ndisable_semantic_contrast = true\ndisable_context_contrast = true\n\
                    disable_fusion_contrast = true\n";
        assert!(RunConfig::parse(text).unwrap().resolve().is_err());
    }

    #[test]
    fn conflicting_fusion_is_rejected() {
        let text = "[train.fusion]\nstrategy = \"fixed\"\nfixed_lambda = 0.3\n[ablation]\nfixed_lambda = 1.0\n";
        assert!(RunConfig::parse(text).unwrap().resolve().is_err());
    }

    #[test]
    fn resolved_snapshot_round_trips() {
        let cfg = RunConfig::parse("dataset_dir = \"d\"\n[ablation]\nfixed_lambda = 0.5\n[train]\nepochs = 7\n")
            .unwrap()
            .resolve()
            .unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap().resolve().unwrap();
        assert_eq!(cfg, again);
    }
}
