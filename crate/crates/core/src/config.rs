//! Run configuration: one TOML file holding every tunable default.
//!
//! ```toml
//! seed = 7
//! keyword_rules = "rules/keywords.toml"   # optional router override
//!
//! [paths]
//! input = "raw"
//! output = "curated"
//!
//! [curation]
//! sigma = 2.0
//!
//! [split]
//! ratios = [0.7, 0.1, 0.2]
//! counts = [2074, 295, 582]               # optional, wins over ratios
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::stats::StatsConfig;
use crate::curation::CurationConfig;
use crate::dataset::SplitSpec;
use crate::eval::EvalConfig;
use crate::loss::PenaltyConfig;
use crate::metrics::LabelerRules;
use crate::router::KeywordRules;
use crate::toy::{ModelConfig, TrainConfig, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Syntax { path: PathBuf, reason: String },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub attention_threshold: f64,
    /// Finding labeler rules; the bundled set when absent.
    pub labeler_rules: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            attention_threshold: 0.5,
            labeler_rules: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub studies: usize,
    pub dim: usize,
    pub heads: usize,
    pub fusion_layers: usize,
    pub decoder_layers: usize,
    pub mlp_hidden: usize,
    pub mixing: bool,
    pub pixel_mode: bool,
    pub train: TrainConfig,
    pub grad_check_params: usize,
    pub epsilon: f64,
}

impl Default for ToySection {
    fn default() -> Self {
        ToySection {
            studies: 5,
            dim: 16,
            heads: 2,
            fusion_layers: 4,
            decoder_layers: 1,
            mlp_hidden: 16,
            mixing: true,
            pixel_mode: false,
            train: TrainConfig::default(),
            grad_check_params: 50,
            epsilon: 1e-5,
        }
    }
}

impl ToySection {
    /// A 32x32 model config over `vocab`, long enough for `longest` tokens.
    pub fn model_config(&self, vocab: &Vocab, longest: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            heads: self.heads,
            fusion_layers: self.fusion_layers,
            decoder_layers: self.decoder_layers,
            mlp_hidden: self.mlp_hidden,
            max_len: longest + 2,
            mixing: self.mixing,
            pixel_mode: self.pixel_mode,
            ..ModelConfig::tiny(vocab.tokens().to_vec(), seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    /// Region keyword override file.
    pub keyword_rules: Option<PathBuf>,
    pub curation: CurationConfig,
    pub split: SplitSpec,
    pub stats: StatsConfig,
    pub penalty: PenaltyConfig,
    pub eval: EvalSection,
    pub toy: ToySection,
}

impl RunConfig {
    /// Parses without validating. Relative paths inside the file resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Syntax {
            path: path.into(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        };
        fix(&mut cfg.paths.input);
        fix(&mut cfg.paths.output);
        fix(&mut cfg.keyword_rules);
        fix(&mut cfg.eval.labeler_rules);
        Ok(cfg)
    }

    /// Range checks plus existence of every referenced rule file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.curation;
        if let Some(s) = c.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid(
                    "curation.sigma",
                    format!("must be positive, got {s}"),
                ));
            }
        }
        if !(0.0..1.0).contains(&c.area_threshold) {
            return Err(invalid(
                "curation.area_threshold",
                format!("must lie in [0, 1), got {}", c.area_threshold),
            ));
        }
        // explicit counts are checked against the real id count at split time
        SplitSpec {
            counts: None,
            ..self.split
        }
        .sizes(100)
        .map_err(|e| invalid("split", e.to_string()))?;
        for (field, spec) in [
            ("stats.length_bins", self.stats.length_bins),
            ("stats.ratio_bins", self.stats.ratio_bins),
        ] {
            if spec.bins == 0 || !(spec.width > 0.0 && spec.width.is_finite()) {
                return Err(invalid(
                    field,
                    format!("needs positive width and bin count, got {spec:?}"),
                ));
            }
        }
        let p = &self.penalty;
        if !(0.0..=1.0).contains(&p.iou_threshold) {
            return Err(invalid(
                "penalty.iou_threshold",
                format!("must lie in [0, 1], got {}", p.iou_threshold),
            ));
        }
        if !(p.binarize_threshold > 0.0 && p.binarize_threshold < 1.0) {
            return Err(invalid(
                "penalty.binarize_threshold",
                format!("must lie in (0, 1), got {}", p.binarize_threshold),
            ));
        }
        let t = self.eval.attention_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid(
                "eval.attention_threshold",
                format!("must lie in (0, 1), got {t}"),
            ));
        }
        self.keyword_rules()?;
        self.labeler_rules()?;
        let toy = &self.toy;
        if toy.studies == 0 {
            return Err(invalid("toy.studies", "must be positive"));
        }
        if !(1e-6..=1e-3).contains(&toy.epsilon) {
            return Err(invalid(
                "toy.epsilon",
                format!("must lie in [1e-6, 1e-3], got {}", toy.epsilon),
            ));
        }
        if !(toy.train.lr > 0.0 && toy.train.lr.is_finite()) {
            return Err(invalid(
                "toy.train.lr",
                format!("must be positive, got {}", toy.train.lr),
            ));
        }
        let probe = toy.model_config(&Vocab::from_corpus(&["probe"]), 4, self.seed);
        probe
            .validate()
            .map_err(|e| invalid("toy", e.to_string()))?;
        Ok(())
    }

    pub fn keyword_rules(&self) -> Result<KeywordRules, ConfigError> {
        match &self.keyword_rules {
            None => Ok(KeywordRules::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?;
                KeywordRules::from_toml(&text).map_err(|e| ConfigError::Syntax {
                    path: p.clone(),
                    reason: e.to_string(),
                })
            }
        }
    }

    pub fn labeler_rules(&self) -> Result<LabelerRules, ConfigError> {
        match &self.eval.labeler_rules {
            None => Ok(LabelerRules::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?;
                LabelerRules::from_toml(&text).map_err(|e| ConfigError::Syntax {
                    path: p.clone(),
                    reason: e.to_string(),
                })
            }
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig, ConfigError> {
        Ok(EvalConfig {
            attention_threshold: self.eval.attention_threshold,
            labeler: self.labeler_rules()?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            penalty: self.penalty,
            ..self.toy.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn file_loading_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[paths]\ninput = \"raw\"\n[split]\nratios = [0.7, 0.1, 0.2]\ncounts = [2074, 295, 582]\n[penalty]\neq1_literal = true\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.paths.input, Some(dir.path().join("raw")));
        assert_eq!(c.split.counts, Some((2074, 295, 582)));
        assert!(c.penalty.eq1_literal);
        c.validate().unwrap();

        std::fs::write(&p, "sede = 3\n").unwrap();
        assert!(matches!(
            RunConfig::load(&p),
            Err(ConfigError::Syntax { .. })
        ));
        std::fs::write(&p, "[curation]\nsigma = -1.0\n").unwrap();
        assert!(matches!(
            RunConfig::load(&p).unwrap().validate(),
            Err(ConfigError::Invalid {
                field: "curation.sigma",
                ..
            })
        ));
        std::fs::write(&p, "keyword_rules = \"missing.toml\"\n").unwrap();
        assert!(matches!(
            RunConfig::load(&p).unwrap().validate(),
            Err(ConfigError::Io { .. })
        ));
        std::fs::write(&p, "[eval]\nattention_threshold = 1.5\n").unwrap();
        assert!(RunConfig::load(&p).unwrap().validate().is_err());
    }
}
