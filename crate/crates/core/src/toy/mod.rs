//! Desk-scale gaze-guided report generator.
//!
//! Three pieces share one parameter set: a gaze attention predictor that
//! maps patches plus a fixed intention token to a per-region attention grid,
//! a feature reweighting step `V(i) = [V' * A(i), T(i)]`, and a small
//! autoregressive decoder that cross-attends over `V(i)`. Everything runs in
//! `f64` so finite differences can audit the gradients.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod checkpoint;
mod model;
pub mod tape;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use model::{attend, intention_tokens, AttentionGrid, Model, Params};
pub use train::{
    build_samples, exact_matches, grad_check, sample_loss, synthetic_samples, train_step, Adam,
    GradCheckReport, Optimizer, Sgd, StepReport, ToySample, TrainConfig,
};

/// Side length of the square pixel patches.
pub const PATCH: usize = 16;

pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(usize),
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),
    #[error("decoder prefix must start with {BOS}")]
    BadPrefix,
    #[error("loss is not finite")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Embedding width shared by the predictor, encoder and decoder.
    pub dim: usize,
    pub vocab: Vec<String>,
    pub fusion_layers: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    pub mlp_hidden: usize,
    /// Longest decoder input, `[BOS]` included.
    pub max_len: usize,
    pub seed: u64,
    /// Self-attention mixing after the patch embedding.
    pub mixing: bool,
    /// Apply attention to pixels and re-encode instead of to features.
    pub pixel_mode: bool,
}

impl Default for ModelConfig {
    /// Full-scale reference sizes. Far too large for the tape; use
    /// [`ModelConfig::tiny`] for anything that actually runs.
    fn default() -> Self {
        ModelConfig {
            height: 224,
            width: 224,
            dim: 240,
            vocab: vec![PAD.into(), BOS.into(), EOS.into()],
            fusion_layers: 4,
            heads: 6,
            decoder_layers: 6,
            mlp_hidden: 256,
            max_len: 64,
            seed: 0,
            mixing: true,
            pixel_mode: false,
        }
    }
}

impl ModelConfig {
    pub fn tiny(vocab: Vec<String>, seed: u64) -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            dim: 8,
            vocab,
            fusion_layers: 4,
            heads: 2,
            decoder_layers: 1,
            mlp_hidden: 8,
            max_len: 16,
            seed,
            mixing: true,
            pixel_mode: false,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.width / PATCH, self.height / PATCH)
    }

    pub fn patches(&self) -> usize {
        let (gw, gh) = self.grid();
        gw * gh
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::Config(m));
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(PATCH)
            || !self.width.is_multiple_of(PATCH)
        {
            return bad(format!(
                "image {}x{} must be a non-zero multiple of {PATCH}",
                self.width, self.height
            ));
        }
        if self.dim < 4 {
            return bad(format!("dim must be at least 4, got {}", self.dim));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.fusion_layers == 0 || self.decoder_layers == 0 || self.mlp_hidden == 0 {
            return bad("layer counts and mlp_hidden must be positive".into());
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        Vocab::new(self.vocab.clone())?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Whitespace vocabulary with the three reserved tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, ToyError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ToyError::Config(format!(
                    "duplicate vocabulary entry `{t}`"
                )));
            }
        }
        for s in [PAD, BOS, EOS] {
            if !index.contains_key(s) {
                return Err(ToyError::Config(format!("vocabulary lacks {s}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Reserved tokens first, then every distinct word in sorted order.
    pub fn from_corpus<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut words: Vec<String> = texts
            .iter()
            .flat_map(|t| crate::text::tokenize(t.as_ref()))
            .collect();
        words.sort();
        words.dedup();
        let tokens = [PAD, BOS, EOS]
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Vocab::new(tokens).expect("corpus words never collide with reserved tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn bos(&self) -> usize {
        self.index[BOS]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, ToyError> {
        crate::text::tokenize(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(ToyError::UnknownWord(w)))
            .collect()
    }

    /// Joins words up to the first `[EOS]`, skipping reserved tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        let eos = self.eos();
        ids.iter()
            .take_while(|&&i| i != eos)
            .filter_map(|&i| self.tokens.get(i))
            .filter(|t| t.as_str() != PAD && t.as_str() != BOS)
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    }
}
