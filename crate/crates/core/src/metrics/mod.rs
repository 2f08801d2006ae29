//! Evaluation metrics: attention similarity between heatmaps, n-gram report
//! metrics, and clinical efficacy over extracted finding labels.

mod attention;
mod clinical;
mod nlg;

pub use attention::{attention_metrics, ssim, AttnScores};
pub use clinical::{
    ce_scores, label_findings, CeScores, FindingRule, FindingVector, LabelerRules, Prf,
};
pub use nlg::{
    bleu, bleu_all, cider, cider_per_pair, diversity, nlg_scores, rouge_l, rouge_l_pair, BleuStats,
    NlgScores,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: {0} candidates vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("n-gram order must be 1..=4, got {0}")]
    InvalidOrder(usize),
    #[error("heatmap dimensions {pred:?} and {gt:?} cannot be brought to a common grid")]
    DimensionMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("binarization threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("finding category sets differ at sample {0}")]
    CategoryMismatch(usize),
    #[error("labeler rules: {0}")]
    Rules(String),
}
