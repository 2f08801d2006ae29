//! Penalty-weighted training objective
//! `total = (1 + lambda_c) * l_c + (1 + lambda_h) * l_h`.
//!
//! Both penalties are integers recomputed from scratch for every sample;
//! nothing accumulates across samples.

use serde::{Deserialize, Serialize};

use crate::curation::Heatmap;
use crate::region::RegionId;
use crate::router::KeywordRules;
use crate::text::tokenize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("expected {expected} items, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("shape mismatch at item {index}: {left:?} vs {right:?}")]
    ShapeMismatch {
        index: usize,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("distribution at position {0} does not sum to 1")]
    NotNormalized(usize),
    #[error("target token {token} out of range for vocabulary of {vocab} at position {index}")]
    TargetOutOfRange {
        index: usize,
        token: usize,
        vocab: usize,
    },
    #[error("non-finite or negative loss input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Regions with IoU below this are wrong (prose semantics).
    pub iou_threshold: f64,
    /// Heatmaps are binarized at this value (inclusive) before the IoU.
    pub binarize_threshold: f64,
    /// Flip the indicator: count regions with IoU >= threshold instead.
    pub eq1_literal: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            iou_threshold: 0.5,
            binarize_threshold: 0.5,
            eq1_literal: false,
        }
    }
}

/// Binarized IoU in `[0, 1]`; two empty masks agree perfectly.
pub fn binary_iou(pred: &Heatmap, gt: &Heatmap, binarize: f64) -> Result<f64, LossError> {
    if pred.dims() != gt.dims() {
        return Err(LossError::ShapeMismatch {
            index: 0,
            left: pred.dims(),
            right: gt.dims(),
        });
    }
    let (p, g) = (pred.binarize(binarize), gt.binarize(binarize));
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in p.as_slice().iter().zip(g.as_slice()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Counts penalized regions from per-region IoUs.
pub fn lambda_h_from_ious(ious: &[f64], cfg: &PenaltyConfig) -> u32 {
    ious.iter()
        .filter(|&&iou| {
            if cfg.eq1_literal {
                iou >= cfg.iou_threshold
            } else {
                iou < cfg.iou_threshold
            }
        })
        .count() as u32
}

/// Heatmap penalty over the seven regions.
pub fn lambda_h(pred: &[Heatmap], gt: &[Heatmap], cfg: &PenaltyConfig) -> Result<u32, LossError> {
    if pred.len() != RegionId::COUNT || gt.len() != RegionId::COUNT {
        return Err(LossError::WrongLength {
            expected: RegionId::COUNT,
            found: pred.len().min(gt.len()),
        });
    }
    let ious = pred
        .iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (p, g))| {
            binary_iou(p, g, cfg.binarize_threshold).map_err(|_| LossError::ShapeMismatch {
                index: i,
                left: p.dims(),
                right: g.dims(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(lambda_h_from_ious(&ious, cfg))
}

const UPPER_WORDS: [&str; 4] = ["upper", "apex", "apical", "top"];
const LOWER_WORDS: [&str; 3] = ["lower", "base", "bottom"];

fn side_word(region: RegionId) -> Option<(&'static str, &'static str)> {
    match region {
        RegionId::LeftLung | RegionId::UpperLeftLung | RegionId::LowerLeftLung => {
            Some(("left", "right"))
        }
        RegionId::RightLung | RegionId::UpperRightLung | RegionId::LowerRightLung => {
            Some(("right", "left"))
        }
        RegionId::Heart => None,
    }
}

fn opposite_vertical(region: RegionId) -> &'static [&'static str] {
    match region {
        RegionId::UpperLeftLung | RegionId::UpperRightLung => &LOWER_WORDS,
        RegionId::LowerLeftLung | RegionId::LowerRightLung => &UPPER_WORDS,
        _ => &[],
    }
}

/// True when a region's text either misses every keyword clause of its
/// region or names a contradicting direction.
pub fn region_text_violates(region: RegionId, text: &str, rules: &KeywordRules) -> bool {
    let tokens = tokenize(text);
    let has = |w: &str| tokens.iter().any(|t| t == w);
    let mut mentions = rules.mentions(region, text);
    if region == RegionId::Heart && !mentions {
        mentions = has("heart") && text.to_ascii_lowercase().contains("possibly normal");
    }
    let wrong_side = side_word(region).is_some_and(|(_, other)| has(other));
    let wrong_level = opposite_vertical(region).iter().any(|w| has(w));
    !mentions || wrong_side || wrong_level
}

/// Report penalty: at most one per region, so `0..=7`.
pub fn lambda_c<S: AsRef<str>>(texts: &[S], rules: &KeywordRules) -> Result<u32, LossError> {
    if texts.len() != RegionId::COUNT {
        return Err(LossError::WrongLength {
            expected: RegionId::COUNT,
            found: texts.len(),
        });
    }
    Ok(RegionId::ALL
        .iter()
        .zip(texts)
        .filter(|(r, t)| region_text_violates(**r, t.as_ref(), rules))
        .count() as u32)
}

/// Mean squared error over every cell of every region.
pub fn heatmap_l2(pred: &[Heatmap], gt: &[Heatmap]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::WrongLength {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.dims() != g.dims() {
            return Err(LossError::ShapeMismatch {
                index: i,
                left: p.dims(),
                right: g.dims(),
            });
        }
        for (a, b) in p.grid().as_slice().iter().zip(g.grid().as_slice()) {
            sum += (a - b) * (a - b);
        }
        n += p.grid().len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Mean negative log-likelihood of `targets` under per-position
/// distributions, in nats.
pub fn token_cross_entropy(dists: &[Vec<f64>], targets: &[usize]) -> Result<f64, LossError> {
    if dists.len() != targets.len() {
        return Err(LossError::WrongLength {
            expected: targets.len(),
            found: dists.len(),
        });
    }
    if dists.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (d, &t)) in dists.iter().zip(targets).enumerate() {
        if (d.iter().sum::<f64>() - 1.0).abs() > 1e-6 || d.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(LossError::NotNormalized(i));
        }
        let p = *d.get(t).ok_or(LossError::TargetOutOfRange {
            index: i,
            token: t,
            vocab: d.len(),
        })?;
        total -= p.ln();
    }
    Ok(total / dists.len() as f64)
}

/// One sample's loss terms and penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_h: f64,
    pub lambda_h: u32,
    pub lambda_c: u32,
    pub total: f64,
}

pub fn combined_loss(
    l_c: f64,
    l_h: f64,
    lambda_c: u32,
    lambda_h: u32,
) -> Result<LossBreakdown, LossError> {
    if !l_c.is_finite() || !l_h.is_finite() || l_c < 0.0 || l_h < 0.0 {
        return Err(LossError::NonFinite);
    }
    let total = (1.0 + lambda_c as f64) * l_c + (1.0 + lambda_h as f64) * l_h;
    Ok(LossBreakdown {
        l_c,
        l_h,
        lambda_h,
        lambda_c,
        total,
    })
}

/// Batch loss: mean of per-sample totals, summed in sample order.
pub fn batch_total(samples: &[LossBreakdown]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().fold(0.0, |acc, s| acc + s.total) / samples.len() as f64
}
