//! Rule-based finding extraction and clinical-efficacy aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::router::segment_sentences;
use crate::text::tokenize;

const DEFAULT_RULES: &str = include_str!("../../rules/chexpert14.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingRule {
    pub name: String,
    /// Each clause is a list of phrases that must all occur in a sentence.
    pub clauses: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelerRules {
    pub version: String,
    pub negation_cues: Vec<String>,
    #[serde(rename = "finding")]
    pub findings: Vec<FindingRule>,
}

impl Default for LabelerRules {
    fn default() -> Self {
        LabelerRules::from_toml(DEFAULT_RULES).expect("bundled labeler rules are valid")
    }
}

impl LabelerRules {
    pub fn from_toml(text: &str) -> Result<Self, MetricError> {
        let rules: LabelerRules =
            toml::from_str(text).map_err(|e| MetricError::Rules(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    fn validate(&self) -> Result<(), MetricError> {
        if self.findings.is_empty() {
            return Err(MetricError::Rules("empty rule set".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.findings {
            if !seen.insert(f.name.as_str()) {
                return Err(MetricError::Rules(format!(
                    "duplicate finding `{}`",
                    f.name
                )));
            }
            if f.clauses.is_empty()
                || f.clauses
                    .iter()
                    .any(|c| c.is_empty() || c.iter().any(|p| tokenize(p).is_empty()))
            {
                return Err(MetricError::Rules(format!(
                    "finding `{}` has an empty clause",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.findings.iter().map(|f| f.name.as_str())
    }
}

/// Binary finding labels over a fixed category set.
pub type FindingVector = BTreeMap<String, bool>;

/// Start positions of `phrase` inside `tokens`.
fn occurrences<'a>(tokens: &'a [String], phrase: &'a [String]) -> impl Iterator<Item = usize> + 'a {
    let n = phrase.len();
    let phrase = phrase.to_vec();
    (0..tokens.len().saturating_sub(n - 1)).filter(move |&i| tokens[i..i + n] == phrase[..])
}

/// Labels a report: a finding is 1 when one of its clauses matches inside a
/// sentence and no negation cue starts before the match in that sentence.
pub fn label_findings(report: &str, rules: &LabelerRules) -> Result<FindingVector, MetricError> {
    rules.validate()?;
    let cues: Vec<Vec<String>> = rules
        .negation_cues
        .iter()
        .map(|c| tokenize(c))
        .filter(|c| !c.is_empty())
        .collect();
    let sentences = segment_sentences(report, None).expect("untimed segmentation cannot fail");
    let tokenized: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(&s.text)).collect();
    let mut out = FindingVector::new();
    for f in &rules.findings {
        let clauses: Vec<Vec<Vec<String>>> = f
            .clauses
            .iter()
            .map(|c| c.iter().map(|p| tokenize(p)).collect())
            .collect();
        let positive = tokenized.iter().any(|toks| {
            let first_cue = cues
                .iter()
                .filter_map(|c| occurrences(toks, c).next())
                .min();
            clauses.iter().any(|clause| {
                let starts: Option<Vec<usize>> =
                    clause.iter().map(|p| occurrences(toks, p).next()).collect();
                match starts {
                    Some(s) => {
                        let at = s.into_iter().min().unwrap_or(0);
                        first_cue.is_none_or(|c| c >= at)
                    }
                    None => false,
                }
            })
        });
        out.insert(f.name.clone(), positive);
    }
    Ok(out)
}

/// Precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// 0/0 ratios are 0, except that a cell set with no positives on either
    /// side is a perfect match (1, 1, 1).
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        if tp + fp + fn_ == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf {
            precision: div(tp, tp + fp),
            recall: div(tp, tp + fn_),
            f1: div(2 * tp, 2 * tp + fp + fn_),
        }
    }

    fn mean(items: &[Prf]) -> Prf {
        let n = items.len() as f64;
        let (p, r, f) = items.iter().fold((0.0, 0.0, 0.0), |(p, r, f), x| {
            (p + x.precision, r + x.recall, f + x.f1)
        });
        Prf {
            precision: p / n,
            recall: r / n,
            f1: f / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeScores {
    pub micro: Prf,
    pub macro_: Prf,
    pub example: Prf,
}

/// Micro (pooled cells), macro (per finding, averaged) and example-based
/// (per sample, averaged) precision / recall / F1.
pub fn ce_scores(pred: &[FindingVector], gt: &[FindingVector]) -> Result<CeScores, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let categories: Vec<&String> = gt[0].keys().collect();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.keys().eq(categories.iter().copied()) || !g.keys().eq(categories.iter().copied()) {
            return Err(MetricError::CategoryMismatch(i));
        }
    }
    let mut per_finding = vec![(0usize, 0usize, 0usize); categories.len()];
    let mut per_sample = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let mut counts = (0, 0, 0);
        for (k, (pv, gv)) in p.values().zip(g.values()).enumerate() {
            let cell = match (*pv, *gv) {
                (true, true) => (1, 0, 0),
                (true, false) => (0, 1, 0),
                (false, true) => (0, 0, 1),
                (false, false) => (0, 0, 0),
            };
            per_finding[k].0 += cell.0;
            per_finding[k].1 += cell.1;
            per_finding[k].2 += cell.2;
            counts.0 += cell.0;
            counts.1 += cell.1;
            counts.2 += cell.2;
        }
        per_sample.push(counts);
    }
    let pooled = per_finding
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let macro_items: Vec<Prf> = per_finding
        .iter()
        .map(|&(a, b, c)| Prf::from_counts(a, b, c))
        .collect();
    let example_items: Vec<Prf> = per_sample
        .iter()
        .map(|&(a, b, c)| Prf::from_counts(a, b, c))
        .collect();
    Ok(CeScores {
        micro: Prf::from_counts(pooled.0, pooled.1, pooled.2),
        macro_: if macro_items.is_empty() {
            Prf::from_counts(0, 0, 0)
        } else {
            Prf::mean(&macro_items)
        },
        example: Prf::mean(&example_items),
    })
}
