//! Sentence segmentation, keyword routing of sentences to anatomical
//! regions, and template reports for regions nobody dictated about.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{FindingLabel, FindingLabels, TimedSentence};
use crate::region::RegionId;
use crate::text::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("{timings} timings supplied for {sentences} sentences")]
    TimingMismatch { sentences: usize, timings: usize },
    #[error("invalid keyword rule for {region}: {reason}")]
    InvalidRule { region: RegionId, reason: String },
    #[error("keyword config: {0}")]
    Config(String),
}

/// Keyword conjunctions for one region. The rule fires when every word of at
/// least one clause occurs in the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub region: RegionId,
    pub clauses: Vec<Vec<String>>,
}

impl KeywordRule {
    fn validate(&self) -> Result<(), RouterError> {
        let bad = |reason: &str| RouterError::InvalidRule {
            region: self.region,
            reason: reason.into(),
        };
        if self.clauses.is_empty() {
            return Err(bad("no clauses"));
        }
        for clause in &self.clauses {
            if clause.is_empty() {
                return Err(bad("empty clause"));
            }
            for word in clause {
                if word.is_empty()
                    || !word
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
                {
                    return Err(bad(&format!(
                        "keyword `{word}` must be a single lowercase word"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn fires(&self, words: &HashSet<&str>) -> bool {
        self.clauses
            .iter()
            .any(|c| c.iter().all(|w| words.contains(w.as_str())))
    }
}

/// How a sentence that fires several nested regions is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Every firing region gets the sentence.
    Containment,
    /// A whole-lung region is dropped when one of its zones also fires.
    #[default]
    MostSpecific,
}

/// The routing table, one rule per region in code order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRules {
    rules: Vec<KeywordRule>,
}

fn clauses(list: &[&[&str]]) -> Vec<Vec<String>> {
    list.iter()
        .map(|c| c.iter().map(|w| w.to_string()).collect())
        .collect()
}

impl Default for KeywordRules {
    fn default() -> Self {
        let zone = |vertical: &[&str], side: &str| -> Vec<Vec<String>> {
            vertical
                .iter()
                .map(|v| vec![v.to_string(), side.to_string()])
                .collect()
        };
        const UPPER: [&str; 5] = ["upper", "apex", "mid", "apical", "top"];
        const LOWER: [&str; 3] = ["lower", "base", "bottom"];
        let rules = vec![
            KeywordRule {
                region: RegionId::Heart,
                clauses: clauses(&[
                    &["cardiomegaly"],
                    &["enlarged", "chest"],
                    &["heart"],
                    &["cardiac"],
                    &["mediastinum"],
                ]),
            },
            KeywordRule {
                region: RegionId::LeftLung,
                clauses: clauses(&[&["left"]]),
            },
            KeywordRule {
                region: RegionId::RightLung,
                clauses: clauses(&[&["right"]]),
            },
            KeywordRule {
                region: RegionId::UpperLeftLung,
                clauses: zone(&UPPER, "left"),
            },
            KeywordRule {
                region: RegionId::UpperRightLung,
                clauses: zone(&UPPER, "right"),
            },
            KeywordRule {
                region: RegionId::LowerLeftLung,
                clauses: zone(&LOWER, "left"),
            },
            KeywordRule {
                region: RegionId::LowerRightLung,
                clauses: zone(&LOWER, "right"),
            },
        ];
        KeywordRules { rules }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    regions: BTreeMap<String, Vec<Vec<String>>>,
}

impl KeywordRules {
    pub fn rule(&self, region: RegionId) -> &KeywordRule {
        &self.rules[region.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &KeywordRule> {
        self.rules.iter()
    }

    /// Replaces the clauses of every region named in `overrides`.
    pub fn with_overrides(
        mut self,
        overrides: BTreeMap<RegionId, Vec<Vec<String>>>,
    ) -> Result<Self, RouterError> {
        for (region, clauses) in overrides {
            let rule = KeywordRule { region, clauses };
            rule.validate()?;
            self.rules[region.index()] = rule;
        }
        Ok(self)
    }

    /// Parses a TOML override file:
    ///
    /// ```toml
    /// [regions]
    /// heart = [["cardiomegaly"], ["heart"]]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, RouterError> {
        let file: RuleFile =
            toml::from_str(text).map_err(|e| RouterError::Config(e.to_string()))?;
        let mut overrides = BTreeMap::new();
        for (name, clauses) in file.regions {
            let region = name
                .parse::<RegionId>()
                .map_err(|e| RouterError::Config(e.to_string()))?;
            overrides.insert(region, clauses);
        }
        KeywordRules::default().with_overrides(overrides)
    }

    /// Regions whose rule fires on `sentence`.
    pub fn route(&self, sentence: &str, mode: RoutingMode) -> BTreeSet<RegionId> {
        let tokens = tokenize(sentence);
        let words: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        let firing: BTreeSet<RegionId> = self
            .rules
            .iter()
            .filter(|r| r.fires(&words))
            .map(|r| r.region)
            .collect();
        match mode {
            RoutingMode::Containment => firing,
            RoutingMode::MostSpecific => {
                let shadowed: BTreeSet<RegionId> =
                    firing.iter().filter_map(|r| r.parent()).collect();
                firing.difference(&shadowed).copied().collect()
            }
        }
    }

    /// True when the text mentions any keyword clause of `region`.
    pub fn mentions(&self, region: RegionId, text: &str) -> bool {
        let tokens = tokenize(text);
        let words: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        self.rule(region).fires(&words)
    }
}

/// Containment-mode routing with the built-in table.
pub fn route_sentence(sentence: &str) -> BTreeSet<RegionId> {
    KeywordRules::default().route(sentence, RoutingMode::Containment)
}

/// Splits a transcript on `.`, `!` or `?` followed by whitespace or the end
/// of input. Segments are trimmed and empty ones dropped. When `timings` is
/// given it must hold one `(t_start, t_end)` per resulting segment; otherwise
/// every sentence gets a zero-length span at 0.
pub fn segment_sentences(
    raw: &str,
    timings: Option<&[(f64, f64)]>,
) -> Result<Vec<TimedSentence>, RouterError> {
    let mut segments = Vec::new();
    let chars: Vec<char> = raw.chars().collect();
    let mut start = 0;
    for i in 0..chars.len() {
        let terminal = matches!(chars[i], '.' | '!' | '?');
        let boundary = chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if terminal && boundary {
            segments.push(chars[start..=i].iter().collect::<String>());
            start = i + 1;
        }
    }
    if start < chars.len() {
        segments.push(chars[start..].iter().collect());
    }
    let texts: Vec<String> = segments
        .into_iter()
        .map(|s| {
            s.trim()
                .trim_end_matches(['.', '!', '?'])
                .trim()
                .to_string()
        })
        .filter(|s| !s.is_empty())
        .collect();
    match timings {
        Some(t) if t.len() != texts.len() => Err(RouterError::TimingMismatch {
            sentences: texts.len(),
            timings: t.len(),
        }),
        Some(t) => Ok(texts
            .into_iter()
            .zip(t)
            .map(|(text, &(s, e))| TimedSentence::new(text, s, e))
            .collect()),
        None => Ok(texts
            .into_iter()
            .map(|text| TimedSentence::new(text, 0.0, 0.0))
            .collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Dictated,
    TemplateNormal,
    TemplateFinding,
}

/// The sentence(s) describing one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: RegionId,
    pub text: String,
    pub source: ReportSource,
    pub matched_sentences: Vec<usize>,
}

fn is_no_finding(name: &str) -> bool {
    matches!(
        name.replace([' ', '-'], "_").as_str(),
        "no_finding" | "normal"
    )
}

/// Template report for a region without dictation. Present findings are
/// sorted and joined with " and "; underscores in names become spaces.
pub fn fill_missing(region: RegionId, labels: &FindingLabels) -> RegionReport {
    let mut findings: Vec<String> = labels
        .iter()
        .filter(|(name, label)| **label == FindingLabel::Present && !is_no_finding(name))
        .map(|(name, _)| name.replace('_', " "))
        .collect();
    findings.sort();
    let area = region.area_name();
    let (text, source) = if findings.is_empty() {
        (
            format!("the {area} is possibly normal"),
            ReportSource::TemplateNormal,
        )
    } else {
        (
            format!(
                "the patient is possibly suffering from {} in the {area}",
                findings.join(" and ")
            ),
            ReportSource::TemplateFinding,
        )
    };
    RegionReport {
        region,
        text,
        source,
        matched_sentences: Vec::new(),
    }
}

/// Exactly seven reports in region code order. Dictated sentences are
/// attached to every region they route to under `mode` and joined with
/// ". "; the remaining regions get template text.
pub fn assemble_region_reports(
    transcript: &[TimedSentence],
    labels: &FindingLabels,
    rules: &KeywordRules,
    mode: RoutingMode,
) -> Vec<RegionReport> {
    let mut matched: [Vec<usize>; 7] = Default::default();
    for (i, s) in transcript.iter().enumerate() {
        for region in rules.route(&s.text, mode) {
            matched[region.index()].push(i);
        }
    }
    RegionId::ALL
        .iter()
        .zip(matched)
        .map(|(&region, idx)| {
            if idx.is_empty() {
                fill_missing(region, labels)
            } else {
                let text = idx
                    .iter()
                    .map(|&i| transcript[i].text.trim())
                    .collect::<Vec<_>>()
                    .join(". ");
                RegionReport {
                    region,
                    text,
                    source: ReportSource::Dictated,
                    matched_sentences: idx,
                }
            }
        })
        .collect()
}
