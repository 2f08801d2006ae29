//! Corpus n-gram metrics over the toolkit's canonical tokenization
//! (lowercase, punctuation to space, whitespace split).

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::text::tokenize;

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_corpus<A, B>(cands: &[A], refs: &[B]) -> Result<(), MetricError> {
    if cands.len() != refs.len() {
        return Err(MetricError::LengthMismatch(cands.len(), refs.len()));
    }
    if cands.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

fn tokenize_all<S: AsRef<str>>(texts: &[S]) -> Vec<Vec<String>> {
    texts.iter().map(|t| tokenize(t.as_ref())).collect()
}

/// Sufficient statistics for corpus BLEU. Merging is associative, so
/// shards can be reduced in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub clipped: [usize; 4],
    pub total: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn from_tokens(cand: &[String], reference: &[String]) -> Self {
        let mut s = BleuStats {
            cand_len: cand.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=4 {
            let c = ngrams(cand, n);
            let r = ngrams(reference, n);
            s.total[n - 1] = cand.len().saturating_sub(n - 1);
            s.clipped[n - 1] = c
                .iter()
                .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn merge(mut self, other: BleuStats) -> BleuStats {
        for i in 0..4 {
            self.clipped[i] += other.clipped[i];
            self.total[i] += other.total[i];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
        self
    }

    /// BLEU-n: brevity penalty times the geometric mean of the modified
    /// precisions for orders `1..=n`.
    pub fn score(&self, n: usize) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.clipped[k] == 0 || self.total[k] == 0 {
                return 0.0;
            }
            log_sum += (self.clipped[k] as f64 / self.total[k] as f64).ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.cand_len as f64)
            .min(0.0)
            .exp();
        bp * (log_sum / n as f64).exp()
    }
}

fn bleu_stats<S: AsRef<str>, T: AsRef<str>>(
    cands: &[S],
    refs: &[T],
) -> Result<BleuStats, MetricError> {
    check_corpus(cands, refs)?;
    Ok(cands
        .iter()
        .zip(refs)
        .map(|(c, r)| BleuStats::from_tokens(&tokenize(c.as_ref()), &tokenize(r.as_ref())))
        .fold(BleuStats::default(), BleuStats::merge))
}

/// Corpus-level BLEU-n with one reference per candidate.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(
    cands: &[S],
    refs: &[T],
    n: usize,
) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::InvalidOrder(n));
    }
    Ok(bleu_stats(cands, refs)?.score(n))
}

/// BLEU-1 through BLEU-4 from one pass over the corpus.
pub fn bleu_all<S: AsRef<str>, T: AsRef<str>>(
    cands: &[S],
    refs: &[T],
) -> Result<[f64; 4], MetricError> {
    let s = bleu_stats(cands, refs)?;
    Ok([s.score(1), s.score(2), s.score(3), s.score(4)])
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure for a single pair, beta = 1.2.
pub fn rouge_l_pair(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean per-pair ROUGE-L.
pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(cands: &[S], refs: &[T]) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    let total: f64 = cands
        .iter()
        .zip(refs)
        .map(|(c, r)| rouge_l_pair(&tokenize(c.as_ref()), &tokenize(r.as_ref())))
        .sum();
    Ok(total / cands.len() as f64)
}

const CIDER_SIGMA: f64 = 6.0;

struct TfIdf {
    vecs: [HashMap<Vec<String>, f64>; 4],
    norms: [f64; 4],
    len: usize,
}

fn tfidf(tokens: &[String], df: &HashMap<Vec<String>, usize>, log_n: f64) -> TfIdf {
    let mut vecs: [HashMap<Vec<String>, f64>; 4] = Default::default();
    let mut norms = [0.0; 4];
    for n in 1..=4 {
        for (g, tf) in ngrams(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let v = tf as f64 * (log_n - d.ln());
            norms[n - 1] += v * v;
            vecs[n - 1].insert(g.to_vec(), v);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

/// CIDEr-D score of every pair (each in `[0, 10]`). Document frequencies
/// come from the reference corpus; vectors use raw term counts times
/// `ln(N) - ln(df)`; similarities are clipped and damped by a Gaussian
/// length penalty with sigma 6.
pub fn cider_per_pair<S: AsRef<str>, T: AsRef<str>>(
    cands: &[S],
    refs: &[T],
) -> Result<Vec<f64>, MetricError> {
    check_corpus(cands, refs)?;
    let cand_toks = tokenize_all(cands);
    let ref_toks = tokenize_all(refs);
    let mut df: HashMap<Vec<String>, usize> = HashMap::new();
    for r in &ref_toks {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for n in 1..=4 {
            seen.extend(ngrams(r, n).into_keys());
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    let log_n = (ref_toks.len() as f64).ln();
    Ok(cand_toks
        .iter()
        .zip(&ref_toks)
        .map(|(c, r)| {
            let hv = tfidf(c, &df, log_n);
            let rv = tfidf(r, &df, log_n);
            let delta = hv.len as f64 - rv.len as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut score = 0.0;
            for n in 0..4 {
                let mut val: f64 = hv.vecs[n]
                    .iter()
                    .map(|(g, &h)| {
                        let r = rv.vecs[n].get(g).copied().unwrap_or(0.0);
                        h.min(r) * r
                    })
                    .sum();
                if hv.norms[n] != 0.0 && rv.norms[n] != 0.0 {
                    val /= hv.norms[n] * rv.norms[n];
                }
                score += val * penalty;
            }
            score / 4.0 * 10.0
        })
        .collect())
}

/// Corpus CIDEr-D: mean of the per-pair scores.
pub fn cider<S: AsRef<str>, T: AsRef<str>>(cands: &[S], refs: &[T]) -> Result<f64, MetricError> {
    let per = cider_per_pair(cands, refs)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// `(Div@2, R@4)`.
///
/// Div@2 is distinct bigrams over total bigrams pooled across the corpus.
/// R@4 averages, over reports with at least four tokens, the fraction of
/// 4-gram occurrences whose type repeats within that report. Reports that
/// are too short are skipped; with no eligible data both are 0.
pub fn diversity<S: AsRef<str>>(cands: &[S]) -> (f64, f64) {
    let toks = tokenize_all(cands);
    let mut distinct: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    let mut rep_sum = 0.0;
    let mut rep_n = 0usize;
    for t in &toks {
        for w in t.windows(2) {
            distinct.insert(w);
            total += 1;
        }
        if t.len() >= 4 {
            let grams = ngrams(t, 4);
            let all: usize = grams.values().sum();
            let repeated: usize = grams.values().filter(|&&c| c >= 2).sum();
            rep_sum += repeated as f64 / all as f64;
            rep_n += 1;
        }
    }
    let div2 = if total == 0 {
        0.0
    } else {
        distinct.len() as f64 / total as f64
    };
    let rep4 = if rep_n == 0 {
        0.0
    } else {
        rep_sum / rep_n as f64
    };
    (div2, rep4)
}

/// All report-text metrics. METEOR is not computed and stays `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlgScores {
    pub bleu: [f64; 4],
    pub meteor: Option<f64>,
    pub rouge_l: f64,
    pub cider: f64,
    pub div2: f64,
    pub rep4: f64,
}

pub fn nlg_scores<S: AsRef<str>, T: AsRef<str>>(
    cands: &[S],
    refs: &[T],
) -> Result<NlgScores, MetricError> {
    let (div2, rep4) = diversity(cands);
    Ok(NlgScores {
        bleu: bleu_all(cands, refs)?,
        meteor: None,
        rouge_l: rouge_l(cands, refs)?,
        cider: cider(cands, refs)?,
        div2,
        rep4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bleu_identity_and_clipping() {
        let refs = ["the heart is normal", "left lung clear of effusion"];
        for n in 1..=4 {
            assert_eq!(bleu(&refs, &refs, n).unwrap(), 1.0);
        }
        assert_eq!(
            bleu(&["the the the the"], &["the heart is normal"], 1).unwrap(),
            0.25
        );
        assert_eq!(bleu(&[""], &["the heart"], 1).unwrap(), 0.0);
        assert!(matches!(
            bleu::<&str, &str>(&[], &[], 1),
            Err(MetricError::EmptyCorpus)
        ));
        assert!(matches!(
            bleu(&["a"], &["a"], 5),
            Err(MetricError::InvalidOrder(5))
        ));
        assert!(matches!(
            bleu(&["a"], &["a", "b"], 1),
            Err(MetricError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn bleu_brevity_penalty() {
        let s = bleu(&["the heart"], &["the heart is normal"], 1).unwrap();
        assert!((s - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&["a b c"], &["a b c"]).unwrap(), 1.0);
        let f = rouge_l(&["a b c"], &["a c"]).unwrap();
        let expect = (1.0 + 1.44) * (2.0 / 3.0) / (1.0 + 1.44 * (2.0 / 3.0));
        assert!((f - expect).abs() < 1e-15);
        assert!((f - 0.830).abs() < 1e-3);
        assert_eq!(rouge_l(&["x y"], &["a b"]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[""], &["a b"]).unwrap(), 0.0);
    }

    #[test]
    fn cider_examples() {
        let refs = ["the heart is normal", "left lung shows effusion"];
        let per = cider_per_pair(&refs, &refs).unwrap();
        for s in per {
            assert!((s - 10.0).abs() < 1e-12, "{s}");
        }
        let s = cider(&["alpha beta", "left lung shows effusion"], &refs).unwrap();
        assert!((s - 5.0).abs() < 1e-12);
        let zero = cider_per_pair(&["gamma delta"], &["alpha beta"]).unwrap();
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity(&["a b c", "a b d"]).0, 0.75);
        for k in 1..6 {
            let c = vec!["a b"; k];
            assert!((diversity(&c).0 - 1.0 / k as f64).abs() < 1e-15);
        }
        assert_eq!(diversity(&["a b c d e f"]).1, 0.0);
        // "a b c d a b c d": 4-grams abcd x2, bcda, cdab, dabc -> 2 of 5 repeat
        assert!((diversity(&["a b c d a b c d"]).1 - 0.4).abs() < 1e-15);
        assert_eq!(diversity(&["a b"]).1, 0.0);
    }

    #[test]
    fn bleu_stats_merge_is_associative() {
        let toks: Vec<Vec<String>> = ["a b c d", "a a b", "c d e f g", "b"]
            .iter()
            .map(|s| tokenize(s))
            .collect();
        let s: Vec<BleuStats> = toks
            .windows(2)
            .map(|w| BleuStats::from_tokens(&w[0], &w[1]))
            .collect();
        let left = s[0].merge(s[1]).merge(s[2]);
        let right = s[0].merge(s[1].merge(s[2]));
        assert_eq!(left, right);
    }
}
