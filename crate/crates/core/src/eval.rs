//! Scores generated region reports and heatmaps against a curated reference.
//!
//! Generated output is JSONL, one study per line in the same order as the
//! sorted reference ids:
//! `{"study_id": "...", "regions": [{"region": "heart", "text": "...", "heatmap": "path.png"}, ...]}`.
//! Heatmap paths resolve against the JSONL file's directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::{CuratedStudyFiles, CurationError, Heatmap};
use crate::metrics::{
    attention_metrics, ce_scores, label_findings, nlg_scores, AttnScores, CeScores, LabelerRules,
    MetricError, NlgScores,
};
use crate::par::{self, Execution};
use crate::raster::read_gray_png;
use crate::region::RegionId;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("generated ids do not match the reference order; offending ids: {}", .offenders.join(", "))]
    IdMismatch { offenders: Vec<String> },
    #[error("study {study_id}: region {region} is missing or duplicated")]
    MissingRegion { study_id: String, region: RegionId },
    #[error("study {study_id}: region {region}: cannot read heatmap {path}: {reason}")]
    MissingHeatmap {
        study_id: String,
        region: RegionId,
        path: PathBuf,
        reason: String,
    },
    #[error("reference: {0}")]
    Reference(#[from] CurationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRegion {
    pub region: RegionId,
    pub text: String,
    pub heatmap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStudy {
    pub study_id: String,
    pub regions: Vec<GeneratedRegion>,
}

impl GeneratedStudy {
    fn region(&self, r: RegionId) -> Result<&GeneratedRegion, EvalError> {
        let mut it = self.regions.iter().filter(|g| g.region == r);
        match (it.next(), it.next()) {
            (Some(g), None) => Ok(g),
            _ => Err(EvalError::MissingRegion {
                study_id: self.study_id.clone(),
                region: r,
            }),
        }
    }

    /// Region texts joined in code order, the same layout as the reference.
    pub fn full_report(&self) -> Result<String, EvalError> {
        let texts = RegionId::ALL
            .iter()
            .map(|&r| self.region(r).map(|g| g.text.as_str()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(texts.join(". "))
    }
}

pub fn read_generated(path: &Path) -> Result<Vec<GeneratedStudy>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.into(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                path: path.into(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_generated(path: &Path, studies: &[GeneratedStudy]) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.into(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for s in studies {
        let line = serde_json::to_string(s).expect("generated study serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// The reference itself in generated form, heatmaps by absolute path.
pub fn reference_as_generated(reference: &[CuratedStudyFiles]) -> Vec<GeneratedStudy> {
    reference
        .iter()
        .map(|s| GeneratedStudy {
            study_id: s.study_id.clone(),
            regions: s
                .reports
                .iter()
                .map(|r| GeneratedRegion {
                    region: r.region,
                    text: r.text.clone(),
                    heatmap: std::path::absolute(s.heatmap_path(r.region))
                        .unwrap_or_else(|_| s.heatmap_path(r.region))
                        .to_string_lossy()
                        .into_owned(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Binarization threshold for the IoU columns.
    pub attention_threshold: f64,
    pub labeler: LabelerRules,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            attention_threshold: 0.5,
            labeler: LabelerRules::default(),
        }
    }
}

/// One row of scores. METEOR is not computed and has no column.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub nlg: NlgScores,
    pub ce: CeScores,
    pub attention: AttnScores,
}

impl EvalRow {
    pub const COLUMNS: [&'static str; 24] = [
        "B1", "B2", "B3", "B4", "R", "C", "Div@2", "R@4", "P_mic", "R_mic", "F1_mic", "P_mac",
        "R_mac", "F1_mac", "P_ex", "R_ex", "F1_ex", "fgIoU", "bgIoU", "fwIoU", "SSIM", "PSNR",
        "L1", "L2",
    ];

    pub fn values(&self) -> [f64; 24] {
        let n = &self.nlg;
        let c = &self.ce;
        let a = &self.attention;
        [
            n.bleu[0],
            n.bleu[1],
            n.bleu[2],
            n.bleu[3],
            n.rouge_l,
            n.cider,
            n.div2,
            n.rep4,
            c.micro.precision,
            c.micro.recall,
            c.micro.f1,
            c.macro_.precision,
            c.macro_.recall,
            c.macro_.f1,
            c.example.precision,
            c.example.recall,
            c.example.f1,
            a.fg_iou,
            a.bg_iou,
            a.fw_iou,
            a.ssim,
            a.psnr,
            a.l1,
            a.l2,
        ]
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        Self::COLUMNS
            .iter()
            .position(|c| *c == column)
            .map(|i| self.values()[i])
    }

    /// Header plus one data line, values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let vals: Vec<String> = self.values().iter().map(|v| format!("{v:?}")).collect();
        format!("{}\n{}\n", Self::COLUMNS.join(","), vals.join(","))
    }
}

fn check_ids(
    generated: &[GeneratedStudy],
    reference: &[CuratedStudyFiles],
) -> Result<(), EvalError> {
    let gen: Vec<&str> = generated.iter().map(|g| g.study_id.as_str()).collect();
    let refs: Vec<&str> = reference.iter().map(|r| r.study_id.as_str()).collect();
    if gen == refs {
        return Ok(());
    }
    let mut offenders: Vec<String> = Vec::new();
    let mut note = |id: &str| {
        if !offenders.iter().any(|o| o == id) {
            offenders.push(id.to_string());
        }
    };
    for (i, g) in gen.iter().enumerate() {
        if refs.get(i) != Some(g) {
            note(g);
        }
    }
    for r in &refs {
        if !gen.contains(r) {
            note(r);
        }
    }
    Err(EvalError::IdMismatch { offenders })
}

/// Corpus-level report metrics over full reports plus attention metrics
/// averaged over every (study, region) pair.
pub fn evaluate(
    generated: &[GeneratedStudy],
    generated_base: &Path,
    reference: &[CuratedStudyFiles],
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<EvalRow, EvalError> {
    check_ids(generated, reference)?;
    let cands = generated
        .iter()
        .map(|g| g.full_report())
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<String> = reference.iter().map(|r| r.full_report()).collect();
    let nlg = nlg_scores(&cands, &refs)?;
    let pred_labels = cands
        .iter()
        .map(|t| label_findings(t, &cfg.labeler))
        .collect::<Result<Vec<_>, _>>()?;
    let gt_labels = refs
        .iter()
        .map(|t| label_findings(t, &cfg.labeler))
        .collect::<Result<Vec<_>, _>>()?;
    let ce = ce_scores(&pred_labels, &gt_labels)?;

    let pairs: Vec<(usize, RegionId)> = (0..generated.len())
        .flat_map(|i| RegionId::ALL.into_iter().map(move |r| (i, r)))
        .collect();
    let scores = par::try_map(exec, &pairs, |&(i, r)| {
        let g = generated[i].region(r)?;
        let path = generated_base.join(&g.heatmap);
        let missing = |reason: String| EvalError::MissingHeatmap {
            study_id: generated[i].study_id.clone(),
            region: r,
            path: path.clone(),
            reason,
        };
        let grid = read_gray_png(&path).map_err(|e| missing(e.to_string()))?;
        let pred = Heatmap::from_unit(grid).map_err(|e| missing(e.to_string()))?;
        let gt = reference[i].load_heatmap(r)?;
        Ok::<_, EvalError>(attention_metrics(&pred, &gt, cfg.attention_threshold)?)
    })?;
    let attention = AttnScores::mean(&scores).ok_or(MetricError::EmptyCorpus)?;
    Ok(EvalRow { nlg, ce, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::{curate_study, read_curated_dir, write_curated_study, CurationConfig};
    use crate::router::KeywordRules;
    use crate::synth::synthetic_studies;

    fn reference(dir: &Path, n: usize) -> Vec<CuratedStudyFiles> {
        for r in synthetic_studies(5, n, 32, 32) {
            let c = curate_study(&r, &CurationConfig::default(), &KeywordRules::default()).unwrap();
            write_curated_study(dir, &c).unwrap();
        }
        read_curated_dir(dir).unwrap()
    }

    #[test]
    fn identity_row() {
        let dir = tempfile::tempdir().unwrap();
        let refs = reference(dir.path(), 6);
        let gen = reference_as_generated(&refs);
        let row = evaluate(
            &gen,
            dir.path(),
            &refs,
            &EvalConfig::default(),
            Execution::Parallel,
        )
        .unwrap();
        for c in [
            "B1", "B2", "B3", "B4", "R", "P_mic", "R_mic", "F1_mic", "P_mac", "F1_mac", "F1_ex",
            "SSIM",
        ] {
            assert!(
                (row.get(c).unwrap() - 1.0).abs() < 1e-12,
                "{c} = {:?}",
                row.get(c)
            );
        }
        for c in ["fgIoU", "bgIoU", "fwIoU", "PSNR"] {
            assert_eq!(row.get(c), Some(100.0), "{c}");
        }
        assert_eq!((row.get("L1"), row.get("L2")), (Some(0.0), Some(0.0)));
        let csv = row.to_csv();
        assert!(csv.starts_with("B1,B2,B3,B4,R,C,Div@2,R@4,P_mic,"));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 24);
    }

    #[test]
    fn id_and_region_errors() {
        let dir = tempfile::tempdir().unwrap();
        let refs = reference(dir.path(), 4);
        let mut gen = reference_as_generated(&refs);
        gen.swap(1, 2);
        match evaluate(
            &gen,
            dir.path(),
            &refs,
            &EvalConfig::default(),
            Execution::Sequential,
        ) {
            Err(EvalError::IdMismatch { offenders }) => {
                assert_eq!(offenders, vec!["s00002", "s00001"])
            }
            other => panic!("{other:?}"),
        }
        gen.swap(1, 2);
        gen[3]
            .regions
            .retain(|g| g.region != RegionId::LowerLeftLung);
        assert!(matches!(
            evaluate(
                &gen,
                dir.path(),
                &refs,
                &EvalConfig::default(),
                Execution::Sequential
            ),
            Err(EvalError::MissingRegion {
                region: RegionId::LowerLeftLung,
                ..
            })
        ));
        let mut gen = reference_as_generated(&refs);
        gen[0].regions[2].heatmap = "nowhere.png".into();
        match evaluate(
            &gen,
            dir.path(),
            &refs,
            &EvalConfig::default(),
            Execution::Sequential,
        ) {
            Err(EvalError::MissingHeatmap {
                study_id, region, ..
            }) => {
                assert_eq!((study_id.as_str(), region), ("s00000", RegionId::RightLung))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let refs = reference(dir.path(), 2);
        let gen = reference_as_generated(&refs);
        let p = dir.path().join("gen.jsonl");
        write_generated(&p, &gen).unwrap();
        assert_eq!(read_generated(&p).unwrap(), gen);
        std::fs::write(&p, "{\"study_id\": 3}\n").unwrap();
        assert!(matches!(
            read_generated(&p),
            Err(EvalError::Parse { line: 1, .. })
        ));
    }
}
