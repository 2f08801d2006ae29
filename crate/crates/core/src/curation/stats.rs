//! Dataset distributions: per-region report lengths and heatmap area ratios
//! (to mask, to bounding box, to full image), as fixed-width histograms.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CuratedStudyFiles;
use crate::region::RegionId;
use crate::text::word_count;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("no curated studies found")]
    EmptyDataset,
    #[error("invalid histogram spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `bins` bins of equal `width` starting at zero; the last bin also
/// absorbs everything beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub width: f64,
    pub bins: usize,
}

impl BinSpec {
    pub fn index(&self, value: f64) -> usize {
        let k = (value / self.width + 1e-9).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.bins - 1)
        }
    }

    fn edge(&self, k: usize) -> f64 {
        (k as f64 * self.width * 1e9).round() / 1e9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub length_bins: BinSpec,
    pub ratio_bins: BinSpec,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            length_bins: BinSpec {
                width: 5.0,
                bins: 10,
            },
            ratio_bins: BinSpec {
                width: 0.1,
                bins: 30,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub spec: BinSpec,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(spec: BinSpec) -> Self {
        Histogram {
            spec,
            counts: vec![0; spec.bins],
        }
    }

    pub fn add(&mut self, v: f64) {
        let i = self.spec.index(v);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// The four per-region histogram families.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub studies: usize,
    pub report_length: Vec<Histogram>,
    pub ratio_mask: Vec<Histogram>,
    pub ratio_bbox: Vec<Histogram>,
    pub ratio_image: Vec<Histogram>,
}

pub fn dataset_stats(
    studies: &[CuratedStudyFiles],
    cfg: &StatsConfig,
) -> Result<DatasetStats, StatsError> {
    for spec in [cfg.length_bins, cfg.ratio_bins] {
        if spec.bins == 0 || spec.width.is_nan() || spec.width <= 0.0 {
            return Err(StatsError::InvalidSpec(format!("{spec:?}")));
        }
    }
    if studies.is_empty() {
        return Err(StatsError::EmptyDataset);
    }
    let fam = |spec| vec![Histogram::new(spec); RegionId::COUNT];
    let mut s = DatasetStats {
        studies: studies.len(),
        report_length: fam(cfg.length_bins),
        ratio_mask: fam(cfg.ratio_bins),
        ratio_bbox: fam(cfg.ratio_bins),
        ratio_image: fam(cfg.ratio_bins),
    };
    for study in studies {
        for (i, r) in study.reports.iter().enumerate() {
            s.report_length[i].add(word_count(&r.text) as f64);
        }
        for (i, sc) in study.sidecars.iter().enumerate() {
            if let Some(v) = sc.ratios.mask {
                s.ratio_mask[i].add(v);
            }
            if let Some(v) = sc.ratios.bbox {
                s.ratio_bbox[i].add(v);
            }
            s.ratio_image[i].add(sc.ratios.image);
        }
    }
    Ok(s)
}

fn family_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("region,bin_lo,bin_hi,count\n");
    for (region, h) in RegionId::ALL.iter().zip(hists) {
        for (k, c) in h.counts.iter().enumerate() {
            let hi = if k + 1 == h.spec.bins {
                "inf".to_string()
            } else {
                h.spec.edge(k + 1).to_string()
            };
            let _ = writeln!(out, "{},{},{},{}", region.key(), h.spec.edge(k), hi, c);
        }
    }
    out
}

fn family_svg(title: &str, hists: &[Histogram]) -> String {
    const PANEL_W: f64 = 220.0;
    const PANEL_H: f64 = 120.0;
    let mut out = String::new();
    let width = PANEL_W * 4.0 + 20.0;
    let height = (PANEL_H + 40.0) * 2.0 + 40.0;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="10" y="18" font-size="14">{title}</text>"#);
    for (i, (region, h)) in RegionId::ALL.iter().zip(hists).enumerate() {
        let ox = 10.0 + (i % 4) as f64 * PANEL_W;
        let oy = 40.0 + (i / 4) as f64 * (PANEL_H + 40.0);
        let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bar_w = (PANEL_W - 20.0) / h.counts.len() as f64;
        let _ = writeln!(
            out,
            r#"<text x="{ox}" y="{}">{}</text>"#,
            oy + 12.0,
            region.area_name()
        );
        for (k, &c) in h.counts.iter().enumerate() {
            let bh = (PANEL_H - 20.0) * c as f64 / max;
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a78a8"/>"##,
                ox + k as f64 * bar_w,
                oy + PANEL_H - bh,
                (bar_w - 1.0).max(0.5),
                bh
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

impl DatasetStats {
    pub fn families(&self) -> [(&'static str, &[Histogram]); 4] {
        [
            ("report_length", &self.report_length),
            ("ratio_mask", &self.ratio_mask),
            ("ratio_bbox", &self.ratio_bbox),
            ("ratio_image", &self.ratio_image),
        ]
    }

    /// Writes `<family>.csv` (and `<family>.svg` when `svg`) into `dir`.
    pub fn write(&self, dir: &Path, svg: bool) -> Result<Vec<std::path::PathBuf>, StatsError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StatsError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for (name, hists) in self.families() {
            let p = dir.join(format!("{name}.csv"));
            std::fs::write(&p, family_csv(hists)).map_err(io(&p))?;
            written.push(p);
            if svg {
                let p = dir.join(format!("{name}.svg"));
                std::fs::write(&p, family_svg(name, hists)).map_err(io(&p))?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning_edges() {
        let spec = BinSpec {
            width: 0.1,
            bins: 30,
        };
        assert_eq!(spec.index(0.0), 0);
        assert_eq!(spec.index(0.3), 3);
        assert_eq!(spec.index(1.0), 10);
        assert_eq!(spec.index(0.0999), 0);
        assert_eq!(spec.index(42.0), 29);
        let len = BinSpec {
            width: 5.0,
            bins: 10,
        };
        assert_eq!(len.index(4.0), 0);
        assert_eq!(len.index(5.0), 1);
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(
            dataset_stats(&[], &StatsConfig::default()),
            Err(StatsError::EmptyDataset)
        ));
    }

    #[test]
    fn csv_layout() {
        let mut h = Histogram::new(BinSpec {
            width: 5.0,
            bins: 3,
        });
        h.add(4.0);
        let csv = family_csv(&vec![h; 7]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("region,bin_lo,bin_hi,count"));
        assert_eq!(lines.next(), Some("heart,0,5,1"));
        assert_eq!(lines.next(), Some("heart,5,10,0"));
        assert_eq!(lines.next(), Some("heart,10,inf,0"));
    }
}
