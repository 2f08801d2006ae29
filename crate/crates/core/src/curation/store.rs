//! On-disk layout of a curated study:
//!
//! ```text
//! <out>/<study_id>/heatmap_<region>.png   16-bit, value = round(65535 v)
//! <out>/<study_id>/heatmap_<region>.json  sidecar statistics
//! <out>/<study_id>/gaze_<region>.csv      filtered fixations
//! <out>/<study_id>/reports.jsonl          seven region reports
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AreaRatios, BBox, CuratedStudy, CurationError, Heatmap, Normalization};
use crate::dataset::serialize_gaze;
use crate::raster::{read_gray_png, write_gray16_png};
use crate::region::RegionId;
use crate::router::RegionReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub region: RegionId,
    pub normalization: Normalization,
    pub sigma: f64,
    pub width: usize,
    pub height: usize,
    pub gaze_count: usize,
    pub cutoff: Option<f64>,
    pub area: usize,
    pub mask_area: usize,
    pub bbox: Option<BBox>,
    pub ratios: AreaRatios,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> CurationError {
    CurationError::Store {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn heatmap_file(region: RegionId) -> String {
    format!("heatmap_{}.png", region.key())
}

/// Writes one study atomically: files go to a hidden temp directory that is
/// renamed into place once complete.
pub fn write_curated_study(out_dir: &Path, study: &CuratedStudy) -> Result<PathBuf, CurationError> {
    let final_dir = out_dir.join(&study.study_id);
    let tmp = out_dir.join(format!(".{}.tmp", study.study_id));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| store_err(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| store_err(&tmp, e))?;
    let mut reports = String::new();
    for r in &study.regions {
        let key = r.region.key();
        let png = tmp.join(heatmap_file(r.region));
        write_gray16_png(&png, r.heatmap.grid()).map_err(|e| store_err(&png, e))?;
        let sidecar = HeatmapSidecar {
            region: r.region,
            normalization: r.heatmap.normalization(),
            sigma: study.sigma,
            width: study.width,
            height: study.height,
            gaze_count: r.gaze.len(),
            cutoff: r.cutoff,
            area: r.area,
            mask_area: r.mask_area,
            bbox: r.bbox,
            ratios: r.ratios,
        };
        let json = tmp.join(format!("heatmap_{key}.json"));
        let mut text = serde_json::to_string_pretty(&sidecar).map_err(|e| store_err(&json, e))?;
        text.push('\n');
        fs::write(&json, text).map_err(|e| store_err(&json, e))?;
        let gaze = tmp.join(format!("gaze_{key}.csv"));
        fs::write(&gaze, serialize_gaze(&r.gaze)).map_err(|e| store_err(&gaze, e))?;
        reports.push_str(&serde_json::to_string(&r.report).map_err(|e| store_err(&tmp, e))?);
        reports.push('\n');
    }
    let rp = tmp.join("reports.jsonl");
    fs::write(&rp, reports).map_err(|e| store_err(&rp, e))?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| store_err(&final_dir, e))?;
    }
    fs::rename(&tmp, &final_dir).map_err(|e| store_err(&final_dir, e))?;
    Ok(final_dir)
}

/// A curated study as read back from disk.
#[derive(Debug, Clone)]
pub struct CuratedStudyFiles {
    pub study_id: String,
    pub dir: PathBuf,
    pub reports: Vec<RegionReport>,
    pub sidecars: Vec<HeatmapSidecar>,
}

impl CuratedStudyFiles {
    pub fn heatmap_path(&self, region: RegionId) -> PathBuf {
        self.dir.join(heatmap_file(region))
    }

    pub fn load_heatmap(&self, region: RegionId) -> Result<Heatmap, CurationError> {
        let p = self.heatmap_path(region);
        let grid = read_gray_png(&p).map_err(|e| store_err(&p, e))?;
        Heatmap::from_unit(grid)
    }

    /// Region texts concatenated in code order.
    pub fn full_report(&self) -> String {
        self.reports
            .iter()
            .map(|r| r.text.as_str())
            .collect::<Vec<_>>()
            .join(". ")
    }
}

pub fn read_curated_study(dir: &Path) -> Result<CuratedStudyFiles, CurationError> {
    let study_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| store_err(dir, "study directory has no utf-8 name"))?
        .to_string();
    let rp = dir.join("reports.jsonl");
    let text = fs::read_to_string(&rp).map_err(|e| store_err(&rp, e))?;
    let reports: Vec<RegionReport> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| store_err(&rp, e)))
        .collect::<Result<_, _>>()?;
    if reports.len() != RegionId::COUNT
        || reports
            .iter()
            .zip(RegionId::ALL)
            .any(|(r, id)| r.region != id)
    {
        return Err(store_err(
            &rp,
            "expected seven region reports in region order",
        ));
    }
    let mut sidecars = Vec::with_capacity(RegionId::COUNT);
    for region in RegionId::ALL {
        let p = dir.join(format!("heatmap_{}.json", region.key()));
        let text = fs::read_to_string(&p).map_err(|e| store_err(&p, e))?;
        sidecars.push(serde_json::from_str(&text).map_err(|e| store_err(&p, e))?);
    }
    Ok(CuratedStudyFiles {
        study_id,
        dir: dir.to_path_buf(),
        reports,
        sidecars,
    })
}

/// Every curated study under `root`, sorted by study id. Hidden entries
/// (temp directories) and plain files are ignored.
pub fn read_curated_dir(root: &Path) -> Result<Vec<CuratedStudyFiles>, CurationError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| store_err(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && !p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with('.'))
        })
        .filter(|p| p.join("reports.jsonl").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_curated_study(d)).collect()
}
