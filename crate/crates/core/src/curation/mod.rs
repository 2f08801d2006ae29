//! Per-region gaze curation: time cutoff from the transcript, mask
//! filtering, frequency maps, Gaussian heatmaps, bounding boxes and area
//! ratios, plus region reports.

mod blur;
mod heatmap;
pub mod stats;
mod store;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    passes_brightness, BrightnessFilter, GazeSequence, StudyRecord, TimedSentence,
};
use crate::par::{self, Execution};
use crate::raster::{BinaryMask, Grid};
use crate::region::RegionId;
use crate::router::{assemble_region_reports, KeywordRules, RegionReport, RoutingMode};

pub use blur::{blur_raw, gaussian_blur, gaussian_kernel};
pub use heatmap::{
    area_ratios, bbox_above, heatmap_bbox, AreaRatios, BBox, Heatmap, Normalization,
};
pub use store::{
    read_curated_dir, read_curated_study, write_curated_study, CuratedStudyFiles, HeatmapSidecar,
};

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("fixation {index} at ({x}, {y}) lies outside the {width}x{height} raster")]
    OutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        width: usize,
        height: usize,
    },
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("heatmap values must lie in [0, 1]")]
    OutOfRange,
    #[error("study `{study_id}`: {reason}")]
    InvalidStudy { study_id: String, reason: String },
    #[error("{path}: {reason}")]
    Store {
        path: std::path::PathBuf,
        reason: String,
    },
}

/// Which fixation timestamp is compared against the transcript cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffField {
    #[default]
    TStart,
    TEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    /// Blur sigma in pixels; `None` means `width / 16`.
    pub sigma: Option<f64>,
    pub weight_by_duration: bool,
    pub cutoff_field: CutoffField,
    /// Cells above this value count towards heatmap area (and bbox).
    pub area_threshold: f64,
    /// Routing used when assembling region reports. Gaze cutoff always uses
    /// containment routing.
    pub routing_mode: RoutingMode,
    pub brightness: Option<BrightnessFilter>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            sigma: None,
            weight_by_duration: false,
            cutoff_field: CutoffField::TStart,
            area_threshold: 0.0,
            routing_mode: RoutingMode::MostSpecific,
            brightness: None,
        }
    }
}

impl CurationConfig {
    pub fn sigma_for(&self, width: usize) -> f64 {
        self.sigma.unwrap_or(width as f64 / 16.0)
    }
}

/// Latest end time among sentences that mention `region` (containment
/// routing); `None` when no sentence does, meaning "keep the whole gaze".
pub fn cutoff_time(
    transcript: &[TimedSentence],
    region: RegionId,
    rules: &KeywordRules,
) -> Option<f64> {
    transcript
        .iter()
        .filter(|s| {
            rules
                .route(&s.text, RoutingMode::Containment)
                .contains(&region)
        })
        .map(|s| s.t_end)
        .fold(None, |acc: Option<f64>, t| {
            Some(acc.map_or(t, |a| a.max(t)))
        })
}

/// Keeps fixations at or before the cutoff that land inside the mask,
/// preserving order. Fixations outside the raster are dropped.
pub fn filter_gaze(
    gaze: &GazeSequence,
    cutoff: Option<f64>,
    mask: &BinaryMask,
    field: CutoffField,
) -> GazeSequence {
    let fixations = gaze
        .iter()
        .filter(|f| {
            let t = match field {
                CutoffField::TStart => f.t_start,
                CutoffField::TEnd => f.t_end,
            };
            cutoff.is_none_or(|c| t <= c)
        })
        .filter(|f| {
            let (x, y) = (f.x as usize, f.y as usize);
            mask.in_bounds(x, y) && *mask.get(x, y)
        })
        .copied()
        .collect();
    GazeSequence::new(fixations)
}

/// Per-pixel fixation counts (or summed durations with `weight_by_duration`).
pub fn frequency_map(
    gaze: &GazeSequence,
    width: usize,
    height: usize,
    weight_by_duration: bool,
) -> Result<Grid<f64>, CurationError> {
    let mut grid = Grid::filled(width, height, 0.0);
    for (index, f) in gaze.iter().enumerate() {
        let (x, y) = (f.x as usize, f.y as usize);
        if !grid.in_bounds(x, y) {
            return Err(CurationError::OutOfBounds {
                index,
                x: f.x,
                y: f.y,
                width,
                height,
            });
        }
        *grid.get_mut(x, y) += if weight_by_duration {
            f.duration()
        } else {
            1.0
        };
    }
    Ok(grid)
}

/// One {heatmap, report} pair with its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedRegion {
    pub region: RegionId,
    pub cutoff: Option<f64>,
    pub gaze: GazeSequence,
    pub heatmap: Heatmap,
    pub bbox: Option<BBox>,
    pub area: usize,
    pub mask_area: usize,
    pub ratios: AreaRatios,
    pub report: RegionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuratedStudy {
    pub study_id: String,
    pub sigma: f64,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<CuratedRegion>,
}

/// Runs the full per-region pipeline on one study, always producing seven
/// regions in code order.
pub fn curate_study(
    record: &StudyRecord,
    cfg: &CurationConfig,
    rules: &KeywordRules,
) -> Result<CuratedStudy, CurationError> {
    let (w, h) = record.image.dims();
    if record.masks.dims() != (w, h) {
        return Err(CurationError::DimensionMismatch {
            expected: (w, h),
            found: record.masks.dims(),
        });
    }
    let sigma = cfg.sigma_for(w);
    let reports = assemble_region_reports(
        &record.transcript,
        &record.finding_labels,
        rules,
        cfg.routing_mode,
    );
    let mut regions = Vec::with_capacity(RegionId::COUNT);
    for (region, report) in RegionId::ALL.into_iter().zip(reports) {
        let mask = record.masks.get(region);
        let cutoff = cutoff_time(&record.transcript, region, rules);
        let gaze = filter_gaze(&record.gaze, cutoff, mask, cfg.cutoff_field);
        let freq = frequency_map(&gaze, w, h, cfg.weight_by_duration)?;
        let heatmap = gaussian_blur(&freq, sigma)?;
        let bbox = bbox_above(&heatmap, cfg.area_threshold);
        let ratios = area_ratios(&heatmap, mask, bbox, cfg.area_threshold)?;
        regions.push(CuratedRegion {
            region,
            cutoff,
            area: heatmap.area(cfg.area_threshold),
            mask_area: mask.count(),
            gaze,
            heatmap,
            bbox,
            ratios,
            report,
        });
    }
    Ok(CuratedStudy {
        study_id: record.study_id.clone(),
        sigma,
        width: w,
        height: h,
        regions,
    })
}

/// Outcome for one study of a batch run.
#[derive(Debug)]
pub enum BatchItem {
    Curated(CuratedStudy),
    /// Dropped by the brightness gate.
    Skipped(String),
}

/// Curates many studies, optionally in parallel. Output order matches input
/// order; the first failing study (in input order) aborts the batch.
pub fn curate_batch(
    records: &[StudyRecord],
    cfg: &CurationConfig,
    rules: &KeywordRules,
    exec: Execution,
) -> Result<Vec<BatchItem>, CurationError> {
    par::try_map(exec, records, |r| {
        if !passes_brightness(&r.image, cfg.brightness.as_ref()) {
            return Ok(BatchItem::Skipped(r.study_id.clone()));
        }
        curate_study(r, cfg, rules)
            .map(BatchItem::Curated)
            .map_err(|e| CurationError::InvalidStudy {
                study_id: r.study_id.clone(),
                reason: e.to_string(),
            })
    })
}
