//! Data model for a gaze-annotated chest X-ray study and its on-disk forms.
//!
//! Inputs are deliberately plain: gaze logs and transcripts are CSV, anatomy
//! masks are 8-bit PNGs, and the curated dataset is indexed by a JSONL
//! manifest with a separate split file.

mod gaze;
mod manifest;
mod masks;
mod split;
mod study;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::raster::Grid;
use crate::region::RegionId;

pub use gaze::{parse_gaze_log, read_gaze_file, serialize_gaze};
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestEntry, FORMAT_VERSION};
pub use masks::{load_masks, RegionMaskSet};
pub use split::{split_counts, split_dataset, Split, SplitAssignment, SplitSpec};
pub use study::{
    load_study, parse_labels, parse_transcript, passes_brightness, serialize_transcript,
    BrightnessFilter,
};

/// One eye-tracker fixation. `x` is the pixel column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: u32,
    pub y: u32,
    pub t_start: f64,
    pub t_end: f64,
}

impl Fixation {
    pub fn new(x: u32, y: u32, t_start: f64, t_end: f64) -> Self {
        Fixation {
            x,
            y,
            t_start,
            t_end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Fixations in temporal order (non-decreasing `t_start`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GazeSequence {
    pub fixations: Vec<Fixation>,
}

impl GazeSequence {
    pub fn new(fixations: Vec<Fixation>) -> Self {
        GazeSequence { fixations }
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Fixation> {
        self.fixations.iter()
    }

    pub fn is_time_ordered(&self) -> bool {
        self.fixations
            .windows(2)
            .all(|w| w[0].t_start <= w[1].t_start)
    }

    /// First fixation (in order) that falls outside a `width x height` raster.
    pub fn first_out_of_bounds(&self, width: usize, height: usize) -> Option<(usize, &Fixation)> {
        self.fixations
            .iter()
            .enumerate()
            .find(|(_, f)| f.x as usize >= width || f.y as usize >= height)
    }
}

/// A transcript sentence with the time span it was dictated in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSentence {
    pub text: String,
    pub t_start: f64,
    pub t_end: f64,
}

impl TimedSentence {
    pub fn new(text: impl Into<String>, t_start: f64, t_end: f64) -> Self {
        TimedSentence {
            text: text.into(),
            t_start,
            t_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingLabel {
    Present,
    Absent,
    Unknown,
}

impl std::str::FromStr for FindingLabel {
    type Err = String;

    /// Accepts the words or the CheXpert-style numeric codes 1 / 0 / -1.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "present" | "1" | "1.0" | "positive" => Ok(FindingLabel::Present),
            "absent" | "0" | "0.0" | "negative" => Ok(FindingLabel::Absent),
            "unknown" | "-1" | "-1.0" | "uncertain" | "" => Ok(FindingLabel::Unknown),
            other => Err(format!("unrecognized finding label `{other}`")),
        }
    }
}

impl FindingLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingLabel::Present => "present",
            FindingLabel::Absent => "absent",
            FindingLabel::Unknown => "unknown",
        }
    }
}

/// finding name -> label
pub type FindingLabels = BTreeMap<String, FindingLabel>;

/// Everything known about one radiograph.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study_id: String,
    /// Grayscale intensities in `[0, 1]`.
    pub image: Grid<f64>,
    pub gaze: GazeSequence,
    pub masks: RegionMaskSet,
    pub transcript: Vec<TimedSentence>,
    pub finding_labels: FindingLabels,
}

impl StudyRecord {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Checks the cross-field invariants (mask and gaze extents, transcript
    /// well-formedness). Returns a reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        let (w, h) = self.image.dims();
        if self.masks.dims() != (w, h) {
            let (mw, mh) = self.masks.dims();
            return Err(format!("masks are {mw}x{mh} but image is {w}x{h}"));
        }
        if let Some((i, f)) = self.gaze.first_out_of_bounds(w, h) {
            return Err(format!(
                "fixation {} at ({}, {}) outside {w}x{h} image",
                i + 1,
                f.x,
                f.y
            ));
        }
        if !self.gaze.is_time_ordered() {
            return Err("gaze fixations are not in time order".into());
        }
        for (i, s) in self.transcript.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(format!("transcript sentence {} is empty", i + 1));
            }
            if s.t_end < s.t_start {
                return Err(format!(
                    "transcript sentence {} ends before it starts",
                    i + 1
                ));
            }
        }
        Ok(())
    }
}

/// Errors raised while parsing or persisting dataset artifacts. Variants
/// carry enough location (file, line, study) to fix the input.
#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: field `{field}` is not a valid number: `{value}`")]
    NonNumeric {
        line: u64,
        field: String,
        value: String,
    },
    #[error("line {line}: negative duration (t_end < t_start)")]
    DurationNegative { line: u64 },
    #[error("line {line}: t_start goes backwards in time")]
    Unordered { line: u64 },
    #[error("missing mask for region {0}")]
    MissingRegion(RegionId),
    #[error("mask for {region} is {found:?} but expected {expected:?}")]
    DimensionMismatch {
        region: RegionId,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate study id `{0}`")]
    DuplicateId(String),
    #[error("explicit split counts {counts:?} do not sum to {n}")]
    CountMismatch {
        counts: (usize, usize, usize),
        n: usize,
    },
    #[error("unsupported manifest format_version `{0}`")]
    UnsupportedVersion(String),
    #[error("study `{study_id}` references missing file {path}")]
    BrokenReference { study_id: String, path: PathBuf },
    #[error("checksum mismatch for {0}")]
    ChecksumFailure(PathBuf),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("split file does not partition the manifest: {0}")]
    SplitMismatch(String),
    #[error("study `{study_id}`: {reason}")]
    InvalidRecord { study_id: String, reason: String },
    #[error("manifest directory {0} is locked by another writer")]
    Locked(PathBuf),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a study id to a lower-level error.
    pub fn in_study(self, study_id: &str) -> Self {
        match self {
            e @ (DatasetError::InvalidRecord { .. } | DatasetError::BrokenReference { .. }) => e,
            other => DatasetError::InvalidRecord {
                study_id: study_id.to_string(),
                reason: other.to_string(),
            },
        }
    }
}
