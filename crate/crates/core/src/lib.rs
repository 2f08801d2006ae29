//! Gaze-grounded chest X-ray report curation, evaluation and a toy
//! region-aware report generator.

pub mod config;
pub mod curation;
pub mod dataset;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod par;
pub mod raster;
pub mod region;
pub mod router;
pub mod synth;
pub mod text;
pub mod toy;
