//! Whole-image processing: per-pixel work fans out over a thread pool and
//! results come back in pixel order.

use rayon::prelude::*;

use crate::detection::{Detector, PixelDecision};
use crate::error::Result;
use crate::estimation::{PixelEstimate, PixelEstimator};
use crate::sketch::sketch_of;
use crate::spatial::{detection_map, DetectionMap, TvOptions};
use crate::types::{FrequencyGrid, PhotonStream, Sketch};

pub fn sketch_pixels(pixels: &[PhotonStream], grid: &FrequencyGrid) -> Result<Vec<Sketch>> {
    pixels.par_iter().map(|p| sketch_of(p.timestamps(), grid)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetection {
    pub decisions: Vec<PixelDecision>,
    /// Per-pixel map, `stat > threshold`.
    pub raw: DetectionMap,
    /// TV-regularized map; equals `raw` when `tau = 0`.
    pub map: DetectionMap,
}

/// Per-pixel tests followed by the spatially regularized map. Pixels below
/// the detector's photon minimum are excluded from the data term and never
/// marked.
pub fn detect_image(
    width: usize,
    height: usize,
    sketches: &[Sketch],
    detector: &Detector,
    tau: f64,
    opts: &TvOptions,
) -> Result<ImageDetection> {
    let decisions: Vec<PixelDecision> = sketches.par_iter().map(|s| detector.classify(s)).collect();
    let stats: Vec<f64> = decisions
        .iter()
        .map(|d| d.result().map_or(0.0, |r| r.statistic))
        .collect();
    let mask: Vec<bool> = decisions.iter().map(|d| d.result().is_some()).collect();
    let threshold = detector.threshold();
    let raw = detection_map(width, height, &stats, Some(&mask), threshold, 0.0, opts)?;
    let map = if tau == 0.0 {
        raw.clone()
    } else {
        detection_map(width, height, &stats, Some(&mask), threshold, tau, opts)?
    };
    Ok(ImageDetection { decisions, raw, map })
}

pub fn estimate_pixels(sketches: &[Sketch], estimator: &PixelEstimator) -> Result<Vec<PixelEstimate>> {
    sketches.par_iter().map(|s| estimator.estimate(s)).collect()
}
