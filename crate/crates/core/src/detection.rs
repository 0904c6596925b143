//! Sketch-based goodness-of-fit test for "background only" versus "at least
//! one surface".
//!
//! Under the background-only hypothesis the sketch frequencies sit on zeros
//! of the uniform law's characteristic function, so `z_n` is centered with
//! identity covariance and each of its `2m` real components has variance
//! `1/(2n)`. The default statistic `2n‖z‖²` is therefore asymptotically
//! χ²_{2m}, independent of the photon count.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::chi2_upper_percentile;
use crate::types::{FrequencyGrid, PhotonStream, Sketch};

/// Pixels with fewer photons are reported as insufficient data.
pub const DEFAULT_MIN_PHOTONS: u64 = 5;

/// How the squared sketch norm is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StatScaling {
    /// `2n‖z‖²`.
    #[default]
    Scaled,
    /// `‖z‖²`, unnormalized.
    Raw,
}

/// Rule for the χ² degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DofMode {
    /// `2m`: real and imaginary parts of every frequency, no fitted
    /// parameters under the null.
    #[default]
    Scaled2m,
    /// `m - 2K - 1` with `K = 0` under the null, i.e. `m - 1`.
    Paper,
}

impl DofMode {
    pub fn dof(self, m: usize) -> Result<u32> {
        let dof = match self {
            DofMode::Scaled2m => 2 * m,
            DofMode::Paper => m.saturating_sub(1),
        };
        if dof == 0 {
            return Err(Error::Parameter(format!(
                "{self:?} degrees of freedom are zero for m={m}"
            )));
        }
        Ok(dof as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub beta: f64,
    pub dof: u32,
    pub scaling: StatScaling,
}

impl DetectionConfig {
    pub fn new(beta: f64, dof: u32, scaling: StatScaling) -> Result<Self> {
        let cfg = Self { beta, dof, scaling };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default configuration for a sketch of size `m`: scaled statistic with
    /// `2m` degrees of freedom.
    pub fn for_sketch(m: usize, beta: f64) -> Result<Self> {
        Self::new(beta, DofMode::Scaled2m.dof(m)?, StatScaling::Scaled)
    }

    pub fn with_mode(m: usize, beta: f64, mode: DofMode, scaling: StatScaling) -> Result<Self> {
        Self::new(beta, mode.dof(m)?, scaling)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!(
                "significance level {} outside (0, 1)",
                self.beta
            )));
        }
        if self.dof < 1 {
            return Err(Error::Parameter("degrees of freedom must be >= 1".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> Result<f64> {
        chi2_upper_percentile(self.dof, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub statistic: f64,
    pub threshold: f64,
    pub reject_h0: bool,
}

impl DetectionResult {
    fn new(statistic: f64, threshold: f64) -> Self {
        Self {
            statistic,
            threshold,
            reject_h0: statistic > threshold,
        }
    }
}

/// Outcome for one pixel once the minimum-photon rule is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelDecision {
    Insufficient { photons: u64 },
    Tested(DetectionResult),
}

impl PixelDecision {
    pub fn detected(&self) -> bool {
        matches!(self, PixelDecision::Tested(r) if r.reject_h0)
    }

    pub fn result(&self) -> Option<&DetectionResult> {
        match self {
            PixelDecision::Tested(r) => Some(r),
            PixelDecision::Insufficient { .. } => None,
        }
    }
}

fn scaled(norm_sqr: f64, n: u64, scaling: StatScaling) -> f64 {
    match scaling {
        StatScaling::Scaled => 2.0 * n as f64 * norm_sqr,
        StatScaling::Raw => norm_sqr,
    }
}

/// `2n‖z‖²`.
pub fn test_statistic(sketch: &Sketch) -> Result<f64> {
    test_statistic_with(sketch, StatScaling::Scaled)
}

pub fn test_statistic_with(sketch: &Sketch, scaling: StatScaling) -> Result<f64> {
    if sketch.n == 0 {
        return Err(Error::EmptyPixel);
    }
    Ok(scaled(sketch.norm_sqr(), sketch.n, scaling))
}

/// Goodness-of-fit test of one sketch against the uniform background.
pub fn detect(sketch: &Sketch, cfg: &DetectionConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    let statistic = test_statistic_with(sketch, cfg.scaling)?;
    Ok(DetectionResult::new(statistic, cfg.threshold()?))
}

/// Detector with its threshold computed once and reused for every pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    cfg: DetectionConfig,
    threshold: f64,
    min_photons: u64,
}

impl Detector {
    pub fn new(cfg: DetectionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            threshold: cfg.threshold()?,
            cfg,
            min_photons: DEFAULT_MIN_PHOTONS,
        })
    }

    pub fn with_min_photons(mut self, min_photons: u64) -> Self {
        self.min_photons = min_photons.max(1);
        self
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.cfg
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn min_photons(&self) -> u64 {
        self.min_photons
    }

    pub fn detect(&self, sketch: &Sketch) -> Result<DetectionResult> {
        let statistic = test_statistic_with(sketch, self.cfg.scaling)?;
        Ok(DetectionResult::new(statistic, self.threshold))
    }

    /// Test against a data-driven background reference.
    pub fn detect_with_background(&self, sketch: &Sketch, reference: &BackgroundReference) -> Result<DetectionResult> {
        let statistic = background_statistic(sketch, reference, self.cfg.scaling)?;
        Ok(DetectionResult::new(statistic, self.threshold))
    }

    pub fn classify(&self, sketch: &Sketch) -> PixelDecision {
        if sketch.n < self.min_photons {
            return PixelDecision::Insufficient { photons: sketch.n };
        }
        let statistic = scaled(sketch.norm_sqr(), sketch.n, self.cfg.scaling);
        PixelDecision::Tested(DetectionResult::new(statistic, self.threshold))
    }
}

/// Expected feature vector `E_{π̂_b}[Φ_ω(x)]` of a measured background.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundReference {
    pub z: Vec<Complex64>,
}

/// Where the background law comes from.
#[derive(Debug, Clone, Copy)]
pub enum BackgroundSource<'a> {
    /// Calibration photons recorded with no target in view.
    Photons(&'a PhotonStream),
    /// Explicit probabilities over `[0, T-1]`.
    Distribution(&'a [f64]),
}

pub fn background_reference(source: BackgroundSource<'_>, grid: &FrequencyGrid) -> Result<BackgroundReference> {
    let m = grid.len();
    let mut z = vec![Complex64::new(0.0, 0.0); m];
    match source {
        BackgroundSource::Photons(stream) => {
            if stream.bins() != grid.bins() {
                return Err(Error::Dimension(format!(
                    "calibration stream has T={}, grid has T={}",
                    stream.bins(),
                    grid.bins()
                )));
            }
            if stream.is_empty() {
                return Err(Error::Calibration);
            }
            z = crate::sketch::sketch_of(stream.timestamps(), grid)?.z;
        }
        BackgroundSource::Distribution(probs) => {
            if probs.len() != grid.bins() as usize {
                return Err(Error::Dimension(format!(
                    "background distribution has {} bins, grid has T={}",
                    probs.len(),
                    grid.bins()
                )));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Parameter("background probabilities must be nonnegative".into()));
            }
            let total: f64 = probs.iter().sum();
            if total == 0.0 {
                return Err(Error::Calibration);
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Parameter(format!(
                    "background probabilities sum to {total}, not 1"
                )));
            }
            for (x, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (zj, f) in z.iter_mut().zip(grid.features(x as u32)) {
                    *zj += p * f;
                }
            }
        }
    }
    Ok(BackgroundReference { z })
}

fn background_statistic(sketch: &Sketch, reference: &BackgroundReference, scaling: StatScaling) -> Result<f64> {
    if reference.z.len() != sketch.len() {
        return Err(Error::Dimension(format!(
            "reference has m={}, sketch has m={}",
            reference.z.len(),
            sketch.len()
        )));
    }
    if sketch.n == 0 {
        return Err(Error::EmptyPixel);
    }
    let dist: f64 = sketch.z.iter().zip(&reference.z).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(scaled(dist, sketch.n, scaling))
}

/// Test with the statistic `‖z - ẑ‖²`, scaled as configured.
///
/// Under a non-uniform background the null covariance of `z - ẑ` is not the
/// identity, so the χ² threshold is only approximately calibrated.
pub fn detect_with_background(
    sketch: &Sketch,
    reference: &BackgroundReference,
    cfg: &DetectionConfig,
) -> Result<DetectionResult> {
    cfg.validate()?;
    let statistic = background_statistic(sketch, reference, cfg.scaling)?;
    Ok(DetectionResult::new(statistic, cfg.threshold()?))
}
