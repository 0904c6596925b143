//! Characteristic-function sketches for single-photon lidar.
//!
//! Each pixel's photon time-stamps are compressed on the fly into `m`
//! samples of their empirical characteristic function. The sketch alone is
//! enough to test for the presence of a surface, to regularize the
//! resulting detection map spatially, and to estimate the depth and
//! intensity of a single surface.
//!
//! ```
//! use sketchlidar::{sketch_of, Detector, DetectionConfig, FrequencyGrid};
//!
//! let grid = FrequencyGrid::new(5, 1000).unwrap();
//! let sketch = sketch_of(&[10, 11, 12, 10, 11, 9, 10], &grid).unwrap();
//! let detector = Detector::new(DetectionConfig::for_sketch(5, 0.05).unwrap()).unwrap();
//! assert!(detector.detect(&sketch).unwrap().reject_h0);
//! ```

pub mod baselines;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod io;
pub mod pipeline;
pub mod simulator;
pub mod sketch;
pub mod spatial;
pub mod special;
pub mod types;

pub use detection::{
    detect, test_statistic, DetectionConfig, DetectionResult, Detector, DofMode, PixelDecision, StatScaling,
};
pub use error::{Error, Result};
pub use estimation::{DepthEstimate, PixelEstimate, PixelEstimator, WeightMode};
pub use sketch::{covariance, model_cf, sketch_of, ModelCf, SketchAccumulator, SketchCovariance};
pub use spatial::{detection_map, tv_denoise, DetectionMap, StatImage, TvOptions};
pub use types::{irf_transform, FrequencyGrid, Irf, PhotonStream, SceneParams, Sketch};
