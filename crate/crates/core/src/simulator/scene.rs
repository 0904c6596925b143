//! Synthetic multi-pixel scenes with a known surface mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_count, substream, CountModel, ExperimentSpec, PhotonSampler, SceneLayout, Shape};
use crate::detection::{DetectionConfig, Detector};
use crate::error::{Error, Result};
use crate::pipeline::{detect_image, sketch_pixels};
use crate::spatial::{default_tau, TvOptions};
use crate::types::{FrequencyGrid, Irf, PhotonStream, SceneParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: SceneLayout,
    #[serde(rename = "T")]
    pub bins: u32,
    pub sigma: f64,
    /// Signal-to-background ratio of foreground pixels.
    pub sbr: f64,
    /// Mean photon count per pixel.
    pub photons: f64,
    #[serde(default)]
    pub count_model: CountModel,
    /// Depth at pixel (0, 0), in bins.
    pub depth: f64,
    /// Depth increment per pixel along `x + y`.
    #[serde(default)]
    pub depth_slope: f64,
    pub seed: u64,
}

impl Shape {
    pub fn mask(&self, width: usize, height: usize) -> Result<Vec<bool>> {
        let mut out = vec![false; width * height];
        match self {
            Shape::Empty => {}
            Shape::Rect {
                x0,
                y0,
                width: w,
                height: h,
            } => {
                for y in *y0..(*y0 + *h).min(height) {
                    for x in *x0..(*x0 + *w).min(width) {
                        out[y * width + x] = true;
                    }
                }
            }
            Shape::Disk { cx, cy, radius } => {
                for y in 0..height {
                    for x in 0..width {
                        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                        out[y * width + x] = dx * dx + dy * dy <= radius * radius;
                    }
                }
            }
            Shape::Mask(m) => {
                if m.len() != width * height {
                    return Err(Error::Dimension(format!(
                        "mask has {} entries for a {width}x{height} scene",
                        m.len()
                    )));
                }
                out.clone_from(m);
            }
        }
        Ok(out)
    }
}

/// Per-pixel photon streams with the generating truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<PhotonStream>,
    pub truth: Vec<bool>,
    /// Depth of each foreground pixel.
    pub depths: Vec<Option<f64>>,
}

/// Foreground pixels draw from a single surface at the given SBR, the rest
/// from pure background. Pixel `i` uses substream `(seed, i, 0)`, so the
/// scene does not depend on thread scheduling.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<Scene> {
    let SceneLayout { width, height, shape } = &spec.layout;
    let (width, height) = (*width, *height);
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("scene size {width}x{height} is empty")));
    }
    let truth = shape.mask(width, height)?;
    let irf = Irf::gaussian_circular(spec.bins, spec.sigma, 0.0)?;
    let period = f64::from(spec.bins);
    let depths: Vec<Option<f64>> = (0..width * height)
        .map(|i| {
            truth[i].then(|| {
                let (x, y) = ((i % width) as f64, (i / width) as f64);
                (spec.depth + spec.depth_slope * (x + y)).rem_euclid(period).round() % period
            })
        })
        .collect();
    let fg_alpha = crate::types::sbr_to_alpha(spec.sbr)?;
    let pixels = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let theta = match depths[i] {
                Some(t) => SceneParams::single(fg_alpha, t, spec.bins)?,
                None => SceneParams::background(),
            };
            let sampler = PhotonSampler::new(&theta, &irf)?;
            let mut rng = substream(spec.seed, i as u64, 0);
            let n = draw_count(spec.count_model, spec.photons, &mut rng);
            let xs = (0..n).map(|_| sampler.sample(&mut rng)).collect();
            PhotonStream::new(xs, spec.bins, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        width,
        height,
        pixels,
        truth,
        depths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Fraction of foreground pixels detected (NaN without foreground).
    pub pd: f64,
    /// Fraction of background pixels detected (NaN without background).
    pub pfa: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub positives: usize,
    pub negatives: usize,
}

pub fn score_map(detected: &[bool], truth: &[bool]) -> Result<Score> {
    if detected.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "map has {} pixels, truth has {}",
            detected.len(),
            truth.len()
        )));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    let true_positives = detected.iter().zip(truth).filter(|(d, t)| **d && **t).count();
    let false_positives = detected.iter().zip(truth).filter(|(d, t)| **d && !**t).count();
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(Score {
        pd: ratio(true_positives, positives),
        pfa: ratio(false_positives, negatives),
        true_positives,
        false_positives,
        positives,
        negatives,
    })
}

/// Scene study driven by an [`ExperimentSpec`]: raw and TV-regularized
/// maps scored against the generating mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub spec: ExperimentSpec,
    pub m: usize,
    pub tau: f64,
    pub raw: Score,
    pub regularized: Score,
}

impl SceneReport {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "method,m,tau,pd,pfa,true_positives,false_positives,positives,negatives"
        )?;
        for (name, tau, s) in [("sketch", 0.0, &self.raw), ("sketch_tv", self.tau, &self.regularized)] {
            writeln!(
                out,
                "{name},{},{tau},{},{},{},{},{},{}",
                self.m, s.pd, s.pfa, s.true_positives, s.false_positives, s.positives, s.negatives
            )?;
        }
        Ok(())
    }
}

/// Uses the first SBR, photon count and sketch size of the spec. The TV
/// weight defaults to [`default_tau`] for the chosen detector.
pub fn run_scene_experiment(spec: &ExperimentSpec) -> Result<SceneReport> {
    spec.validate()?;
    let layout = spec
        .scene
        .clone()
        .ok_or_else(|| Error::Parameter("scene experiments need a \"scene\" layout".into()))?;
    let (width, height) = (layout.width, layout.height);
    let scene = make_synthetic_scene(&SceneSpec {
        layout,
        bins: spec.bins,
        sigma: spec.sigma,
        sbr: spec.sbr.values()[0],
        photons: spec.photons.values()[0],
        count_model: spec.count_model,
        depth: spec.depth.unwrap_or(f64::from(spec.bins) / 3.0),
        depth_slope: spec.depth_slope,
        seed: spec.seed,
    })?;
    let m = spec.sketch_sizes.first().copied().unwrap_or(10);
    let grid = FrequencyGrid::new(m, spec.bins)?;
    let cfg = DetectionConfig::with_mode(m, spec.beta, spec.dof_mode, spec.scaling)?;
    let detector = Detector::new(cfg)?.with_min_photons(1);
    let tau = match spec.tv_tau {
        Some(t) => t,
        None => default_tau(cfg.dof, spec.beta)?,
    };
    let sketches = sketch_pixels(&scene.pixels, &grid)?;
    let image = detect_image(width, height, &sketches, &detector, tau, &TvOptions::default())?;
    let flags = |v: &[u8]| v.iter().map(|&b| b == 1).collect::<Vec<_>>();
    Ok(SceneReport {
        spec: spec.clone(),
        m,
        tau,
        raw: score_map(&flags(&image.raw.values), &scene.truth)?,
        regularized: score_map(&flags(&image.map.values), &scene.truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: Shape) -> SceneSpec {
        SceneSpec {
            layout: SceneLayout {
                width: 16,
                height: 12,
                shape,
            },
            bins: 1000,
            sigma: 10.0,
            sbr: 1.0,
            photons: 50.0,
            count_model: CountModel::Poisson,
            depth: 300.0,
            depth_slope: 2.0,
            seed: 5,
        }
    }

    #[test]
    fn empty_scene_has_no_truth() {
        let s = make_synthetic_scene(&spec(Shape::Empty)).unwrap();
        assert!(s.truth.iter().all(|t| !t));
        assert!(s.depths.iter().all(Option::is_none));
        assert_eq!(s.pixels.len(), 16 * 12);
    }

    #[test]
    fn shapes_rasterize() {
        let rect = Shape::Rect {
            x0: 2,
            y0: 3,
            width: 4,
            height: 5,
        };
        assert_eq!(rect.mask(16, 12).unwrap().iter().filter(|&&b| b).count(), 20);
        let clipped = Shape::Rect {
            x0: 14,
            y0: 10,
            width: 4,
            height: 4,
        };
        assert_eq!(clipped.mask(16, 12).unwrap().iter().filter(|&&b| b).count(), 4);
        let disk = Shape::Disk {
            cx: 8.0,
            cy: 6.0,
            radius: 0.5,
        };
        assert_eq!(disk.mask(16, 12).unwrap().iter().filter(|&&b| b).count(), 1);
        assert!(Shape::Mask(vec![true; 3]).mask(2, 2).is_err());
    }

    #[test]
    fn scene_is_deterministic() {
        let sp = spec(Shape::Disk {
            cx: 8.0,
            cy: 6.0,
            radius: 4.0,
        });
        let a = make_synthetic_scene(&sp).unwrap();
        let b = make_synthetic_scene(&sp).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.depths[6 * 16 + 8], Some(300.0 + 2.0 * 14.0));
    }

    #[test]
    fn scores() {
        let truth = [true, true, false, false, false];
        let det = [true, false, true, false, false];
        let s = score_map(&det, &truth).unwrap();
        assert_eq!((s.pd, s.true_positives, s.false_positives), (0.5, 1, 1));
        assert!((s.pfa - 1.0 / 3.0).abs() < 1e-15);
        assert!(score_map(&det, &truth[..4]).is_err());
        assert!(score_map(&[false], &[false]).unwrap().pd.is_nan());
    }
}
