//! Wall-clock cost per pixel of the sketch path versus the full-data K-S
//! baseline.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::{sample_photons, substream};
use crate::baselines::ks_interarrival_test;
use crate::detection::{DetectionConfig, Detector};
use crate::error::{Error, Result};
use crate::estimation::PixelEstimator;
use crate::sketch::sketch_of;
use crate::types::{irf_transform, FrequencyGrid, Irf, PhotonStream, SceneParams, Sketch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingRow {
    pub n: usize,
    /// Detection plus estimation from a finished sketch.
    pub sketch_seconds: f64,
    /// Inter-arrival K-S test on the full time-stamp list.
    pub ks_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub m: usize,
    pub pixels: usize,
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    /// Ratio of per-pixel times at the largest and smallest photon count,
    /// `(sketch, ks)`.
    pub fn growth(&self) -> Option<(f64, f64)> {
        let (a, b) = (self.rows.first()?, self.rows.last()?);
        Some((b.sketch_seconds / a.sketch_seconds, b.ks_seconds / a.ks_seconds))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,m,pixels,sketch_seconds_per_pixel,ks_seconds_per_pixel")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:e},{:e}",
                r.n, self.m, self.pixels, r.sketch_seconds, r.ks_seconds
            )?;
        }
        Ok(())
    }
}

const ROUNDS: usize = 7;

/// Fastest of several rounds, per item.
fn time_per_item<T>(items: &[T], mut f: impl FnMut(&T) -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..ROUNDS {
        let start = Instant::now();
        for it in items {
            f(it)?;
        }
        best = best.min(start.elapsed().as_secs_f64() / items.len() as f64);
    }
    Ok(best)
}

/// Times both paths on `pixels` simulated unit-SBR pixels per photon count.
/// Sketch construction is excluded: on the instrument it happens as photons
/// arrive.
pub fn run_timing(
    bins: u32,
    sigma: f64,
    m: usize,
    beta: f64,
    photon_counts: &[usize],
    pixels: usize,
    seed: u64,
) -> Result<TimingReport> {
    if pixels == 0 || photon_counts.is_empty() {
        return Err(Error::Parameter(
            "timing needs at least one pixel and one photon count".into(),
        ));
    }
    let grid = FrequencyGrid::new(m, bins)?;
    let irf = Irf::gaussian_circular(bins, sigma, 0.0)?;
    let detector = Detector::new(DetectionConfig::for_sketch(m, beta)?)?;
    let estimator = PixelEstimator::new(detector, grid.clone(), irf_transform(&irf, &grid)?)?;

    let mut rows = vec![];
    for (k, &n) in photon_counts.iter().enumerate() {
        let streams: Vec<PhotonStream> = (0..pixels)
            .map(|p| {
                let mut rng = substream(seed, k as u64, p as u64);
                let depth = f64::from(rng.random_range(0..bins));
                sample_photons(&SceneParams::from_sbr(1.0, depth, bins)?, &irf, n, &mut rng)
            })
            .collect::<Result<_>>()?;
        let sketches: Vec<Sketch> = streams
            .iter()
            .map(|s| sketch_of(s.timestamps(), &grid))
            .collect::<Result<_>>()?;
        let sketch_seconds = time_per_item(&sketches, |s| {
            black_box(estimator.estimate(black_box(s))?);
            Ok(())
        })?;
        let ks_seconds = time_per_item(&streams, |s| {
            black_box(ks_interarrival_test(black_box(s), beta)?);
            Ok(())
        })?;
        rows.push(TimingRow {
            n,
            sketch_seconds,
            ks_seconds,
        });
    }
    Ok(TimingReport { m, pixels, rows })
}
