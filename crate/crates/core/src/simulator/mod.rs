//! Synthetic photon generation and the Monte Carlo experiment harness.

mod experiment;
mod scene;
mod timing;

pub use experiment::{
    log_space, run_level_curves, run_pd_grid, run_pfa_curve, Axis, CountModel, DetectorSpec, ExperimentKind,
    ExperimentSpec, LevelCurve, LevelCurves, PdGrid, PfaCurve, PfaCurves, SceneLayout, Shape,
};
pub use scene::{make_synthetic_scene, run_scene_experiment, score_map, Scene, SceneReport, SceneSpec, Score};
pub use timing::{run_timing, TimingReport, TimingRow};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::types::{Irf, PhotonStream, SceneParams};

/// Result of any experiment kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentOutput {
    PdGrid(PdGrid),
    PfaCurves(PfaCurves),
    LevelCurves(LevelCurves),
    Scene(SceneReport),
    Timing(TimingReport),
}

impl ExperimentOutput {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        match self {
            ExperimentOutput::PdGrid(r) => r.write_csv(out),
            ExperimentOutput::PfaCurves(r) => r.write_csv(out),
            ExperimentOutput::LevelCurves(r) => r.write_csv(out),
            ExperimentOutput::Scene(r) => r.write_csv(out),
            ExperimentOutput::Timing(r) => r.write_csv(out),
        }
    }
}

/// Runs the experiment named by `spec.kind`. Timing uses the photon grid as
/// the counts to time, `trials` as the number of pixels and the first sketch
/// size.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    Ok(match spec.kind {
        ExperimentKind::PdGrid => ExperimentOutput::PdGrid(run_pd_grid(spec)?),
        ExperimentKind::PfaCurve => ExperimentOutput::PfaCurves(run_pfa_curve(spec)?),
        ExperimentKind::LevelCurves => ExperimentOutput::LevelCurves(run_level_curves(spec, spec.target_pd)?),
        ExperimentKind::Scene => ExperimentOutput::Scene(run_scene_experiment(spec)?),
        ExperimentKind::Timing => {
            let counts: Vec<usize> = spec.photons.integer_values().iter().map(|&n| n as usize).collect();
            let m = spec.sketch_sizes.first().copied().unwrap_or(10);
            ExperimentOutput::Timing(run_timing(
                spec.bins,
                spec.sigma,
                m,
                spec.beta,
                &counts,
                spec.trials as usize,
                spec.seed,
            )?)
        }
    })
}

/// Draws time-stamps from the single-surface mixture.
///
/// Every photon consumes the same three draws (component selector,
/// background bin, IRF offset) whatever the mixing weight, so two samplers
/// fed the same random stream at different signal fractions produce coupled
/// photon streams.
#[derive(Debug, Clone)]
pub struct PhotonSampler {
    bins: u32,
    offsets: WeightedAliasIndex<f64>,
    alpha: f64,
    shift: u32,
}

impl PhotonSampler {
    pub fn new(theta: &SceneParams, irf: &Irf) -> Result<Self> {
        let offsets = WeightedAliasIndex::new(irf.values().to_vec())
            .map_err(|e| Error::Parameter(format!("impulse response cannot be sampled: {e}")))?;
        let mut sampler = Self {
            bins: irf.bins(),
            offsets,
            alpha: 0.0,
            shift: 0,
        };
        sampler.set_params(theta);
        Ok(sampler)
    }

    /// Re-targets the sampler at new mixture parameters without rebuilding
    /// the alias table.
    pub fn set_params(&mut self, theta: &SceneParams) {
        self.alpha = theta.signal_weight();
        self.shift = theta
            .depths()
            .first()
            .map(|t| (t.round() as u64 % u64::from(self.bins)) as u32)
            .unwrap_or(0);
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let background = rng.random_range(0..self.bins);
        let offset = self.offsets.sample(rng) as u32;
        if u < self.alpha {
            ((u64::from(offset) + u64::from(self.shift)) % u64::from(self.bins)) as u32
        } else {
            background
        }
    }
}

/// `n` independent photons from the mixture `θ`. The surface component is the
/// IRF circularly shifted by the depth rounded to the nearest bin.
pub fn sample_photons<R: Rng + ?Sized>(theta: &SceneParams, irf: &Irf, n: usize, rng: &mut R) -> Result<PhotonStream> {
    let sampler = PhotonSampler::new(theta, irf)?;
    let timestamps = (0..n).map(|_| sampler.sample(rng)).collect();
    PhotonStream::new(timestamps, irf.bins(), 0.0)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic substream for `(seed, a, b)`, e.g. (seed, pixel, trial).
pub fn substream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.rotate_left(17));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    // Decorrelate adjacent keys further by discarding one block.
    let _ = rng.next_u64();
    rng
}

/// Photon count for one trial or pixel.
pub(crate) fn draw_count<R: Rng + ?Sized>(model: CountModel, n: f64, rng: &mut R) -> usize {
    match model {
        CountModel::Fixed => n.round() as usize,
        CountModel::Poisson => {
            if n <= 0.0 {
                0
            } else {
                rand_distr::Poisson::new(n).map(|p| p.sample(rng) as usize).unwrap_or(0)
            }
        }
    }
}
