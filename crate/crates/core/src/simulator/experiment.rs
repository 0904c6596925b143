//! Monte Carlo detection experiments over signal-to-background ratio and
//! photon count.
//!
//! Within one trial the photons for every grid cell come from a single
//! random stream: the same uniforms drive every SBR value and the photon
//! sets for increasing `n` are nested prefixes. Neighbouring cells are
//! therefore positively coupled, which keeps monotonicity checks from
//! tripping on independent sampling noise while leaving each cell's
//! marginal law untouched.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_count, substream, PhotonSampler};
use crate::baselines::{coarse_hist_test, ks_interarrival_test};
use crate::detection::{DetectionConfig, Detector, DofMode, StatScaling};
use crate::error::{Error, Result};
use crate::sketch::SketchAccumulator;
use crate::types::{sbr_to_alpha, FrequencyGrid, Irf, PhotonStream, SceneParams, Sketch};

/// Photon count per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CountModel {
    /// Exactly the grid value, rounded.
    #[default]
    Fixed,
    /// Poisson with the grid value as mean.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PdGrid,
    PfaCurve,
    LevelCurves,
    Scene,
    Timing,
}

/// A grid axis: explicit values or log-spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Log { log_min: f64, log_max: f64, points: usize },
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::Values(v) => v.clone(),
            Axis::Log {
                log_min,
                log_max,
                points,
            } => log_space(*log_min, *log_max, *points),
        }
    }

    /// Values rounded to integers, duplicates removed.
    pub fn integer_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values().iter().map(|x| x.round()).collect();
        v.dedup();
        v
    }
}

/// `points` values log-spaced over `[min, max]`, endpoints included.
pub fn log_space(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![min],
        _ => {
            let (a, b) = (min.ln(), max.ln());
            let mut v: Vec<f64> = (0..points)
                .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                .collect();
            v[0] = min;
            v[points - 1] = max;
            v
        }
    }
}

/// Region covered by the surface in a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Empty,
    Rect {
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
    },
    Disk {
        cx: f64,
        cy: f64,
        radius: f64,
    },
    /// Row-major foreground flags.
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub width: usize,
    pub height: usize,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(rename = "T")]
    pub bins: u32,
    /// Standard deviation of the circular Gaussian IRF, in bins.
    pub sigma: f64,
    #[serde(default = "default_sbr")]
    pub sbr: Axis,
    pub photons: Axis,
    #[serde(default)]
    pub count_model: CountModel,
    pub trials: u64,
    pub beta: f64,
    #[serde(default = "default_sketch_sizes")]
    pub sketch_sizes: Vec<usize>,
    /// Coarse-histogram baselines, one per `T_r`.
    #[serde(default)]
    pub coarse_bins: Vec<u32>,
    /// Include the inter-arrival K-S baseline.
    #[serde(default)]
    pub ks: bool,
    #[serde(default)]
    pub dof_mode: DofMode,
    #[serde(default)]
    pub scaling: StatScaling,
    #[serde(default = "default_target_pd")]
    pub target_pd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_tau: Option<f64>,
    /// Scene surface depth at pixel (0, 0); `T/3` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default)]
    pub depth_slope: f64,
    pub seed: u64,
}

fn default_sbr() -> Axis {
    Axis::Values(vec![0.0])
}

fn default_sketch_sizes() -> Vec<usize> {
    vec![10]
}

fn default_target_pd() -> f64 {
    0.95
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Defaults of the PD map study: SBR and `n` log-spaced over
    /// `[0.01, 100]` and `[5, 5000]`, 25 points each, 500 trials per cell.
    pub fn pd_grid_default(seed: u64) -> Self {
        Self {
            kind: ExperimentKind::PdGrid,
            bins: 5000,
            sigma: 50.0,
            sbr: Axis::Log {
                log_min: 0.01,
                log_max: 100.0,
                points: 25,
            },
            photons: Axis::Log {
                log_min: 5.0,
                log_max: 5000.0,
                points: 25,
            },
            count_model: CountModel::Fixed,
            trials: 500,
            beta: 0.05,
            sketch_sizes: vec![10],
            coarse_bins: vec![],
            ks: false,
            dof_mode: DofMode::default(),
            scaling: StatScaling::default(),
            target_pd: default_target_pd(),
            scene: None,
            tv_tau: None,
            depth: None,
            depth_slope: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Parameter(format!("T={} must be at least 2", self.bins)));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::Parameter(format!("IRF width {} must be positive", self.sigma)));
        }
        if self.trials < 1 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!(
                "significance level {} outside (0, 1)",
                self.beta
            )));
        }
        if self.photons.values().is_empty() || self.sbr.values().is_empty() {
            return Err(Error::Parameter("SBR and photon-count grids must be nonempty".into()));
        }
        if self.photons.values().iter().any(|n| !(*n >= 0.0 && n.is_finite())) {
            return Err(Error::Parameter("photon counts must be finite and nonnegative".into()));
        }
        if self.sbr.values().iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::Parameter("SBR values must be nonnegative".into()));
        }
        if let Some(&m) = self.sketch_sizes.iter().find(|&&m| m < 1 || m >= self.bins as usize) {
            return Err(Error::Parameter(format!("sketch size {m} outside [1, T-1]")));
        }
        if let Some(&c) = self.coarse_bins.iter().find(|&&c| c < 2 || c > self.bins) {
            return Err(Error::Parameter(format!("coarse bin count {c} outside [2, T]")));
        }
        if !(0.0..=1.0).contains(&self.target_pd) {
            return Err(Error::Parameter(format!("target PD {} outside [0, 1]", self.target_pd)));
        }
        Ok(())
    }

    /// Photon-count grid; rounded to integers for fixed counts.
    pub fn photon_grid(&self) -> Vec<f64> {
        match self.count_model {
            CountModel::Fixed => self.photons.integer_values(),
            CountModel::Poisson => self.photons.values(),
        }
    }

    pub fn detectors(&self) -> Vec<DetectorSpec> {
        let mut out: Vec<DetectorSpec> = self.sketch_sizes.iter().map(|&m| DetectorSpec::Sketch { m }).collect();
        out.extend(
            self.coarse_bins
                .iter()
                .map(|&coarse_bins| DetectorSpec::CoarseHist { coarse_bins }),
        );
        if self.ks {
            out.push(DetectorSpec::Ks);
        }
        out
    }

    pub fn irf(&self) -> Result<Irf> {
        Irf::gaussian_circular(self.bins, self.sigma, 0.0)
    }

    /// `key=value` pairs echoed into result files.
    fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            (
                "kind",
                serde_json::to_value(self.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
            ),
            ("T", self.bins.to_string()),
            ("sigma", self.sigma.to_string()),
            ("count_model", format!("{:?}", self.count_model).to_lowercase()),
            ("trials", self.trials.to_string()),
            ("beta", self.beta.to_string()),
            ("dof_mode", format!("{:?}", self.dof_mode).to_lowercase()),
            ("scaling", format!("{:?}", self.scaling).to_lowercase()),
            ("seed", self.seed.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSpec {
    Sketch { m: usize },
    CoarseHist { coarse_bins: u32 },
    Ks,
}

impl DetectorSpec {
    pub fn name(&self) -> String {
        match self {
            DetectorSpec::Sketch { m } => format!("sketch_m{m}"),
            DetectorSpec::CoarseHist { coarse_bins } => format!("hist_tr{coarse_bins}"),
            DetectorSpec::Ks => "ks".into(),
        }
    }
}

/// Per-detector decision machinery shared by all trials.
struct Bank {
    detectors: Vec<DetectorSpec>,
    sketch_tests: Vec<Option<Detector>>,
    grid: Option<FrequencyGrid>,
    beta: f64,
}

impl Bank {
    fn new(spec: &ExperimentSpec) -> Result<Self> {
        let detectors = spec.detectors();
        let m_max = spec.sketch_sizes.iter().copied().max();
        let grid = m_max.map(|m| FrequencyGrid::new(m, spec.bins)).transpose()?;
        let sketch_tests = detectors
            .iter()
            .map(|d| match d {
                DetectorSpec::Sketch { m } => {
                    let cfg = DetectionConfig::with_mode(*m, spec.beta, spec.dof_mode, spec.scaling)?;
                    // The experiments measure the test itself, so every pixel
                    // with at least one photon is tested.
                    Ok(Some(Detector::new(cfg)?.with_min_photons(1)))
                }
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            detectors,
            sketch_tests,
            grid,
            beta: spec.beta,
        })
    }

    fn decide(&self, index: usize, sketch: Option<&Sketch>, photons: &[u32], bins: u32) -> Result<bool> {
        if photons.is_empty() {
            return Ok(false);
        }
        match self.detectors[index] {
            DetectorSpec::Sketch { m } => {
                let det = self.sketch_tests[index].as_ref().expect("sketch detector");
                let sketch = sketch.expect("sketch snapshot").truncated(m);
                Ok(det.classify(&sketch).detected())
            }
            DetectorSpec::CoarseHist { coarse_bins } => {
                let stream = PhotonStream::new(photons.to_vec(), bins, 0.0)?;
                Ok(coarse_hist_test(&stream, coarse_bins, self.beta)?.reject_h0)
            }
            DetectorSpec::Ks => {
                if photons.len() < 2 {
                    return Ok(false);
                }
                let stream = PhotonStream::new(photons.to_vec(), bins, 0.0)?;
                Ok(ks_interarrival_test(&stream, self.beta)?.reject_h0)
            }
        }
    }
}

/// Rejection counts, indexed `[detector][sbr][n]`.
fn run_cells(spec: &ExperimentSpec, sbrs: &[f64], photons: &[f64]) -> Result<Vec<u64>> {
    spec.validate()?;
    let irf = spec.irf()?;
    let bank = Bank::new(spec)?;
    let alphas: Vec<f64> = sbrs.iter().map(|&s| sbr_to_alpha(s)).collect::<Result<_>>()?;
    let (nd, ns, nn) = (bank.detectors.len(), sbrs.len(), photons.len());
    let bins = spec.bins;

    let per_trial = |trial: u64| -> Result<Vec<u64>> {
        let mut hits = vec![0u64; nd * ns * nn];
        let mut aux = substream(spec.seed, trial, 1);
        let depth = f64::from(aux.random_range(0..bins));
        let counts: Vec<usize> = photons
            .iter()
            .map(|&n| draw_count(spec.count_model, n, &mut aux))
            .collect();
        let max_count = counts.iter().copied().max().unwrap_or(0);
        let mut wanted = counts.clone();
        wanted.sort_unstable();
        wanted.dedup();

        let mut sampler = PhotonSampler::new(&SceneParams::background(), &irf)?;
        for (s, &alpha) in alphas.iter().enumerate() {
            sampler.set_params(&SceneParams::single(alpha, depth, bins)?);
            // Same uniforms for every SBR value.
            let mut rng = substream(spec.seed, trial, 0);
            let xs: Vec<u32> = (0..max_count).map(|_| sampler.sample(&mut rng)).collect();
            let mut snapshots: BTreeMap<usize, Sketch> = BTreeMap::new();
            if let Some(grid) = &bank.grid {
                let mut acc = SketchAccumulator::new(grid);
                let mut next = wanted.iter().peekable();
                while next.peek() == Some(&&0) {
                    snapshots.insert(0, acc.finalize());
                    next.next();
                }
                for (i, &x) in xs.iter().enumerate() {
                    acc.push_unchecked(x);
                    if next.peek() == Some(&&(i + 1)) {
                        snapshots.insert(i + 1, acc.finalize());
                        next.next();
                    }
                }
            }
            for (k, &count) in counts.iter().enumerate() {
                let prefix = &xs[..count];
                for d in 0..nd {
                    if bank.decide(d, snapshots.get(&count), prefix, bins)? {
                        hits[(d * ns + s) * nn + k] += 1;
                    }
                }
            }
        }
        Ok(hits)
    };

    let partials: Vec<Vec<u64>> = (0..spec.trials).into_par_iter().map(per_trial).collect::<Result<_>>()?;
    let mut total = vec![0u64; nd * ns * nn];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(total)
}

fn write_echo_header<W: Write>(out: &mut W, spec: &ExperimentSpec, extra: &[&str]) -> std::io::Result<Vec<String>> {
    let echo = spec.echo();
    let mut header: Vec<&str> = extra.to_vec();
    header.extend(echo.iter().map(|(k, _)| *k));
    writeln!(out, "{}", header.join(","))?;
    Ok(echo.into_iter().map(|(_, v)| v).collect())
}

/// Empirical detection probability over `(SBR, n)` for every detector.
#[derive(Debug, Clone, PartialEq)]
pub struct PdGrid {
    pub spec: ExperimentSpec,
    pub detectors: Vec<DetectorSpec>,
    pub sbr: Vec<f64>,
    pub photons: Vec<f64>,
    /// Rejection counts `[detector][sbr][n]`, row-major.
    pub hits: Vec<u64>,
}

impl PdGrid {
    fn index(&self, d: usize, s: usize, k: usize) -> usize {
        (d * self.sbr.len() + s) * self.photons.len() + k
    }

    pub fn pd(&self, d: usize, s: usize, k: usize) -> f64 {
        self.hits[self.index(d, s, k)] as f64 / self.spec.trials as f64
    }

    pub fn standard_error(&self, d: usize, s: usize, k: usize) -> f64 {
        let p = self.pd(d, s, k);
        (p * (1.0 - p) / self.spec.trials as f64).sqrt()
    }

    /// Adjacent-cell pairs, along either axis, where PD drops by more than
    /// `ses` standard errors of the difference of two independent cells.
    pub fn monotonicity_violations(&self, d: usize, ses: f64) -> Vec<((usize, usize), (usize, usize))> {
        let mut bad = vec![];
        let check = |a: (usize, usize), b: (usize, usize), bad: &mut Vec<_>| {
            let (pa, pb) = (self.pd(d, a.0, a.1), self.pd(d, b.0, b.1));
            let se = (self.standard_error(d, a.0, a.1).powi(2) + self.standard_error(d, b.0, b.1).powi(2)).sqrt();
            // Floor the error for cells estimated at exactly 0 or 1.
            let se = se.max(1.0 / self.spec.trials as f64);
            if pa - pb > ses * se {
                bad.push((a, b));
            }
        };
        for s in 0..self.sbr.len() {
            for k in 0..self.photons.len() {
                if k + 1 < self.photons.len() {
                    check((s, k), (s, k + 1), &mut bad);
                }
                if s + 1 < self.sbr.len() {
                    check((s, k), (s + 1, k), &mut bad);
                }
            }
        }
        bad
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let echo = write_echo_header(&mut out, &self.spec, &["detector", "sbr", "n", "pd", "hits"])?;
        for (d, det) in self.detectors.iter().enumerate() {
            for (s, sbr) in self.sbr.iter().enumerate() {
                for (k, n) in self.photons.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        det.name(),
                        sbr,
                        n,
                        self.pd(d, s, k),
                        self.hits[self.index(d, s, k)],
                        echo.join(",")
                    )?;
                }
            }
        }
        Ok(())
    }
}

pub fn run_pd_grid(spec: &ExperimentSpec) -> Result<PdGrid> {
    let sbr = spec.sbr.values();
    let photons = spec.photon_grid();
    let hits = run_cells(spec, &sbr, &photons)?;
    Ok(PdGrid {
        spec: spec.clone(),
        detectors: spec.detectors(),
        sbr,
        photons,
        hits,
    })
}

/// One detector's false-alarm rate against photon count.
#[derive(Debug, Clone, PartialEq)]
pub struct PfaCurve {
    pub detector: DetectorSpec,
    pub pfa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfaCurves {
    pub spec: ExperimentSpec,
    pub photons: Vec<f64>,
    pub curves: Vec<PfaCurve>,
}

impl PfaCurves {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let echo = write_echo_header(&mut out, &self.spec, &["detector", "n", "pfa"])?;
        for c in &self.curves {
            for (n, p) in self.photons.iter().zip(&c.pfa) {
                writeln!(out, "{},{},{},{}", c.detector.name(), n, p, echo.join(","))?;
            }
        }
        Ok(())
    }
}

/// False-alarm rates on background-only data. Detectors default to sketch
/// sizes 3, 5 and 10, coarse histograms with 10, 50 and 100 bins, and K-S
/// when the spec lists none of its own.
pub fn run_pfa_curve(spec: &ExperimentSpec) -> Result<PfaCurves> {
    let mut spec = spec.clone();
    if spec.sketch_sizes.is_empty() && spec.coarse_bins.is_empty() && !spec.ks {
        spec.sketch_sizes = vec![3, 5, 10];
        spec.coarse_bins = vec![10, 50, 100];
        spec.ks = true;
    }
    let photons = spec.photon_grid();
    let hits = run_cells(&spec, &[0.0], &photons)?;
    let curves = spec
        .detectors()
        .into_iter()
        .enumerate()
        .map(|(d, detector)| PfaCurve {
            detector,
            pfa: (0..photons.len())
                .map(|k| hits[d * photons.len() + k] as f64 / spec.trials as f64)
                .collect(),
        })
        .collect();
    Ok(PfaCurves { spec, photons, curves })
}

/// Photon count at which one detector first reaches the target PD, per SBR.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurve {
    pub detector: DetectorSpec,
    pub sbr: Vec<f64>,
    /// Smallest grid `n` reaching the target; `None` when never reached.
    pub grid_n: Vec<Option<f64>>,
    /// Crossing interpolated linearly in `log n` between grid points.
    pub interpolated_n: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurves {
    pub spec: ExperimentSpec,
    pub target_pd: f64,
    pub curves: Vec<LevelCurve>,
}

impl LevelCurves {
    pub fn from_grid(grid: &PdGrid, target_pd: f64) -> Self {
        let curves = grid
            .detectors
            .iter()
            .enumerate()
            .map(|(d, &detector)| {
                let mut grid_n = vec![];
                let mut interpolated_n = vec![];
                for s in 0..grid.sbr.len() {
                    // Running maximum makes the PD row monotone before the
                    // crossing search.
                    let mut row = Vec::with_capacity(grid.photons.len());
                    let mut best = 0.0_f64;
                    for k in 0..grid.photons.len() {
                        best = best.max(grid.pd(d, s, k));
                        row.push(best);
                    }
                    match row.iter().position(|&p| p >= target_pd) {
                        None => {
                            grid_n.push(None);
                            interpolated_n.push(None);
                        }
                        Some(0) => {
                            grid_n.push(Some(grid.photons[0]));
                            interpolated_n.push(Some(grid.photons[0]));
                        }
                        Some(k) => {
                            let (p0, p1) = (row[k - 1], row[k]);
                            let (l0, l1) = (grid.photons[k - 1].max(1e-300).ln(), grid.photons[k].ln());
                            let frac = if p1 > p0 { (target_pd - p0) / (p1 - p0) } else { 1.0 };
                            grid_n.push(Some(grid.photons[k]));
                            interpolated_n.push(Some((l0 + frac * (l1 - l0)).exp()));
                        }
                    }
                }
                LevelCurve {
                    detector,
                    sbr: grid.sbr.clone(),
                    grid_n,
                    interpolated_n,
                }
            })
            .collect();
        Self {
            spec: grid.spec.clone(),
            target_pd,
            curves,
        }
    }

    /// Open-ended crossings are written as `>n_max`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let echo = write_echo_header(
            &mut out,
            &self.spec,
            &["detector", "sbr", "target_pd", "grid_n", "interpolated_n"],
        )?;
        let n_max = self.spec.photon_grid().last().copied().unwrap_or(0.0);
        let show = |v: Option<f64>| v.map_or_else(|| format!(">{n_max}"), |x| x.to_string());
        for c in &self.curves {
            for (i, sbr) in c.sbr.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.detector.name(),
                    sbr,
                    self.target_pd,
                    show(c.grid_n[i]),
                    show(c.interpolated_n[i]),
                    echo.join(",")
                )?;
            }
        }
        Ok(())
    }
}

pub fn run_level_curves(spec: &ExperimentSpec, target_pd: f64) -> Result<LevelCurves> {
    if !(0.0..=1.0).contains(&target_pd) {
        return Err(Error::Parameter(format!("target PD {target_pd} outside [0, 1]")));
    }
    Ok(LevelCurves::from_grid(&run_pd_grid(spec)?, target_pd))
}
