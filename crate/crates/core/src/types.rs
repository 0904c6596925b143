//! Domain types shared by every stage of the pipeline.
//!
//! All quantities are in histogram-bin units. A time-stamp is an integer bin
//! index in `[0, T-1]`; depths are real-valued bin positions.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of mixing weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Largest histogram length for which the grid caches a table of roots of
/// unity. Beyond this, phases are evaluated directly.
const ROOT_TABLE_MAX_T: u64 = 1 << 20;

/// Detection time-stamps of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonStream {
    timestamps: Vec<u32>,
    bins: u32,
    /// Physical width of one bin in seconds. Metadata only.
    pub bin_width: f64,
}

impl PhotonStream {
    pub fn new(timestamps: Vec<u32>, bins: u32, bin_width: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Parameter(format!("histogram length T={bins} must be >= 2")));
        }
        if let Some(&bad) = timestamps.iter().find(|&&t| t >= bins) {
            return Err(Error::Range {
                value: u64::from(bad),
                max: u64::from(bins) - 1,
            });
        }
        Ok(Self {
            timestamps,
            bins,
            bin_width,
        })
    }

    pub fn empty(bins: u32) -> Result<Self> {
        Self::new(Vec::new(), bins, 0.0)
    }

    pub fn timestamps(&self) -> &[u32] {
        &self.timestamps
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn into_timestamps(self) -> Vec<u32> {
        self.timestamps
    }
}

/// Discrete instrument response `h` on `[0, T-1]`, unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Irf {
    h: Vec<f64>,
    mass: f64,
}

impl Irf {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.len() < 2 {
            return Err(Error::Parameter(format!(
                "impulse response needs at least 2 bins, got {}",
                h.len()
            )));
        }
        if let Some(bad) = h.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Parameter(format!(
                "impulse response entries must be finite and nonnegative, found {bad}"
            )));
        }
        let mass: f64 = h.iter().sum();
        if mass <= 0.0 {
            return Err(Error::DegenerateIrf);
        }
        Ok(Self { h, mass })
    }

    /// Sampled Gaussian `exp(-(t-center)^2 / 2 sigma^2)` on the integer bins,
    /// truncated at the histogram edges.
    pub fn gaussian(bins: u32, sigma: f64, center: f64) -> Result<Self> {
        validate_gaussian(bins, sigma)?;
        let h = (0..bins)
            .map(|t| {
                let d = f64::from(t) - center;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Self::new(h)
    }

    /// Gaussian measured with circular (mod-T) distance to `center`, so the
    /// pulse wraps around the histogram edges instead of being truncated.
    pub fn gaussian_circular(bins: u32, sigma: f64, center: f64) -> Result<Self> {
        validate_gaussian(bins, sigma)?;
        let period = f64::from(bins);
        let h = (0..bins)
            .map(|t| {
                let d = (f64::from(t) - center).rem_euclid(period);
                let d = d.min(period - d);
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Self::new(h)
    }

    /// Unit impulse at `bin`.
    pub fn delta(bins: u32, bin: u32) -> Result<Self> {
        if bin >= bins {
            return Err(Error::Range {
                value: u64::from(bin),
                max: u64::from(bins).saturating_sub(1),
            });
        }
        let mut h = vec![0.0; bins as usize];
        h[bin as usize] = 1.0;
        Self::new(h)
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    /// Total mass `H`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn bins(&self) -> u32 {
        self.h.len() as u32
    }

    /// Signal time-of-arrival law for a zero shift, `h / H`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.h.iter().map(|v| v / self.mass).collect()
    }

    /// Normalized transform `(1/H) sum_t h(t) e^{i 2 pi k t / T}` at integer
    /// frequency index `k` (any sign).
    pub fn transform_at_index(&self, k: i64) -> Complex64 {
        let period = self.h.len() as i64;
        let k = k.rem_euclid(period) as u64;
        let period = period as u64;
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &v) in self.h.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let phase = TAU * ((k * t as u64) % period) as f64 / period as f64;
            acc += Complex64::from_polar(v, phase);
        }
        acc / self.mass
    }

    /// Normalized transform at an arbitrary real frequency.
    pub fn transform_at(&self, omega: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &v) in self.h.iter().enumerate() {
            if v != 0.0 {
                acc += Complex64::from_polar(v, omega * t as f64);
            }
        }
        acc / self.mass
    }
}

fn validate_gaussian(bins: u32, sigma: f64) -> Result<()> {
    if bins < 2 {
        return Err(Error::Parameter(format!("histogram length T={bins} must be >= 2")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// `ĥ(ω_j)` for every frequency of `grid`.
pub fn irf_transform(irf: &Irf, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    if irf.bins() != grid.bins() {
        return Err(Error::Dimension(format!(
            "impulse response has {} bins but the grid expects T={}",
            irf.bins(),
            grid.bins()
        )));
    }
    Ok((1..=grid.len() as i64).map(|k| irf.transform_at_index(k)).collect())
}

/// The sketch frequencies `ω_j = 2πj/T`, `j = 1..=m`.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    size: usize,
    bins: u32,
    omegas: Vec<f64>,
    roots: Option<Arc<[Complex64]>>,
}

impl PartialEq for FrequencyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size && self.bins == other.bins
    }
}

impl FrequencyGrid {
    pub fn new(size: usize, bins: u32) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Parameter(format!("histogram length T={bins} must be >= 2")));
        }
        if size < 1 || size as u64 > u64::from(bins) - 1 {
            return Err(Error::Parameter(format!(
                "sketch size m={size} must satisfy 1 <= m <= T-1 = {}",
                bins - 1
            )));
        }
        let omegas = (1..=size).map(|j| TAU * j as f64 / f64::from(bins)).collect();
        let roots = (u64::from(bins) <= ROOT_TABLE_MAX_T).then(|| {
            (0..bins)
                .map(|k| Complex64::from_polar(1.0, TAU * f64::from(k) / f64::from(bins)))
                .collect::<Vec<_>>()
                .into()
        });
        Ok(Self {
            size,
            bins,
            omegas,
            roots,
        })
    }

    /// Sketch size `m`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    /// Grid restricted to its first `size` frequencies.
    pub fn truncated(&self, size: usize) -> Result<Self> {
        if size > self.size {
            return Err(Error::Dimension(format!(
                "cannot truncate an m={} grid to m={size}",
                self.size
            )));
        }
        let mut g = self.clone();
        g.size = size;
        g.omegas.truncate(size);
        Ok(g)
    }

    /// `e^{i 2π k / T}` for an integer phase index `k` already reduced mod T.
    #[inline]
    pub(crate) fn root(&self, k: u64) -> Complex64 {
        match &self.roots {
            Some(table) => table[k as usize],
            None => Complex64::from_polar(1.0, TAU * k as f64 / f64::from(self.bins)),
        }
    }

    /// Feature vector `Φ_ω(x) = [e^{iω_j x}]_j`, computed from exact integer
    /// phase indices `(j x) mod T`.
    pub fn features(&self, x: u32) -> impl Iterator<Item = Complex64> + '_ {
        let period = u64::from(self.bins);
        let step = u64::from(x) % period;
        let mut k = 0u64;
        (0..self.size).map(move |_| {
            k += step;
            if k >= period {
                k -= period;
            }
            self.root(k)
        })
    }
}

/// Finalized sketch: mean of `Φ_ω(x)` over `n` photons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub z: Vec<Complex64>,
    pub n: u64,
}

impl Sketch {
    pub fn zero(size: usize) -> Self {
        Self {
            z: vec![Complex64::new(0.0, 0.0); size],
            n: 0,
        }
    }

    pub fn new(z: Vec<Complex64>, n: u64) -> Result<Self> {
        if let Some(v) = z.iter().find(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Data(format!("sketch entry {v} is not finite")));
        }
        if let Some(v) = z.iter().find(|v| v.norm() > 1.0 + 1e-9) {
            return Err(Error::Data(format!("sketch entry modulus {} exceeds 1", v.norm())));
        }
        if n == 0 && z.iter().any(|v| *v != Complex64::new(0.0, 0.0)) {
            return Err(Error::Data("empty sketch must be the zero vector".into()));
        }
        Ok(Self { z, n })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Sketch built from the first `size` frequencies.
    pub fn truncated(&self, size: usize) -> Sketch {
        Sketch {
            z: self.z[..size.min(self.z.len())].to_vec(),
            n: self.n,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.z.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Mixture parameters: background weight `α_0` and, for a single surface,
/// its weight `α_1` and depth `t_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    alphas: Vec<f64>,
    depths: Vec<f64>,
}

impl SceneParams {
    pub fn new(alphas: Vec<f64>, depths: Vec<f64>, bins: u32) -> Result<Self> {
        let surfaces = depths.len();
        if surfaces > 1 {
            return Err(Error::Parameter(format!(
                "only K in {{0, 1}} is supported, got K={surfaces}"
            )));
        }
        if alphas.len() != surfaces + 1 {
            return Err(Error::Dimension(format!(
                "expected {} mixing weights for K={surfaces}, got {}",
                surfaces + 1,
                alphas.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Parameter(format!("mixing weight {a} outside [0, 1]")));
        }
        let total: f64 = alphas.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Parameter(format!("mixing weights sum to {total}, not 1")));
        }
        let upper = f64::from(bins) - 1.0;
        if let Some(t) = depths.iter().find(|t| !(0.0..=upper).contains(*t)) {
            return Err(Error::Parameter(format!("depth {t} outside [0, {upper}]")));
        }
        Ok(Self { alphas, depths })
    }

    /// Background only (`K = 0`, `α_0 = 1`).
    pub fn background() -> Self {
        Self {
            alphas: vec![1.0],
            depths: Vec::new(),
        }
    }

    /// One surface at `depth` carrying a fraction `alpha` of the photons.
    pub fn single(alpha: f64, depth: f64, bins: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("signal fraction {alpha} outside [0, 1]")));
        }
        Self::new(vec![1.0 - alpha, alpha], vec![depth], bins)
    }

    /// One surface with the given signal-to-background ratio `α/(1-α)`.
    /// An infinite ratio gives a pure-signal pixel.
    pub fn from_sbr(sbr: f64, depth: f64, bins: u32) -> Result<Self> {
        Self::single(sbr_to_alpha(sbr)?, depth, bins)
    }

    pub fn surfaces(&self) -> usize {
        self.depths.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn background_weight(&self) -> f64 {
        self.alphas[0]
    }

    /// Signal fraction of the (single) surface, 0 when `K = 0`.
    pub fn signal_weight(&self) -> f64 {
        self.alphas.get(1).copied().unwrap_or(0.0)
    }

    pub fn sbr(&self) -> f64 {
        let a = self.signal_weight();
        a / (1.0 - a)
    }
}

pub fn sbr_to_alpha(sbr: f64) -> Result<f64> {
    if sbr.is_nan() || sbr < 0.0 {
        return Err(Error::Parameter(format!("SBR must be nonnegative, got {sbr}")));
    }
    Ok(if sbr.is_infinite() { 1.0 } else { sbr / (1.0 + sbr) })
}
