//! Streaming characteristic-function sketches and the model they are matched
//! against.
//!
//! A [`SketchAccumulator`] holds the unnormalized sum of `e^{iω_j x}` over the
//! photons seen so far. It is updated in `O(m)` per photon, never stores the
//! time-stamps, and two accumulators over the same grid merge by addition, so
//! a pixel can be sketched in shards and combined.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{irf_transform, FrequencyGrid, Irf, SceneParams, Sketch};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Neumaier-compensated running sum of `Φ_ω(x)`.
#[derive(Debug, Clone)]
pub struct SketchAccumulator {
    grid: FrequencyGrid,
    sum: Vec<Complex64>,
    comp: Vec<Complex64>,
    count: u64,
}

#[inline]
fn neumaier(sum: &mut f64, comp: &mut f64, value: f64) {
    let t = *sum + value;
    if sum.abs() >= value.abs() {
        *comp += (*sum - t) + value;
    } else {
        *comp += (value - t) + *sum;
    }
    *sum = t;
}

impl SketchAccumulator {
    pub fn new(grid: &FrequencyGrid) -> Self {
        let m = grid.len();
        Self {
            grid: grid.clone(),
            sum: vec![ZERO; m],
            comp: vec![ZERO; m],
            count: 0,
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Compensated sum `Σ_i e^{iω_j x_i}`.
    pub fn sum(&self) -> Vec<Complex64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }

    /// Adds one photon.
    pub fn update(&mut self, x: u32) -> Result<()> {
        if x >= self.grid.bins() {
            return Err(Error::Range {
                value: u64::from(x),
                max: u64::from(self.grid.bins()) - 1,
            });
        }
        self.push_unchecked(x);
        Ok(())
    }

    /// Adds one photon known to lie in `[0, T-1]`.
    #[inline]
    pub(crate) fn push_unchecked(&mut self, x: u32) {
        let Self { grid, sum, comp, .. } = self;
        for ((f, s), c) in grid.features(x).zip(sum.iter_mut()).zip(comp.iter_mut()) {
            neumaier(&mut s.re, &mut c.re, f.re);
            neumaier(&mut s.im, &mut c.im, f.im);
        }
        self.count += 1;
    }

    pub fn extend<I: IntoIterator<Item = u32>>(&mut self, xs: I) -> Result<()> {
        for x in xs {
            self.update(x)?;
        }
        Ok(())
    }

    /// Combines two partial sketches of the same grid.
    pub fn merge(mut self, other: &SketchAccumulator) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Dimension(format!(
                "cannot merge sketches over (m={}, T={}) and (m={}, T={})",
                self.grid.len(),
                self.grid.bins(),
                other.grid.len(),
                other.grid.bins()
            )));
        }
        for j in 0..self.sum.len() {
            let (s, c) = (&mut self.sum[j], &mut self.comp[j]);
            neumaier(&mut s.re, &mut c.re, other.sum[j].re);
            neumaier(&mut s.im, &mut c.im, other.sum[j].im);
            c.re += other.comp[j].re;
            c.im += other.comp[j].im;
        }
        self.count += other.count;
        Ok(self)
    }

    pub fn finalize(&self) -> Sketch {
        if self.count == 0 {
            return Sketch::zero(self.sum.len());
        }
        let n = self.count as f64;
        Sketch {
            z: self.sum().into_iter().map(|v| v / n).collect(),
            n: self.count,
        }
    }
}

/// Sketch of a whole time-stamp slice in one pass.
pub fn sketch_of(timestamps: &[u32], grid: &FrequencyGrid) -> Result<Sketch> {
    let mut acc = SketchAccumulator::new(grid);
    acc.extend(timestamps.iter().copied())?;
    Ok(acc.finalize())
}

/// Model characteristic function `Ψ_π` sampled on the sketch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCf {
    pub psi: Vec<Complex64>,
}

/// Characteristic function of the discrete uniform law on `{0, .., T-1}` at
/// an arbitrary frequency. Vanishes exactly at every nonzero multiple of
/// `2π/T` below `2π`.
pub fn discrete_uniform_cf(omega: f64, bins: u32) -> Complex64 {
    let period = f64::from(bins);
    let denom = Complex64::from_polar(1.0, omega) - 1.0;
    if denom.norm() < 1e-14 {
        return Complex64::new(1.0, 0.0);
    }
    let turns = omega * period / std::f64::consts::TAU;
    if (turns - turns.round()).abs() < 1e-12 {
        return ZERO;
    }
    (Complex64::from_polar(1.0, omega * period) - 1.0) / (denom * period)
}

/// `Ψ_π(ω_j)` on the grid. The background term is identically zero there.
pub fn model_cf(theta: &SceneParams, irf_hat: &[Complex64], grid: &FrequencyGrid) -> Result<ModelCf> {
    if irf_hat.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "transform has {} entries, grid has m={}",
            irf_hat.len(),
            grid.len()
        )));
    }
    let psi = match theta.depths().first() {
        None => vec![ZERO; grid.len()],
        Some(&depth) => {
            let alpha = theta.signal_weight();
            irf_hat
                .iter()
                .zip(grid.omegas())
                .map(|(h, w)| alpha * h * Complex64::from_polar(1.0, w * depth))
                .collect()
        }
    };
    Ok(ModelCf { psi })
}

/// `Ψ_π(ω)` at an arbitrary real frequency, with the exact discrete-uniform
/// background term.
pub fn model_cf_at(theta: &SceneParams, irf: &Irf, omega: f64) -> Complex64 {
    let background = theta.background_weight() * discrete_uniform_cf(omega, irf.bins());
    match theta.depths().first() {
        None => background,
        Some(&depth) => {
            theta.signal_weight() * irf.transform_at(omega) * Complex64::from_polar(1.0, omega * depth) + background
        }
    }
}

/// Asymptotic covariance of `√n · z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchCovariance {
    pub sigma: DMatrix<Complex64>,
}

impl SketchCovariance {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let m = self.dim();
        (0..m).all(|i| (0..m).all(|j| (self.sigma[(i, j)] - self.sigma[(j, i)].conj()).norm() <= tol))
    }

    /// `[[Re Σ, -Im Σ], [Im Σ, Re Σ]]`, acting on `[Re r; Im r]`.
    pub fn real_form(&self) -> DMatrix<f64> {
        complex_to_real_form(&self.sigma)
    }

    /// Smallest eigenvalue of the (Hermitian part of the) matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let real = self.real_form();
        let sym = (&real + real.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min()
    }
}

pub(crate) fn complex_to_real_form(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let m = a.nrows();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let v = a[(i, j)];
            out[(i, j)] = v.re;
            out[(i, j + m)] = -v.im;
            out[(i + m, j)] = v.im;
            out[(i + m, j + m)] = v.re;
        }
    }
    out
}

/// `Σ_θ` with `(Σ_θ)_{ij} = Ψ(ω_i - ω_j) - Ψ(ω_i) Ψ(-ω_j)`.
pub fn covariance(theta: &SceneParams, irf: &Irf, grid: &FrequencyGrid) -> Result<SketchCovariance> {
    let irf_hat = irf_transform(irf, grid)?;
    covariance_from_transform(theta, &irf_hat, grid)
}

/// [`covariance`] from a precomputed `ĥ(ω_1..ω_m)`. Differences
/// `ω_i - ω_j` are grid frequencies `2π(i-j)/T`, so no other transform
/// values are needed.
pub fn covariance_from_transform(
    theta: &SceneParams,
    irf_hat: &[Complex64],
    grid: &FrequencyGrid,
) -> Result<SketchCovariance> {
    let m = grid.len();
    if irf_hat.len() < m {
        return Err(Error::Dimension(format!(
            "transform has {} entries, grid has m={m}",
            irf_hat.len()
        )));
    }
    let bins = f64::from(grid.bins());
    let alpha = theta.signal_weight();
    let depth = theta.depths().first().copied();
    // Ψ at integer frequency index k in 0..=m.
    let psi = |k: usize| -> Complex64 {
        if k == 0 {
            return Complex64::new(1.0, 0.0);
        }
        match depth {
            None => ZERO,
            Some(t) => {
                let w = std::f64::consts::TAU * k as f64 / bins;
                alpha * irf_hat[k - 1] * Complex64::from_polar(1.0, w * t)
            }
        }
    };
    let on_grid: Vec<Complex64> = (1..=m).map(psi).collect();
    let sigma = DMatrix::from_fn(m, m, |i, j| {
        let diff = if i >= j { psi(i - j) } else { psi(j - i).conj() };
        diff - on_grid[i] * on_grid[j].conj()
    });
    Ok(SketchCovariance { sigma })
}
