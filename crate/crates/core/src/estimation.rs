//! Single-surface depth and intensity from the sketch alone.
//!
//! The pipeline is: detection test, matched-filter initialization over a
//! uniform depth grid, then weighted sketch matching
//! `min_θ ‖z - Ψ_θ‖²_W` by damped Gauss–Newton. All of it costs `O(m²)` per
//! pixel plus the initializer grid, independent of the photon count.

use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detection::{Detector, PixelDecision};
use crate::error::{Error, Result};
use crate::sketch::{covariance_from_transform, sketch_of};
use crate::types::{FrequencyGrid, PhotonStream, SceneParams, Sketch};

const MIN_IRF_MODULUS: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-15;
/// Steps below this in both `t` (bins) and `logit α` end the iteration.
const STEP_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
const ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    /// Depth in bins, in `[0, T)`.
    pub t_hat: f64,
    /// Signal fraction in `[0, 1]`.
    pub alpha_hat: f64,
    /// Weighted sketch-matching cost at the estimate.
    pub objective: f64,
    pub converged: bool,
    /// Initializer saw a flat objective (e.g. an all-zero sketch).
    #[serde(default)]
    pub degenerate: bool,
    /// Precision weights were requested but the covariance was singular, so
    /// identity weights were used.
    #[serde(default)]
    pub weight_fallback: bool,
}

/// Weighting of the sketch-matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Identity,
    /// `W = Σ_θ^{-1}` evaluated at the initializer, then re-evaluated at the
    /// refined estimate `reweights` more times.
    Precision {
        reweights: u8,
    },
}

impl Default for WeightMode {
    fn default() -> Self {
        WeightMode::Precision { reweights: 1 }
    }
}

fn wrap_depth(t: f64, bins: u32) -> f64 {
    let period = f64::from(bins);
    let w = t.rem_euclid(period);
    // rem_euclid can round up to exactly `period`.
    if w >= period {
        0.0
    } else {
        w
    }
}

fn check_inputs(sketch: &Sketch, irf_hat: &[Complex64], grid: &FrequencyGrid) -> Result<()> {
    if sketch.len() != grid.len() || irf_hat.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "sketch m={}, transform m={}, grid m={}",
            sketch.len(),
            irf_hat.len(),
            grid.len()
        )));
    }
    if sketch.n == 0 {
        return Err(Error::EmptyPixel);
    }
    Ok(())
}

fn model(alpha: f64, t: f64, irf_hat: &[Complex64], grid: &FrequencyGrid) -> Vec<Complex64> {
    irf_hat
        .iter()
        .zip(grid.omegas())
        .map(|(h, w)| alpha * h * Complex64::from_polar(1.0, w * t))
        .collect()
}

fn unweighted_cost(sketch: &Sketch, alpha: f64, t: f64, irf_hat: &[Complex64], grid: &FrequencyGrid) -> f64 {
    sketch
        .z
        .iter()
        .zip(model(alpha, t, irf_hat, grid))
        .map(|(z, p)| (z - p).norm_sqr())
        .sum()
}

/// Depth from the phase and intensity from the modulus of the first sketch
/// entry: `t̂ = arg(z_1 conj(ĥ_1)) / ω_1 mod T`, `α̂ = |z_1| / |ĥ_1|`
/// clamped to `[0, 1]`.
pub fn closed_form_single(sketch: &Sketch, irf_hat: &[Complex64], grid: &FrequencyGrid) -> Result<DepthEstimate> {
    check_inputs(sketch, irf_hat, grid)?;
    let h1 = irf_hat[0];
    if h1.norm() < MIN_IRF_MODULUS {
        return Err(Error::UnidentifiableIrf);
    }
    let z1 = sketch.z[0];
    let t_hat = wrap_depth((z1 * h1.conj()).arg() / grid.omegas()[0], grid.bins());
    let alpha_hat = (z1.norm() / h1.norm()).clamp(0.0, 1.0);
    Ok(DepthEstimate {
        t_hat,
        alpha_hat,
        objective: unweighted_cost(sketch, alpha_hat, t_hat, irf_hat, grid),
        converged: true,
        degenerate: false,
        weight_fallback: false,
    })
}

/// Depth maximizing the matched-filter response
/// `Re Σ_j z_j conj(ĥ_j) e^{-iω_j t}` over `grid_points` uniformly spaced
/// depths, with the least-squares intensity at that depth.
pub fn matched_filter_init(
    sketch: &Sketch,
    irf_hat: &[Complex64],
    grid: &FrequencyGrid,
    grid_points: usize,
) -> Result<DepthEstimate> {
    check_inputs(sketch, irf_hat, grid)?;
    if grid_points < grid.len() {
        return Err(Error::Parameter(format!(
            "initializer grid of {grid_points} points is coarser than m={}",
            grid.len()
        )));
    }
    let weighted: Vec<Complex64> = sketch.z.iter().zip(irf_hat).map(|(z, h)| z * h.conj()).collect();
    let energy: f64 = irf_hat.iter().map(|h| h.norm_sqr()).sum();
    if weighted.iter().all(|v| v.norm() == 0.0) || energy == 0.0 {
        return Ok(DepthEstimate {
            t_hat: 0.0,
            alpha_hat: 0.0,
            objective: sketch.norm_sqr(),
            converged: false,
            degenerate: true,
            weight_fallback: false,
        });
    }
    let bins = f64::from(grid.bins());
    let spacing = bins / grid_points as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..grid_points {
        let t = k as f64 * spacing;
        // Phases at integer multiples of ω_1 t via one rotation per step.
        let step = Complex64::from_polar(1.0, -TAU * t / bins);
        let mut rot = step;
        let mut score = 0.0;
        for v in &weighted {
            score += (v * rot).re;
            rot *= step;
        }
        if score > best.0 {
            best = (score, t);
        }
    }
    let t_hat = best.1;
    // α̂ = Re(a^H z) / ‖a‖² with a_j = ĥ_j e^{iω_j t}.
    let proj: f64 = weighted
        .iter()
        .zip(grid.omegas())
        .map(|(v, w)| (v * Complex64::from_polar(1.0, -w * t_hat)).re)
        .sum();
    let alpha_hat = (proj / energy).clamp(0.0, 1.0);
    Ok(DepthEstimate {
        t_hat,
        alpha_hat,
        objective: unweighted_cost(sketch, alpha_hat, t_hat, irf_hat, grid),
        converged: true,
        degenerate: false,
        weight_fallback: false,
    })
}

/// Whitening for the stacked residual `[Re r; Im r]`: `None` means identity.
struct Whitener {
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl Whitener {
    fn identity() -> Self {
        Self { chol: None }
    }

    /// From the real form of `Σ_θ`; fails when it is not numerically positive
    /// definite.
    fn precision(theta: &SceneParams, irf_hat: &[Complex64], grid: &FrequencyGrid) -> Option<Self> {
        let cov = covariance_from_transform(theta, irf_hat, grid).ok()?;
        let real = cov.real_form();
        let sym = (&real + real.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if lo.is_nan() || lo <= 1e-10 * hi {
            return None;
        }
        Some(Self {
            chol: Some(Cholesky::new(sym)?),
        })
    }

    fn apply(&self, v: &mut DVector<f64>) {
        if let Some(c) = &self.chol {
            let l = c.l_dirty();
            l.solve_lower_triangular_mut(v);
        }
    }

    fn apply_columns(&self, m: &mut DMatrix<f64>) {
        if let Some(c) = &self.chol {
            c.l_dirty().solve_lower_triangular_mut(m);
        }
    }
}

struct Residual {
    whitened: DVector<f64>,
    jacobian: DMatrix<f64>,
    cost: f64,
}

fn residual(
    sketch: &Sketch,
    alpha: f64,
    t: f64,
    irf_hat: &[Complex64],
    grid: &FrequencyGrid,
    whitener: &Whitener,
) -> Residual {
    let m = grid.len();
    let psi = model(alpha, t, irf_hat, grid);
    let mut r = DVector::zeros(2 * m);
    let mut jac = DMatrix::zeros(2 * m, 2);
    for j in 0..m {
        let d = sketch.z[j] - psi[j];
        r[j] = d.re;
        r[j + m] = d.im;
        // ∂r/∂t = -iω Ψ ; ∂r/∂s = -(1-α) Ψ with α = sigmoid(s).
        let dt = -Complex64::new(0.0, grid.omegas()[j]) * psi[j];
        let ds = -(1.0 - alpha) * psi[j];
        jac[(j, 0)] = dt.re;
        jac[(j + m, 0)] = dt.im;
        jac[(j, 1)] = ds.re;
        jac[(j + m, 1)] = ds.im;
    }
    whitener.apply(&mut r);
    whitener.apply_columns(&mut jac);
    let cost = r.norm_squared();
    Residual {
        whitened: r,
        jacobian: jac,
        cost,
    }
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

fn logit(a: f64) -> f64 {
    let a = a.clamp(ALPHA_FLOOR, 1.0 - ALPHA_FLOOR);
    (a / (1.0 - a)).ln()
}

struct GaussNewtonOutcome {
    t: f64,
    alpha: f64,
    cost: f64,
    converged: bool,
}

/// Levenberg–Marquardt damped Gauss–Newton on `(t, logit α)`.
fn gauss_newton(
    sketch: &Sketch,
    t0: f64,
    alpha0: f64,
    irf_hat: &[Complex64],
    grid: &FrequencyGrid,
    whitener: &Whitener,
) -> GaussNewtonOutcome {
    let mut t = t0;
    let mut alpha = alpha0;
    let mut s = logit(alpha0);
    // Evaluate derivatives at the interior point even if α sits on a bound.
    let mut current = residual(sketch, alpha, t, irf_hat, grid, whitener);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        if current.cost == 0.0 {
            converged = true;
            break;
        }
        let jac = if alpha == alpha.clamp(ALPHA_FLOOR, 1.0 - ALPHA_FLOOR) {
            current.jacobian.clone()
        } else {
            residual(sketch, sigmoid(s), t, irf_hat, grid, whitener).jacobian
        };
        let jt_r = jac.transpose() * &current.whitened;
        let gradient = 2.0 * &jt_r;
        if gradient.norm() < GRADIENT_TOL {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let jtj = Matrix2::new(jtj[(0, 0)], jtj[(0, 1)], jtj[(1, 0)], jtj[(1, 1)]);
        let rhs = Vector2::new(-jt_r[0], -jt_r[1]);
        let mut accepted = false;
        for _ in 0..40 {
            let damped = jtj
                + Matrix2::from_diagonal(&Vector2::new(
                    mu * jtj[(0, 0)].max(1e-300),
                    mu * jtj[(1, 1)].max(1e-300),
                ));
            let Some(step) = damped.lu().solve(&rhs) else {
                mu *= 10.0;
                continue;
            };
            let (t_new, s_new) = (t + step[0], s + step[1]);
            let a_new = sigmoid(s_new);
            let trial = residual(sketch, a_new, t_new, irf_hat, grid, whitener);
            if trial.cost < current.cost {
                let rel = (current.cost - trial.cost) / current.cost.max(1e-300);
                t = t_new;
                s = s_new;
                alpha = a_new;
                current = trial;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < 1e-15 || (step[0].abs() < STEP_TOL && step[1].abs() < STEP_TOL) {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = gradient.norm() < 1e-6 * (1.0 + current.cost);
            break;
        }
        if converged {
            break;
        }
    }
    GaussNewtonOutcome {
        t,
        alpha,
        cost: current.cost,
        converged,
    }
}

/// Weighted sketch matching for one surface, started at `init`. The cost
/// never increases from its value at `init` under the final weights.
pub fn wls_refine(
    sketch: &Sketch,
    init: &DepthEstimate,
    irf_hat: &[Complex64],
    grid: &FrequencyGrid,
    mode: WeightMode,
) -> Result<DepthEstimate> {
    check_inputs(sketch, irf_hat, grid)?;
    let bins = grid.bins();
    let mut t = init.t_hat;
    let mut alpha = init.alpha_hat;
    let mut fallback = false;

    let rounds = match mode {
        WeightMode::Identity => 1,
        WeightMode::Precision { reweights } => 1 + usize::from(reweights),
    };
    let mut outcome = None;
    for _ in 0..rounds {
        let whitener = match mode {
            WeightMode::Identity => Whitener::identity(),
            WeightMode::Precision { .. } => {
                let theta = SceneParams::single(
                    alpha.clamp(0.0, 1.0),
                    wrap_depth(t, bins).min(f64::from(bins) - 1.0),
                    bins,
                )?;
                match Whitener::precision(&theta, irf_hat, grid) {
                    Some(w) => w,
                    None => {
                        fallback = true;
                        Whitener::identity()
                    }
                }
            }
        };
        let result = gauss_newton(sketch, t, alpha, irf_hat, grid, &whitener);
        t = result.t;
        alpha = result.alpha;
        outcome = Some(result);
        if fallback {
            break;
        }
    }
    let outcome = outcome.expect("at least one refinement round");
    Ok(DepthEstimate {
        t_hat: wrap_depth(t, bins),
        alpha_hat: alpha.clamp(0.0, 1.0),
        objective: outcome.cost,
        converged: outcome.converged,
        degenerate: init.degenerate,
        weight_fallback: fallback,
    })
}

/// Detection followed, for detected pixels, by matched-filter initialization
/// and weighted refinement.
#[derive(Debug, Clone)]
pub struct PixelEstimator {
    pub detector: Detector,
    pub grid: FrequencyGrid,
    pub irf_hat: Vec<Complex64>,
    pub grid_points: usize,
    pub weight_mode: WeightMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEstimate {
    pub decision: PixelDecision,
    pub estimate: Option<DepthEstimate>,
}

impl PixelEstimator {
    pub fn new(detector: Detector, grid: FrequencyGrid, irf_hat: Vec<Complex64>) -> Result<Self> {
        if irf_hat.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "transform has {} entries, grid has m={}",
                irf_hat.len(),
                grid.len()
            )));
        }
        let grid_points = default_grid_points(grid.len());
        Ok(Self {
            detector,
            grid,
            irf_hat,
            grid_points,
            weight_mode: WeightMode::default(),
        })
    }

    pub fn estimate(&self, sketch: &Sketch) -> Result<PixelEstimate> {
        let decision = self.detector.classify(sketch);
        if !decision.detected() {
            return Ok(PixelEstimate {
                decision,
                estimate: None,
            });
        }
        let init = matched_filter_init(sketch, &self.irf_hat, &self.grid, self.grid_points)?;
        let refined = wls_refine(sketch, &init, &self.irf_hat, &self.grid, self.weight_mode)?;
        Ok(PixelEstimate {
            decision,
            estimate: Some(refined),
        })
    }

    pub fn estimate_stream(&self, stream: &PhotonStream) -> Result<PixelEstimate> {
        self.estimate(&sketch_of(stream.timestamps(), &self.grid)?)
    }
}

/// Initializer resolution: 16 points per Fejér main-lobe width, at least 64.
pub fn default_grid_points(m: usize) -> usize {
    (16 * m).max(64)
}

/// Depth estimate of one pixel, or `None` when the background-only
/// hypothesis is not rejected.
pub fn estimate_pixel(sketch: &Sketch, estimator: &PixelEstimator) -> Result<Option<DepthEstimate>> {
    Ok(estimator.estimate(sketch)?.estimate)
}

/// Circular distance between two depths on a histogram of `bins` bins.
pub fn circular_distance(a: f64, b: f64, bins: u32) -> f64 {
    let period = f64::from(bins);
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}
