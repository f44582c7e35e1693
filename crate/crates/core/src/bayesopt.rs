//! Seeded Bayesian optimization for low-dimensional, expensive objectives.
//!
//! A Gaussian-process surrogate with a squared-exponential kernel models the
//! objective over the unit cube (inputs are rescaled from their bounds, and
//! observed values are standardized before fitting). Acquisition is expected
//! improvement, maximized over a seeded candidate sweep plus a
//! coordinate-wise refinement of the best few candidates.
//!
//! Everything is deterministic given the seed. Each iteration draws its
//! candidates from an RNG seeded by `(seed, iteration)`, so a run with a
//! larger budget reproduces the shorter run's evaluations exactly and then
//! keeps going.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{seed_mix, Error, Result};

/// Value substituted for a non-finite objective evaluation.
pub const NON_FINITE_PENALTY: f64 = 1e6;

/// Search-space and budget configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    /// Per-dimension `(low, high)` bounds, `low < high`.
    pub bounds: Vec<(f64, f64)>,
    /// Size of the initial design, including any seed points. At least 2.
    pub n_init: usize,
    /// Number of acquisition-driven evaluations after the initial design.
    pub n_iter: usize,
    pub seed: u64,
    /// Starting observation-noise variance; escalated by factors of 10 up to
    /// `1e-2` when the kernel matrix is not numerically positive definite.
    pub noise_floor: f64,
    /// Kernel lengthscale in unit-cube coordinates; `None` selects the
    /// median pairwise distance of the observed points.
    pub lengthscale: Option<f64>,
    /// Kernel variance; `None` selects 1 (the variance of standardized
    /// observations).
    pub variance: Option<f64>,
    /// Points evaluated first, before any quasi-random ones. Clamped into
    /// bounds. They count toward `n_init`.
    pub seed_points: Vec<Vec<f64>>,
}

impl BoConfig {
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            bounds,
            n_init: 8,
            n_iter: 25,
            seed,
            noise_floor: 1e-6,
            lengthscale: None,
            variance: None,
            seed_points: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Config("bounds must not be empty".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::Config(format!(
                    "bound {i} must satisfy low < high with finite values, got ({lo}, {hi})"
                )));
            }
        }
        if self.n_init < 2 {
            return Err(Error::Config(format!("n_init must be at least 2, got {}", self.n_init)));
        }
        if !(self.noise_floor > 0.0) {
            return Err(Error::Config(format!(
                "noise_floor must be positive, got {}",
                self.noise_floor
            )));
        }
        if let Some(l) = self.lengthscale {
            if !(l > 0.0) {
                return Err(Error::Config(format!("lengthscale must be positive, got {l}")));
            }
        }
        if let Some(v) = self.variance {
            if !(v > 0.0) {
                return Err(Error::Config(format!("variance must be positive, got {v}")));
            }
        }
        for (i, p) in self.seed_points.iter().enumerate() {
            if p.len() != self.bounds.len() {
                return Err(Error::Config(format!(
                    "seed point {i} has {} coordinates, expected {}",
                    p.len(),
                    self.bounds.len()
                )));
            }
        }
        Ok(())
    }

    fn to_cube(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    fn from_cube(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(&t, &(lo, hi))| lo + t * (hi - lo)).collect()
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal cumulative distribution.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian belief `N(mean, sigma^2)` below the
/// incumbent `best` (minimization). Zero predictive spread yields zero.
pub fn ei_value(mean: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 1e-12 {
        return 0.0;
    }
    let z = (best - mean) / sigma;
    ((best - mean) * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Fitted Gaussian-process surrogate.
///
/// Inputs live on the unit cube (scaled via the config bounds kept inside),
/// observations are standardized; [`GpSurrogate::posterior`] converts back
/// to raw units.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    bounds: Vec<(f64, f64)>,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengthscale: f64,
    variance: f64,
    /// Observation-noise variance actually used, after any escalation.
    pub noise: f64,
    /// Lower-triangular Cholesky factor of the kernel matrix, row-major.
    chol: Vec<f64>,
    /// `K^{-1} y_std`.
    alpha: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// In-place Cholesky of a row-major symmetric matrix; returns false when a
/// pivot is not safely positive.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if !(sum > 1e-300) || !sum.is_finite() {
                    return false;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    true
}

fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

fn solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Fits the surrogate to observations in raw units.
///
/// The kernel is `variance * exp(-d^2 / (2 * lengthscale^2))` over unit-cube
/// distance `d`. If the kernel matrix fails its Cholesky factorization, the
/// observation noise is escalated by factors of 10 from `noise_floor`; past
/// `1e-2` the fit is a numeric error.
pub fn gp_fit(points: &[Vec<f64>], values: &[f64], config: &BoConfig) -> Result<GpSurrogate> {
    config.validate()?;
    let n = points.len();
    if n == 0 || values.len() != n {
        return Err(Error::Data(format!(
            "need matching non-empty points and values, got {n} and {}",
            values.len()
        )));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != config.bounds.len() {
            return Err(Error::Data(format!(
                "point {i} has {} coordinates, expected {}",
                p.len(),
                config.bounds.len()
            )));
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite observation passed to gp_fit".into()));
    }

    let x: Vec<Vec<f64>> = points.iter().map(|p| config.to_cube(p)).collect();

    let y_mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    let y_std: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();

    let lengthscale = match config.lengthscale {
        Some(l) => l,
        None => {
            let mut dists: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = sq_dist(&x[i], &x[j]).sqrt();
                    if d > 1e-12 {
                        dists.push(d);
                    }
                }
            }
            if dists.is_empty() {
                0.5
            } else {
                dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                dists[dists.len() / 2]
            }
        }
    };
    let variance = config.variance.unwrap_or(1.0);

    let mut noise = config.noise_floor;
    let (chol, used_noise) = loop {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = variance * (-sq_dist(&x[i], &x[j]) / (2.0 * lengthscale * lengthscale)).exp();
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += noise;
        }
        if cholesky_in_place(&mut k, n) {
            break (k, noise);
        }
        noise *= 10.0;
        if noise > 1e-2 {
            return Err(Error::Numeric(format!(
                "kernel matrix not positive definite even with noise {noise:.0e}"
            )));
        }
    };

    let mut alpha = y_std.clone();
    solve_lower(&chol, n, &mut alpha);
    solve_lower_transpose(&chol, n, &mut alpha);

    Ok(GpSurrogate {
        bounds: config.bounds.clone(),
        x,
        y_mean,
        y_scale,
        lengthscale,
        variance,
        noise: used_noise,
        chol,
        alpha,
    })
}

impl GpSurrogate {
    fn query_cube(&self, query: &[f64]) -> Vec<f64> {
        query
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    fn posterior_cube(&self, u: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let mut k_star: Vec<f64> = self
            .x
            .iter()
            .map(|xi| {
                self.variance * (-sq_dist(xi, u) / (2.0 * self.lengthscale * self.lengthscale)).exp()
            })
            .collect();
        let mean_std: f64 = k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        solve_lower(&self.chol, n, &mut k_star);
        let var_std = (self.variance - k_star.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        (mean_std, var_std)
    }

    /// Posterior mean and variance at a query point, in raw units.
    pub fn posterior(&self, query: &[f64]) -> (f64, f64) {
        let (mean_std, var_std) = self.posterior_cube(&self.query_cube(query));
        (mean_std * self.y_scale + self.y_mean, var_std * self.y_scale * self.y_scale)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Expected improvement at `query` (raw units) under the surrogate, against
/// the incumbent `best_so_far`.
pub fn expected_improvement(gp: &GpSurrogate, query: &[f64], best_so_far: f64) -> f64 {
    let (mean, var) = gp.posterior(query);
    ei_value(mean, var.sqrt(), best_so_far)
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoSample {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Result of a [`bo_minimize`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Every evaluation in order: initial design first, then one per
    /// iteration. Penalized values appear as [`NON_FINITE_PENALTY`].
    pub history: Vec<BoSample>,
    /// Total objective evaluations, `n_init + n_iter`.
    pub evaluations: usize,
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut fraction = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction /= base as f64;
    }
    result
}

/// Halton point `index` (1-based) with a per-dimension rotation, in the unit
/// cube.
fn shifted_halton(index: u64, shifts: &[f64]) -> Vec<f64> {
    shifts
        .iter()
        .enumerate()
        .map(|(d, &shift)| {
            let h = radical_inverse(index, PRIMES[d % PRIMES.len()]);
            (h + shift).fract()
        })
        .collect()
}

fn eval_objective(objective: &mut impl FnMut(&[f64]) -> f64, point: &[f64]) -> f64 {
    let v = objective(point);
    if v.is_finite() {
        v
    } else {
        NON_FINITE_PENALTY
    }
}

const CANDIDATES_PER_ITER: usize = 1024;
/// Of the candidates, this many are drawn near the incumbent instead of
/// uniformly. The surrogate resolves the objective near clustered
/// observations far more finely than its global lengthscale suggests, so a
/// denser local sweep lets the acquisition rank polishing proposals that a
/// uniform sweep would sample too sparsely to notice.
const LOCAL_CANDIDATES: usize = 256;
/// Half-widths (cube units) of the uniform boxes around the incumbent from
/// which local candidates are drawn, one scale per equal share of the local
/// pool. The wide box feeds basin-level moves; the tight box feeds the last
/// digits of a converging minimum, which uniform sampling essentially never
/// hits.
const LOCAL_HALF_WIDTHS: [f64; 2] = [0.1, 0.02];
const REFINE_TOP: usize = 4;
const REFINE_ROUNDS: usize = 9;
const REFINE_INITIAL_STEP: f64 = 0.1;

/// Minimizes `objective` over the configured bounds.
///
/// The initial design is the config's seed points (clamped into bounds)
/// followed by rotated Halton points, `n_init` evaluations in total. Each of
/// the `n_iter` iterations refits the surrogate on the full history, sweeps
/// 1024 seeded uniform candidates, refines the best 4 by a shrinking
/// coordinate search on expected improvement, and evaluates the winner.
///
/// Non-finite objective values are recorded as [`NON_FINITE_PENALTY`].
/// Identical configs and objectives reproduce identical histories, and a
/// run's history is a prefix of any longer-budget run with the same seed.
pub fn bo_minimize(mut objective: impl FnMut(&[f64]) -> f64, config: &BoConfig) -> Result<BoResult> {
    config.validate()?;
    let dim = config.bounds.len();
    if dim > PRIMES.len() {
        return Err(Error::Config(format!(
            "at most {} dimensions supported, got {dim}",
            PRIMES.len()
        )));
    }

    let mut history: Vec<BoSample> = Vec::with_capacity(config.n_init + config.n_iter);

    for p in config.seed_points.iter().take(config.n_init) {
        let clamped: Vec<f64> = p
            .iter()
            .zip(&config.bounds)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect();
        let value = eval_objective(&mut objective, &clamped);
        history.push(BoSample { point: clamped, value });
    }

    let mut shift_rng = ChaCha8Rng::seed_from_u64(seed_mix(&[config.seed, 0xd151]));
    let shifts: Vec<f64> = (0..dim).map(|_| shift_rng.gen_range(0.0..1.0)).collect();
    let mut halton_index = 1;
    while history.len() < config.n_init {
        let point = config.from_cube(&shifted_halton(halton_index, &shifts));
        halton_index += 1;
        let value = eval_objective(&mut objective, &point);
        history.push(BoSample { point, value });
    }

    for iter in 0..config.n_iter {
        let points: Vec<Vec<f64>> = history.iter().map(|s| s.point.clone()).collect();
        let values: Vec<f64> = history.iter().map(|s| s.value).collect();
        let gp = gp_fit(&points, &values, config)?;
        let (best_idx, best) = values
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite values"))
            .expect("non-empty history");
        let incumbent = config.to_cube(&points[best_idx]);

        let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[config.seed, iter as u64]));
        let mut candidates: Vec<(Vec<f64>, f64)> = (0..CANDIDATES_PER_ITER)
            .map(|c| {
                let u: Vec<f64> = if c < CANDIDATES_PER_ITER - LOCAL_CANDIDATES {
                    (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()
                } else {
                    let share = LOCAL_CANDIDATES / LOCAL_HALF_WIDTHS.len();
                    let scale = (c - (CANDIDATES_PER_ITER - LOCAL_CANDIDATES)) / share;
                    let hw = LOCAL_HALF_WIDTHS[scale.min(LOCAL_HALF_WIDTHS.len() - 1)];
                    incumbent
                        .iter()
                        .map(|&x| (x + rng.gen_range(-hw..hw)).clamp(0.0, 1.0))
                        .collect()
                };
                let ei = {
                    let (mean_std, var_std) = gp.posterior_cube(&u);
                    let mean = mean_std * gp.y_scale + gp.y_mean;
                    ei_value(mean, var_std.sqrt() * gp.y_scale, best)
                };
                (u, ei)
            })
            .collect();
        // Highest EI first; index breaks ties deterministically.
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite EI"));
        candidates.truncate(REFINE_TOP);

        let mut winner = candidates[0].clone();
        for (u, ei) in candidates {
            let (ru, rei) = refine_on_ei(&gp, u, ei, best);
            if rei > winner.1 {
                winner = (ru, rei);
            }
        }

        let point = config.from_cube(&winner.0);
        let value = eval_objective(&mut objective, &point);
        history.push(BoSample { point, value });
    }

    let best_idx = history
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.partial_cmp(&b.1.value).expect("finite values"))
        .map(|(i, _)| i)
        .expect("non-empty history");

    Ok(BoResult {
        best_point: history[best_idx].point.clone(),
        best_value: history[best_idx].value,
        evaluations: history.len(),
        history,
    })
}

/// Greedy coordinate search on EI with a shrinking step, in cube space.
fn refine_on_ei(gp: &GpSurrogate, mut u: Vec<f64>, mut ei: f64, best: f64) -> (Vec<f64>, f64) {
    let ei_at = |u: &[f64]| {
        let (mean_std, var_std) = gp.posterior_cube(u);
        ei_value(mean_std * gp.y_scale + gp.y_mean, var_std.sqrt() * gp.y_scale, best)
    };
    let mut step = REFINE_INITIAL_STEP;
    for _ in 0..REFINE_ROUNDS {
        for d in 0..u.len() {
            for dir in [1.0, -1.0] {
                let mut trial = u.clone();
                trial[d] = (trial[d] + dir * step).clamp(0.0, 1.0);
                let trial_ei = ei_at(&trial);
                if trial_ei > ei {
                    u = trial;
                    ei = trial_ei;
                }
            }
        }
        step *= 0.5;
    }
    (u, ei)
}
