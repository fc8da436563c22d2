//! Linear-β noise schedule and the closed-form forward process.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-3;
pub const DEFAULT_BETA_END: f64 = 0.2;

/// Columns appended to the network input to encode the noise level.
pub const EMBED_DIM: usize = 4;

/// Per-step constants for `n = 1..=N`; index `n - 1` in every array.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

/// A diffusion step index `n` with `1 <= n <= N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NoiseLevel(usize);

impl NoiseLevel {
    pub fn get(self) -> usize {
        self.0
    }
}

impl DiffusionSchedule {
    /// Linear interpolation of β from `beta_start` to `beta_end` over `steps`.
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "beta range must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    /// Schedule from explicit β values (each in (0, 1)).
    pub fn with_betas(beta: &[f64]) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::config("betas must be non-empty and inside (0, 1)"));
        }
        Ok(Self::from_betas(beta.to_vec()))
    }

    pub fn default_schedule() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn level(&self, n: usize) -> Result<NoiseLevel> {
        if n == 0 || n > self.steps() {
            return Err(Error::Range(format!("noise level {n} outside 1..={}", self.steps())));
        }
        Ok(NoiseLevel(n))
    }

    pub fn max_level(&self) -> NoiseLevel {
        NoiseLevel(self.steps())
    }

    /// Uniform draw from `1..=N`.
    pub fn sample_level(&self, rng: &mut Rng) -> NoiseLevel {
        NoiseLevel(1 + rng.below(self.steps()))
    }

    pub fn sample_levels(&self, count: usize, rng: &mut Rng) -> Vec<NoiseLevel> {
        (0..count).map(|_| self.sample_level(rng)).collect()
    }

    pub fn beta(&self, n: NoiseLevel) -> f64 {
        self.beta[n.0 - 1]
    }

    pub fn alpha(&self, n: NoiseLevel) -> f64 {
        self.alpha[n.0 - 1]
    }

    pub fn alpha_bar(&self, n: NoiseLevel) -> f64 {
        self.alpha_bar[n.0 - 1]
    }

    pub fn sigma(&self, n: NoiseLevel) -> f64 {
        self.sigma[n.0 - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Sinusoidal features of `n / N`.
    pub fn embedding(&self, n: NoiseLevel) -> [f64; EMBED_DIM] {
        let theta = FRAC_PI_2 * n.0 as f64 / self.steps() as f64;
        [theta.sin(), theta.cos(), (4.0 * theta).sin(), (4.0 * theta).cos()]
    }

    /// One embedding row per level.
    pub fn embedding_matrix(&self, levels: &[NoiseLevel]) -> Matrix {
        let mut m = Matrix::zeros(levels.len(), EMBED_DIM);
        for (i, &n) in levels.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&self.embedding(n));
        }
        m
    }
}

/// `x_n = sqrt(ᾱ_n)·x0 + sqrt(1 − ᾱ_n)·ε`, with one level per row.
pub fn forward_noise(x0: &Matrix, levels: &[NoiseLevel], eps: &Matrix, sched: &DiffusionSchedule) -> Result<Matrix> {
    x0.ensure_same_shape(eps, "noise")?;
    if levels.len() != x0.rows() {
        return Err(Error::shape(format!(
            "{} noise levels for {} rows",
            levels.len(),
            x0.rows()
        )));
    }
    let mut out = Matrix::zeros(x0.rows(), x0.cols());
    for (i, &n) in levels.iter().enumerate() {
        let ab = sched.alpha_bar(n);
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ((o, x), e) in out.row_mut(i).iter_mut().zip(x0.row(i)).zip(eps.row(i)) {
            *o = signal * x + noise * e;
        }
    }
    Ok(out)
}
