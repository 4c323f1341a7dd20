//! LASSO regression by cyclic coordinate descent.
//!
//! The objective is
//!
//! ```text
//!     (1/n) * ||y - X b||_2^2 + lambda * ||b||_1
//! ```
//!
//! with no intercept and no standardization. Because the squared loss is scaled
//! by `1/n` (not `1/(2n)`), the univariate update thresholds at `lambda / 2`
//! before dividing by the column energy `(1/n) * ||X_j||^2`.
//!
//! The solver works on sufficient statistics ([`GramStats`]): `X^T X`, `X^T y`,
//! `y^T y` and `n`. Sample sets that grow over time can keep their statistics
//! up to date incrementally, and a refit then costs `O(d^2)` per sweep at most,
//! independent of `n`.

use crate::error::{Error, Result};

/// One `(covariate, response)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl RegressionSample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// A validated LASSO problem: at least one sample, a shared dimension, finite
/// entries and a non-negative penalty.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    samples: Vec<RegressionSample>,
    lambda: f64,
    dim: usize,
}

impl LassoProblem {
    pub fn new(samples: Vec<RegressionSample>, lambda: f64) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyProblem)?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "covariate dimension must be >= 1".into(),
            ));
        }
        if !lambda.is_finite() {
            return Err(Error::NonFinite("lambda"));
        }
        if lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.x.len(),
                });
            }
            if !s.y.is_finite() {
                return Err(Error::NonFinite("response"));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("covariate"));
            }
        }
        Ok(Self {
            samples,
            lambda,
            dim,
        })
    }

    pub fn samples(&self) -> &[RegressionSample] {
        &self.samples
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.samples.clone(), lambda)
    }

    pub fn gram(&self) -> GramStats {
        let mut stats = GramStats::new(self.dim);
        for s in &self.samples {
            stats.push(&s.x, s.y);
        }
        stats
    }

    fn check_dim(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: beta.len(),
            });
        }
        Ok(())
    }

    /// `(2/n) X^T (y - X beta)`, evaluated sample by sample.
    fn scaled_correlation(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let mut g = vec![0.0; self.dim];
        for s in &self.samples {
            let r = s.y - dot(&s.x, beta);
            for (gj, xj) in g.iter_mut().zip(&s.x) {
                *gj += xj * r;
            }
        }
        g.iter_mut().for_each(|v| *v *= 2.0 / n);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Convergence threshold on the largest coordinate change within a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    pub kkt_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
            kkt_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if !(self.kkt_tol > 0.0 && self.kkt_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kkt_tol must be > 0, got {}",
                self.kkt_tol
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidParameter("max_sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoEstimate {
    pub beta: Vec<f64>,
    /// Number of coordinate-descent sweeps performed.
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Sufficient statistics of a least-squares design.
///
/// `xtx` is stored dense and row-major (`d * d`).
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    dim: usize,
    n: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
}

impl GramStats {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            n: 0,
            xtx: vec![0.0; dim * dim],
            xty: vec![0.0; dim],
            yty: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds one sample. The caller guarantees `x.len() == dim`.
    pub fn push(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut self.xtx[i * d..(i + 1) * d];
            for (g, &xj) in row.iter_mut().zip(x) {
                *g += xi * xj;
            }
            self.xty[i] += xi * y;
        }
        self.yty += y * y;
        self.n += 1;
    }

    pub fn merge(&mut self, other: &GramStats) {
        debug_assert_eq!(self.dim, other.dim);
        self.xtx
            .iter_mut()
            .zip(&other.xtx)
            .for_each(|(a, b)| *a += b);
        self.xty
            .iter_mut()
            .zip(&other.xty)
            .for_each(|(a, b)| *a += b);
        self.yty += other.yty;
        self.n += other.n;
    }

    fn column(&self, j: usize) -> &[f64] {
        &self.xtx[j * self.dim..(j + 1) * self.dim]
    }

    /// `X^T y - X^T X beta` (not scaled by `n`).
    fn correlation(&self, beta: &[f64]) -> Vec<f64> {
        let mut c = self.xty.clone();
        for (j, &bj) in beta.iter().enumerate() {
            if bj != 0.0 {
                c.iter_mut()
                    .zip(self.column(j))
                    .for_each(|(ci, gij)| *ci -= gij * bj);
            }
        }
        c
    }

    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let n = self.n as f64;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (j, &bj) in beta.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            lin += bj * self.xty[j];
            quad += bj * dot(self.column(j), beta);
        }
        let loss = ((self.yty - 2.0 * lin + quad) / n).max(0.0);
        loss + lambda * l1_norm(beta)
    }

    pub fn kkt_residual(&self, beta: &[f64], lambda: f64) -> f64 {
        let scale = 2.0 / self.n as f64;
        let g: Vec<f64> = self.correlation(beta).iter().map(|c| c * scale).collect();
        kkt_violation(&g, beta, lambda)
    }

    /// Largest `lambda` for which the zero vector is optimal.
    pub fn lambda_max(&self) -> f64 {
        let scale = 2.0 / self.n as f64;
        self.xty
            .iter()
            .fold(0.0, |m, v| f64::max(m, (v * scale).abs()))
    }
}

/// Coordinate-descent state over a [`GramStats`].
///
/// Exposed so callers can drive sweeps one at a time and inspect the objective
/// between them.
#[derive(Debug)]
pub struct CoordinateDescent<'a> {
    stats: &'a GramStats,
    lambda: f64,
    beta: Vec<f64>,
    // X^T (y - X beta), kept in sync with beta
    corr: Vec<f64>,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(stats: &'a GramStats, lambda: f64, start: Option<&[f64]>) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::EmptyProblem);
        }
        if !lambda.is_finite() {
            return Err(Error::NonFinite("lambda"));
        }
        if lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let beta = match start {
            Some(b) if b.len() != stats.dim => {
                return Err(Error::DimensionMismatch {
                    expected: stats.dim,
                    found: b.len(),
                })
            }
            Some(b) if b.iter().any(|v| !v.is_finite()) => {
                return Err(Error::NonFinite("warm start"))
            }
            Some(b) => b.to_vec(),
            None => vec![0.0; stats.dim],
        };
        let corr = stats.correlation(&beta);
        Ok(Self {
            stats,
            lambda,
            beta,
            corr,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn into_beta(self) -> Vec<f64> {
        self.beta
    }

    /// One cyclic pass over all coordinates. Returns the largest absolute change.
    pub fn sweep(&mut self) -> f64 {
        let n = self.stats.n as f64;
        let half_lambda = self.lambda / 2.0;
        let mut max_change: f64 = 0.0;
        for j in 0..self.stats.dim {
            let gjj = self.stats.xtx[j * self.stats.dim + j];
            if gjj <= 0.0 {
                // all-zero column: the coordinate is pinned at 0
                let old = self.beta[j];
                if old != 0.0 {
                    self.apply(j, -old);
                    max_change = max_change.max(old.abs());
                }
                continue;
            }
            let old = self.beta[j];
            let energy = gjj / n;
            let z = (self.corr[j] + gjj * old) / n;
            let new = soft_threshold(z, half_lambda) / energy;
            let delta = new - old;
            if delta != 0.0 {
                self.apply(j, delta);
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    fn apply(&mut self, j: usize, delta: f64) {
        self.beta[j] += delta;
        self.corr
            .iter_mut()
            .zip(self.stats.column(j))
            .for_each(|(c, g)| *c -= g * delta);
    }

    /// Recomputes the cached correlation from scratch to shed accumulated rounding.
    pub fn refresh(&mut self) {
        self.corr = self.stats.correlation(&self.beta);
    }

    pub fn objective(&self) -> f64 {
        self.stats.objective(&self.beta, self.lambda)
    }

    pub fn kkt_residual(&self) -> f64 {
        let scale = 2.0 / self.stats.n as f64;
        let g: Vec<f64> = self.corr.iter().map(|c| c * scale).collect();
        kkt_violation(&g, &self.beta, self.lambda)
    }
}

/// `sign(z) * max(|z| - gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn lasso_objective(problem: &LassoProblem, beta: &[f64]) -> Result<f64> {
    problem.check_dim(beta)?;
    let n = problem.len() as f64;
    let rss: f64 = problem
        .samples
        .iter()
        .map(|s| {
            let r = s.y - dot(&s.x, beta);
            r * r
        })
        .sum();
    Ok(rss / n + problem.lambda * l1_norm(beta))
}

/// Largest violation of the LASSO subgradient conditions at `beta`.
///
/// With `g_j = (2/n) <X_j, y - X beta>`, optimality requires `|g_j| <= lambda`
/// where `beta_j = 0` and `g_j = lambda * sign(beta_j)` elsewhere.
pub fn kkt_residual(problem: &LassoProblem, beta: &[f64]) -> Result<f64> {
    problem.check_dim(beta)?;
    let g = problem.scaled_correlation(beta);
    Ok(kkt_violation(&g, beta, problem.lambda))
}

fn kkt_violation(g: &[f64], beta: &[f64], lambda: f64) -> f64 {
    g.iter()
        .zip(beta)
        .map(|(&gj, &bj)| {
            if bj == 0.0 {
                (gj.abs() - lambda).max(0.0)
            } else {
                (gj - lambda * bj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest `lambda` for which `beta = 0` solves the problem: `||(2/n) X^T y||_inf`.
pub fn lambda_max(problem: &LassoProblem) -> f64 {
    problem
        .scaled_correlation(&vec![0.0; problem.dim])
        .iter()
        .fold(0.0, |m, v| f64::max(m, v.abs()))
}

pub fn solve_lasso(problem: &LassoProblem, config: &SolverConfig) -> Result<LassoEstimate> {
    solve_lasso_from(problem, config, None)
}

/// Like [`solve_lasso`], starting coordinate descent from `start`.
pub fn solve_lasso_from(
    problem: &LassoProblem,
    config: &SolverConfig,
    start: Option<&[f64]>,
) -> Result<LassoEstimate> {
    let stats = problem.gram();
    let mut est = solve_gram(&stats, problem.lambda, config, start)?;
    // report against the samples themselves, not the Gram identity
    est.objective = lasso_objective(problem, &est.beta)?;
    est.kkt_residual = kkt_residual(problem, &est.beta)?;
    Ok(est)
}

/// Solves the LASSO on precomputed sufficient statistics.
pub fn solve_gram(
    stats: &GramStats,
    lambda: f64,
    config: &SolverConfig,
    start: Option<&[f64]>,
) -> Result<LassoEstimate> {
    config.validate()?;
    if stats.xtx.iter().chain(&stats.xty).any(|v| !v.is_finite()) || !stats.yty.is_finite() {
        return Err(Error::NonFinite("design"));
    }
    let mut cd = CoordinateDescent::new(stats, lambda, start)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    while iterations < config.max_sweeps {
        let change = cd.sweep();
        iterations += 1;
        if change < config.tol {
            cd.refresh();
            kkt = cd.kkt_residual();
            if kkt <= config.kkt_tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        cd.refresh();
        kkt = cd.kkt_residual();
    }
    let mut beta = cd.into_beta();
    let mut objective = stats.objective(&beta, lambda);
    let zero = vec![0.0; stats.dim];
    let zero_objective = stats.objective(&zero, lambda);
    if !converged && objective > zero_objective {
        // a poor warm start that ran out of sweeps
        beta = zero;
        objective = zero_objective;
        kkt = stats.kkt_residual(&beta, lambda);
    }
    Ok(LassoEstimate {
        beta,
        iterations,
        kkt_residual: kkt,
        objective,
        converged,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
