//! Synthetic treatment-efficacy worlds.
//!
//! Each arm `w` has a sparse coefficient vector `beta_w`; a user with covariate
//! `x` assigned to arm `w` yields `<beta_w, x> + noise`. Arms are 0-indexed and
//! every argmax in this module breaks ties toward the lowest index.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::lasso::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateLaw {
    /// Independent uniform coordinates on `[-x_max, x_max]`.
    UniformBox,
    /// Independent `N(0, (x_max/2)^2)` coordinates, rejected outside the box.
    TruncatedGaussian,
}

impl std::str::FromStr for CovariateLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_box" | "uniform" => Ok(Self::UniformBox),
            "truncated_gaussian" | "gaussian" => Ok(Self::TruncatedGaussian),
            other => Err(Error::InvalidParameter(format!(
                "unknown covariate law {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub d: usize,
    pub k: usize,
    pub s0: usize,
    pub x_max: f64,
    /// L1 bound on every coefficient vector.
    pub b: f64,
    /// Standard deviation of the Gaussian reward noise.
    pub sigma: f64,
    /// Dominance margin defining the regions `U_w`.
    pub h: f64,
    pub covariate_law: CovariateLaw,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            d: 100,
            k: 3,
            s0: 5,
            x_max: 1.0,
            b: 5.0,
            sigma: 0.5,
            h: 0.5,
            covariate_law: CovariateLaw::UniformBox,
        }
    }
}

impl EnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.d == 0 {
            return bad("d must be >= 1".into());
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.s0 > self.d {
            return bad(format!("s0 = {} exceeds d = {}", self.s0, self.d));
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            return bad(format!("x_max must be positive, got {}", self.x_max));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("b must be positive, got {}", self.b));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentParams {
    pub betas: Vec<Vec<f64>>,
    /// Sorted nonzero indices of each `betas[k]`.
    pub supports: Vec<Vec<usize>>,
}

impl TreatmentParams {
    /// Builds parameters from explicit coefficient vectors, deriving supports.
    pub fn from_betas(betas: Vec<Vec<f64>>) -> Result<Self> {
        let d = betas
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidParameter("at least one arm is required".into()))?;
        for beta in &betas {
            if beta.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: beta.len(),
                });
            }
            if beta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("beta"));
            }
        }
        let supports = betas
            .iter()
            .map(|b| (0..d).filter(|&j| b[j] != 0.0).collect())
            .collect();
        Ok(Self { betas, supports })
    }

    pub fn arms(&self) -> usize {
        self.betas.len()
    }

    pub fn dim(&self) -> usize {
        self.betas.first().map_or(0, Vec::len)
    }

    pub fn efficacy(&self, arm: usize, x: &[f64]) -> f64 {
        dot(&self.betas[arm], x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub covariates: Vec<Vec<f64>>,
    pub epoch: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackBatch {
    pub rewards: Vec<f64>,
    pub arms: Vec<usize>,
}

/// Draws `K` coefficient vectors, each with exactly `s0` nonzeros at uniformly
/// chosen positions. Magnitudes are uniform on `[0.5, 1]` with random signs,
/// rescaled onto the L1 ball of radius `b` when they exceed it.
pub fn generate_parameters(spec: &EnvironmentSpec, seed: u64) -> Result<TreatmentParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitude = Uniform::new_inclusive(0.5, 1.0).expect("valid range");
    let mut betas = Vec::with_capacity(spec.k);
    let mut supports = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let mut support = index::sample(&mut rng, spec.d, spec.s0).into_vec();
        support.sort_unstable();
        let mut beta = vec![0.0; spec.d];
        for &j in &support {
            let m: f64 = magnitude.sample(&mut rng);
            beta[j] = if rng.random::<bool>() { m } else { -m };
        }
        let l1: f64 = beta.iter().map(|v| v.abs()).sum();
        if l1 > spec.b {
            let scale = spec.b / l1;
            beta.iter_mut().for_each(|v| *v *= scale);
        }
        betas.push(beta);
        supports.push(support);
    }
    Ok(TreatmentParams { betas, supports })
}

pub fn sample_covariate<R: Rng + ?Sized>(spec: &EnvironmentSpec, rng: &mut R) -> Vec<f64> {
    let x_max = spec.x_max;
    match spec.covariate_law {
        CovariateLaw::UniformBox => {
            let u = Uniform::new_inclusive(-x_max, x_max).expect("valid range");
            (0..spec.d).map(|_| u.sample(rng)).collect()
        }
        CovariateLaw::TruncatedGaussian => {
            let g = Normal::new(0.0, x_max / 2.0).expect("valid sd");
            (0..spec.d)
                .map(|_| loop {
                    let v: f64 = g.sample(rng);
                    if v.abs() <= x_max {
                        break v;
                    }
                })
                .collect()
        }
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    spec: &EnvironmentSpec,
    n: usize,
    epoch: usize,
    rng: &mut R,
) -> Batch {
    Batch {
        covariates: (0..n).map(|_| sample_covariate(spec, rng)).collect(),
        epoch,
    }
}

/// `rewards[i] = <beta_{arms[i]}, x_i> + eps_i` with `eps_i ~ N(0, sigma^2)`.
pub fn realize_feedback<R: Rng + ?Sized>(
    params: &TreatmentParams,
    batch: &Batch,
    arms: &[usize],
    sigma: f64,
    rng: &mut R,
) -> Result<FeedbackBatch> {
    if arms.len() != batch.len() {
        return Err(Error::BatchSize {
            expected: batch.len(),
            found: arms.len(),
        });
    }
    if let Some(&arm) = arms.iter().find(|&&a| a >= params.arms()) {
        return Err(Error::InvalidArm {
            arm,
            arms: params.arms(),
        });
    }
    let noise =
        Normal::new(0.0, sigma).map_err(|_| Error::InvalidParameter(format!("sigma {sigma}")))?;
    let rewards = batch
        .covariates
        .iter()
        .zip(arms)
        .map(|(x, &arm)| {
            // always draw, so the noise stream does not depend on sigma = 0
            let eps: f64 = noise.sample(rng);
            params.efficacy(arm, x) + eps
        })
        .collect();
    Ok(FeedbackBatch {
        rewards,
        arms: arms.to_vec(),
    })
}

/// `argmax_w <beta_w, x>`.
pub fn oracle_arm(params: &TreatmentParams, x: &[f64]) -> usize {
    argmax((0..params.arms()).map(|w| params.efficacy(w, x)))
}

pub fn instantaneous_regret(params: &TreatmentParams, x: &[f64], arm: usize) -> f64 {
    let best = params.efficacy(oracle_arm(params, x), x);
    (best - params.efficacy(arm, x)).max(0.0)
}

/// The arm `w` with `<beta_w, x> > max_{v != w} <beta_v, x> + h`, if any.
///
/// A single arm always dominates (the region is the whole space).
pub fn membership_u_w(params: &TreatmentParams, x: &[f64], h: f64) -> Option<usize> {
    let values: Vec<f64> = (0..params.arms()).map(|w| params.efficacy(w, x)).collect();
    let best = argmax(values.iter().copied());
    let runner_up = values
        .iter()
        .enumerate()
        .filter(|&(w, _)| w != best)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (values[best] > runner_up + h).then_some(best)
}

pub(crate) fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionEstimates {
    /// Smallest empirical dominance-region mass among arms not flagged sub-optimal.
    pub p_star_hat: f64,
    /// Largest empirical `P(0 < |gap| <= kappa) / kappa` over arm pairs and the kappa grid.
    pub margin_c0_hat: f64,
    /// Arms never optimal on the sample and never in their own dominance region.
    pub sub_optimal_arms: Vec<usize>,
    /// Empirical `P(X in U_w)` for every arm.
    pub dominance_mass: Vec<f64>,
}

/// Margin-condition probe widths, as multiples of `x_max`.
const KAPPA_GRID: [f64; 6] = [0.025, 0.05, 0.1, 0.2, 0.4, 0.8];

/// Monte-Carlo estimates of the margin and treatment-optimality constants.
pub fn estimate_assumption_constants(
    params: &TreatmentParams,
    spec: &EnvironmentSpec,
    m: usize,
    seed: u64,
) -> Result<AssumptionEstimates> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    let k = params.arms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; k];
    let mut ever_optimal = vec![false; k];
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect();
    let mut margin_counts = vec![[0usize; KAPPA_GRID.len()]; pairs.len()];
    let mut values = vec![0.0; k];
    for _ in 0..m {
        let x = sample_covariate(spec, &mut rng);
        for (w, v) in values.iter_mut().enumerate() {
            *v = params.efficacy(w, &x);
        }
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, &v) in values.iter().enumerate() {
            if v >= best {
                ever_optimal[w] = true;
            }
        }
        if let Some(w) = membership_u_w(params, &x, spec.h) {
            hits[w] += 1;
        }
        for (counts, &(i, j)) in margin_counts.iter_mut().zip(&pairs) {
            let gap = (values[i] - values[j]).abs();
            if gap > 0.0 {
                for (c, kappa) in counts.iter_mut().zip(KAPPA_GRID) {
                    if gap <= kappa * spec.x_max {
                        *c += 1;
                    }
                }
            }
        }
    }
    let dominance_mass: Vec<f64> = hits.iter().map(|&c| c as f64 / m as f64).collect();
    let sub_optimal_arms: Vec<usize> = (0..k)
        .filter(|&w| k > 1 && hits[w] == 0 && !ever_optimal[w])
        .collect();
    let p_star_hat = (0..k)
        .filter(|w| !sub_optimal_arms.contains(w))
        .map(|w| dominance_mass[w])
        .fold(f64::INFINITY, f64::min);
    let p_star_hat = if p_star_hat.is_finite() {
        p_star_hat
    } else {
        0.0
    };
    let margin_c0_hat = margin_counts
        .iter()
        .flat_map(|counts| {
            counts
                .iter()
                .zip(KAPPA_GRID)
                .map(|(&c, kappa)| c as f64 / m as f64 / (kappa * spec.x_max))
        })
        .fold(0.0, f64::max);
    Ok(AssumptionEstimates {
        p_star_hat,
        margin_c0_hat,
        sub_optimal_arms,
        dominance_mass,
    })
}

/// Sampled upper bound on the compatibility constant of a second-moment matrix
/// `sigma` (row-major `d * d`) over the cone `||v_{S^c}||_1 <= 3 ||v_S||_1`.
///
/// Cone vectors are drawn sequentially from `rng`, so a larger `samples_in_cone`
/// with the same stream evaluates a superset of directions.
pub fn compatibility_from_covariance<R: Rng + ?Sized>(
    sigma: &[f64],
    support: &[usize],
    samples_in_cone: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = support_dim(sigma)?;
    if support.is_empty() {
        return Err(Error::InvalidParameter(
            "compatibility needs a nonempty support".into(),
        ));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: j + 1,
        });
    }
    if samples_in_cone == 0 {
        return Err(Error::InvalidParameter(
            "samples_in_cone must be >= 1".into(),
        ));
    }
    let s = support.len() as f64;
    let off: Vec<usize> = (0..d).filter(|j| !support.contains(j)).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut best = f64::INFINITY;
    let mut v = vec![0.0f64; d];
    for _ in 0..samples_in_cone {
        v.iter_mut().for_each(|x| *x = 0.0);
        for &j in support {
            v[j] = normal.sample(rng);
        }
        let on_l1: f64 = support.iter().map(|&j| v[j].abs()).sum();
        let budget = 3.0 * on_l1 * rng.random::<f64>();
        if !off.is_empty() {
            let mut off_l1 = 0.0;
            for &j in &off {
                v[j] = normal.sample(rng);
                off_l1 += v[j].abs();
            }
            let scale = if off_l1 > 0.0 { budget / off_l1 } else { 0.0 };
            for &j in &off {
                v[j] *= scale;
            }
        }
        if on_l1 == 0.0 {
            continue;
        }
        let quad = quadratic_form(sigma, &v, d).max(0.0);
        best = best.min((s * quad / (on_l1 * on_l1)).sqrt());
    }
    Ok(if best.is_finite() { best } else { 0.0 })
}

fn support_dim(sigma: &[f64]) -> Result<usize> {
    let d = (sigma.len() as f64).sqrt().round() as usize;
    if d * d != sigma.len() || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "covariance of length {} is not a nonempty square matrix",
            sigma.len()
        )));
    }
    Ok(d)
}

fn quadratic_form(sigma: &[f64], v: &[f64], d: usize) -> f64 {
    (0..d)
        .filter(|&i| v[i] != 0.0)
        .map(|i| v[i] * dot(&sigma[i * d..(i + 1) * d], v))
        .sum()
}

/// Empirical second-moment matrix of covariates falling in `U_arm`.
pub fn conditional_second_moment(
    params: &TreatmentParams,
    spec: &EnvironmentSpec,
    arm: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if arm >= params.arms() {
        return Err(Error::InvalidArm {
            arm,
            arms: params.arms(),
        });
    }
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma = vec![0.0; d * d];
    let mut hits = 0usize;
    for _ in 0..m {
        let x = sample_covariate(spec, &mut rng);
        if membership_u_w(params, &x, spec.h) != Some(arm) {
            continue;
        }
        hits += 1;
        for i in 0..d {
            let xi = x[i];
            sigma[i * d..(i + 1) * d]
                .iter_mut()
                .zip(&x)
                .for_each(|(s, xj)| *s += xi * xj);
        }
    }
    if hits == 0 {
        return Err(Error::EmptyDominanceRegion { arm });
    }
    sigma.iter_mut().for_each(|s| *s /= hits as f64);
    Ok(sigma)
}

/// Compatibility probe for one arm: `Sigma_w` estimated from `m` draws
/// conditioned on `U_w`, then minimized over sampled cone vectors.
pub fn compatibility_probe_arm(
    params: &TreatmentParams,
    spec: &EnvironmentSpec,
    arm: usize,
    m: usize,
    samples_in_cone: usize,
    seed: u64,
) -> Result<f64> {
    let sigma = conditional_second_moment(params, spec, arm, m, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    compatibility_from_covariance(&sigma, &params.supports[arm], samples_in_cone, &mut rng)
}

/// Minimum of [`compatibility_probe_arm`] over arms whose dominance region is
/// hit at least once; errors if no arm's region is hit.
pub fn compatibility_probe(
    params: &TreatmentParams,
    spec: &EnvironmentSpec,
    m: usize,
    samples_in_cone: usize,
    seed: u64,
) -> Result<f64> {
    let mut phi = f64::INFINITY;
    let mut first_empty = None;
    for arm in 0..params.arms() {
        match compatibility_probe_arm(
            params,
            spec,
            arm,
            m,
            samples_in_cone,
            seed.wrapping_add(arm as u64),
        ) {
            Ok(v) => phi = phi.min(v),
            Err(Error::EmptyDominanceRegion { arm }) => {
                first_empty.get_or_insert(arm);
            }
            Err(e) => return Err(e),
        }
    }
    if phi.is_finite() {
        Ok(phi)
    } else {
        Err(Error::EmptyDominanceRegion {
            arm: first_empty.unwrap_or(0),
        })
    }
}
