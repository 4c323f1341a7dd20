//! Teamwork/selfish epoch layout and the theory constants.
//!
//! Epochs are grouped into blocks of `K * q` consecutive epochs. Block `b`
//! (1-indexed) is a teamwork block iff `b` is a power of two; inside it, arm
//! `k` (0-indexed) owns the `q` epochs `[q*k + 1, q*(k+1)]` relative to the
//! block start. Every other epoch is selfish. All logarithms are natural.

use std::ops::RangeInclusive;

use crate::environment::EnvironmentSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeamworkSchedule {
    k: usize,
    q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochMode {
    Teamwork { arm: usize, round: u32 },
    Selfish,
}

impl EpochMode {
    pub fn is_teamwork(&self) -> bool {
        matches!(self, Self::Teamwork { .. })
    }
}

impl std::fmt::Display for EpochMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Teamwork { arm, .. } => write!(f, "teamwork:{arm}"),
            Self::Selfish => f.write_str("selfish"),
        }
    }
}

impl TeamworkSchedule {
    pub fn new(k: usize, q: usize) -> Result<Self> {
        if k == 0 || q == 0 {
            return Err(Error::InvalidParameter(format!(
                "schedule needs k >= 1 and q >= 1, got k = {k}, q = {q}"
            )));
        }
        Ok(Self { k, q })
    }

    pub fn arms(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    fn block_len(&self) -> u64 {
        (self.k * self.q) as u64
    }

    /// Epochs of the `round`-th teamwork round of `arm`:
    /// `(2^round - 1) K q + [q arm + 1, q (arm + 1)]`.
    pub fn teamwork_round(&self, round: u32, arm: usize) -> RangeInclusive<u64> {
        debug_assert!(arm < self.k);
        let base = ((1u64 << round) - 1) * self.block_len();
        let q = self.q as u64;
        let arm = arm as u64;
        base + q * arm + 1..=base + q * (arm + 1)
    }

    pub fn classify_epoch(&self, t: u64) -> EpochMode {
        debug_assert!(t >= 1);
        let offset = (t - 1) % self.block_len();
        let block = (t - 1) / self.block_len() + 1;
        if block.is_power_of_two() {
            EpochMode::Teamwork {
                arm: (offset / self.q as u64) as usize,
                round: block.trailing_zeros(),
            }
        } else {
            EpochMode::Selfish
        }
    }

    /// Number of teamwork epochs of `arm` in `1..=t`.
    pub fn teamwork_epochs(&self, t: u64, arm: usize) -> u64 {
        let mut count = 0;
        for round in 0..64 {
            let r = self.teamwork_round(round, arm);
            if *r.start() > t {
                break;
            }
            count += (*r.end()).min(t) - r.start() + 1;
        }
        count
    }

    /// `|D_[t],arm|`: users allocated to `arm` by teamwork epochs up to `t`.
    pub fn teamwork_sample_count(&self, t: u64, arm: usize, n_users: usize) -> u64 {
        n_users as u64 * self.teamwork_epochs(t, arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: u64,
    pub q0: u64,
    pub lambda1: f64,
    /// Scale of the decaying all-sample penalty:
    /// `lambda_{2,t} = lambda2_scale * sqrt((ln t + ln d) / t)`.
    pub lambda2_scale: f64,
    pub phi0: f64,
    pub p_star: f64,
    pub margin_c0: f64,
}

impl Constants {
    /// `key = value` lines in field order.
    pub fn to_lines(&self) -> String {
        [
            ("c1", self.c1.to_string()),
            ("c2", self.c2.to_string()),
            ("c3", self.c3.to_string()),
            ("c4", self.c4.to_string()),
            ("c5", self.c5.to_string()),
            ("q0", self.q0.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2_scale", self.lambda2_scale.to_string()),
            ("phi0", self.phi0.to_string()),
            ("p_star", self.p_star.to_string()),
            ("margin_c0", self.margin_c0.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }
}

/// `C1(phi0) = phi0^4 / (512 s0^2 sigma^2 x_max^2)`.
pub fn c1(spec: &EnvironmentSpec, phi0: f64) -> f64 {
    let s0 = spec.s0 as f64;
    phi0.powi(4) / (512.0 * s0 * s0 * spec.sigma * spec.sigma * spec.x_max * spec.x_max)
}

/// `C2(phi0) = min{1/2, phi0^2 / (256 s0 x_max^2)}`.
pub fn c2(spec: &EnvironmentSpec, phi0: f64) -> f64 {
    let s0 = spec.s0 as f64;
    f64::min(0.5, phi0 * phi0 / (256.0 * s0 * spec.x_max * spec.x_max))
}

/// Smallest `t >= 1` with `t >= 24 K q ln t + 4 (K q)^2`.
pub fn c5(k: usize, q: usize) -> u64 {
    let kq = (k * q) as f64;
    let floor = 4.0 * kq * kq;
    let mut t = floor.max(1.0) as u64;
    // below 4 (Kq)^2 the inequality cannot hold, so start the scan there
    loop {
        let tf = t as f64;
        if tf >= 24.0 * kq * tf.ln() + floor {
            return t;
        }
        t += 1;
    }
}

/// Lower bound `q0` on the teamwork repetition count:
/// `ceil(max{20/(N p), 4/(N p C2^2), 3 ln d/(N p C2^2), 1024 x_max^2 ln d/(N h^2 p^2 C1)})`.
pub fn q_zero(
    spec: &EnvironmentSpec,
    n_users: usize,
    p_star: f64,
    c1: f64,
    c2: f64,
) -> Result<u64> {
    if !p_star.is_finite() || p_star <= 0.0 {
        return Err(Error::NoDominanceMass(p_star));
    }
    if n_users == 0 || !(c1.is_finite() && c1 > 0.0 && c2.is_finite() && c2 > 0.0) {
        return Err(Error::InvalidParameter(
            "q0 needs N >= 1 and positive C1, C2".into(),
        ));
    }
    let n = n_users as f64;
    let ln_d = (spec.d as f64).ln();
    let terms = [
        20.0 / (n * p_star),
        4.0 / (n * p_star * c2 * c2),
        3.0 * ln_d / (n * p_star * c2 * c2),
        1024.0 * spec.x_max * spec.x_max * ln_d / (n * spec.h * spec.h * p_star * p_star * c1),
    ];
    let q0 = terms.iter().copied().fold(0.0, f64::max).ceil();
    Ok(if q0 >= u64::MAX as f64 {
        u64::MAX
    } else {
        (q0 as u64).max(1)
    })
}

/// `lambda_1 = phi0^2 p_* h / (64 s0 x_max)`.
pub fn lambda1(spec: &EnvironmentSpec, p_star: f64, phi0: f64) -> f64 {
    phi0 * phi0 * p_star * spec.h / (64.0 * spec.s0 as f64 * spec.x_max)
}

/// `(phi0^2 / 2 s0) sqrt((ln t + ln d) / (p_* C1) / t)`, on explicit logarithms.
pub fn lambda2_value(ln_t: f64, ln_d: f64, s0: f64, p_star: f64, phi0: f64, c1: f64) -> f64 {
    let t = ln_t.exp();
    phi0 * phi0 / (2.0 * s0) * ((ln_t + ln_d) / (p_star * c1) / t).sqrt()
}

pub fn lambda2_at(t: u64, spec: &EnvironmentSpec, p_star: f64, phi0: f64, c1: f64) -> f64 {
    lambda2_value(
        (t as f64).ln(),
        (spec.d as f64).ln(),
        spec.s0 as f64,
        p_star,
        phi0,
        c1,
    )
}

/// Evaluates every constant for a world, a schedule and batch size `n_users`.
pub fn derive_constants(
    spec: &EnvironmentSpec,
    schedule: &TeamworkSchedule,
    n_users: usize,
    p_star: f64,
    phi0: f64,
    margin_c0: f64,
) -> Result<Constants> {
    spec.validate()?;
    if !phi0.is_finite() || phi0 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "phi0 must be positive, got {phi0}"
        )));
    }
    if !(p_star > 0.0 && p_star <= 1.0) {
        return Err(Error::NoDominanceMass(p_star));
    }
    let k = spec.k as f64;
    let x2 = spec.x_max * spec.x_max;
    let c1 = c1(spec, phi0);
    let c2 = c2(spec, phi0);
    let c3 = 1024.0 * k * margin_c0 * x2 / (p_star.powi(3) * c1);
    let c4 = 8.0 * k * spec.b * spec.x_max / (1.0 - (-p_star * p_star / 32.0).exp());
    Ok(Constants {
        c1,
        c2,
        c3,
        c4,
        c5: c5(schedule.arms(), schedule.q()),
        q0: q_zero(spec, n_users, p_star, c1, c2)?,
        lambda1: lambda1(spec, p_star, phi0),
        lambda2_scale: phi0 * phi0 / (2.0 * spec.s0 as f64) / (p_star * c1).sqrt(),
        phi0,
        p_star,
        margin_c0,
    })
}
