//! Executable checks of the theoretical objects: the optimal-allocation rate
//! condition, the batch-adapted LASSO deviation bound, the good event on the
//! teamwork estimates, and its Monte-Carlo frequency.

use crate::agent::SampleSet;
use crate::environment::{membership_u_w, TreatmentParams};
use crate::error::{Error, Result};
use crate::lasso::l1_norm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationAudit {
    pub total: usize,
    /// Entries whose covariate lies in the arm's own dominance region.
    pub optimal: usize,
    pub rate: f64,
}

pub fn audit_sample_set(
    set: &SampleSet,
    params: &TreatmentParams,
    h: f64,
) -> Result<AllocationAudit> {
    audit_covariates(
        set.entries().iter().map(|e| e.x.as_slice()),
        set.arm(),
        params,
        h,
    )
}

pub fn audit_covariates<'a, I>(
    covariates: I,
    arm: usize,
    params: &TreatmentParams,
    h: f64,
) -> Result<AllocationAudit>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let (mut total, mut optimal) = (0usize, 0usize);
    for x in covariates {
        total += 1;
        optimal += usize::from(membership_u_w(params, x, h) == Some(arm));
    }
    if total == 0 {
        return Err(Error::EmptySampleSet);
    }
    Ok(AllocationAudit {
        total,
        optimal,
        rate: optimal as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateClause {
    /// `|A| >= 6 ln d / (r C2^2)`
    SampleSize,
    /// `|A#| / |A| >= r / 2`
    OptimalRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub passed: bool,
    pub failures: Vec<RateClause>,
    pub required_size: f64,
}

pub fn check_rate_condition(audit: &AllocationAudit, r: f64, d: usize, c2: f64) -> RateCheck {
    let required_size = 6.0 * (d as f64).ln() / (r * c2 * c2);
    let mut failures = Vec::new();
    if (audit.total as f64) < required_size {
        failures.push(RateClause::SampleSize);
    }
    // compare counts, not the rounded rate, so equality is exact
    if (audit.optimal as f64) * 2.0 < r * audit.total as f64 {
        failures.push(RateClause::OptimalRate);
    }
    RateCheck {
        passed: failures.is_empty(),
        failures,
        required_size,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationBound {
    pub raw: f64,
    /// `raw` clipped to `[0, 3]`.
    pub clipped: f64,
}

/// Right-hand side of the batch-adapted LASSO deviation inequality:
/// `2 exp(-(r^2/16) C1 |A| chi^2 + ln d) + exp(-|A#| C2^2)`.
pub fn theorem1_bound(
    total: usize,
    optimal: usize,
    chi: f64,
    d: usize,
    r: f64,
    c1: f64,
    c2: f64,
) -> DeviationBound {
    let c1_scaled = r * r / 16.0 * c1;
    let first = 2.0 * (-c1_scaled * total as f64 * chi * chi + (d as f64).ln()).exp();
    let second = (-(optimal as f64) * c2 * c2).exp();
    let raw = first + second;
    DeviationBound {
        raw,
        clipped: raw.clamp(0.0, 3.0),
    }
}

/// True iff every arm's teamwork estimate is within `h / (4 x_max)` of the
/// truth in L1 (inclusive).
pub fn good_event_indicator(
    teamwork_betas: &[Vec<f64>],
    params: &TreatmentParams,
    h: f64,
    x_max: f64,
) -> bool {
    let radius = h / (4.0 * x_max);
    teamwork_betas.len() == params.arms()
        && teamwork_betas
            .iter()
            .zip(&params.betas)
            .all(|(est, truth)| {
                let diff: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
                l1_norm(&diff) <= radius
            })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationRow {
    pub epoch: usize,
    pub violation_frequency: f64,
    /// `min(1, 5K / t^4)`.
    pub bound: f64,
}

pub fn good_event_bound(epoch: usize, k: usize) -> f64 {
    f64::min(1.0, 5.0 * k as f64 / (epoch as f64).powi(4))
}

/// Fraction of replications whose good event fails at each checkpoint.
///
/// `traces[r][t - 1]` is the indicator for epoch `t` of replication `r`.
pub fn montecarlo_deviation_check(
    traces: &[Vec<Option<bool>>],
    checkpoints: &[usize],
    k: usize,
) -> Result<Vec<DeviationRow>> {
    if traces.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replications, got {}",
            traces.len()
        )));
    }
    checkpoints
        .iter()
        .map(|&epoch| {
            let mut violations = 0usize;
            for (rep, trace) in traces.iter().enumerate() {
                let flag = epoch
                    .checked_sub(1)
                    .and_then(|i| trace.get(i).copied().flatten())
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "replication {rep} has no good-event flag at epoch {epoch}"
                        ))
                    })?;
                violations += usize::from(!flag);
            }
            Ok(DeviationRow {
                epoch,
                violation_frequency: violations as f64 / traces.len() as f64,
                bound: good_event_bound(epoch, k),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TreatmentParams {
        TreatmentParams::from_betas(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn audit_full_and_empty_membership() {
        let p = params();
        let deep = [[1.0, -1.0], [0.9, -0.5]];
        let a = audit_covariates(deep.iter().map(|x| x.as_slice()), 0, &p, 0.5).unwrap();
        assert_eq!(a.rate, 1.0);
        let same = TreatmentParams::from_betas(vec![vec![1.0, 0.0]; 2]).unwrap();
        let a = audit_covariates(deep.iter().map(|x| x.as_slice()), 0, &same, 0.5).unwrap();
        assert_eq!(a.rate, 0.0);
        assert!(matches!(
            audit_covariates(std::iter::empty(), 0, &p, 0.5),
            Err(Error::EmptySampleSet)
        ));
    }

    #[test]
    fn rate_condition_examples() {
        let a = AllocationAudit {
            total: 100,
            optimal: 30,
            rate: 0.3,
        };
        let check = check_rate_condition(&a, 0.5, 200, 0.5);
        assert!(!check.passed);
        assert_eq!(check.failures, vec![RateClause::SampleSize]);
        assert!((check.required_size - 254.3).abs() < 0.1);

        let a = AllocationAudit {
            total: 300,
            optimal: 30,
            rate: 0.1,
        };
        let check = check_rate_condition(&a, 0.1, 200, 0.5);
        assert!(!check.passed);
        assert!((check.required_size - 1271.6).abs() < 0.1);
        assert_eq!(check.failures, vec![RateClause::SampleSize]);

        // boundary: optimal / total == r / 2
        let a = AllocationAudit {
            total: 10_000,
            optimal: 2_500,
            rate: 0.25,
        };
        let check = check_rate_condition(&a, 0.5, 2, 0.5);
        assert!(check.passed, "{check:?}");
    }

    #[test]
    fn bound_examples() {
        // (1/16) c1 |A| chi^2 = ln d  ->  first term is 2
        let d = 50;
        let (total, chi) = (1000, 0.1);
        let c1 = 16.0 * (d as f64).ln() / (total as f64 * chi * chi);
        let b = theorem1_bound(total, usize::MAX / 2, chi, d, 1.0, c1, 1.0);
        assert!((b.raw - 2.0).abs() < 1e-12);

        let tiny = theorem1_bound(10, 5, 1e-9, 200, 0.5, 1.0, 0.1);
        assert!(tiny.raw > 2.0 * 200.0 - 1e-6);
        assert_eq!(tiny.clipped, 3.0);

        let big = theorem1_bound(10_000_000, 5_000_000, 0.5, 200, 0.5, 1.0, 0.1);
        assert!(big.raw < 1e-12);
    }

    #[test]
    fn good_event_examples() {
        let p = params();
        let (h, x_max) = (0.4, 1.0);
        assert!(good_event_indicator(&p.betas, &p, h, x_max));
        let off = vec![vec![1.0 + h / (2.0 * x_max), 0.0], vec![0.0, 1.0]];
        assert!(!good_event_indicator(&off, &p, h, x_max));
        // exactly at the radius; 0.25 is representable
        let edge = vec![vec![1.25, 0.0], vec![0.0, 1.0]];
        assert!(good_event_indicator(&edge, &p, 1.0, 1.0));
    }

    #[test]
    fn montecarlo_table() {
        let traces = vec![
            vec![Some(true); 12],
            vec![Some(false); 12],
            vec![Some(true); 12],
        ];
        let rows = montecarlo_deviation_check(&traces, &[10, 12], 3).unwrap();
        assert_eq!(rows[0].bound, 15.0 / 10_000.0);
        assert!((rows[0].violation_frequency - 1.0 / 3.0).abs() < 1e-15);
        assert!(rows[1].bound <= rows[0].bound);
        assert!(montecarlo_deviation_check(&traces[..1], &[10], 3).is_err());
        assert!(montecarlo_deviation_check(&traces, &[13], 3).is_err());
        assert_eq!(good_event_bound(1, 3), 1.0);
    }
}
