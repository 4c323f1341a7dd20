//! Teamwork LASSO bandit policy.
//!
//! Teamwork epochs send the whole batch to the scheduled arm (pure exploration)
//! and feed the arm's teamwork sample set. Selfish epochs refit two LASSO
//! estimates per arm and allocate each user in two steps:
//!
//! 1. screen: keep arms whose teamwork estimate is within `h/2` of the best;
//! 2. commit: among those, pick the best all-sample estimate.

use crate::environment::{argmax, Batch, FeedbackBatch};
use crate::error::{Error, Result};
use crate::lasso::{dot, solve_gram, GramStats, LassoEstimate, SolverConfig};
use crate::scheduler::{EpochMode, TeamworkSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Teamwork,
    Selfish,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEntry {
    pub x: Vec<f64>,
    pub y: f64,
    pub epoch: usize,
    pub user: usize,
    pub provenance: Provenance,
}

/// Samples collected for one arm, ordered by `(epoch, user)`, together with
/// their running sufficient statistics.
#[derive(Debug, Clone)]
pub struct SampleSet {
    arm: usize,
    entries: Vec<SampleEntry>,
    stats: GramStats,
}

impl SampleSet {
    pub fn new(arm: usize, dim: usize) -> Self {
        Self {
            arm,
            entries: Vec::new(),
            stats: GramStats::new(dim),
        }
    }

    pub fn arm(&self) -> usize {
        self.arm
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn stats(&self) -> &GramStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, entry: SampleEntry) {
        debug_assert!(self
            .entries
            .last()
            .is_none_or(|e| (e.epoch, e.user) < (entry.epoch, entry.user)));
        self.stats.push(&entry.x, entry.y);
        self.entries.push(entry);
    }
}

/// Penalty of the all-sample LASSO as a function of the epoch index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda2Schedule {
    /// `scale * sqrt((ln t + ln d) / t)`.
    Decaying {
        scale: f64,
    },
    Fixed(f64),
}

impl Lambda2Schedule {
    pub fn at(&self, t: usize, d: usize) -> f64 {
        match *self {
            Self::Decaying { scale } => {
                let t = t.max(1) as f64;
                scale * ((t.ln() + (d as f64).ln()) / t).sqrt()
            }
            Self::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub k: usize,
    pub n_users: usize,
    pub d: usize,
    pub q: usize,
    pub h: f64,
    pub lambda1: f64,
    pub lambda2: Lambda2Schedule,
    pub solver: SolverConfig,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.k == 0 || self.n_users == 0 || self.d == 0 || self.q == 0 {
            return bad("k, n_users, d and q must all be >= 1".into());
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 must be positive, got {}", self.lambda1));
        }
        let l2 = self.lambda2.at(2, self.d);
        if !(l2 >= 0.0 && l2.is_finite()) {
            return bad(format!("lambda2 schedule must be non-negative, got {l2}"));
        }
        self.solver.validate()
    }

    pub fn schedule(&self) -> Result<TeamworkSchedule> {
        TeamworkSchedule::new(self.k, self.q)
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub teamwork_sets: Vec<SampleSet>,
    pub selfish_sets: Vec<SampleSet>,
    pub teamwork_estimates: Vec<Option<LassoEstimate>>,
    pub all_estimates: Vec<Option<LassoEstimate>>,
    pub refit_count_teamwork: usize,
    pub refit_count_all: usize,
    /// Selfish epochs at which the estimates were refreshed.
    pub update_epochs: usize,
    /// Fits that exhausted the sweep budget.
    pub nonconverged_fits: usize,
    pub current_epoch: usize,
    /// Allocation pending `update`, from the last `allocate_batch`.
    pending: Option<(usize, EpochMode)>,
}

impl AgentState {
    pub fn sample_count(&self) -> usize {
        self.teamwork_sets
            .iter()
            .chain(&self.selfish_sets)
            .map(SampleSet::len)
            .sum()
    }
}

/// Anything that assigns arms to a batch and learns from the feedback.
pub trait Policy {
    fn allocate(&mut self, t: usize, batch: &Batch) -> Result<Vec<usize>>;

    fn update(&mut self, t: usize, batch: &Batch, feedback: &FeedbackBatch) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct TeamworkLassoBandit {
    config: AgentConfig,
    schedule: TeamworkSchedule,
    state: AgentState,
}

pub fn init_agent(config: &AgentConfig) -> AgentState {
    let sets =
        || -> Vec<SampleSet> { (0..config.k).map(|w| SampleSet::new(w, config.d)).collect() };
    AgentState {
        teamwork_sets: sets(),
        selfish_sets: sets(),
        teamwork_estimates: vec![None; config.k],
        all_estimates: vec![None; config.k],
        refit_count_teamwork: 0,
        refit_count_all: 0,
        update_epochs: 0,
        nonconverged_fits: 0,
        current_epoch: 0,
        pending: None,
    }
}

/// Arms whose estimated efficacy is at least `max - h/2`.
pub fn candidate_set(x: &[f64], teamwork_betas: &[Vec<f64>], h: f64) -> Vec<usize> {
    let values: Vec<f64> = teamwork_betas.iter().map(|b| dot(x, b)).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len())
        .filter(|&w| values[w] >= best - h / 2.0)
        .collect()
}

impl TeamworkLassoBandit {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let state = init_agent(&config);
        Ok(Self {
            config,
            schedule,
            state,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn schedule(&self) -> &TeamworkSchedule {
        &self.schedule
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    /// `(teamwork refits, all-sample refits)` so far.
    pub fn refit_counts(&self) -> (usize, usize) {
        (self.state.refit_count_teamwork, self.state.refit_count_all)
    }

    /// Current teamwork coefficient vectors; arms never fit read as zero.
    pub fn teamwork_betas(&self) -> Vec<Vec<f64>> {
        betas_or_zero(&self.state.teamwork_estimates, self.config.d)
    }

    pub fn all_betas(&self) -> Vec<Vec<f64>> {
        betas_or_zero(&self.state.all_estimates, self.config.d)
    }

    /// Teamwork LASSO on each arm's current teamwork set, without touching the
    /// agent's caches or counters. Empty sets give the zero vector.
    pub fn fit_teamwork_snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.state
            .teamwork_sets
            .iter()
            .zip(&self.state.teamwork_estimates)
            .map(|(set, cached)| {
                if set.is_empty() {
                    return Ok(vec![0.0; self.config.d]);
                }
                let start = cached.as_ref().map(|e| e.beta.as_slice());
                Ok(solve_gram(set.stats(), self.config.lambda1, &self.config.solver, start)?.beta)
            })
            .collect()
    }

    pub fn allocate_batch(&mut self, t: usize, batch: &Batch) -> Result<Vec<usize>> {
        let expected = self.state.current_epoch + 1;
        if t != expected {
            return Err(Error::EpochOutOfOrder { expected, found: t });
        }
        if batch.len() != self.config.n_users {
            return Err(Error::BatchSize {
                expected: self.config.n_users,
                found: batch.len(),
            });
        }
        if let Some(x) = batch.covariates.iter().find(|x| x.len() != self.config.d) {
            return Err(Error::DimensionMismatch {
                expected: self.config.d,
                found: x.len(),
            });
        }
        let mode = self.schedule.classify_epoch(t as u64);
        self.state.pending = Some((t, mode));
        match mode {
            EpochMode::Teamwork { arm, .. } => Ok(vec![arm; batch.len()]),
            EpochMode::Selfish => {
                self.refit(t)?;
                Ok(self.selfish_allocation(batch))
            }
        }
    }

    fn refit(&mut self, t: usize) -> Result<()> {
        let lambda2 = self.config.lambda2.at(t - 1, self.config.d);
        let mut refreshed = false;
        for w in 0..self.config.k {
            let teamwork = &self.state.teamwork_sets[w];
            if !teamwork.is_empty() {
                let start = self.state.teamwork_estimates[w]
                    .as_ref()
                    .map(|e| e.beta.as_slice());
                let est = solve_gram(
                    teamwork.stats(),
                    self.config.lambda1,
                    &self.config.solver,
                    start,
                )?;
                self.state.nonconverged_fits += usize::from(!est.converged);
                self.state.teamwork_estimates[w] = Some(est);
                self.state.refit_count_teamwork += 1;
                refreshed = true;
            }
            let selfish = &self.state.selfish_sets[w];
            if !(teamwork.is_empty() && selfish.is_empty()) {
                let mut all = teamwork.stats().clone();
                all.merge(selfish.stats());
                let start = self.state.all_estimates[w]
                    .as_ref()
                    .map(|e| e.beta.as_slice());
                let est = solve_gram(&all, lambda2, &self.config.solver, start)?;
                self.state.nonconverged_fits += usize::from(!est.converged);
                self.state.all_estimates[w] = Some(est);
                self.state.refit_count_all += 1;
                refreshed = true;
            }
        }
        self.state.update_epochs += usize::from(refreshed);
        Ok(())
    }

    fn selfish_allocation(&self, batch: &Batch) -> Vec<usize> {
        // arms with no data sit out both steps unless no arm has data at all
        let informed: Vec<usize> = (0..self.config.k)
            .filter(|&w| self.state.all_estimates[w].is_some())
            .collect();
        let arms: Vec<usize> = if informed.is_empty() {
            (0..self.config.k).collect()
        } else {
            informed
        };
        let teamwork = self.teamwork_betas();
        let all = self.all_betas();
        let screened: Vec<Vec<f64>> = arms.iter().map(|&w| teamwork[w].clone()).collect();
        batch
            .covariates
            .iter()
            .map(|x| {
                let candidates: Vec<usize> = candidate_set(x, &screened, self.config.h)
                    .into_iter()
                    .map(|i| arms[i])
                    .collect();
                candidates[argmax(candidates.iter().map(|&w| dot(x, &all[w])))]
            })
            .collect()
    }

    pub fn update(
        &mut self,
        t: usize,
        batch: &Batch,
        arms: &[usize],
        feedback: &FeedbackBatch,
    ) -> Result<()> {
        let mode = match self.state.pending {
            Some((pending_t, mode)) if pending_t == t => mode,
            _ => {
                return Err(Error::EpochOutOfOrder {
                    expected: self.state.current_epoch + 1,
                    found: t,
                })
            }
        };
        let n = batch.len();
        if arms.len() != n || feedback.rewards.len() != n {
            return Err(Error::BatchSize {
                expected: n,
                found: arms.len().min(feedback.rewards.len()),
            });
        }
        if let Some(&arm) = arms.iter().find(|&&a| a >= self.config.k) {
            return Err(Error::InvalidArm {
                arm,
                arms: self.config.k,
            });
        }
        if let EpochMode::Teamwork { arm, .. } = mode {
            if let Some((user, &found)) = arms.iter().enumerate().find(|(_, &a)| a != arm) {
                return Err(Error::TeamworkArmMismatch {
                    epoch: t,
                    user,
                    expected: arm,
                    found,
                });
            }
        }
        if feedback.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward"));
        }
        for (user, ((x, &arm), &y)) in batch
            .covariates
            .iter()
            .zip(arms)
            .zip(&feedback.rewards)
            .enumerate()
        {
            let (set, provenance) = match mode {
                EpochMode::Teamwork { .. } => {
                    (&mut self.state.teamwork_sets[arm], Provenance::Teamwork)
                }
                EpochMode::Selfish => (&mut self.state.selfish_sets[arm], Provenance::Selfish),
            };
            set.push(SampleEntry {
                x: x.clone(),
                y,
                epoch: t,
                user,
                provenance,
            });
        }
        self.state.current_epoch = t;
        self.state.pending = None;
        Ok(())
    }

    /// Replaces the cached estimates, for analyses that inject known coefficients.
    pub fn inject_estimates(&mut self, teamwork: Vec<Vec<f64>>, all: Vec<Vec<f64>>) {
        let wrap = |betas: Vec<Vec<f64>>| {
            betas
                .into_iter()
                .map(|beta| {
                    Some(LassoEstimate {
                        beta,
                        iterations: 0,
                        kkt_residual: 0.0,
                        objective: 0.0,
                        converged: true,
                    })
                })
                .collect()
        };
        self.state.teamwork_estimates = wrap(teamwork);
        self.state.all_estimates = wrap(all);
    }

    /// Selfish two-step allocation on the cached estimates, without refitting.
    pub fn allocate_with_current_estimates(&self, batch: &Batch) -> Vec<usize> {
        self.selfish_allocation(batch)
    }
}

impl Policy for TeamworkLassoBandit {
    fn allocate(&mut self, t: usize, batch: &Batch) -> Result<Vec<usize>> {
        self.allocate_batch(t, batch)
    }

    fn update(&mut self, t: usize, batch: &Batch, feedback: &FeedbackBatch) -> Result<()> {
        TeamworkLassoBandit::update(self, t, batch, &feedback.arms, feedback)
    }
}

fn betas_or_zero(estimates: &[Option<LassoEstimate>], d: usize) -> Vec<Vec<f64>> {
    estimates
        .iter()
        .map(|e| e.as_ref().map_or_else(|| vec![0.0; d], |e| e.beta.clone()))
        .collect()
}
