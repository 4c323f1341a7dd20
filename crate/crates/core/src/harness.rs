//! Episode runner, replication grid and CSV output.
//!
//! Seeds: the master seed and the world description (everything in
//! [`EnvironmentSpec`]) key three independent ChaCha streams for parameters,
//! covariates and noise; the replication index selects the stream. Batch size
//! and `q` do not enter the keys, so cells that differ only in `N` or `q` see
//! the same worlds and the same user sequence.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{AgentConfig, Lambda2Schedule, Policy, TeamworkLassoBandit};
use crate::diagnostics::good_event_indicator;
use crate::environment::{
    generate_parameters, instantaneous_regret, oracle_arm, realize_feedback, sample_batch, Batch,
    CovariateLaw, EnvironmentSpec, FeedbackBatch, TreatmentParams,
};
use crate::error::{Error, Result};
use crate::lasso::SolverConfig;
use crate::scheduler::EpochMode;

const STREAM_PARAMS: u64 = 1;
const STREAM_COVARIATES: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentOverrides {
    pub lambda1: Option<f64>,
    pub lambda2_scale: Option<f64>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyKind {
    #[default]
    TeamworkLasso,
    /// Plays the true optimal arm; zero regret by construction.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: EnvironmentSpec,
    pub n_users: usize,
    pub q: usize,
    /// User-level decisions; the episode lasts `total_decisions / n_users` epochs.
    pub total_decisions: usize,
    pub replications: usize,
    pub seed: u64,
    pub overrides: AgentOverrides,
    pub policy: PolicyKind,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: EnvironmentSpec::default(),
            n_users: 4,
            q: 1,
            total_decisions: 12_000,
            replications: 1,
            seed: 0,
            overrides: AgentOverrides::default(),
            policy: PolicyKind::TeamworkLasso,
            solver: SolverConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_users == 0 || self.q == 0 {
            return Err(Error::InvalidParameter("n and q must be >= 1".into()));
        }
        if self.total_decisions == 0 || !self.total_decisions.is_multiple_of(self.n_users) {
            return Err(Error::InvalidParameter(format!(
                "total decisions {} must be a positive multiple of the batch size {}",
                self.total_decisions, self.n_users
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be >= 1".into()));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.total_decisions / self.n_users
    }

    /// Cell label used in CSV output.
    pub fn label(&self) -> String {
        format!(
            "d{}-k{}-n{}-q{}",
            self.spec.d, self.spec.k, self.n_users, self.q
        )
    }

    pub fn agent_config(&self) -> AgentConfig {
        let spec = &self.spec;
        let h = self.overrides.h.unwrap_or(spec.h);
        AgentConfig {
            k: spec.k,
            n_users: self.n_users,
            d: spec.d,
            q: self.q,
            h,
            lambda1: self
                .overrides
                .lambda1
                .unwrap_or_else(|| default_lambda1(spec, self.n_users, self.q)),
            lambda2: Lambda2Schedule::Decaying {
                scale: self
                    .overrides
                    .lambda2_scale
                    .unwrap_or_else(|| default_lambda2_scale(spec, self.n_users)),
            },
            solver: self.solver,
        }
    }

    fn world_key(&self) -> u64 {
        let s = &self.spec;
        let law = match s.covariate_law {
            CovariateLaw::UniformBox => 0,
            CovariateLaw::TruncatedGaussian => 1,
        };
        [
            s.d as u64,
            s.k as u64,
            s.s0 as u64,
            s.x_max.to_bits(),
            s.b.to_bits(),
            s.sigma.to_bits(),
            s.h.to_bits(),
            law,
        ]
        .iter()
        .fold(0x5eed, |acc, &v| splitmix(acc ^ v))
    }

    fn stream(&self, tag: u64, replication: usize) -> ChaCha8Rng {
        let mut rng =
            ChaCha8Rng::seed_from_u64(splitmix(splitmix(self.seed ^ self.world_key()) ^ tag));
        rng.set_stream(replication as u64);
        rng
    }

    /// The world of one replication.
    pub fn parameters(&self, replication: usize) -> Result<TreatmentParams> {
        let seed =
            splitmix(splitmix(self.seed ^ self.world_key()) ^ STREAM_PARAMS) ^ replication as u64;
        generate_parameters(&self.spec, splitmix(seed))
    }
}

/// Teamwork penalty at the noise level of one round of teamwork data
/// (`N q` samples): `sigma x_max sqrt(2 ln d / (N q))`.
pub fn default_lambda1(spec: &EnvironmentSpec, n_users: usize, q: usize) -> f64 {
    let n = (n_users * q) as f64;
    (spec.sigma * spec.x_max * (2.0 * (spec.d as f64).ln() / n).sqrt()).max(1e-6)
}

/// Scale of the all-sample penalty, `sigma x_max sqrt(K / N)`, so that at
/// epoch `t` it sits near the noise level of the roughly `N t / K` samples
/// per arm.
pub fn default_lambda2_scale(spec: &EnvironmentSpec, n_users: usize) -> f64 {
    spec.sigma * spec.x_max * (spec.k as f64 / n_users as f64).sqrt()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: EpochMode,
    pub arms: Vec<usize>,
    pub regrets: Vec<f64>,
    pub cum_regret: f64,
    /// Good event on the teamwork estimates after this epoch's update.
    pub good_event: Option<bool>,
    pub teamwork_refits: usize,
    pub all_refits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub cumulative_regret: f64,
    pub teamwork_refits: usize,
    pub all_refits: usize,
    /// Selfish epochs at which estimates were refreshed.
    pub updates: usize,
    pub nonconverged_fits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretLog {
    pub cell: String,
    pub replication: usize,
    pub records: Vec<EpochRecord>,
    pub summary: EpisodeSummary,
}

impl RegretLog {
    pub fn good_event_trace(&self) -> Vec<Option<bool>> {
        self.records.iter().map(|r| r.good_event).collect()
    }
}

/// Plays the true optimal arm for every user.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    params: TreatmentParams,
    epoch: usize,
}

impl OraclePolicy {
    pub fn new(params: TreatmentParams) -> Self {
        Self { params, epoch: 0 }
    }
}

impl Policy for OraclePolicy {
    fn allocate(&mut self, t: usize, batch: &Batch) -> Result<Vec<usize>> {
        if t != self.epoch + 1 {
            return Err(Error::EpochOutOfOrder {
                expected: self.epoch + 1,
                found: t,
            });
        }
        Ok(batch
            .covariates
            .iter()
            .map(|x| oracle_arm(&self.params, x))
            .collect())
    }

    fn update(&mut self, t: usize, _batch: &Batch, _feedback: &FeedbackBatch) -> Result<()> {
        self.epoch = t;
        Ok(())
    }
}

/// Hooks the episode loop reads after each epoch.
trait Instrumented: Policy {
    fn mode(&self, _t: usize) -> EpochMode {
        EpochMode::Selfish
    }

    /// Teamwork estimates for the good event, refreshed when the teamwork data changed.
    fn teamwork_betas(&mut self) -> Result<Option<Vec<Vec<f64>>>> {
        Ok(None)
    }

    fn counters(&self) -> (usize, usize, usize, usize) {
        (0, 0, 0, 0)
    }
}

impl Instrumented for OraclePolicy {}

struct TrackedAgent {
    agent: TeamworkLassoBandit,
    teamwork_sizes: Vec<usize>,
    teamwork_betas: Option<Vec<Vec<f64>>>,
}

impl Policy for TrackedAgent {
    fn allocate(&mut self, t: usize, batch: &Batch) -> Result<Vec<usize>> {
        self.agent.allocate(t, batch)
    }

    fn update(&mut self, t: usize, batch: &Batch, feedback: &FeedbackBatch) -> Result<()> {
        Policy::update(&mut self.agent, t, batch, feedback)
    }
}

impl Instrumented for TrackedAgent {
    fn mode(&self, t: usize) -> EpochMode {
        self.agent.schedule().classify_epoch(t as u64)
    }

    fn teamwork_betas(&mut self) -> Result<Option<Vec<Vec<f64>>>> {
        let sizes: Vec<usize> = self
            .agent
            .state()
            .teamwork_sets
            .iter()
            .map(|s| s.len())
            .collect();
        if self.teamwork_betas.is_none() || sizes != self.teamwork_sizes {
            self.teamwork_betas = Some(self.agent.fit_teamwork_snapshot()?);
            self.teamwork_sizes = sizes;
        }
        Ok(self.teamwork_betas.clone())
    }

    fn counters(&self) -> (usize, usize, usize, usize) {
        let s = self.agent.state();
        (
            s.refit_count_teamwork,
            s.refit_count_all,
            s.update_epochs,
            s.nonconverged_fits,
        )
    }
}

pub fn run_episode(config: &RunConfig, replication: usize) -> Result<RegretLog> {
    config.validate()?;
    let params = config.parameters(replication)?;
    match config.policy {
        PolicyKind::TeamworkLasso => run_agent_episode(config, replication).map(|(log, _)| log),
        PolicyKind::Oracle => {
            let mut policy = OraclePolicy::new(params.clone());
            simulate(config, replication, &params, &mut policy)
        }
    }
}

/// Runs the teamwork LASSO agent (whatever `config.policy` says) and also
/// returns it in its final state, for audits of its sample sets.
pub fn run_agent_episode(
    config: &RunConfig,
    replication: usize,
) -> Result<(RegretLog, TeamworkLassoBandit)> {
    config.validate()?;
    let params = config.parameters(replication)?;
    let mut policy = TrackedAgent {
        agent: TeamworkLassoBandit::new(config.agent_config())?,
        teamwork_sizes: Vec::new(),
        teamwork_betas: None,
    };
    let log = simulate(config, replication, &params, &mut policy)?;
    Ok((log, policy.agent))
}

fn simulate<P: Instrumented>(
    config: &RunConfig,
    replication: usize,
    params: &TreatmentParams,
    policy: &mut P,
) -> Result<RegretLog> {
    let spec = &config.spec;
    let h = config.overrides.h.unwrap_or(spec.h);
    let mut covariates = config.stream(STREAM_COVARIATES, replication);
    let mut noise = config.stream(STREAM_NOISE, replication);
    let epochs = config.epochs();
    let mut records = Vec::with_capacity(epochs);
    let mut cum_regret = 0.0;
    for t in 1..=epochs {
        let batch = sample_batch(spec, config.n_users, t, &mut covariates);
        let arms = policy.allocate(t, &batch)?;
        let regrets: Vec<f64> = batch
            .covariates
            .iter()
            .zip(&arms)
            .map(|(x, &a)| instantaneous_regret(params, x, a))
            .collect();
        cum_regret += regrets.iter().sum::<f64>();
        let feedback = realize_feedback(params, &batch, &arms, spec.sigma, &mut noise)?;
        policy.update(t, &batch, &feedback)?;
        let good_event = policy
            .teamwork_betas()?
            .map(|betas| good_event_indicator(&betas, params, h, spec.x_max));
        let (teamwork_refits, all_refits, _, _) = policy.counters();
        records.push(EpochRecord {
            epoch: t,
            mode: policy.mode(t),
            arms,
            regrets,
            cum_regret,
            good_event,
            teamwork_refits,
            all_refits,
        });
    }
    let (teamwork_refits, all_refits, updates, nonconverged_fits) = policy.counters();
    Ok(RegretLog {
        cell: config.label(),
        replication,
        records,
        summary: EpisodeSummary {
            cumulative_regret: cum_regret,
            teamwork_refits,
            all_refits,
            updates,
            nonconverged_fits,
        },
    })
}

/// The covariate batches an episode serves, regenerated from the seed.
pub fn episode_batches(config: &RunConfig, replication: usize) -> Result<Vec<Batch>> {
    config.validate()?;
    let mut covariates = config.stream(STREAM_COVARIATES, replication);
    Ok((1..=config.epochs())
        .map(|t| sample_batch(&config.spec, config.n_users, t, &mut covariates))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: String,
    pub replications: usize,
    pub mean_regret: f64,
    pub min_regret: f64,
    pub max_regret: f64,
    pub mean_updates: f64,
    pub mean_teamwork_refits: f64,
    pub mean_all_refits: f64,
}

pub fn summarize<'a, I: IntoIterator<Item = &'a RegretLog>>(cell: &str, logs: I) -> CellSummary {
    let logs: Vec<&RegretLog> = logs.into_iter().collect();
    let n = logs.len().max(1) as f64;
    let regrets = logs.iter().map(|l| l.summary.cumulative_regret);
    CellSummary {
        cell: cell.to_string(),
        replications: logs.len(),
        mean_regret: regrets.clone().sum::<f64>() / n,
        min_regret: regrets.clone().fold(f64::INFINITY, f64::min),
        max_regret: regrets.fold(f64::NEG_INFINITY, f64::max),
        mean_updates: logs.iter().map(|l| l.summary.updates as f64).sum::<f64>() / n,
        mean_teamwork_refits: logs
            .iter()
            .map(|l| l.summary.teamwork_refits as f64)
            .sum::<f64>()
            / n,
        mean_all_refits: logs
            .iter()
            .map(|l| l.summary.all_refits as f64)
            .sum::<f64>()
            / n,
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Ordered by cell, then replication.
    pub logs: Vec<RegretLog>,
    pub summaries: Vec<CellSummary>,
}

/// Runs every cell's replications in parallel. Results depend only on each
/// cell's own configuration, never on its position in `cells`.
pub fn run_grid(cells: &[RunConfig]) -> Result<GridResult> {
    if cells.is_empty() {
        return Err(Error::InvalidParameter("grid has no cells".into()));
    }
    for c in cells {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (0..c.replications).map(move |r| (i, r)))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|&(i, r)| run_episode(&cells[i], r))
        .collect::<Result<Vec<_>>>()?;
    let mut summaries = Vec::with_capacity(cells.len());
    let mut offset = 0;
    for c in cells {
        let slice = &logs[offset..offset + c.replications];
        summaries.push(summarize(&c.label(), slice));
        offset += c.replications;
    }
    Ok(GridResult { logs, summaries })
}

/// Refit count of the non-batched baseline expressed through the schedule:
/// `K [D/(K N) - log2(D/(K N))]`.
pub fn paper_update_count(total_decisions: usize, n_users: usize, k: usize) -> f64 {
    let per_arm = total_decisions as f64 / (k * n_users) as f64;
    k as f64 * (per_arm - per_arm.log2())
}

pub const EPOCH_HEADER: [&str; 8] = [
    "cell",
    "replication",
    "epoch",
    "mode",
    "cum_regret",
    "good_event",
    "teamwork_refits",
    "all_refits",
];

pub const SUMMARY_HEADER: [&str; 5] = [
    "cell",
    "mean_regret",
    "min_regret",
    "max_regret",
    "mean_updates",
];

/// `out.csv` -> `out_summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_summary.{}", ext.to_string_lossy()),
        None => format!("{stem}_summary"),
    };
    path.with_file_name(name)
}

/// Writes one row per epoch to `path` and per-cell summaries next to it.
pub fn write_csv(logs: &[RegretLog], path: &Path) -> Result<()> {
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Csv {
            path: path.clone(),
            source,
        }
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(EPOCH_HEADER).map_err(csv_err(path))?;
    for log in logs {
        for r in &log.records {
            let good = match r.good_event {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            w.write_record([
                log.cell.clone(),
                log.replication.to_string(),
                r.epoch.to_string(),
                r.mode.to_string(),
                r.cum_regret.to_string(),
                good.to_string(),
                r.teamwork_refits.to_string(),
                r.all_refits.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut cells: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<&RegretLog>> = BTreeMap::new();
    for log in logs {
        if !grouped.contains_key(log.cell.as_str()) {
            cells.push(&log.cell);
        }
        grouped.entry(&log.cell).or_default().push(log);
    }
    let spath = summary_path(path);
    let mut w = csv::Writer::from_writer(create(&spath)?);
    w.write_record(SUMMARY_HEADER).map_err(csv_err(&spath))?;
    for cell in cells {
        let s = summarize(cell, grouped[cell].iter().copied());
        w.write_record([
            s.cell,
            s.mean_regret.to_string(),
            s.min_regret.to_string(),
            s.max_regret.to_string(),
            s.mean_updates.to_string(),
        ])
        .map_err(csv_err(&spath))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: spath.clone(),
        source,
    })?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-cell good-event traces read back from an epoch CSV.
#[derive(Debug, Clone, Default)]
pub struct TraceTable {
    /// Cells in order of first appearance with one trace per replication.
    pub cells: Vec<(String, Vec<Vec<Option<bool>>>)>,
}

pub fn read_traces(path: &Path) -> Result<TraceTable> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != EPOCH_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut table = TraceTable::default();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let cell = row[0].to_string();
        let rep: usize = row[1]
            .parse()
            .map_err(|e| parse_err(format!("replication: {e}")))?;
        let epoch: usize = row[2]
            .parse()
            .map_err(|e| parse_err(format!("epoch: {e}")))?;
        let flag = match &row[5] {
            "1" => Some(true),
            "0" => Some(false),
            "" => None,
            other => return Err(parse_err(format!("good_event {other:?}"))),
        };
        let slot = *index.entry(cell.clone()).or_insert_with(|| {
            table.cells.push((cell, Vec::new()));
            table.cells.len() - 1
        });
        let reps = &mut table.cells[slot].1;
        if reps.len() <= rep {
            reps.resize(rep + 1, Vec::new());
        }
        let trace = &mut reps[rep];
        if epoch == 0 || epoch != trace.len() + 1 {
            return Err(parse_err(format!("epoch {epoch} out of sequence")));
        }
        trace.push(flag);
    }
    Ok(table)
}

/// A parsed grid file: scalar settings plus swept `d`, `q` and `n` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: RunConfig,
    pub d: Vec<usize>,
    pub q: Vec<usize>,
    pub n: Vec<usize>,
}

impl GridSpec {
    pub fn from_base(base: RunConfig) -> Self {
        Self {
            d: vec![base.spec.d],
            q: vec![base.q],
            n: vec![base.n_users],
            base,
        }
    }

    /// Parses `key = value` lines over `base`; `#` starts a comment.
    pub fn parse(text: &str, base: RunConfig, path: &Path) -> Result<Self> {
        let mut grid = Self::from_base(base);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let list = |value: &str| -> Result<Vec<usize>> {
                value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|e| err(format!("{key}: {e}")))
                    })
                    .collect()
            };
            let scalar = |value: &str| -> Result<f64> {
                if value.contains(',') {
                    return Err(err(format!("{key} cannot be swept")));
                }
                value.parse::<f64>().map_err(|e| err(format!("{key}: {e}")))
            };
            let count = |value: &str| -> Result<usize> {
                if value.contains(',') {
                    return Err(err(format!("{key} cannot be swept")));
                }
                value
                    .parse::<usize>()
                    .map_err(|e| err(format!("{key}: {e}")))
            };
            let b = &mut grid.base;
            match key {
                "d" => grid.d = list(value)?,
                "q" => grid.q = list(value)?,
                "n" => grid.n = list(value)?,
                "k" => b.spec.k = count(value)?,
                "s0" => b.spec.s0 = count(value)?,
                "decisions" => b.total_decisions = count(value)?,
                "reps" => b.replications = count(value)?,
                "seed" => b.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
                "sigma" => b.spec.sigma = scalar(value)?,
                "h" => b.spec.h = scalar(value)?,
                "b" => b.spec.b = scalar(value)?,
                "x_max" => b.spec.x_max = scalar(value)?,
                "law" => b.spec.covariate_law = value.parse()?,
                "lambda1" => b.overrides.lambda1 = Some(scalar(value)?),
                "lambda2_scale" => b.overrides.lambda2_scale = Some(scalar(value)?),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if grid.d.is_empty() || grid.q.is_empty() || grid.n.is_empty() {
            return Err(Error::InvalidParameter("grid has no cells".into()));
        }
        Ok(grid)
    }

    pub fn cells(&self) -> Vec<RunConfig> {
        let mut cells = Vec::new();
        for &d in &self.d {
            for &q in &self.q {
                for &n in &self.n {
                    let mut c = self.base.clone();
                    c.spec.d = d;
                    c.q = q;
                    c.n_users = n;
                    cells.push(c);
                }
            }
        }
        cells
    }
}
