use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use teamwork_lasso::diagnostics::montecarlo_deviation_check;
use teamwork_lasso::environment::{
    compatibility_probe, estimate_assumption_constants, CovariateLaw, EnvironmentSpec,
};
use teamwork_lasso::harness::{
    read_traces, run_grid, write_csv, AgentOverrides, GridSpec, PolicyKind, RunConfig,
};
use teamwork_lasso::scheduler::{derive_constants, TeamworkSchedule};
use teamwork_lasso::{Error, Result};

#[derive(Parser)]
#[command(
    name = "teamwork-lasso",
    version,
    about = "Batched teamwork LASSO bandit simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated episodes and write per-epoch and summary CSV.
    Simulate(SimulateArgs),
    /// Good-event Monte-Carlo table from a simulate CSV.
    Verify(VerifyArgs),
    /// Print the theory constants for a world.
    Constants(ConstantsArgs),
}

#[derive(Args, Clone)]
struct WorldArgs {
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    s0: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    h: f64,
    #[arg(long, default_value_t = 5.0)]
    b: f64,
    #[arg(long = "x-max", default_value_t = 1.0)]
    x_max: f64,
    /// uniform_box or truncated_gaussian
    #[arg(long, default_value = "uniform_box")]
    law: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WorldArgs {
    fn spec(&self) -> Result<EnvironmentSpec> {
        let spec = EnvironmentSpec {
            d: self.d,
            k: self.k,
            s0: self.s0,
            x_max: self.x_max,
            b: self.b,
            sigma: self.sigma,
            h: self.h,
            covariate_law: self.law.parse::<CovariateLaw>()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// User-level decisions per replication.
    #[arg(long, default_value_t = 5000)]
    decisions: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long = "lambda2-scale")]
    lambda2_scale: Option<f64>,
    /// Play the true optimal arm instead of the bandit.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
    /// Grid file of `key = value` lines; lists in d, q, n are swept.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Comma-separated epochs; defaults to powers of two from (Kq)^2 plus the last epoch.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<usize>,
}

#[derive(Args)]
struct ConstantsArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Use this p_* instead of estimating it.
    #[arg(long = "p-star")]
    p_star: Option<f64>,
    /// Use this compatibility constant instead of probing it.
    #[arg(long)]
    phi0: Option<f64>,
    /// Covariate draws for the probes.
    #[arg(long, default_value_t = 100_000)]
    m: usize,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let base = RunConfig {
        spec: args.world.spec()?,
        n_users: args.n,
        q: args.q,
        total_decisions: args.decisions,
        replications: args.reps,
        seed: args.world.seed,
        overrides: AgentOverrides {
            lambda1: args.lambda1,
            lambda2_scale: args.lambda2_scale,
            h: None,
        },
        policy: if args.oracle {
            PolicyKind::Oracle
        } else {
            PolicyKind::TeamworkLasso
        },
        ..RunConfig::default()
    };
    let grid = match &args.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            GridSpec::parse(&text, base, path)?
        }
        None => GridSpec::from_base(base),
    };
    let result = run_grid(&grid.cells())?;
    write_csv(&result.logs, &args.out)?;
    println!("cell\tmean_regret\tmin_regret\tmax_regret\tmean_updates");
    for s in &result.summaries {
        println!(
            "{}\t{:.3}\t{:.3}\t{:.3}\t{:.1}",
            s.cell, s.mean_regret, s.min_regret, s.max_regret, s.mean_updates
        );
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let table = read_traces(&args.input)?;
    let kq = args.k * args.q;
    let out_err = |source| Error::Io {
        path: args.out.clone(),
        source,
    };
    let mut text = String::from("cell,epoch,violation_frequency,bound\n");
    for (cell, traces) in &table.cells {
        let last = traces.iter().map(Vec::len).min().unwrap_or(0);
        let checkpoints = if args.checkpoints.is_empty() {
            default_checkpoints(kq * kq, last)
        } else {
            args.checkpoints.clone()
        };
        for row in montecarlo_deviation_check(traces, &checkpoints, args.k)? {
            text.push_str(&format!(
                "{cell},{},{},{}\n",
                row.epoch, row.violation_frequency, row.bound
            ));
        }
    }
    fs::write(&args.out, text).map_err(out_err)
}

fn default_checkpoints(first: usize, last: usize) -> Vec<usize> {
    let mut points: Vec<usize> = (0..usize::BITS)
        .map(|i| 1usize << i)
        .take_while(|&t| t <= last)
        .filter(|&t| t >= first)
        .collect();
    if last >= first.max(1) && points.last() != Some(&last) {
        points.push(last);
    }
    points
}

fn constants(args: ConstantsArgs) -> Result<()> {
    let spec = args.world.spec()?;
    let schedule = TeamworkSchedule::new(spec.k, args.q)?;
    let config = RunConfig {
        spec: spec.clone(),
        seed: args.world.seed,
        ..RunConfig::default()
    };
    let params = config.parameters(0)?;
    let estimates = estimate_assumption_constants(&params, &spec, args.m, args.world.seed)?;
    let p_star = args.p_star.unwrap_or(estimates.p_star_hat);
    let phi0 = match args.phi0 {
        Some(v) => v,
        None => compatibility_probe(&params, &spec, args.m, 2000, args.world.seed)?,
    };
    let c = derive_constants(
        &spec,
        &schedule,
        args.n,
        p_star,
        phi0,
        estimates.margin_c0_hat,
    )?;
    print!("{}", c.to_lines());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Constants(a) => constants(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
