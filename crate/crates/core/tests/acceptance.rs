//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use teamwork_lasso::agent::candidate_set;
use teamwork_lasso::diagnostics::{
    audit_sample_set, check_rate_condition, good_event_bound, montecarlo_deviation_check,
};
use teamwork_lasso::environment::{
    compatibility_probe, estimate_assumption_constants, membership_u_w, oracle_arm,
    sample_covariate, EnvironmentSpec,
};
use teamwork_lasso::harness::{
    paper_update_count, run_agent_episode, run_grid, PolicyKind, RunConfig,
};
use teamwork_lasso::lasso::{
    lambda_max, solve_lasso, LassoProblem, RegressionSample, SolverConfig,
};
use teamwork_lasso::scheduler::{c1, c2, c5, derive_constants, EpochMode, TeamworkSchedule};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn update_counts() -> Outcome {
    let expected = [(1, 4968.0), (4, 1224.0), (12, 396.0)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, want) in expected {
        let got = paper_update_count(5000, n, 3);
        let rel = (got - want).abs() / want;
        ok &= rel <= 0.005;
        parts.push(format!("N={n}: {got:.1} vs {want} ({:.3}%)", rel * 100.0));
    }
    outcome(ok, parts.join("; "))
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, lambda_frac: f64) -> LassoProblem {
    let s = d.min(5);
    let beta: Vec<f64> = (0..d)
        .map(|j| {
            if j < s {
                rng.random_range(-2.0..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let samples: Vec<RegressionSample> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                + 0.5 * rng.sample::<f64, _>(StandardNormal);
            RegressionSample::new(x, y)
        })
        .collect();
    let unit = LassoProblem::new(samples, 0.0).expect("valid problem");
    let lambda = lambda_frac * lambda_max(&unit);
    unit.with_lambda(lambda).expect("valid lambda")
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let full = det(a);
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][j] = b[i];
        }
        *o = det(m) / full;
    }
    out
}

fn lasso_correctness() -> Outcome {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_kkt = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let d = rng.random_range(1..=500);
        let frac = rng.random_range(0.01..1.2);
        let problem = random_problem(&mut rng, n, d, frac);
        let est = solve_lasso(&problem, &cfg).expect("solve");
        worst_kkt = worst_kkt.max(est.kkt_residual);
    }
    let mut worst_gap = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(10..=200);
        let problem = random_problem(&mut rng, n, 3, 0.0);
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for s in problem.samples() {
            for i in 0..3 {
                b[i] += s.x[i] * s.y;
                for j in 0..3 {
                    a[i][j] += s.x[i] * s.x[j];
                }
            }
        }
        let exact = solve3(a, b);
        let est = solve_lasso(&problem, &cfg).expect("solve");
        for j in 0..3 {
            worst_gap = worst_gap.max((est.beta[j] - exact[j]).abs());
        }
    }
    outcome(
        worst_kkt <= 1e-6 && worst_gap <= 1e-6,
        format!("max KKT residual {worst_kkt:.2e} over 100 instances; max |beta - normal eq| {worst_gap:.2e} over 50"),
    )
}

fn schedule_exactness() -> Outcome {
    const HORIZON: u64 = 1_000_000;
    let mut layout_errors = Vec::new();
    for k in 1..=10usize {
        for q in 1..=10usize {
            let schedule = TeamworkSchedule::new(k, q).expect("schedule");
            let kq = (k * q) as u64;
            let mut owner = vec![0u8; HORIZON as usize + 1];
            for round in 0..32 {
                for arm in 0..k {
                    for t in schedule.teamwork_round(round, arm) {
                        if t <= HORIZON {
                            owner[t as usize] += 1;
                        }
                    }
                }
            }
            for t in 1..=HORIZON {
                let block = (t - 1) / kq + 1;
                let expected = if block.is_power_of_two() {
                    Some((((t - 1) % kq) / q as u64) as usize)
                } else {
                    None
                };
                let got = match schedule.classify_epoch(t) {
                    EpochMode::Teamwork { arm, .. } => Some(arm),
                    EpochMode::Selfish => None,
                };
                let covered = owner[t as usize];
                if got != expected || covered != u8::from(expected.is_some()) {
                    layout_errors.push(format!("K={k} q={q} t={t}"));
                    break;
                }
            }
        }
    }
    let mut size_errors = Vec::new();
    for k in 1..=3usize {
        for q in 1..=3usize {
            let schedule = TeamworkSchedule::new(k, q).expect("schedule");
            let kq = (k * q) as u64;
            let n = 1.0;
            for arm in 0..k {
                let mut first_bad = None;
                for t in (kq * kq).max(1)..=100_000 {
                    let count = schedule.teamwork_sample_count(t, arm, 1) as f64;
                    let ln_t = (t as f64).ln();
                    let lo = 0.5 * n * q as f64 * ln_t;
                    let hi = 6.0 * n * q as f64 * ln_t;
                    if count < lo || count > hi {
                        first_bad = Some(format!(
                            "K={k} q={q} arm={arm} t={t}: |D|={count} not in [{lo:.3}, {hi:.3}]"
                        ));
                        break;
                    }
                }
                size_errors.extend(first_bad);
            }
        }
    }
    let detail = format!(
        "layout: {} violations{}; team size: {} violations{}",
        layout_errors.len(),
        layout_errors
            .first()
            .map(|e| format!(" (first {e})"))
            .unwrap_or_default(),
        size_errors.len(),
        if size_errors.is_empty() {
            String::new()
        } else {
            format!(" ({})", size_errors.join(", "))
        },
    );
    outcome(layout_errors.is_empty() && size_errors.is_empty(), detail)
}

fn constants_table() -> Outcome {
    let spec = EnvironmentSpec {
        s0: 5,
        sigma: 1.0,
        x_max: 1.0,
        ..EnvironmentSpec::default()
    };
    let (a, b, c) = (c1(&spec, 1.0), c2(&spec, 1.0), c5(1, 1));
    let schedule = TeamworkSchedule::new(1, 1).expect("schedule");
    let one_arm = EnvironmentSpec {
        k: 1,
        ..spec.clone()
    };
    let table = derive_constants(&one_arm, &schedule, 1, 1.0, 1.0, 1.0).expect("constants");
    let ok = a == 1.0 / 12800.0
        && b == 1.0 / 1280.0
        && c == 119
        && table.c1 == a
        && table.c2 == b
        && table.c5 == 119;
    outcome(
        ok,
        format!("C1 = 1/{}, C2 = 1/{}, C5 = {c}", 1.0 / a, 1.0 / b),
    )
}

fn candidate_lemmas() -> Outcome {
    let spec = EnvironmentSpec::default();
    let config = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut misses, mut not_singleton, mut dominated) = (0, 0, 0);
    for rep in 0..4 {
        let params = config.parameters(rep).expect("params");
        for _ in 0..25_000 {
            let x = sample_covariate(&spec, &mut rng);
            let cands = candidate_set(&x, &params.betas, spec.h);
            if !cands.contains(&oracle_arm(&params, &x)) {
                misses += 1;
            }
            if let Some(w) = membership_u_w(&params, &x, spec.h) {
                dominated += 1;
                if cands != [w] {
                    not_singleton += 1;
                }
            }
        }
    }
    outcome(
        misses == 0 && not_singleton == 0,
        format!("100000 draws: {misses} without w*, {not_singleton} of {dominated} dominated draws not a singleton"),
    )
}

fn regret_behavior() -> Outcome {
    let config = RunConfig {
        replications: 20,
        ..RunConfig::default()
    };
    let result = run_grid(std::slice::from_ref(&config)).expect("grid");
    let epochs = config.epochs();
    let decile = epochs / 10;
    let mut monotone = true;
    let (mut first, mut last) = (0.0, 0.0);
    for log in &result.logs {
        monotone &= log
            .records
            .windows(2)
            .all(|w| w[1].cum_regret >= w[0].cum_regret);
        monotone &= log.records[0].cum_regret >= 0.0;
        first += log.records[decile - 1].cum_regret;
        last += log.records[epochs - 1].cum_regret - log.records[epochs - 1 - decile].cum_regret;
    }
    let ratio = last / first;
    let oracle = run_grid(&[RunConfig {
        policy: PolicyKind::Oracle,
        ..config
    }])
    .expect("oracle grid");
    let oracle_max = oracle
        .logs
        .iter()
        .map(|l| l.summary.cumulative_regret)
        .fold(0.0f64, f64::max);
    let reps = result.logs.len() as f64;
    outcome(
        monotone && ratio < 0.3 && oracle_max == 0.0,
        format!(
            "T={epochs}: first-decile {:.4}/epoch, last-decile {:.4}/epoch, ratio {ratio:.3} (< 0.30); non-decreasing {monotone}; oracle max regret {oracle_max}",
            first / reps / decile as f64,
            last / reps / decile as f64,
        ),
    )
}

/// The favorable world and its literal teamwork repetition count `4 ceil(q0)`.
struct Favorable {
    config: RunConfig,
    p_star: f64,
    q0: u64,
    q: u64,
    c2: f64,
}

fn favorable() -> Favorable {
    let spec = EnvironmentSpec {
        sigma: 0.1,
        d: 50,
        s0: 3,
        ..EnvironmentSpec::default()
    };
    let config = RunConfig {
        spec: spec.clone(),
        replications: 50,
        ..RunConfig::default()
    };
    let params = config.parameters(0).expect("params");
    let est = estimate_assumption_constants(&params, &spec, 100_000, 7).expect("estimates");
    let phi0 = compatibility_probe(&params, &spec, 100_000, 2000, 7).expect("probe");
    let schedule = TeamworkSchedule::new(spec.k, 1).expect("schedule");
    let c = derive_constants(
        &spec,
        &schedule,
        config.n_users,
        est.p_star_hat,
        phi0,
        est.margin_c0_hat,
    )
    .expect("constants");
    Favorable {
        config,
        p_star: est.p_star_hat,
        q0: c.q0,
        q: c.q0.saturating_mul(4),
        c2: c.c2,
    }
}

/// Largest number of epochs per replication this suite will simulate.
const EPOCH_BUDGET: u128 = 200_000;

fn good_event_trend(world: &Favorable) -> Outcome {
    let traces = vec![vec![Some(true); 64], vec![Some(false); 64]];
    let checkpoints: Vec<usize> = (1..=64).collect();
    let rows =
        montecarlo_deviation_check(&traces, &checkpoints, world.config.spec.k).expect("table");
    let bound_exact = rows.iter().all(|r| {
        r.bound == f64::min(1.0, 5.0 * 3.0 / (r.epoch as f64).powi(4))
            && r.bound == good_event_bound(r.epoch, 3)
    });

    let k = world.config.spec.k as u128;
    let first_checkpoint = (k * world.q as u128).pow(2);
    if first_checkpoint > EPOCH_BUDGET {
        return outcome(
            false,
            format!(
                "p*={:.4}, q0={}, q=4*ceil(q0)={}: first checkpoint (Kq)^2 = {first_checkpoint:.3e} epochs exceeds the {EPOCH_BUDGET} budget; bound column exact: {bound_exact}",
                world.p_star, world.q0, world.q
            ),
        );
    }
    let q = world.q as usize;
    let epochs = first_checkpoint as usize;
    let config = RunConfig {
        q,
        total_decisions: epochs * world.config.n_users,
        ..world.config.clone()
    };
    let result = run_grid(&[config]).expect("grid");
    let traces: Vec<_> = result.logs.iter().map(|l| l.good_event_trace()).collect();
    let rows = montecarlo_deviation_check(&traces, &[epochs], world.config.spec.k).expect("table");
    let freq = rows[0].violation_frequency;
    outcome(
        freq <= 0.05 && bound_exact,
        format!(
            "q={q}: violation frequency {freq:.3} at t={epochs}; bound column exact: {bound_exact}"
        ),
    )
}

fn rate_audit(world: &Favorable) -> Outcome {
    let k = world.config.spec.k as u128;
    let first_checkpoint = (k * world.q as u128).pow(2);
    let d = world.config.spec.d as f64;
    let required = 6.0 * d.ln() / (world.p_star * world.c2 * world.c2);
    // teamwork samples per arm at t = (Kq)^2, at most 6 N q ln t
    let available =
        6.0 * world.config.n_users as f64 * world.q as f64 * (first_checkpoint as f64).ln();
    if first_checkpoint > EPOCH_BUDGET {
        return outcome(
            false,
            format!(
                "r=p*={:.4}, C2={:.3e}: size clause needs |A| >= {required:.3e}; first audit epoch (Kq)^2 = {first_checkpoint:.3e} exceeds the {EPOCH_BUDGET} budget (teamwork set then holds <= {available:.3e})",
                world.p_star, world.c2
            ),
        );
    }
    let q = world.q as usize;
    let epochs = first_checkpoint as usize;
    let config = RunConfig {
        q,
        total_decisions: epochs * world.config.n_users,
        ..world.config.clone()
    };
    let mut passing = 0;
    for rep in 0..config.replications {
        let params = config.parameters(rep).expect("params");
        let (_, agent) = run_agent_episode(&config, rep).expect("episode");
        let ok = agent.state().teamwork_sets.iter().all(|set| {
            let audit = audit_sample_set(set, &params, config.spec.h).expect("audit");
            check_rate_condition(&audit, world.p_star, config.spec.d, world.c2).passed
        });
        passing += usize::from(ok);
    }
    let share = passing as f64 / config.replications as f64;
    outcome(
        share >= 0.9,
        format!(
            "q={q}: {passing}/{} replications pass at t={epochs}",
            config.replications
        ),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |name: &str, run: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = run();
        all &= o.passed;
        println!(
            "{} criterion {name} [{:.1}s]: {}",
            if o.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report("1 update counts", &update_counts);
    report("2 lasso correctness", &lasso_correctness);
    report("3 schedule exactness", &schedule_exactness);
    report("4 constants table", &constants_table);
    report("5 candidate-set lemmas", &candidate_lemmas);
    report("6 regret behavior", &regret_behavior);
    let world = favorable();
    report("7 good-event trend", &|| good_event_trend(&world));
    report("8 rate-condition audit", &|| rate_audit(&world));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
