//! The favorable world at a repetition count `q` small enough to simulate.
//! The theoretical `q0` is in the hundreds of millions there, so these check
//! direction rather than the guarantees themselves.

use teamwork_lasso::diagnostics::{
    audit_sample_set, check_rate_condition, montecarlo_deviation_check, RateClause,
};
use teamwork_lasso::environment::{estimate_assumption_constants, EnvironmentSpec};
use teamwork_lasso::harness::{run_agent_episode, run_grid, AgentOverrides, RunConfig};

fn favorable(q: usize, epochs: usize, reps: usize) -> RunConfig {
    RunConfig {
        spec: EnvironmentSpec {
            sigma: 0.1,
            d: 50,
            s0: 3,
            ..EnvironmentSpec::default()
        },
        q,
        n_users: 4,
        total_decisions: 4 * epochs,
        replications: reps,
        ..RunConfig::default()
    }
}

#[test]
fn good_event_violations_decline() {
    let cfg = RunConfig {
        overrides: AgentOverrides {
            lambda1: Some(0.02),
            ..AgentOverrides::default()
        },
        ..favorable(8, 4096, 20)
    };
    let logs = run_grid(std::slice::from_ref(&cfg)).unwrap().logs;
    let traces: Vec<_> = logs.iter().map(|l| l.good_event_trace()).collect();
    let kq = cfg.spec.k * cfg.q;
    let rows =
        montecarlo_deviation_check(&traces, &[kq * kq, 1024, 2048, 4096], cfg.spec.k).unwrap();
    let freq: Vec<f64> = rows.iter().map(|r| r.violation_frequency).collect();
    assert!(freq[3] < freq[0], "{freq:?}");
    assert!(freq[3] <= 0.5, "{freq:?}");
    assert!(rows.windows(2).all(|w| w[1].bound <= w[0].bound));
}

#[test]
fn teamwork_sets_meet_the_optimal_rate() {
    let cfg = favorable(4, 144, 50);
    let mut passing = 0;
    for rep in 0..cfg.replications {
        let params = cfg.parameters(rep).unwrap();
        let p_star = estimate_assumption_constants(&params, &cfg.spec, 20_000, rep as u64)
            .unwrap()
            .p_star_hat;
        let (_, agent) = run_agent_episode(&cfg, rep).unwrap();
        let ok = agent.state().teamwork_sets.iter().all(|set| {
            let audit = audit_sample_set(set, &params, cfg.spec.h).unwrap();
            !check_rate_condition(&audit, p_star, cfg.spec.d, 0.5)
                .failures
                .contains(&RateClause::OptimalRate)
        });
        passing += usize::from(ok);
    }
    assert!(passing >= 45, "{passing}/50");
}
