mod common;

use common::*;
use etlqg_core::lqg::solve_riccati;
use etlqg_core::model::Penalty;
use etlqg_core::sim::{
    aggregate, run_seeds, sweep_p, Policy, SimContext, SimOptions, StepSource,
};
use etlqg_core::Problem;

fn boeing_ctx() -> SimContext {
    SimContext::from_problem(&Problem::boeing747()).unwrap()
}

#[test]
fn record_invariants_hold() {
    let ctx = boeing_ctx();
    for policy in [Policy::Mpc, Policy::OneShot] {
        for rec in run_seeds(&ctx, policy, 10, 1, 1, SimOptions::default()) {
            let t = ctx.prob.horizon;
            assert_eq!(rec.x.len(), t + 1);
            assert_eq!(rec.u.len(), t);
            assert!(rec.delta.iter().zip(&rec.theta).all(|(&d, &th)| !d || th));
            assert_eq!(rec.attempts, rec.theta.iter().filter(|&&b| b).count());
            assert_eq!(rec.successes, rec.delta.iter().filter(|&&b| b).count());
            let hits = rec.certificate_hits;
            assert_eq!(hits.skip + hits.attempt + hits.milp, t);
            assert_rel(rec.total, rec.lqg_cost + rec.comm_cost, 1e-9, "total");
            assert_rel(rec.comm_cost, 100.0 * rec.attempts as f64, 1e-12, "comm");
        }
    }
}

#[test]
fn estimator_error_resets_on_delivery() {
    let ctx = boeing_ctx();
    for rec in run_seeds(&ctx, Policy::Mpc, 20, 100, 1, SimOptions::default()) {
        for k in 0..ctx.prob.horizon {
            if rec.delta[k] {
                assert!(rec.err[k].iter().all(|&v| v == 0.0), "seed {} k {k}", rec.seed);
            } else {
                assert_eq!(rec.err[k], rec.e_s[k]);
            }
        }
    }
}

#[test]
fn delivery_rate_within_binomial_band() {
    let ctx = boeing_ctx();
    let runs = run_seeds(&ctx, Policy::OneShot, 100, 1, 1, SimOptions::default());
    let attempts: usize = runs.iter().map(|r| r.attempts).sum();
    let successes: usize = runs.iter().map(|r| r.successes).sum();
    let p = ctx.prob.p;
    let n = attempts as f64;
    let rate = successes as f64 / n;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((rate - p).abs() <= 3.0 * sigma, "rate {rate} over {attempts} attempts");
}

#[test]
fn runs_are_reproducible_and_worker_count_free() {
    let ctx = boeing_ctx();
    let a = run_seeds(&ctx, Policy::Mpc, 6, 40, 1, SimOptions::default());
    let b = run_seeds(&ctx, Policy::Mpc, 6, 40, 3, SimOptions::default());
    assert_eq!(a, b);
    let agg_a = aggregate(0.7, &a);
    let agg_b = aggregate(0.7, &b);
    assert_eq!(agg_a, agg_b);
    assert!(agg_a.total.min <= agg_a.total.mean && agg_a.total.mean <= agg_a.total.max);
}

#[test]
fn split_penalty_collapses_to_effective_charge() {
    let base = Problem::boeing747();
    let split = base
        .with_penalty(Penalty::Split {
            fail: 50.0,
            success: 150.0,
        })
        .unwrap();
    let single = base.with_penalty(Penalty::Single(120.0)).unwrap();
    assert_rel(split.lambda(), 120.0, 1e-15, "effective lambda");
    let ctx_split = SimContext::from_problem(&split).unwrap();
    let ctx_single = SimContext::from_problem(&single).unwrap();
    let runs_split = run_seeds(&ctx_split, Policy::Mpc, 100, 1, 1, SimOptions::default());
    let runs_single = run_seeds(&ctx_single, Policy::Mpc, 100, 1, 1, SimOptions::default());
    let mut gaps = Vec::new();
    for (s, o) in runs_split.iter().zip(&runs_single) {
        assert_eq!(s.theta, o.theta);
        assert_eq!(s.delta, o.delta);
        assert_eq!(s.x, o.x);
        assert_eq!(s.u, o.u);
        let ledger = 50.0 * (s.attempts - s.successes) as f64 + 150.0 * s.successes as f64;
        assert_rel(s.comm_cost, ledger, 1e-12, "ledger");
        gaps.push(s.comm_cost - 120.0 * s.attempts as f64);
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / n.sqrt(), "mean gap {mean}, sd {sd}");
}

#[test]
fn disabling_certificates_keeps_strict_decisions() {
    let mut rng = rng(77);
    let mut contexts = vec![boeing_ctx()];
    for _ in 0..4 {
        let mut prob = random_problem(&mut rng, 3, 1, 14, 0.6);
        let sol = solve_riccati(&prob).unwrap();
        let scale = sol.w[0].trace() * prob.sigma_w.trace().max(1e-3);
        prob = prob.with_penalty(Penalty::Single(scale * 0.3)).unwrap();
        contexts.push(SimContext::from_problem(&prob).unwrap());
    }
    let off = SimOptions {
        use_certificates: false,
    };
    for ctx in &contexts {
        for seed in 1..=8 {
            let with = ctx.run(Policy::Mpc, seed, SimOptions::default());
            let without = ctx.run(Policy::Mpc, seed, off);
            assert!(without.source.iter().all(|&s| s == StepSource::Milp));
            assert_eq!(with.theta, without.theta, "seed {seed}");
            assert_eq!(with.x, without.x);
        }
    }
}

#[test]
fn quiet_plant_never_transmits() {
    let mut prob = Problem::boeing747();
    prob.sigma0 *= 0.0;
    prob.sigma_w *= 0.0;
    prob.x0_mean *= 0.0;
    let ctx = SimContext::from_problem(&prob).unwrap();
    for policy in [Policy::Mpc, Policy::OneShot] {
        let rec = ctx.run(policy, 5, SimOptions::default());
        assert_eq!(rec.attempts, 0);
        assert_eq!(rec.total, 0.0);
        assert!(rec.x.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        if policy == Policy::Mpc {
            assert_eq!(rec.certificate_hits.skip, prob.horizon);
        }
    }
}

#[test]
fn lossless_sweep_with_prohibitive_penalty() {
    let prob = Problem::boeing747()
        .with_horizon(15)
        .unwrap()
        .with_penalty(Penalty::Single(1e12))
        .unwrap();
    let points = sweep_p(&prob, &[1.0], 5, 1, 1).unwrap();
    let pt = &points[0];
    assert_eq!(pt.mpc.attempts.mean, 0.0);
    assert_eq!(pt.oneshot.attempts.mean, 0.0);
    assert_eq!(pt.mpc.total, pt.oneshot.total);
}
