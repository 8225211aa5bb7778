mod common;

use common::*;
use etlqg_core::covariance::{
    closed_form_cov, propagate_recursive, recursive_cost, schedule_cost,
};
use etlqg_core::linalg::{is_psd, max_abs, PSD_RTOL};
use etlqg_core::Schedule;
use nalgebra::DMatrix;
use proptest::prelude::*;

const P_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn elementwise_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

#[test]
fn random_n3_t12_matches_recursion() {
    let mut rng = rng(3);
    let prob = random_problem(&mut rng, 3, 2, 12, 0.37);
    let schedule = random_schedule(&mut rng, 12);
    let e_s = normal_vector(&mut rng, 3);
    let rec = propagate_recursive(&prob, &schedule, &e_s);
    for (t, s) in rec.iter().enumerate() {
        let closed = closed_form_cov(&prob, &schedule, &e_s, t);
        assert!(elementwise_close(&closed, s, 1e-9), "t={t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn closed_form_equals_recursion(seed in any::<u64>(), n in 1usize..=4, horizon in 1usize..=20, pi in 0usize..10) {
        let mut rng = rng(seed);
        let prob = random_problem(&mut rng, n, 1, horizon, P_GRID[pi]);
        let schedule = random_schedule(&mut rng, horizon);
        let e_s = normal_vector(&mut rng, n);
        let rec = propagate_recursive(&prob, &schedule, &e_s);
        for (t, s) in rec.iter().enumerate() {
            prop_assert!(is_psd(s, PSD_RTOL));
            prop_assert!(max_abs(&(s - s.transpose())) == 0.0);
            let closed = closed_form_cov(&prob, &schedule, &e_s, t);
            prop_assert!(elementwise_close(&closed, s, 1e-9));
        }
    }

    #[test]
    fn table_cost_equals_trace_of_recursion(seed in any::<u64>(), horizon in 1usize..=12, pi in 0usize..10) {
        let mut rng = rng(seed);
        let w = random_window(&mut rng, 4, horizon, P_GRID[pi]);
        let schedule = random_schedule(&mut rng, horizon);
        let from_table = schedule_cost(&w.table, &schedule, w.prob.p);
        let from_rec = recursive_cost(&w.prob, &w.sol, w.k, &schedule, &w.e_s);
        prop_assert!(rel_err(from_table, from_rec) <= 1e-9);
    }

    #[test]
    fn cost_non_increasing_in_p(seed in any::<u64>(), horizon in 1usize..=12) {
        let mut rng = rng(seed);
        let w = random_window(&mut rng, 3, horizon, 0.5);
        let schedule = random_schedule(&mut rng, horizon);
        let costs: Vec<f64> = P_GRID.iter().map(|&p| schedule_cost(&w.table, &schedule, p)).collect();
        for pair in costs.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs());
        }
    }

    #[test]
    fn extra_attempt_never_hurts_without_penalty(seed in any::<u64>(), horizon in 1usize..=12, pi in 0usize..10) {
        let mut rng = rng(seed);
        let w = random_window(&mut rng, 3, horizon, 0.5);
        let table = w.table.with_lambda(0.0);
        let p = P_GRID[pi];
        let base = random_schedule(&mut rng, horizon);
        let c0 = schedule_cost(&table, &base, p);
        for t in (0..horizon).filter(|&t| !base.get(t)) {
            let mut more = base.clone();
            more.set(t, true);
            prop_assert!(schedule_cost(&table, &more, p) <= c0 + 1e-12 * c0.abs());
        }
    }
}

#[test]
fn lossless_cost_is_indicator_form() {
    let mut rng = rng(5);
    for _ in 0..20 {
        let w = random_window(&mut rng, 3, 8, 1.0);
        let s = random_schedule(&mut rng, 8);
        let mut indicator = w.table.lambda() * s.attempts() as f64;
        for t in 0..8 {
            for tau in 0..=t {
                if s.counter(t, tau) == 0 {
                    indicator += w.table.g(t, tau);
                }
            }
        }
        assert_rel(schedule_cost(&w.table, &s, 1.0), indicator, 1e-12, "indicator");
        assert_rel(
            schedule_cost(&w.table, &Schedule::ones(8), 1.0),
            w.table.lambda() * 8.0,
            1e-12,
            "all ones",
        );
    }
}
