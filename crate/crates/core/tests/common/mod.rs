#![allow(dead_code)]

use etlqg_core::covariance::{build_tables, GramianTable};
use etlqg_core::lqg::solve_riccati;
use etlqg_core::model::Penalty;
use etlqg_core::{Problem, RiccatiSolution};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `MMᵀ/n + shift·I`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = normal_matrix(rng, n, n);
    let s = &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * shift;
    (&s + s.transpose()) * 0.5
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random plant with spectral radius drawn from `[0.5, 1.3]`.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize, p: f64) -> Problem {
    let mut a = normal_matrix(rng, n, n);
    let rho = spectral_radius(&a);
    let target = rng.random_range(0.5..1.3);
    if rho > 1e-9 {
        a *= target / rho;
    }
    let prob = Problem {
        a,
        b: normal_matrix(rng, n, m),
        q: random_psd(rng, n, 0.1),
        r: random_psd(rng, m, 0.5),
        q_terminal: random_psd(rng, n, 0.1),
        sigma_w: random_psd(rng, n, 0.0),
        x0_mean: normal_vector(rng, n),
        sigma0: random_psd(rng, n, 0.0),
        horizon,
        p,
        penalty: Penalty::Single(1.0),
    };
    prob.validate().expect("random problem is valid");
    prob
}

/// Window instance: problem, Riccati solution, start, innovation and the table
/// with `λ` scaled to the table's mass so that decisions are non-trivial.
pub struct Window {
    pub prob: Problem,
    pub sol: RiccatiSolution,
    pub k: usize,
    pub e_s: DVector<f64>,
    pub table: GramianTable,
}

pub fn random_window(rng: &mut ChaCha8Rng, max_n: usize, horizon: usize, p: f64) -> Window {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=n.min(2));
    let extra = rng.random_range(0..=3);
    let total = horizon + extra;
    let prob0 = random_problem(rng, n, m, total, p);
    let sol = solve_riccati(&prob0).unwrap();
    let k = extra;
    let e_s = normal_vector(rng, n) * rng.random_range(0.0..3.0);
    let raw = build_tables(&prob0, &sol, k, &e_s);
    let scale = raw.total() / horizon as f64;
    let lambda = (scale * rng.random_range(0.02..1.5)).max(1e-6);
    let prob = prob0.with_penalty(Penalty::Single(lambda)).unwrap();
    let table = raw.with_lambda(lambda);
    Window {
        prob,
        sol,
        k,
        e_s,
        table,
    }
}

pub fn random_schedule(rng: &mut ChaCha8Rng, len: usize) -> etlqg_core::Schedule {
    etlqg_core::Schedule::new((0..len).map(|_| rng.random_bool(0.5)).collect())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn assert_rel(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0),
        "{what}: {a} vs {b}"
    );
}

/// Explicit-inverse backward recursion, independent of the library path.
pub fn textbook_riccati(prob: &Problem) -> Vec<DMatrix<f64>> {
    let mut p = prob.q_terminal.clone();
    let mut out = vec![p.clone()];
    for _ in 0..prob.horizon {
        let bt_p = prob.b.transpose() * &p;
        let s = &prob.r + &bt_p * &prob.b;
        let s_inv = s.try_inverse().expect("invertible");
        let k = &s_inv * &bt_p * &prob.a;
        p = prob.a.transpose() * &p * &prob.a + &prob.q - prob.a.transpose() * p.transpose() * &prob.b * k;
        p = (&p + p.transpose()) * 0.5;
        out.push(p.clone());
    }
    out.reverse();
    out
}
