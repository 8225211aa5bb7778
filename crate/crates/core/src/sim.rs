//! Closed-loop simulation of the receding-horizon scheduler.
//!
//! Randomness comes from ChaCha20 seeded with the run seed and split into
//! three streams so that runs with different policies (or different `p`, or
//! split penalties) see the same realizations:
//!
//! | stream | draws |
//! |--------|-------|
//! | 0 | initial state, `n` standard normals |
//! | 1 | process noise, `n` standard normals per step, steps `0..T` |
//! | 2 | channel, one uniform `u_k` per step; an attempt at `k` is delivered iff `u_k < p` |

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::{GramianTable, NoiseGramians, Schedule};
use crate::error::Result;
use crate::linalg::{psd_factor, quad_form};
use crate::lqg::{solve_riccati, RiccatiSolution};
use crate::model::Problem;
use crate::scheduler::{certify, solve_bnb, Decision};

pub const STREAM_INITIAL: u64 = 0;
pub const STREAM_NOISE: u64 = 1;
pub const STREAM_CHANNEL: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Re-plan at every step, short-circuiting with one-step certificates.
    Mpc,
    /// Plan the whole horizon once at `k = 0` and follow it open-loop.
    OneShot,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Mpc => "MPC",
            Policy::OneShot => "ONE-SHOT",
        }
    }
}

/// What decided `θ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSource {
    Skip,
    Attempt,
    Milp,
}

impl StepSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepSource::Skip => "skip",
            StepSource::Attempt => "attempt",
            StepSource::Milp => "milp",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CertificateHits {
    pub skip: usize,
    pub attempt: usize,
    pub milp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Disable to solve the window problem at every MPC step.
    pub use_certificates: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            use_certificates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub policy: Policy,
    /// States `x_0..x_T`.
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub theta: Vec<bool>,
    pub delta: Vec<bool>,
    pub e_s: Vec<DVector<f64>>,
    /// Controller estimation error `x_k - x̂_k`.
    pub err: Vec<DVector<f64>>,
    pub source: Vec<StepSource>,
    /// `‖x_k‖²_Q + ‖u_k‖²_R` for `k < T` (terminal cost not included).
    pub stage_cost: Vec<f64>,
    pub lqg_cost: f64,
    pub comm_cost: f64,
    pub total: f64,
    pub successes: usize,
    pub attempts: usize,
    pub certificate_hits: CertificateHits,
    pub solver_nodes: u64,
}

/// Quantities shared by every run of one problem.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub prob: Problem,
    pub sol: RiccatiSolution,
    noise: NoiseGramians,
    x0_factor: DMatrix<f64>,
    w_factor: DMatrix<f64>,
}

impl SimContext {
    pub fn new(prob: &Problem, sol: &RiccatiSolution) -> Self {
        SimContext {
            prob: prob.clone(),
            sol: sol.clone(),
            noise: NoiseGramians::new(prob, sol),
            x0_factor: psd_factor(&prob.sigma0),
            w_factor: psd_factor(&prob.sigma_w),
        }
    }

    pub fn from_problem(prob: &Problem) -> Result<Self> {
        let sol = solve_riccati(prob)?;
        Ok(Self::new(prob, &sol))
    }

    fn normals(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    pub fn run(&self, policy: Policy, seed: u64, opts: SimOptions) -> RunRecord {
        let prob = &self.prob;
        let sol = &self.sol;
        let n = prob.n();
        let horizon = prob.horizon;
        let lambda = prob.lambda();

        let mut rng0 = Self::rng(seed, STREAM_INITIAL);
        let mut rng_w = Self::rng(seed, STREAM_NOISE);
        let mut rng_ch = Self::rng(seed, STREAM_CHANNEL);
        let x0 = &prob.x0_mean + &self.x0_factor * Self::normals(&mut rng0, n);
        let noise: Vec<DVector<f64>> = (0..horizon)
            .map(|_| &self.w_factor * Self::normals(&mut rng_w, n))
            .collect();
        let channel: Vec<f64> = (0..horizon).map(|_| rng_ch.random::<f64>()).collect();

        let mut rec = RunRecord {
            seed,
            policy,
            x: Vec::with_capacity(horizon + 1),
            u: Vec::with_capacity(horizon),
            theta: Vec::with_capacity(horizon),
            delta: Vec::with_capacity(horizon),
            e_s: Vec::with_capacity(horizon),
            err: Vec::with_capacity(horizon),
            source: Vec::with_capacity(horizon),
            stage_cost: Vec::with_capacity(horizon),
            lqg_cost: 0.0,
            comm_cost: 0.0,
            total: 0.0,
            successes: 0,
            attempts: 0,
            certificate_hits: CertificateHits::default(),
            solver_nodes: 0,
        };

        let mut x = x0;
        // Controller-side one-step prediction of x_k.
        let mut prediction = prob.x0_mean.clone();
        // Latest full-window plan, indexed by absolute time from `plan_start`.
        let mut plan: Option<(usize, Schedule)> = None;

        for k in 0..horizon {
            let e_s = &x - &prediction;
            let (theta, source) = match policy {
                Policy::OneShot => {
                    if plan.is_none() {
                        let res = self.solve_window(0, &e_s, None);
                        rec.solver_nodes += res.1;
                        plan = Some((0, res.0));
                    }
                    let (_, sched) = plan.as_ref().expect("plan computed at k = 0");
                    (sched.get(k), StepSource::Milp)
                }
                Policy::Mpc => {
                    let decision = if opts.use_certificates {
                        certify(&e_s, &sol.gamma[k], &sol.w[k], prob.p, lambda).decision
                    } else {
                        Decision::Ambiguous
                    };
                    match decision {
                        Decision::Attempt => (true, StepSource::Attempt),
                        Decision::Skip => (false, StepSource::Skip),
                        Decision::Ambiguous => {
                            let hint = plan.as_ref().and_then(|(start, s)| {
                                let offset = k - start;
                                (offset < s.len())
                                    .then(|| Schedule::new(s.as_slice()[offset..].to_vec()))
                            });
                            let (sched, nodes) = self.solve_window(k, &e_s, hint.as_ref());
                            rec.solver_nodes += nodes;
                            let first = sched.get(0);
                            plan = Some((k, sched));
                            (first, StepSource::Milp)
                        }
                    }
                }
            };
            match source {
                StepSource::Skip => rec.certificate_hits.skip += 1,
                StepSource::Attempt => rec.certificate_hits.attempt += 1,
                StepSource::Milp => rec.certificate_hits.milp += 1,
            }

            let delivered = theta && channel[k] < prob.p;
            let x_hat = if delivered { x.clone() } else { prediction.clone() };
            let u = -(&sol.l[k] * &x_hat);
            let stage = quad_form(&prob.q, &x) + quad_form(&prob.r, &u);
            if theta {
                rec.attempts += 1;
                rec.comm_cost += prob.penalty.charge(delivered);
            }
            if delivered {
                rec.successes += 1;
            }
            rec.lqg_cost += stage;

            let x_next = &prob.a * &x + &prob.b * &u + &noise[k];
            prediction = &prob.a * &x_hat + &prob.b * &u;

            rec.err.push(&x - &x_hat);
            rec.e_s.push(e_s);
            rec.theta.push(theta);
            rec.delta.push(delivered);
            rec.source.push(source);
            rec.stage_cost.push(stage);
            rec.u.push(u);
            rec.x.push(std::mem::replace(&mut x, x_next));
        }
        rec.lqg_cost += quad_form(&prob.q_terminal, &x);
        rec.x.push(x);
        rec.total = rec.lqg_cost + rec.comm_cost;
        rec
    }

    fn solve_window(&self, k: usize, e_s: &DVector<f64>, hint: Option<&Schedule>) -> (Schedule, u64) {
        let table = GramianTable::build(&self.noise, &self.sol, &self.prob.a, k, e_s, self.prob.lambda());
        let res = solve_bnb(&table, self.prob.p, hint);
        (res.schedule, res.nodes_explored)
    }
}

/// One trajectory under `policy`. Identical inputs give identical records.
pub fn simulate_run(prob: &Problem, sol: &RiccatiSolution, policy: Policy, seed: u64) -> RunRecord {
    SimContext::new(prob, sol).run(policy, seed, SimOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl MeanStd {
    /// Sample statistics accumulated in the given order; `std = 0` for one value.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanStd {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub policy: Policy,
    pub p: f64,
    pub n_seeds: usize,
    pub successes: MeanStd,
    pub attempts: MeanStd,
    pub comm_cost: MeanStd,
    pub lqg_cost: MeanStd,
    pub total: MeanStd,
    /// Fraction of runs attempting at each step.
    pub attempt_freq: Vec<f64>,
}

/// Aggregate runs in the order given.
pub fn aggregate(p: f64, runs: &[RunRecord]) -> AggregateStats {
    assert!(!runs.is_empty(), "aggregate needs at least one run");
    let stat = |f: &dyn Fn(&RunRecord) -> f64| {
        MeanStd::from_values(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let horizon = runs[0].theta.len();
    let attempt_freq = (0..horizon)
        .map(|k| runs.iter().filter(|r| r.theta[k]).count() as f64 / runs.len() as f64)
        .collect();
    AggregateStats {
        policy: runs[0].policy,
        p,
        n_seeds: runs.len(),
        successes: stat(&|r| r.successes as f64),
        attempts: stat(&|r| r.attempts as f64),
        comm_cost: stat(&|r| r.comm_cost),
        lqg_cost: stat(&|r| r.lqg_cost),
        total: stat(&|r| r.total),
        attempt_freq,
    }
}

/// Runs for seeds `seed0..seed0 + n_seeds`, returned in seed order.
pub fn run_seeds(
    ctx: &SimContext,
    policy: Policy,
    n_seeds: usize,
    seed0: u64,
    jobs: usize,
    opts: SimOptions,
) -> Vec<RunRecord> {
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed0 + i).collect();
    if jobs <= 1 {
        return seeds.iter().map(|&s| ctx.run(policy, s, opts)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| seeds.par_iter().map(|&s| ctx.run(policy, s, opts)).collect())
}

pub fn monte_carlo(
    prob: &Problem,
    sol: &RiccatiSolution,
    policy: Policy,
    n_seeds: usize,
    seed0: u64,
    jobs: usize,
) -> AggregateStats {
    let ctx = SimContext::new(prob, sol);
    aggregate(prob.p, &run_seeds(&ctx, policy, n_seeds, seed0, jobs, SimOptions::default()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub p: f64,
    pub mpc: AggregateStats,
    pub oneshot: AggregateStats,
}

/// Both policies on every `p` of the grid, paired by seed.
pub fn sweep_p(
    prob: &Problem,
    p_grid: &[f64],
    n_seeds: usize,
    seed0: u64,
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    p_grid
        .iter()
        .map(|&p| {
            let inst = prob.with_p(p)?;
            let sol = solve_riccati(&inst)?;
            Ok(SweepPoint {
                p,
                mpc: monte_carlo(&inst, &sol, Policy::Mpc, n_seeds, seed0, jobs),
                oneshot: monte_carlo(&inst, &sol, Policy::OneShot, n_seeds, seed0, jobs),
            })
        })
        .collect()
}

/// Fixed-width float formatting (17 significant digits) for every CSV file.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const TRACE_HEADER: &str = "k,theta,delta,cert,e_s_norm,err_norm,u_norm,stage_cost";
pub const AGGREGATE_HEADER: &str =
    "policy,p,n_seeds,mean_attempts,std_attempts,mean_successes,mean_comm,mean_lqg,mean_total,std_total";
pub const FREQUENCY_HEADER: &str = "k,frac_attempt_oneshot,frac_attempt_mpc";
pub const SUMMARY_HEADER: &str = "policy,seed,successes,attempts,comm_cost,lqg_cost,total";

pub fn trace_csv(rec: &RunRecord) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for k in 0..rec.theta.len() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{},{}",
            u8::from(rec.theta[k]),
            u8::from(rec.delta[k]),
            rec.source[k].as_str(),
            fmt_float(rec.e_s[k].norm()),
            fmt_float(rec.err[k].norm()),
            fmt_float(rec.u[k].norm()),
            fmt_float(rec.stage_cost[k]),
        );
    }
    out
}

pub fn aggregate_csv(rows: &[&AggregateStats]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.policy.as_str(),
            fmt_float(s.p),
            s.n_seeds,
            fmt_float(s.attempts.mean),
            fmt_float(s.attempts.std),
            fmt_float(s.successes.mean),
            fmt_float(s.comm_cost.mean),
            fmt_float(s.lqg_cost.mean),
            fmt_float(s.total.mean),
            fmt_float(s.total.std),
        );
    }
    out
}

pub fn frequency_csv(oneshot: &AggregateStats, mpc: &AggregateStats) -> String {
    let mut out = String::from(FREQUENCY_HEADER);
    out.push('\n');
    for (k, (a, b)) in oneshot.attempt_freq.iter().zip(&mpc.attempt_freq).enumerate() {
        let _ = writeln!(out, "{k},{},{}", fmt_float(*a), fmt_float(*b));
    }
    out
}

pub fn summary_csv(runs: &[&RunRecord]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.policy.as_str(),
            r.seed,
            r.successes,
            r.attempts,
            fmt_float(r.comm_cost),
            fmt_float(r.lqg_cost),
            fmt_float(r.total),
        );
    }
    out
}
