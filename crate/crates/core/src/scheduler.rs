//! Send/skip decisions for one planning window.
//!
//! * [`certify`] decides the first slot from two quadratic forms in the
//!   innovation when the answer is forced.
//! * [`solve_bnb`] minimizes the window cost exactly by depth-first branch
//!   and bound; [`solve_enumerate`] is the brute-force reference.
//! * [`ratio_bounds`] brackets the lossy optimum against the lossless one.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{schedule_cost, survival_factors, GramianTable, Schedule};
use crate::error::{Error, Result};
use crate::linalg::quad_form;

mod tail;
use tail::TailBound;

/// Largest window [`solve_enumerate`] accepts.
pub const MAX_ENUMERATION_HORIZON: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Attempt,
    Skip,
    Ambiguous,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Attempt => "attempt",
            Decision::Skip => "skip",
            Decision::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOutcome {
    pub decision: Decision,
    /// `p eᵀ Γ_k e`: guaranteed benefit of attempting now.
    pub attempt_stat: f64,
    /// `p eᵀ W_k e`: largest possible benefit of attempting now.
    pub skip_stat: f64,
    pub lambda: f64,
}

/// One-step certificate for slot `k`.
///
/// The benefit of attempting over skipping lies in
/// `[p eᵀΓ_k e − λ, p eᵀW_k e − λ]` whatever the later decisions are, so a
/// sign-definite bracket settles `θ_k`. Boundary ties go to the certified
/// action.
pub fn certify(
    e_s: &DVector<f64>,
    gamma_k: &DMatrix<f64>,
    w_k: &DMatrix<f64>,
    p: f64,
    lambda: f64,
) -> CertificateOutcome {
    let attempt_stat = p * quad_form(gamma_k, e_s);
    let skip_stat = p * quad_form(w_k, e_s);
    let decision = if attempt_stat >= lambda {
        Decision::Attempt
    } else if skip_stat <= lambda {
        Decision::Skip
    } else {
        Decision::Ambiguous
    };
    CertificateOutcome {
        decision,
        attempt_stat,
        skip_stat,
        lambda,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proof {
    /// Branch and bound closed every open node.
    Optimal,
    /// Every schedule was evaluated.
    Enumerated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub schedule: Schedule,
    pub cost: f64,
    pub nodes_explored: u64,
    pub proof: Proof,
}

/// Relaxation used to bound a partially fixed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundKind {
    /// Attempt on every free slot; charge `λ` only for the fixed prefix.
    AllOnes,
    /// `AllOnes` plus `Σ_e min(λ, D_e)` over free slots, where `D_e` is the
    /// cost of switching slot `e` off in the all-ones completion. Valid
    /// because the covariance part of the cost is supermodular in the set of
    /// attempted slots.
    Supermodular,
    /// Suffix dynamic program over the last few attempt positions, falling
    /// back to `Supermodular` when it does not prune. Children are visited
    /// in order of their suffix bound.
    #[default]
    Tail,
}

/// Attempt positions remembered by the [`BoundKind::Tail`] state.
const TAIL_MEMORY: usize = 3;
/// Saturation of the dropped-attempt count in that state.
const TAIL_DROPPED: usize = 2;
/// Nodes spent on the plain bound before building the suffix table.
const TAIL_TRIGGER_NODES: u64 = 20_000;

/// Cost of `schedule` relative to the best seen, with the deterministic tie rule
/// (fewer attempts win; earlier-found wins otherwise).
fn improves(cost: f64, attempts: usize, best_cost: f64, best_attempts: usize) -> bool {
    let tol = 1e-12 * best_cost.abs().max(cost.abs());
    if cost < best_cost - tol {
        true
    } else {
        cost <= best_cost + tol && attempts < best_attempts
    }
}

/// Global minimum over all `2^H` schedules.
///
/// Ties are broken toward fewer attempts, then toward the lexicographically
/// smallest schedule with the first slot most significant.
pub fn solve_enumerate(table: &GramianTable, p: f64) -> Result<SolveResult> {
    let horizon = table.len();
    if horizon > MAX_ENUMERATION_HORIZON {
        return Err(Error::Budget {
            horizon,
            max: MAX_ENUMERATION_HORIZON,
        });
    }
    let mut state = Enumerator {
        table,
        beta: survival_factors(p, horizon),
        theta: vec![false; horizon],
        prefix: vec![0; horizon + 1],
        best: None,
        leaves: 0,
    };
    state.descend(0, 0.0);
    let (theta, _) = state.best.expect("at least one schedule");
    let schedule = Schedule::new(theta);
    Ok(SolveResult {
        cost: schedule_cost(table, &schedule, p),
        schedule,
        nodes_explored: state.leaves,
        proof: Proof::Enumerated,
    })
}

struct Enumerator<'a> {
    table: &'a GramianTable,
    beta: Vec<f64>,
    theta: Vec<bool>,
    prefix: Vec<usize>,
    best: Option<(Vec<bool>, f64)>,
    leaves: u64,
}

impl Enumerator<'_> {
    fn descend(&mut self, depth: usize, partial: f64) {
        let horizon = self.table.len();
        if depth == horizon {
            self.leaves += 1;
            let attempts = self.prefix[horizon];
            let cost = partial + self.table.lambda() * attempts as f64;
            let better = match &self.best {
                None => true,
                Some((theta, best)) => {
                    improves(cost, attempts, *best, theta.iter().filter(|&&b| b).count())
                }
            };
            if better {
                self.best = Some((self.theta.clone(), cost));
            }
            return;
        }
        for choice in [false, true] {
            self.theta[depth] = choice;
            self.prefix[depth + 1] = self.prefix[depth] + usize::from(choice);
            let stage = stage_cost(self.table, &self.beta, &self.prefix, depth);
            self.descend(depth + 1, partial + stage);
        }
    }
}

/// Covariance cost of window step `t` once slots `0..=t` are fixed.
#[inline]
fn stage_cost(table: &GramianTable, beta: &[f64], prefix: &[usize], t: usize) -> f64 {
    let end = prefix[t + 1];
    table
        .row(t)
        .iter()
        .enumerate()
        .map(|(tau, g)| beta[end - prefix[tau]] * g)
        .sum()
}

/// Exact minimizer by depth-first branch and bound.
///
/// Slots are fixed in chronological order with the attempt branch first. The
/// incumbent starts from the better of `hint` and a greedy rollout refined by
/// single-slot flips.
pub fn solve_bnb(table: &GramianTable, p: f64, hint: Option<&Schedule>) -> SolveResult {
    solve_bnb_with(table, p, hint, BoundKind::default())
}

pub fn solve_bnb_with(
    table: &GramianTable,
    p: f64,
    hint: Option<&Schedule>,
    bound: BoundKind,
) -> SolveResult {
    bnb(table, p, hint, bound, TAIL_TRIGGER_NODES)
}

fn bnb(table: &GramianTable, p: f64, hint: Option<&Schedule>, bound: BoundKind, trigger: u64) -> SolveResult {
    let horizon = table.len();
    assert!(horizon >= 1, "empty window");
    let beta = survival_factors(p, horizon);
    let mut incumbent = greedy_schedule(table, p);
    let mut incumbent_cost = schedule_cost(table, &incumbent, p);
    if let Some(h) = hint.filter(|h| h.len() == horizon) {
        let c = schedule_cost(table, h, p);
        if c < incumbent_cost {
            incumbent = h.clone();
            incumbent_cost = c;
        }
    }
    let mut search = BranchAndBound {
        table,
        beta,
        bound,
        tail: None,
        node_limit: u64::MAX,
        aborted: false,
        theta: vec![false; horizon],
        prefix: vec![0; horizon + 1],
        attempts: Vec::with_capacity(horizon),
        diff: vec![0.0; horizon + 1],
        best_theta: incumbent.as_slice().to_vec(),
        best_cost: incumbent_cost,
        nodes: 0,
    };
    if bound == BoundKind::Tail {
        // Easy windows finish on the cheap bound; the suffix table is only
        // built when that stalls.
        search.bound = BoundKind::Supermodular;
        search.node_limit = trigger;
        search.descend(0, 0.0);
        if search.aborted {
            let tb = TailBound::new(table, &search.beta, TAIL_MEMORY, TAIL_DROPPED);
            let rollout = Schedule::new(tb.rollout());
            let c = schedule_cost(table, &rollout, p);
            if c < search.best_cost {
                search.best_cost = c;
                search.best_theta.copy_from_slice(rollout.as_slice());
            }
            search.tail = Some(tb);
            search.bound = BoundKind::Tail;
            search.node_limit = u64::MAX;
            search.aborted = false;
            search.descend(0, 0.0);
        }
    } else {
        search.descend(0, 0.0);
    }
    let schedule = Schedule::new(search.best_theta);
    SolveResult {
        cost: schedule_cost(table, &schedule, p),
        schedule,
        nodes_explored: search.nodes,
        proof: Proof::Optimal,
    }
}

struct BranchAndBound<'a> {
    table: &'a GramianTable,
    beta: Vec<f64>,
    bound: BoundKind,
    tail: Option<TailBound>,
    node_limit: u64,
    aborted: bool,
    theta: Vec<bool>,
    prefix: Vec<usize>,
    attempts: Vec<usize>,
    diff: Vec<f64>,
    best_theta: Vec<bool>,
    best_cost: f64,
    nodes: u64,
}

impl BranchAndBound<'_> {
    /// Pruning threshold; the slack absorbs rounding in the suffix bound.
    fn cutoff(&self) -> f64 {
        self.best_cost + 1e-12 * self.best_cost.abs()
    }

    /// `fixed` holds the exact covariance cost of steps `0..depth` plus the
    /// penalty of the prefix.
    fn descend(&mut self, depth: usize, fixed: f64) {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.aborted = true;
        }
        if self.aborted {
            return;
        }
        let horizon = self.table.len();
        if depth == horizon {
            if fixed < self.best_cost {
                self.best_cost = fixed;
                self.best_theta.copy_from_slice(&self.theta);
            }
            return;
        }
        if self.bound != BoundKind::AllOnes {
            if let Some(tb) = &self.tail {
                if fixed + tb.value(depth, &self.attempts) >= self.cutoff() {
                    return;
                }
            }
        }
        if self.lower_bound(depth, fixed) >= self.best_cost {
            return;
        }
        let lambda = self.table.lambda();
        let mut children = [(true, 0.0, 0.0), (false, 0.0, 0.0)];
        for child in children.iter_mut() {
            let choice = child.0;
            self.prefix[depth + 1] = self.prefix[depth] + usize::from(choice);
            let stage = stage_cost(self.table, &self.beta, &self.prefix, depth);
            child.1 = fixed + stage + if choice { lambda } else { 0.0 };
            if let Some(tb) = &self.tail {
                if choice {
                    self.attempts.push(depth);
                }
                child.2 = child.1 + tb.value(depth + 1, &self.attempts);
                if choice {
                    self.attempts.pop();
                }
            }
        }
        if children[1].2 < children[0].2 {
            children.swap(0, 1);
        }
        for (choice, cost, _) in children {
            self.theta[depth] = choice;
            self.prefix[depth + 1] = self.prefix[depth] + usize::from(choice);
            if choice {
                self.attempts.push(depth);
            }
            self.descend(depth + 1, cost);
            if choice {
                self.attempts.pop();
            }
        }
        self.theta[depth] = false;
    }

    fn lower_bound(&mut self, depth: usize, fixed: f64) -> f64 {
        let horizon = self.table.len();
        let beta = &self.beta;
        let fixed_attempts = self.prefix[depth];
        let tighten = self.bound != BoundKind::AllOnes;
        if tighten {
            self.diff[depth..=horizon].iter_mut().for_each(|d| *d = 0.0);
        }
        let mut relaxed = 0.0;
        for t in depth..horizon {
            let free_run = t - depth + 1;
            for (tau, &g) in self.table.row(t).iter().enumerate() {
                let count = if tau < depth {
                    fixed_attempts - self.prefix[tau] + free_run
                } else {
                    t - tau + 1
                };
                relaxed += beta[count] * g;
                if tighten {
                    // count >= 1 here: every interval reaching t >= depth holds a free slot.
                    let marginal = (beta[count - 1] - beta[count]) * g;
                    self.diff[tau.max(depth)] += marginal;
                    self.diff[t + 1] -= marginal;
                }
            }
        }
        let mut bound = fixed + relaxed;
        if tighten {
            let lambda = self.table.lambda();
            let mut running = 0.0;
            for e in depth..horizon {
                running += self.diff[e];
                bound += running.min(lambda);
            }
        }
        bound
    }
}

/// Forward greedy rollout followed by single-flip descent.
fn greedy_schedule(table: &GramianTable, p: f64) -> Schedule {
    let horizon = table.len();
    let mut sched = Schedule::zeros(horizon);
    let mut cost = schedule_cost(table, &sched, p);
    for t in 0..horizon {
        sched.set(t, true);
        let c = schedule_cost(table, &sched, p);
        if c < cost {
            cost = c;
        } else {
            sched.set(t, false);
        }
    }
    let beta = survival_factors(p, horizon);
    for _ in 0..horizon {
        let mut improved = false;
        for e in 0..horizon {
            if flip_delta(table, &beta, &sched, e) < -1e-12 * cost.abs() {
                sched.flip(e);
                cost = schedule_cost(table, &sched, p);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    sched
}

/// Change in cost from flipping slot `e`.
fn flip_delta(table: &GramianTable, beta: &[f64], sched: &Schedule, e: usize) -> f64 {
    let prefix = sched.prefix_counts();
    let on = sched.get(e);
    let mut delta = if on { -table.lambda() } else { table.lambda() };
    for t in e..table.len() {
        for tau in 0..=e {
            let c = prefix[t + 1] - prefix[tau];
            let c_new = if on { c - 1 } else { c + 1 };
            delta += (beta[c_new] - beta[c]) * table.g(t, tau);
        }
    }
    delta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBounds {
    pub lower: f64,
    pub upper: f64,
    /// `J_p* / J_1*`.
    pub ratio: f64,
    /// Largest interval attempt count of the lossy optimizer.
    pub c_max: usize,
}

/// Covariance mass on intervals that contain at least one attempt.
fn covered_mass(table: &GramianTable, schedule: &Schedule) -> f64 {
    let prefix = schedule.prefix_counts();
    let mut mass = 0.0;
    for t in 0..table.len() {
        for (tau, g) in table.row(t).iter().enumerate() {
            if prefix[t + 1] > prefix[tau] {
                mass += g;
            }
        }
    }
    mass
}

/// Bracket `J_p*/J_1*` from a lossless optimizer `theta_star_1` and a lossy
/// optimizer `theta_star_p` of the same window.
pub fn ratio_bounds(
    theta_star_1: &Schedule,
    theta_star_p: &Schedule,
    table: &GramianTable,
    p: f64,
) -> RatioBounds {
    let j1_star = schedule_cost(table, theta_star_1, 1.0);
    let jp_star = schedule_cost(table, theta_star_p, p);
    let j1_at_p = schedule_cost(table, theta_star_p, 1.0);
    let c_max = theta_star_p.max_counter();
    let ratio = if j1_star > 0.0 { jp_star / j1_star } else { 1.0 };
    let upper = if j1_star > 0.0 {
        1.0 + (1.0 - p) * covered_mass(table, theta_star_1) / j1_star
    } else {
        1.0
    };
    let lower = if j1_at_p > 0.0 {
        let scale = survival_factors(p, c_max)[c_max];
        1.0 + scale * covered_mass(table, theta_star_p) / j1_at_p
    } else {
        1.0
    };
    RatioBounds {
        lower,
        upper,
        ratio,
        c_max,
    }
}

/// Solve the window at `p` and at `p = 1`, then bracket the ratio.
pub fn solve_ratio_bounds(table: &GramianTable, p: f64) -> (SolveResult, SolveResult, RatioBounds) {
    let lossless = solve_bnb(table, 1.0, None);
    let lossy = solve_bnb(table, p, None);
    let bounds = ratio_bounds(&lossless.schedule, &lossy.schedule, table, p);
    (lossless, lossy, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn certificate_examples() {
        let zero = certify(&DVector::zeros(1), &scalar(1.0), &scalar(2.0), 0.5, 1.0);
        assert_eq!(zero.decision, Decision::Skip);

        let big = certify(&DVector::from_element(1, 2.0), &scalar(1.0), &scalar(1.0), 0.5, 1.0);
        assert_eq!(big.decision, Decision::Attempt);
        assert_eq!(big.attempt_stat, 2.0);

        let mid = certify(&DVector::from_element(1, 1.0), &scalar(0.5), &scalar(1.5), 0.5, 0.5);
        assert_eq!(mid.decision, Decision::Ambiguous);
        assert_eq!((mid.attempt_stat, mid.skip_stat), (0.25, 0.75));
    }

    #[test]
    fn certificate_ties_resolve_to_certified_action() {
        let e = DVector::from_element(1, 1.0);
        let tie_attempt = certify(&e, &scalar(2.0), &scalar(3.0), 0.5, 1.0);
        assert_eq!(tie_attempt.decision, Decision::Attempt);
        let tie_skip = certify(&e, &scalar(1.0), &scalar(2.0), 0.5, 1.0);
        assert_eq!(tie_skip.decision, Decision::Skip);
    }

    fn small_table(lambda: f64) -> GramianTable {
        GramianTable::from_rows(
            0,
            &[vec![2.0], vec![1.0, 0.5], vec![3.0, 0.2, 1.5], vec![0.4, 2.0, 0.1, 0.7]],
            lambda,
        )
    }

    #[test]
    fn huge_penalty_never_attempts() {
        let table = small_table(1e6);
        let res = solve_enumerate(&table, 0.6).unwrap();
        assert_eq!(res.schedule, Schedule::zeros(4));
        assert!(table.lambda() >= table.total());
        assert_eq!(solve_bnb(&table, 0.6, None).schedule, Schedule::zeros(4));
    }

    #[test]
    fn tiny_penalty_attempts_everywhere() {
        let table = small_table(1e-9);
        let res = solve_enumerate(&table, 0.6).unwrap();
        assert_eq!(res.schedule, Schedule::ones(4));
    }

    #[test]
    fn single_slot_window() {
        let table = GramianTable::from_rows(0, &[vec![3.0]], 1.0);
        for p in [0.2, 0.5, 0.9, 1.0] {
            let expected = f64::min(3.0, (1.0 - p) * 3.0 + 1.0);
            let res = solve_bnb(&table, p, None);
            assert!((res.cost - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn enumeration_budget() {
        let rows: Vec<Vec<f64>> = (0..23).map(|t| vec![1.0; t + 1]).collect();
        let table = GramianTable::from_rows(0, &rows, 1.0);
        assert!(matches!(solve_enumerate(&table, 0.5), Err(Error::Budget { .. })));
    }

    #[test]
    fn enumeration_tie_break_prefers_fewer_then_lexicographic() {
        // Two slots, no covariance: any attempt only costs.
        let table = GramianTable::from_rows(0, &[vec![0.0], vec![0.0, 0.0]], 1.0);
        assert_eq!(solve_enumerate(&table, 0.5).unwrap().schedule, Schedule::zeros(2));
        // Attempting either slot kills the only mass equally well.
        let table = GramianTable::from_rows(0, &[vec![0.0], vec![4.0, 0.0]], 0.1);
        let res = solve_enumerate(&table, 1.0).unwrap();
        assert_eq!(res.schedule.as_slice(), &[false, true]);
    }

    #[test]
    fn bounds_agree_with_enumeration_on_fixed_table() {
        for lambda in [0.05, 0.5, 1.0, 3.0] {
            let table = small_table(lambda);
            for p in [0.3, 0.7, 1.0] {
                let exact = solve_enumerate(&table, p).unwrap().cost;
                for kind in [BoundKind::AllOnes, BoundKind::Supermodular, BoundKind::Tail] {
                    let bnb = solve_bnb_with(&table, p, None, kind);
                    assert!((bnb.cost - exact).abs() <= 1e-12 * exact.max(1.0));
                }
            }
        }
    }

    #[test]
    fn suffix_table_path_matches_enumeration() {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|t| (0..=t).map(|tau| 1.0 + ((3 * t + 5 * tau) % 7) as f64 * 0.4).collect())
            .collect();
        for lambda in [0.3, 2.0, 9.0] {
            let table = GramianTable::from_rows(0, &rows, lambda);
            for p in [0.2, 0.6, 1.0] {
                let exact = solve_enumerate(&table, p).unwrap().cost;
                let forced = bnb(&table, p, None, BoundKind::Tail, 0);
                assert!((forced.cost - exact).abs() <= 1e-12 * exact);
            }
        }
    }

    #[test]
    fn lossless_ratio_is_one() {
        let table = small_table(0.5);
        let (one, lossy, rb) = solve_ratio_bounds(&table, 1.0);
        assert_eq!(one.cost, lossy.cost);
        assert_eq!((rb.lower, rb.upper, rb.ratio), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_attempt_lossless_optimum_has_unit_upper_bound() {
        let table = small_table(1e6);
        let (one, lossy, rb) = solve_ratio_bounds(&table, 0.4);
        assert_eq!(one.schedule, Schedule::zeros(4));
        assert_eq!(rb.upper, 1.0);
        assert_eq!(lossy.schedule, Schedule::zeros(4));
        assert_eq!(rb.ratio, 1.0);
    }

    #[test]
    fn zero_table_ratio_guard() {
        let table = GramianTable::from_rows(0, &[vec![0.0], vec![0.0, 0.0]], 1.0);
        let rb = solve_ratio_bounds(&table, 0.5).2;
        assert_eq!((rb.lower, rb.ratio, rb.upper), (1.0, 1.0, 1.0));
    }
}
