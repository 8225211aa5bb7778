//! Scheduler-side error covariance over a planning window.
//!
//! A window starts at time `k` and covers `H = T - k` steps. Inside this
//! module and the solvers, times are window-local: `t = 0` is absolute time
//! `k`. The covariance of the controller's error at local time `t` is
//!
//! ```text
//! Σ_t = Σ_{τ=0..t} (1-p)^{c(t,τ)} G_{t,τ}
//! ```
//!
//! where `c(t,τ)` counts attempts on `[τ,t]`, `G_{t,0}` propagates the
//! current innovation and `G_{t,τ}` (τ ≥ 1) propagates the process noise
//! injected just before `τ`. The scalar coefficients `g_{t,τ} = tr(Γ_t G_{t,τ})`
//! make the expected window cost a sum of survival factors times constants.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{quad_form, symmetrize, trace_product};
use crate::lqg::RiccatiSolution;
use crate::model::Problem;

/// `β_i = (1-p)^i` for `i = 0..=max_count`, with `β_0 = 1` even when `p = 1`.
pub fn survival_factors(p: f64, max_count: usize) -> Vec<f64> {
    let q = 1.0 - p;
    let mut beta = Vec::with_capacity(max_count + 1);
    let mut acc = 1.0;
    for _ in 0..=max_count {
        beta.push(acc);
        acc *= q;
    }
    beta
}

/// Binary attempt vector over a window.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    theta: Vec<bool>,
}

impl Schedule {
    pub fn new(theta: Vec<bool>) -> Self {
        Schedule { theta }
    }

    pub fn zeros(len: usize) -> Self {
        Schedule::new(vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        Schedule::new(vec![true; len])
    }

    /// Decode `bits` with the first slot as the most significant bit.
    pub fn from_bits(bits: u64, len: usize) -> Self {
        Schedule::new((0..len).map(|i| bits >> (len - 1 - i) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.theta[t]
    }

    pub fn set(&mut self, t: usize, value: bool) {
        self.theta[t] = value;
    }

    pub fn flip(&mut self, t: usize) {
        self.theta[t] = !self.theta[t];
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.theta
    }

    pub fn attempts(&self) -> usize {
        self.theta.iter().filter(|&&b| b).count()
    }

    /// `prefix[i]` = attempts on `[0, i)`.
    pub fn prefix_counts(&self) -> Vec<usize> {
        let mut prefix = Vec::with_capacity(self.len() + 1);
        prefix.push(0);
        for &b in &self.theta {
            prefix.push(prefix.last().unwrap() + usize::from(b));
        }
        prefix
    }

    /// Attempts on `[tau, t]`.
    pub fn counter(&self, t: usize, tau: usize) -> usize {
        debug_assert!(tau <= t && t < self.len());
        self.theta[tau..=t].iter().filter(|&&b| b).count()
    }

    /// Largest interval count, i.e. the total number of attempts.
    pub fn max_counter(&self) -> usize {
        self.attempts()
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.theta {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Noise traces `tr(Γ_t A^d Σ^w (A^d)ᵀ)` over absolute time `t` and lag `d < t`.
///
/// They depend only on the problem and the Riccati solution, so one instance
/// serves every window of a run.
#[derive(Debug, Clone)]
pub struct NoiseGramians {
    traces: Vec<Vec<f64>>,
}

impl NoiseGramians {
    pub fn new(prob: &Problem, sol: &RiccatiSolution) -> Self {
        let horizon = sol.horizon();
        let mut lagged = Vec::with_capacity(horizon);
        let mut g = prob.sigma_w.clone();
        for _ in 0..horizon.saturating_sub(1) {
            lagged.push(g.clone());
            g = symmetrize(&(&prob.a * &g * prob.a.transpose()));
        }
        let traces = (0..horizon)
            .map(|t| {
                (0..t)
                    .map(|d| trace_product(&sol.gamma[t], &lagged[d]).max(0.0))
                    .collect()
            })
            .collect();
        NoiseGramians { traces }
    }

    /// Trace for absolute time `t` and lag `d = t - τ`.
    pub fn trace(&self, t: usize, lag: usize) -> f64 {
        self.traces[t][lag]
    }

    pub fn horizon(&self) -> usize {
        self.traces.len()
    }
}

/// Coefficients `g_{t,τ}` of one planning window, stored lower-triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianTable {
    start: usize,
    len: usize,
    coeffs: Vec<f64>,
    lambda: f64,
}

#[inline]
fn tri(t: usize, tau: usize) -> usize {
    t * (t + 1) / 2 + tau
}

impl GramianTable {
    /// Window starting at absolute time `k` with innovation `e_s`.
    pub fn build(
        noise: &NoiseGramians,
        sol: &RiccatiSolution,
        a: &DMatrix<f64>,
        k: usize,
        e_s: &DVector<f64>,
        lambda: f64,
    ) -> Self {
        let horizon = noise.horizon();
        assert!(k < horizon, "window start {k} outside horizon {horizon}");
        let len = horizon - k;
        let mut coeffs = vec![0.0; len * (len + 1) / 2];
        let mut v = e_s.clone();
        for t in 0..len {
            if t > 0 {
                v = a * &v;
            }
            coeffs[tri(t, 0)] = quad_form(&sol.gamma[k + t], &v).max(0.0);
            for tau in 1..=t {
                coeffs[tri(t, tau)] = noise.trace(k + t, t - tau);
            }
        }
        GramianTable {
            start: k,
            len,
            coeffs,
            lambda,
        }
    }

    /// Table from explicit rows: `rows[t][τ]` for `τ ≤ t`.
    pub fn from_rows(start: usize, rows: &[Vec<f64>], lambda: f64) -> Self {
        let len = rows.len();
        let mut coeffs = Vec::with_capacity(len * (len + 1) / 2);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), t + 1, "row {t} must have {} entries", t + 1);
            coeffs.extend(row.iter().map(|v| v.max(0.0)));
        }
        GramianTable {
            start,
            len,
            coeffs,
            lambda,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        GramianTable {
            lambda,
            ..self.clone()
        }
    }

    /// Absolute start time `k`.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Window length `H`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn g(&self, t: usize, tau: usize) -> f64 {
        self.coeffs[tri(t, tau)]
    }

    /// Row `t` as a slice over `τ = 0..=t`.
    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.coeffs[tri(t, 0)..=tri(t, t)]
    }

    /// Innovation terms `g_{t,0}`.
    pub fn innovation(&self) -> Vec<f64> {
        (0..self.len).map(|t| self.g(t, 0)).collect()
    }

    /// `Σ_{t,τ} g_{t,τ}`: the covariance cost of never attempting.
    pub fn total(&self) -> f64 {
        self.coeffs.iter().sum()
    }
}

/// Build the window table at `k` directly from the problem.
pub fn build_tables(
    prob: &Problem,
    sol: &RiccatiSolution,
    k: usize,
    e_s: &DVector<f64>,
) -> GramianTable {
    let noise = NoiseGramians::new(prob, sol);
    GramianTable::build(&noise, sol, &prob.a, k, e_s, prob.lambda())
}

/// `Σ_{t|k}` for every window step via the multiplicative recursion.
pub fn propagate_recursive(
    prob: &Problem,
    schedule: &Schedule,
    e_s: &DVector<f64>,
) -> Vec<DMatrix<f64>> {
    let keep = |t: usize| if schedule.get(t) { 1.0 - prob.p } else { 1.0 };
    let mut out = Vec::with_capacity(schedule.len());
    if schedule.is_empty() {
        return out;
    }
    let mut sigma = e_s * e_s.transpose() * keep(0);
    out.push(sigma.clone());
    for t in 1..schedule.len() {
        sigma = symmetrize(&((&prob.a * &sigma * prob.a.transpose() + &prob.sigma_w) * keep(t)));
        out.push(sigma.clone());
    }
    out
}

/// `Σ_{t|k}` at window step `t` via the survival-factor expansion.
pub fn closed_form_cov(
    prob: &Problem,
    schedule: &Schedule,
    e_s: &DVector<f64>,
    t: usize,
) -> DMatrix<f64> {
    let beta = survival_factors(prob.p, schedule.len());
    let n = prob.n();
    let mut powers = Vec::with_capacity(t + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for d in 1..=t {
        powers.push(&prob.a * &powers[d - 1]);
    }
    let mut sigma = DMatrix::zeros(n, n);
    for tau in 0..=t {
        let ap = &powers[t - tau];
        let inner = if tau == 0 {
            e_s * e_s.transpose()
        } else {
            prob.sigma_w.clone()
        };
        sigma += ap * inner * ap.transpose() * beta[schedule.counter(t, tau)];
    }
    symmetrize(&sigma)
}

/// Expected window cost `Σ_t Σ_τ (1-p)^{c(t,τ)} g_{t,τ} + λ Σ_t θ_t`.
pub fn schedule_cost(table: &GramianTable, schedule: &Schedule, p: f64) -> f64 {
    assert_eq!(schedule.len(), table.len(), "schedule length must match window");
    let beta = survival_factors(p, table.len());
    let prefix = schedule.prefix_counts();
    let mut cost = 0.0;
    for t in 0..table.len() {
        for (tau, g) in table.row(t).iter().enumerate() {
            cost += beta[prefix[t + 1] - prefix[tau]] * g;
        }
    }
    cost + table.lambda() * schedule.attempts() as f64
}

/// Window cost evaluated from the matrix recursion: `Σ_t tr(Γ_t Σ_t) + λ Σ θ`.
pub fn recursive_cost(
    prob: &Problem,
    sol: &RiccatiSolution,
    k: usize,
    schedule: &Schedule,
    e_s: &DVector<f64>,
) -> f64 {
    let sigmas = propagate_recursive(prob, schedule, e_s);
    let cov: f64 = sigmas
        .iter()
        .enumerate()
        .map(|(t, s)| trace_product(&sol.gamma[k + t], s))
        .sum();
    cov + prob.lambda() * schedule.attempts() as f64
}
