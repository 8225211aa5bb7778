//! Suffix lower bound by dynamic programming over a truncated history.
//!
//! The state before slot `t` keeps the positions of the last `K` attempts and
//! how many older ones were dropped, saturating at `D`. Interval counts below
//! `K` are then exact; for older intervals the count is at most `K` plus the
//! smaller of the dropped count and the slots in front of the oldest kept
//! attempt, which floors the survival factor. Every stage cost is
//! underestimated, so the optimal surrogate completion bounds the true one.

use crate::covariance::GramianTable;

/// Upper limit on stored states across all slots.
const STATE_BUDGET: usize = 4_000_000;

pub(super) struct TailBound {
    k: usize,
    /// Saturation level of the dropped-attempt count.
    d: usize,
    binom: Vec<Vec<usize>>,
    /// `values[t][state]`: cheapest surrogate cost of slots `t..H`.
    values: Vec<Vec<f64>>,
    /// `cum[t][x] = Σ_{τ<x} g(t, τ)`.
    cum: Vec<Vec<f64>>,
    /// `decayed[t][q] = Σ_{τ≤q} g(t, τ) (1-p)^{q-τ}`.
    decayed: Vec<Vec<f64>>,
    beta: Vec<f64>,
    lambda: f64,
}

impl TailBound {
    pub(super) fn new(table: &GramianTable, beta: &[f64], max_k: usize, max_d: usize) -> Self {
        let horizon = table.len();
        let mut k = max_k.clamp(1, horizon);
        let mut d = max_d.max(1);
        let binom = binomials(horizon + 1, k + 1);
        while total_states(&binom, horizon, k, d) > STATE_BUDGET {
            if d > 1 {
                d -= 1;
            } else if k > 1 {
                k -= 1;
            } else {
                break;
            }
        }
        let decay = beta.get(1).copied().unwrap_or(0.0);
        let mut cum = Vec::with_capacity(horizon);
        let mut decayed = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let row = table.row(t);
            let mut c = vec![0.0; t + 2];
            let mut d = vec![0.0; t + 1];
            let mut acc = 0.0;
            for (tau, &g) in row.iter().enumerate() {
                c[tau + 1] = c[tau] + g;
                acc = acc * decay + g;
                d[tau] = acc;
            }
            cum.push(c);
            decayed.push(d);
        }
        let mut bound = TailBound {
            k,
            d,
            binom,
            values: Vec::new(),
            cum,
            decayed,
            beta: beta.to_vec(),
            lambda: table.lambda(),
        };
        bound.fill(horizon);
        bound
    }

    fn state_count(&self, t: usize) -> usize {
        state_count(&self.binom, t, self.k, self.d)
    }

    /// Index of (`tail`, `dropped`) among the states before slot `t`.
    /// `tail` lists kept positions in ascending order.
    fn index(&self, t: usize, tail: &[usize], dropped: usize) -> usize {
        let j = tail.len();
        let mut idx: usize = (0..j).map(|i| self.binom[t][i]).sum();
        idx += dropped * self.binom[t][j];
        for (i, &c) in tail.iter().enumerate() {
            idx += self.binom[c][i + 1];
        }
        idx
    }

    /// Surrogate covariance cost of slot `t` given the kept attempts up to
    /// and including `t`.
    fn stage(&self, t: usize, tail: &[usize], dropped: usize) -> f64 {
        let cum = &self.cum[t];
        let mut hi = t + 1;
        let mut cost = 0.0;
        for (count, &q) in tail.iter().rev().enumerate() {
            cost += self.beta[count] * (cum[hi] - cum[q + 1]);
            hi = q + 1;
        }
        let m = tail.len();
        if dropped == 0 {
            return cost + self.beta[m] * cum[hi];
        }
        let q = tail[0];
        let decayed = &self.decayed[t];
        let older = if dropped < self.d && q >= dropped {
            let b = self.beta[dropped];
            decayed[q] - b * decayed[q - dropped] + b * cum[q - dropped + 1]
        } else {
            decayed[q]
        };
        cost + self.beta[m] * older
    }

    /// Successor state and its stage cost for decision `attempt` at slot `t`.
    fn step(&self, t: usize, tail: &[usize], dropped: usize, attempt: bool, buf: &mut Vec<usize>) -> (usize, f64) {
        buf.clear();
        buf.extend_from_slice(tail);
        let mut over = dropped;
        let mut extra = 0.0;
        if attempt {
            buf.push(t);
            if buf.len() > self.k {
                buf.remove(0);
                over = (over + 1).min(self.d);
            }
            extra = self.lambda;
        }
        (over, extra + self.stage(t, buf, over))
    }

    fn fill(&mut self, horizon: usize) {
        let mut values: Vec<Vec<f64>> = (0..=horizon).map(|t| vec![0.0; self.state_count(t)]).collect();
        let mut combo = Vec::with_capacity(self.k);
        let mut buf = Vec::with_capacity(self.k + 1);
        for t in (0..horizon).rev() {
            let (head, rest) = values.split_at_mut(t + 1);
            let next = &rest[0];
            let here = &mut head[t];
            for j in 0..=self.k.min(t) {
                for_each_combination(t, j, &mut combo, &mut |tail| {
                    let levels = if j == self.k { self.d + 1 } else { 1 };
                    for dropped in 0..levels {
                        let mut best = f64::INFINITY;
                        for attempt in [false, true] {
                            let (over, cost) = self.step(t, tail, dropped, attempt, &mut buf);
                            let v = cost + next[self.index(t + 1, &buf, over)];
                            best = best.min(v);
                        }
                        here[self.index(t, tail, dropped)] = best;
                    }
                });
            }
        }
        self.values = values;
    }

    /// Lower bound on slots `t..H` given the attempted prefix positions.
    pub(super) fn value(&self, t: usize, attempts: &[usize]) -> f64 {
        let (tail, dropped) = self.truncate(attempts);
        self.values[t][self.index(t, tail, dropped)]
    }

    fn truncate<'a>(&self, attempts: &'a [usize]) -> (&'a [usize], usize) {
        let cut = attempts.len().saturating_sub(self.k);
        (&attempts[cut..], cut.min(self.d))
    }

    /// Schedule that follows the surrogate optimum from the empty prefix.
    pub(super) fn rollout(&self) -> Vec<bool> {
        let horizon = self.values.len() - 1;
        let mut theta = vec![false; horizon];
        let mut attempts: Vec<usize> = Vec::new();
        let mut buf = Vec::with_capacity(self.k + 1);
        for t in 0..horizon {
            let (tail, dropped) = self.truncate(&attempts);
            let mut best = (f64::INFINITY, false);
            for attempt in [false, true] {
                let (over, cost) = self.step(t, tail, dropped, attempt, &mut buf);
                let v = cost + self.values[t + 1][self.index(t + 1, &buf, over)];
                if v < best.0 {
                    best = (v, attempt);
                }
            }
            if best.1 {
                theta[t] = true;
                attempts.push(t);
            }
        }
        theta
    }
}

fn binomials(n_max: usize, k_max: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0usize; k_max + 1]; n_max + 1];
    for n in 0..=n_max {
        c[n][0] = 1;
        for k in 1..=k_max.min(n) {
            c[n][k] = c[n - 1][k - 1].saturating_add(if k <= n - 1 { c[n - 1][k] } else { 0 });
        }
    }
    c
}

fn state_count(binom: &[Vec<usize>], t: usize, k: usize, d: usize) -> usize {
    let below: usize = (0..k).map(|j| binom[t][j]).sum();
    below.saturating_add((d + 1).saturating_mul(binom[t][k]))
}

fn total_states(binom: &[Vec<usize>], horizon: usize, k: usize, d: usize) -> usize {
    (0..=horizon).map(|t| state_count(binom, t, k, d)).fold(0, usize::saturating_add)
}

/// Calls `f` on every ascending `j`-subset of `0..n`.
fn for_each_combination(n: usize, j: usize, combo: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, j: usize, combo: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if combo.len() == j {
            f(combo);
            return;
        }
        let need = j - combo.len();
        for c in start..=n - need {
            combo.push(c);
            rec(c + 1, n, j, combo, f);
            combo.pop();
        }
    }
    combo.clear();
    if j <= n {
        rec(0, n, j, combo, f);
    }
}
