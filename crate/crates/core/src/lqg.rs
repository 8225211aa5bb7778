//! Certainty-equivalent LQG controller.
//!
//! The backward Riccati recursion gives the feedback gains `L_k` applied to
//! the controller's state estimate. The error weights `Γ_k = L_kᵀ S_k L_k`
//! price the estimation error at each stage, and the tail Gramians
//! `W_k = Σ_j (Aʲ)ᵀ Γ_{k+j} Aʲ` price an error that is never corrected.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, trace_product};
use crate::model::Problem;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Cost-to-go matrices `P_0..P_T`; `P_T = Q_T`.
    pub p: Vec<DMatrix<f64>>,
    /// `S_k = R + Bᵀ P_{k+1} B` for `k = 0..T-1`.
    pub s: Vec<DMatrix<f64>>,
    /// Feedback gains, `u_k = -L_k x̂_k`.
    pub l: Vec<DMatrix<f64>>,
    /// Error weights `Γ_k = L_kᵀ S_k L_k`.
    pub gamma: Vec<DMatrix<f64>>,
    /// Tail Gramians `W_k`.
    pub w: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.l.len()
    }
}

/// Finite-horizon backward recursion starting from `P_T = Q_T`.
pub fn solve_riccati(prob: &Problem) -> Result<RiccatiSolution> {
    let horizon = prob.horizon;
    let a = &prob.a;
    let b = &prob.b;
    let mut p = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut s = Vec::with_capacity(horizon);
    let mut l = Vec::with_capacity(horizon);
    let mut gamma = Vec::with_capacity(horizon);
    p[horizon] = prob.q_terminal.clone();

    for k in (0..horizon).rev() {
        let next = &p[k + 1];
        let bt_p = b.transpose() * next;
        let s_k = symmetrize(&(&prob.r + &bt_p * b));
        let chol = s_k
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("S_{k} is not positive definite")))?;
        let bt_p_a = &bt_p * a;
        let l_k = chol.solve(&bt_p_a);
        // Aᵀ P B S⁻¹ Bᵀ P A = (Bᵀ P A)ᵀ L
        let p_k = a.transpose() * next * a + &prob.q - bt_p_a.transpose() * &l_k;
        p[k] = symmetrize(&p_k);
        gamma.push(symmetrize(&(l_k.transpose() * &s_k * &l_k)));
        s.push(s_k);
        l.push(l_k);
    }
    s.reverse();
    l.reverse();
    gamma.reverse();
    let w = tail_gramians(&gamma, a);
    Ok(RiccatiSolution { p, s, l, gamma, w })
}

/// `W_{T-1} = Γ_{T-1}`, `W_k = Γ_k + Aᵀ W_{k+1} A`.
pub fn tail_gramians(gamma: &[DMatrix<f64>], a: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut w: Vec<DMatrix<f64>> = Vec::with_capacity(gamma.len());
    for g in gamma.iter().rev() {
        let next = match w.last() {
            Some(prev) => symmetrize(&(g + a.transpose() * prev * a)),
            None => g.clone(),
        };
        w.push(next);
    }
    w.reverse();
    w
}

/// Schedule-independent part of the expected LQG cost:
/// `tr(P_0 (Σ_0 + x̄ x̄ᵀ)) + Σ_k tr(P_{k+1} Σ^w)`.
pub fn constant_cost(prob: &Problem, sol: &RiccatiSolution) -> f64 {
    let second_moment = &prob.sigma0 + &prob.x0_mean * prob.x0_mean.transpose();
    let initial = trace_product(&sol.p[0], &second_moment);
    let noise: f64 = sol.p[1..]
        .iter()
        .map(|pk| trace_product(pk, &prob.sigma_w))
        .sum();
    initial + noise
}
