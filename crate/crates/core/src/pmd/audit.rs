//! Check of the generic approximate-improvement theorem for an arbitrary
//! surrogate `xi~`: updating `xi' = beta xi~ + alpha Q_k` costs at most
//! `gamma eta max_s ||pi_k - pi~||_1 ||xi_k - xi~||_inf / (1 - gamma)`.

use rand::Rng as _;

use crate::error::Result;
use crate::mdp::TabularMdp;
use crate::pmd::config::PmdConfig;
use crate::pmd::stack::softmax_policy;
use crate::rng::RngSeed;
use crate::soft_dp::{default_max_iter, evaluate_policy_exact};
use crate::tables::{Logits, QTable};
use crate::theory::api_bound_generic;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementAudit {
    /// `min(Q' - Q_k)` for the policy built from the surrogate.
    pub improvement_gap: f64,
    /// Nonpositive lower bound on `improvement_gap`.
    pub bound: f64,
    pub policy_l1: f64,
    pub xi_delta_inf: f64,
}

impl ImprovementAudit {
    pub fn violation(&self) -> f64 {
        self.bound - self.improvement_gap
    }
}

/// Audits one update from `(xi_k, Q_k)` with surrogate logits `xi_tilde`.
pub fn audit_surrogate(
    mdp: &TabularMdp,
    cfg: &PmdConfig,
    xi: &Logits,
    q: &QTable,
    xi_tilde: &Logits,
    tol: f64,
) -> Result<ImprovementAudit> {
    let pi = softmax_policy(xi)?;
    let pi_tilde = softmax_policy(xi_tilde)?;
    let mut next = xi_tilde.clone();
    next.scale(cfg.beta());
    next.add_scaled(cfg.alpha(), q);
    let pi_next = softmax_policy(&next)?;
    let q_next = evaluate_policy_exact(mdp, cfg.tau(), &pi_next, tol, default_max_iter(mdp, cfg.tau(), tol))?;
    let policy_l1 = pi.max_l1_dist(&pi_tilde);
    let xi_delta_inf = xi.sup_dist(xi_tilde);
    Ok(ImprovementAudit {
        improvement_gap: q_next.min_diff(q),
        bound: -api_bound_generic(mdp.gamma(), cfg.eta(), policy_l1, xi_delta_inf, 0.0),
        policy_l1,
        xi_delta_inf,
    })
}

/// `xi` plus i.i.d. uniform noise in `[-scale, scale]`.
pub fn perturb_logits(xi: &Logits, scale: f64, seed: RngSeed) -> Logits {
    let mut rng = seed.rng();
    let mut out = xi.clone();
    for v in out.as_mut_slice() {
        *v += rng.gen_range(-scale..=scale);
    }
    out
}
