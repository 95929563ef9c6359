//! One PMD iteration: evaluate, stack, recompute logits, record diagnostics.

use serde::Serialize;

use crate::error::{PmdError, Result};
use crate::exec::Exec;
use crate::mdp::TabularMdp;
use crate::pmd::config::{PmdConfig, Variant};
use crate::pmd::stack::{logits_from_stack, softmax_policy, QStack};
use crate::soft_dp::{default_max_iter, evaluate_policy_exact_with, q_upper_bound, NoiseSpec};
use crate::tables::{Logits, PolicyTable, QTable};
use crate::theory::{
    api_bound_generic, api_bound_vanilla, api_bound_wc, beta_pow, exact_epmd_bound, slack,
    vanilla_bound, XkParams, XkRecursion,
};

/// Whether each iteration draws a new evaluation-noise pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseSeeding {
    /// New pattern per iteration, derived from the base seed and `k`.
    #[default]
    Fresh,
    /// Same pattern every iteration.
    Fixed,
}

/// Policy evaluation used by [`pmd_step`]: exact fixed-point evaluation,
/// optionally followed by bounded noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluator {
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub exec: Exec,
    pub noise: Option<(NoiseSpec, NoiseSeeding)>,
}

/// Result of one evaluation: the true soft Q and the table the algorithm sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub exact: QTable,
    pub observed: QTable,
}

impl Evaluator {
    pub fn exact(tol: f64) -> Self {
        Self {
            tol,
            max_iter: None,
            exec: Exec::default(),
            noise: None,
        }
    }

    pub fn noisy(tol: f64, noise: NoiseSpec, seeding: NoiseSeeding) -> Self {
        Self {
            noise: Some((noise, seeding)),
            ..Self::exact(tol)
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn eps_eval(&self) -> f64 {
        self.noise.map_or(0.0, |(n, _)| n.eps_eval)
    }

    pub fn evaluate(
        &self,
        mdp: &TabularMdp,
        tau: f64,
        pi: &PolicyTable,
        iteration: usize,
    ) -> Result<Evaluation> {
        let max_iter = self
            .max_iter
            .unwrap_or_else(|| default_max_iter(mdp, tau, self.tol));
        let exact = evaluate_policy_exact_with(self.exec, mdp, tau, pi, self.tol, max_iter)?;
        let mut observed = exact.clone();
        if let Some((spec, seeding)) = self.noise {
            let spec = match seeding {
                NoiseSeeding::Fixed => spec,
                NoiseSeeding::Fresh => NoiseSpec {
                    seed: spec.seed.derive(iteration as u64),
                    ..spec
                },
            };
            spec.perturb(&mut observed);
        }
        Ok(Evaluation { exact, observed })
    }
}

/// Measurements for one iteration `k` (the policy `pi_k`).
///
/// The improvement columns describe the transition `k-1 -> k`:
/// `improvement_gap = min(Q_k - Q~_{k-1})` against the lower bounds
/// computed at iteration `k-1`. They are NaN at `k = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `||Q* - Q~_k||_inf`, NaN without a reference solution.
    pub q_gap_inf: f64,
    /// Convergence bound of the variant at `k`.
    pub thm_bound: f64,
    pub improvement_gap: f64,
    /// Variant-specific lower bound on `improvement_gap` (nonpositive).
    pub improvement_bound: f64,
    /// Same bound with the policy distance capped by the constant 2
    /// instead of the Pinsker estimate.
    pub improvement_bound_crude: f64,
    /// Lower bound from the generic approximate-improvement theorem,
    /// evaluated with the measured deleted-policy quantities.
    pub generic_improvement_bound: f64,
    /// `max_s ||pi_k(s) - pi~_k(s)||_1`.
    pub pinsker_lhs: f64,
    /// Bound on `pinsker_lhs` (0 for the exact variant).
    pub pinsker_rhs: f64,
    /// `||xi_k - xi~_k||_inf`.
    pub xi_delta_inf: f64,
    /// Stack held `M` tables before this iteration's push.
    pub stack_full: bool,
}

impl IterationRecord {
    pub fn gap_violation(&self) -> f64 {
        self.q_gap_inf - self.thm_bound
    }

    pub fn improvement_violation(&self) -> f64 {
        self.improvement_bound - self.improvement_gap
    }

    pub fn generic_violation(&self) -> f64 {
        self.generic_improvement_bound - self.improvement_gap
    }

    pub fn pinsker_violation(&self) -> f64 {
        self.pinsker_lhs - self.pinsker_rhs
    }
}

/// Reference quantities that turn a run into a bound audit.
#[derive(Debug, Clone)]
struct Monitor {
    q_star: QTable,
    qstar_norm: f64,
    rbar: f64,
    eps_eval: f64,
    /// `||Q_0||` and `||Q* - Q_0||`, known after the first evaluation.
    q0: Option<(f64, f64)>,
    xk: Option<XkRecursion>,
}

#[derive(Debug, Clone, Copy)]
struct PendingImprovement {
    variant_bound: f64,
    crude_bound: f64,
    generic_bound: f64,
}

/// Mutable state of a PMD run. The logits of the finite-memory variants
/// always equal [`logits_from_stack`] of the stack; the exact variant keeps
/// a running `xi <- beta xi + alpha Q` and stores only the newest table.
#[derive(Debug, Clone)]
pub struct PmdState {
    iteration: usize,
    stack: QStack,
    logits: Logits,
    policy: PolicyTable,
    trace: Vec<IterationRecord>,
    prev_logits: Option<Logits>,
    evicted: Option<QTable>,
    last_observed: Option<QTable>,
    pending: Option<PendingImprovement>,
    monitor: Option<Monitor>,
    slack: f64,
}

impl PmdState {
    /// `xi_0 = 0`, uniform `pi_0`.
    pub fn new(mdp: &TabularMdp, cfg: &PmdConfig) -> Self {
        let (ns, na) = mdp.shape();
        Self {
            iteration: 0,
            stack: QStack::new(cfg.stack_capacity()),
            logits: Logits::zeros(ns, na),
            policy: PolicyTable::uniform(ns, na),
            trace: Vec::new(),
            prev_logits: None,
            evicted: None,
            last_observed: None,
            pending: None,
            monitor: None,
            slack: 0.0,
        }
    }

    /// Enables gap and bound columns against the optimal soft Q-function.
    pub fn with_reference(
        mut self,
        mdp: &TabularMdp,
        cfg: &PmdConfig,
        q_star: QTable,
        evaluator: &Evaluator,
    ) -> Self {
        self.monitor = Some(Monitor {
            qstar_norm: q_star.sup_norm(),
            q_star,
            rbar: q_upper_bound(mdp, cfg.tau()),
            eps_eval: evaluator.eps_eval(),
            q0: None,
            xk: None,
        });
        self.slack = slack(evaluator.tol, mdp.gamma());
        self
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn stack(&self) -> &QStack {
        &self.stack
    }

    pub fn logits(&self) -> &Logits {
        &self.logits
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    /// Tolerance slack used by the bound columns.
    pub fn slack(&self) -> f64 {
        self.slack
    }

    /// Runs one iteration in place.
    pub fn step(&mut self, mdp: &TabularMdp, cfg: &PmdConfig, evaluator: &Evaluator) -> Result<()> {
        let k = self.iteration;
        let gamma = mdp.gamma();
        let ev = evaluator.evaluate(mdp, cfg.tau(), &self.policy, k)?;
        let eps = evaluator.eps_eval();

        let (improvement_gap, improvement_bound, crude_bound, generic_bound) =
            match (&self.last_observed, self.pending) {
                (Some(prev), Some(p)) => (
                    ev.exact.min_diff(prev),
                    -p.variant_bound,
                    -p.crude_bound,
                    -p.generic_bound,
                ),
                _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };

        // deleted-policy diagnostics for pi_k, before the push evicts Q_{k-M}
        let stack_full = self.stack.is_full();
        let rbar = q_upper_bound(mdp, cfg.tau());
        let (pinsker_lhs, pinsker_rhs, xi_delta, variant_bound) = match cfg.variant() {
            Variant::Exact => (0.0, 0.0, 0.0, (1.0 + gamma) * eps / (1.0 - gamma)),
            variant => {
                let oldest = if stack_full { self.stack.oldest() } else { None };
                let xi_tilde = deleted_logits(cfg, &self.logits, &ev.observed, oldest);
                let pi_tilde = softmax_policy(&xi_tilde)?;
                let lhs = self.policy.max_l1_dist(&pi_tilde);
                let delta = self.logits.sup_dist(&xi_tilde);
                let m = cfg.memory_f64();
                match variant {
                    Variant::Vanilla => (
                        lhs,
                        cfg.alpha() * beta_pow(cfg.beta(), m - 1.0) * (rbar + eps),
                        delta,
                        api_bound_vanilla(gamma, cfg.beta(), m, cfg.alpha(), rbar, eps),
                    ),
                    _ => {
                        let qdiff = match oldest {
                            Some(old) => ev.observed.sup_dist(old),
                            None => ev.observed.sup_norm(),
                        };
                        (
                            lhs,
                            delta.min(2.0),
                            delta,
                            api_bound_wc(gamma, cfg.beta(), m, qdiff, eps),
                        )
                    }
                }
            }
        };
        let crude = match cfg.variant() {
            Variant::Vanilla => {
                let r = rbar + eps;
                2.0 * gamma * cfg.beta_pow_memory() * r / (1.0 - gamma)
                    + (1.0 + gamma) * eps / (1.0 - gamma)
            }
            _ => variant_bound,
        };
        self.pending = Some(PendingImprovement {
            variant_bound,
            crude_bound: crude,
            generic_bound: api_bound_generic(gamma, cfg.eta(), pinsker_lhs, xi_delta, eps),
        });

        let (q_gap_inf, thm_bound) = match self.monitor.as_mut() {
            Some(mon) => {
                let gap = mon.q_star.sup_dist(&ev.observed);
                if mon.q0.is_none() {
                    mon.q0 = Some((ev.exact.sup_norm(), mon.q_star.sup_dist(&ev.exact)));
                }
                let bound = theorem_bound(mon, cfg, gamma, k);
                (gap, bound)
            }
            None => (f64::NAN, f64::NAN),
        };

        self.trace.push(IterationRecord {
            iter: k,
            q_gap_inf,
            thm_bound,
            improvement_gap,
            improvement_bound,
            improvement_bound_crude: crude_bound,
            generic_improvement_bound: generic_bound,
            pinsker_lhs,
            pinsker_rhs,
            xi_delta_inf: xi_delta,
            stack_full,
        });

        let next_logits = match cfg.variant() {
            Variant::Exact => {
                let mut xi = self.logits.clone();
                xi.scale(cfg.beta());
                xi.add_scaled(cfg.alpha(), &ev.observed);
                self.stack.push(ev.observed.clone());
                self.evicted = None;
                xi
            }
            _ => {
                self.evicted = self.stack.push(ev.observed.clone());
                logits_from_stack(&self.stack, cfg)?
            }
        };
        self.policy = softmax_policy(&next_logits)?;
        self.prev_logits = Some(std::mem::replace(&mut self.logits, next_logits));
        self.last_observed = Some(ev.observed);
        self.iteration += 1;
        Ok(())
    }
}

fn theorem_bound(mon: &mut Monitor, cfg: &PmdConfig, gamma: f64, k: usize) -> f64 {
    let (q0_norm, q0_gap) = mon.q0.expect("first evaluation recorded");
    match cfg.variant() {
        Variant::Exact if mon.eps_eval == 0.0 => {
            if k == 0 {
                mon.qstar_norm + q0_norm
            } else {
                exact_epmd_bound(k, gamma, cfg.beta(), mon.qstar_norm, q0_gap)
            }
        }
        // with evaluation noise the exact variant is the M -> inf vanilla case
        Variant::Exact | Variant::Vanilla => vanilla_bound(
            k,
            gamma,
            cfg.beta(),
            cfg.memory_f64(),
            mon.rbar,
            mon.qstar_norm,
            mon.eps_eval,
        ),
        Variant::WeightCorrected => {
            let rec = mon.xk.get_or_insert_with(|| {
                XkRecursion::new(XkParams {
                    gamma,
                    beta: cfg.beta(),
                    memory: cfg.memory().expect("finite memory"),
                    qstar_norm: mon.qstar_norm,
                    q0_norm,
                    eps_eval: mon.eps_eval,
                })
            });
            while rec.k() < k {
                rec.advance();
            }
            rec.current()
        }
    }
}

/// `xi~_k` for the finite-memory variants, from `xi_k`, the newest evaluation
/// `Q_k` and the table about to be deleted (`None` means `Q_{k-M} = 0`).
fn deleted_logits(cfg: &PmdConfig, xi: &Logits, q_new: &QTable, q_old: Option<&QTable>) -> Logits {
    let m = cfg.memory_f64();
    let mut out = xi.clone();
    match cfg.variant() {
        Variant::Vanilla => {
            if let Some(old) = q_old {
                out.add_scaled(-cfg.alpha() * beta_pow(cfg.beta(), m - 1.0), old);
            }
        }
        Variant::WeightCorrected => {
            let c = cfg.alpha() * beta_pow(cfg.beta(), m - 1.0) / (1.0 - cfg.beta_pow_memory());
            out.add_scaled(c, q_new);
            if let Some(old) = q_old {
                out.add_scaled(-c, old);
            }
        }
        Variant::Exact => unreachable!("exact variant deletes nothing"),
    }
    out
}

/// Deleted logits and policy `(xi~_k, pi~_k)` of the last completed step.
pub fn deleted_policy(state: &PmdState, cfg: &PmdConfig) -> Result<(Logits, PolicyTable)> {
    if cfg.variant() == Variant::Exact {
        return Err(PmdError::VariantMismatch);
    }
    let xi = state.prev_logits.as_ref().ok_or(PmdError::EmptyStack)?;
    let q_new = state.stack.newest().ok_or(PmdError::EmptyStack)?;
    let xi_tilde = deleted_logits(cfg, xi, q_new, state.evicted.as_ref());
    let pi_tilde = softmax_policy(&xi_tilde)?;
    Ok((xi_tilde, pi_tilde))
}

/// Consuming form of [`PmdState::step`].
pub fn pmd_step(
    mdp: &TabularMdp,
    cfg: &PmdConfig,
    mut state: PmdState,
    evaluator: &Evaluator,
) -> Result<PmdState> {
    state.step(mdp, cfg, evaluator)?;
    Ok(state)
}

/// Runs `iters` iterations from the uniform policy, optionally auditing
/// against `q_star`.
pub fn run_pmd(
    mdp: &TabularMdp,
    cfg: &PmdConfig,
    evaluator: &Evaluator,
    iters: usize,
    q_star: Option<QTable>,
) -> Result<PmdState> {
    let mut state = PmdState::new(mdp, cfg);
    if let Some(q) = q_star {
        state = state.with_reference(mdp, cfg, q, evaluator);
    }
    for _ in 0..iters {
        state.step(mdp, cfg, evaluator)?;
    }
    Ok(state)
}
