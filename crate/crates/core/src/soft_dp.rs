//! Entropy-regularized dynamic programming.
//!
//! With negative entropy `h(p) = p . log p`, the policy operator is
//!
//! ```text
//! (T^pi f)(s, a) = R(s, a) + gamma * E_{s'} [ pi(s') . f(s') - tau * h(pi(s')) ]
//! ```
//!
//! and the optimality operator replaces the inner term by its maximum over the
//! simplex, `tau * log sum_a exp(f(s', a) / tau)`. Both are gamma-contractions
//! in the sup norm, so evaluation is plain fixed-point iteration from zero.

use rand::Rng as _;

use crate::error::{PmdError, Result};
use crate::exec::Exec;
use crate::mdp::TabularMdp;
use crate::rng::RngSeed;
use crate::tables::{check_distribution, PolicyTable, QTable, Table, VTable};

pub const DEFAULT_TOL: f64 = 1e-10;

/// `sum_a p(a) log p(a)` with `0 log 0 = 0`.
pub fn neg_entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(neg_entropy_unchecked(p))
}

pub(crate) fn neg_entropy_unchecked(p: &[f64]) -> f64 {
    p.iter()
        .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
        .sum()
}

/// `KL(p; q) = p . (log p - log q)`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    check_distribution(q)?;
    if p.len() != q.len() {
        return Err(PmdError::ShapeMismatch {
            expected: (1, p.len()),
            got: (1, q.len()),
        });
    }
    let mut kl = 0.0;
    for (&pa, &qa) in p.iter().zip(q) {
        if pa > 0.0 {
            if qa <= 0.0 {
                return Err(PmdError::SupportMismatch);
            }
            kl += pa * (pa.ln() - qa.ln());
        }
    }
    // rounding can leave a tiny negative residue when p == q
    Ok(kl.max(0.0))
}

/// `log sum exp(xs)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Writes `softmax(xs)` into `out`.
pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// `R_bar = (R_x + gamma * tau * log|A|) / (1 - gamma)`, the sup-norm bound
/// on every soft Q-function of the MDP.
pub fn q_upper_bound(mdp: &TabularMdp, tau: f64) -> f64 {
    let g = mdp.gamma();
    (mdp.reward_bound() + g * tau * (mdp.n_actions() as f64).ln()) / (1.0 - g)
}

/// Iteration budget that takes a contraction from 0 to within `tol`.
pub fn default_max_iter(mdp: &TabularMdp, tau: f64, tol: f64) -> usize {
    let g = mdp.gamma();
    let rbar = q_upper_bound(mdp, tau).max(f64::MIN_POSITIVE);
    let n = ((tol * (1.0 - g) / rbar).ln() / g.ln()).ceil();
    n.max(0.0) as usize + 1000
}

fn check_policy(mdp: &TabularMdp, pi: &PolicyTable) -> Result<()> {
    pi.ensure_shape(mdp.shape())
}

/// Soft state values `V(s) = pi(s) . Q(s) - tau h(pi(s))`.
pub fn soft_state_values(tau: f64, pi: &PolicyTable, q: &QTable) -> VTable {
    VTable(
        pi.iter_rows()
            .zip(q.iter_rows())
            .map(|(p, qs)| {
                let ev: f64 = p.iter().zip(qs).map(|(a, b)| a * b).sum();
                ev - tau * neg_entropy_unchecked(p)
            })
            .collect(),
    )
}

/// `Q(s, a) = R(s, a) + gamma E_{s'} v(s')`.
fn backup(mdp: &TabularMdp, v: &[f64], exec: Exec) -> QTable {
    let na = mdp.n_actions();
    let g = mdp.gamma();
    let mut out = Table::zeros(mdp.n_states(), na);
    exec.for_each_row(out.as_mut_slice(), na, |s, row| {
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = mdp.reward(s, a) + g * mdp.expected(s, a, v);
        }
    });
    QTable(out)
}

/// One application of the policy operator `T^pi_tau`.
pub fn bellman_policy_op(
    mdp: &TabularMdp,
    tau: f64,
    pi: &PolicyTable,
    f: &QTable,
) -> Result<QTable> {
    bellman_policy_op_with(Exec::default(), mdp, tau, pi, f)
}

pub fn bellman_policy_op_with(
    exec: Exec,
    mdp: &TabularMdp,
    tau: f64,
    pi: &PolicyTable,
    f: &QTable,
) -> Result<QTable> {
    if !(tau >= 0.0) {
        return Err(PmdError::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    check_policy(mdp, pi)?;
    f.ensure_shape(mdp.shape())?;
    let v = soft_state_values(tau, pi, f);
    Ok(backup(mdp, &v.0, exec))
}

/// Soft-max over the simplex: `max_p f . p - tau h(p) = tau logsumexp(f / tau)`.
pub fn soft_max_value(f: &[f64], tau: f64) -> f64 {
    let scaled: Vec<f64> = f.iter().map(|&x| x / tau).collect();
    tau * log_sum_exp(&scaled)
}

/// One application of the optimality operator `T*_tau`.
pub fn bellman_optimality_op(mdp: &TabularMdp, tau: f64, f: &QTable) -> Result<QTable> {
    bellman_optimality_op_with(Exec::default(), mdp, tau, f)
}

pub fn bellman_optimality_op_with(
    exec: Exec,
    mdp: &TabularMdp,
    tau: f64,
    f: &QTable,
) -> Result<QTable> {
    if !(tau > 0.0) {
        return Err(PmdError::TauNonPositive(tau));
    }
    f.ensure_shape(mdp.shape())?;
    let v: Vec<f64> = f.iter_rows().map(|row| soft_max_value(row, tau)).collect();
    Ok(backup(mdp, &v, exec))
}

/// `Q^pi_tau` by fixed-point iteration from zero, stopping once the
/// returned table satisfies `||T^pi Q - Q|| <= tol`.
pub fn evaluate_policy_exact(
    mdp: &TabularMdp,
    tau: f64,
    pi: &PolicyTable,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    evaluate_policy_exact_with(Exec::default(), mdp, tau, pi, tol, max_iter)
}

pub fn evaluate_policy_exact_with(
    exec: Exec,
    mdp: &TabularMdp,
    tau: f64,
    pi: &PolicyTable,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(PmdError::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    if !(tau >= 0.0) {
        return Err(PmdError::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    check_policy(mdp, pi)?;
    // entropy bonus per state is fixed by pi; hoist it out of the sweep
    let bonus: Vec<f64> = pi
        .iter_rows()
        .map(|p| -tau * neg_entropy_unchecked(p))
        .collect();
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; mdp.n_states()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        for (s, slot) in v.iter_mut().enumerate() {
            let ev: f64 = pi.row(s).iter().zip(q.row(s)).map(|(a, b)| a * b).sum();
            *slot = ev + bonus[s];
        }
        let next = backup(mdp, &v, exec);
        residual = next.sup_dist(&q);
        q = next;
        // ||T q_{n+1} - q_{n+1}|| <= gamma * ||q_{n+1} - q_n||
        if mdp.gamma() * residual <= tol {
            return Ok(q);
        }
    }
    Err(PmdError::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

/// Soft value iteration. Returns `(Q*, pi*)` with `pi* = softmax(Q* / tau)`.
pub fn solve_optimal(
    mdp: &TabularMdp,
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(QTable, PolicyTable)> {
    solve_optimal_with(Exec::default(), mdp, tau, tol, max_iter)
}

pub fn solve_optimal_with(
    exec: Exec,
    mdp: &TabularMdp,
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(QTable, PolicyTable)> {
    if !(tau > 0.0) {
        return Err(PmdError::TauNonPositive(tau));
    }
    if !(tol > 0.0) {
        return Err(PmdError::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = bellman_optimality_op_with(exec, mdp, tau, &q)?;
        residual = next.sup_dist(&q);
        q = next;
        if mdp.gamma() * residual <= tol {
            let pi = boltzmann(&q, tau);
            return Ok((q, pi));
        }
    }
    Err(PmdError::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

/// `softmax(q / tau)` per state.
pub fn boltzmann(q: &QTable, tau: f64) -> PolicyTable {
    let mut out = Table::zeros(q.n_states(), q.n_actions());
    let mut scaled = vec![0.0; q.n_actions()];
    for s in 0..q.n_states() {
        for (x, &v) in scaled.iter_mut().zip(q.row(s)) {
            *x = v / tau;
        }
        softmax_into(&scaled, out.row_mut(s));
    }
    PolicyTable(out)
}

/// Unregularized value iteration (`tau = 0`), used as the hard-max oracle.
pub fn solve_hard_optimal(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<QTable> {
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for _ in 0..max_iter {
        let v: Vec<f64> = q
            .iter_rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next = backup(mdp, &v, Exec::Sequential);
        let residual = next.sup_dist(&q);
        q = next;
        if mdp.gamma() * residual <= tol {
            return Ok(q);
        }
    }
    Err(PmdError::MaxIterExceeded {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// i.i.d. uniform on `[-eps, eps]` per entry.
    #[default]
    Uniform,
    /// every entry moved by exactly `+eps` or `-eps`.
    SignedMax,
}

/// Bounded policy-evaluation error model: `||Q_noisy - Q||_inf <= eps_eval`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub eps_eval: f64,
    pub seed: RngSeed,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(eps_eval: f64, seed: RngSeed, mode: NoiseMode) -> Result<Self> {
        if !(eps_eval >= 0.0) || !eps_eval.is_finite() {
            return Err(PmdError::InvalidParameter(format!(
                "eps_eval must be a finite nonnegative number, got {eps_eval}"
            )));
        }
        Ok(Self { eps_eval, seed, mode })
    }

    /// Adds the perturbation to `q` in place.
    pub fn perturb(&self, q: &mut QTable) {
        if self.eps_eval == 0.0 {
            return;
        }
        let eps = self.eps_eval;
        let mut rng = self.seed.rng();
        for v in q.as_mut_slice() {
            *v += match self.mode {
                NoiseMode::Uniform => rng.gen_range(-eps..=eps),
                NoiseMode::SignedMax => {
                    if rng.gen::<bool>() {
                        eps
                    } else {
                        -eps
                    }
                }
            };
        }
    }
}

/// Exact evaluation followed by a bounded perturbation.
pub fn evaluate_policy_noisy(
    mdp: &TabularMdp,
    tau: f64,
    pi: &PolicyTable,
    tol: f64,
    max_iter: usize,
    noise: &NoiseSpec,
) -> Result<QTable> {
    let mut q = evaluate_policy_exact(mdp, tau, pi, tol, max_iter)?;
    noise.perturb(&mut q);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{chain_mdp, random_mdp};

    fn one_state(n_actions: usize, r: f64) -> TabularMdp {
        TabularMdp::new(
            Table::filled(1, n_actions, r),
            r.abs().max(1.0),
            vec![1.0; n_actions],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn neg_entropy_values() {
        assert!((neg_entropy(&[0.25; 4]).unwrap() + 4f64.ln()).abs() < 1e-12);
        assert_eq!(neg_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        // 0.75 ln 0.75 + 0.25 ln 0.25
        assert!((neg_entropy(&[0.75, 0.25]).unwrap() + 0.562_335_144_618_808_6).abs() < 1e-12);
        assert!(neg_entropy(&[0.3, 0.3]).is_err());
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(PmdError::SupportMismatch)
        );
    }

    #[test]
    fn log_sum_exp_is_overflow_safe() {
        let big = log_sum_exp(&[1000.0, 1000.0]);
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-9);
        let mut out = [0.0; 2];
        softmax_into(&[2f64.ln(), 0.0], &mut out);
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn policy_op_trivial_case() {
        let m = one_state(1, 0.5);
        let pi = PolicyTable::uniform(1, 1);
        let out = bellman_policy_op(&m, 3.0, &pi, &QTable::zeros(1, 1)).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn policy_op_shape_mismatch() {
        let m = one_state(2, 0.5);
        let pi = PolicyTable::uniform(1, 2);
        let err = bellman_policy_op(&m, 0.1, &pi, &QTable::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, PmdError::ShapeMismatch { .. }));
    }

    #[test]
    fn optimality_op_uniform_maximiser() {
        let m = TabularMdp::new(Table::zeros(1, 2), 1.0, vec![1.0, 1.0], 0.5).unwrap();
        let q = 1.7;
        let tau = 0.3;
        let f = QTable::from_rows(&[vec![q, q]]).unwrap();
        let out = bellman_optimality_op(&m, tau, &f).unwrap();
        // R = 0, so out = gamma * (q + tau log 2)
        assert!((out.get(0, 0) - 0.5 * (q + tau * 2f64.ln())).abs() < 1e-14);
        assert!(matches!(
            bellman_optimality_op(&m, 0.0, &f),
            Err(PmdError::TauNonPositive(_))
        ));
    }

    #[test]
    fn evaluation_geometric_series() {
        let m = one_state(1, 0.5);
        let q = evaluate_policy_exact(&m, 0.1, &PolicyTable::uniform(1, 1), 1e-12, 10_000).unwrap();
        assert!((q.get(0, 0) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn evaluation_constant_fixed_point() {
        let (r, tau) = (0.3, 0.2);
        let m = one_state(2, r);
        let q = evaluate_policy_exact(&m, tau, &PolicyTable::uniform(1, 2), 1e-12, 10_000).unwrap();
        let expect = (r + 0.9 * tau * 2f64.ln()) / 0.1;
        assert!((q.get(0, 1) - expect).abs() < 1e-10);
    }

    #[test]
    fn evaluation_reports_max_iter() {
        let m = one_state(1, 0.5);
        let err = evaluate_policy_exact(&m, 0.0, &PolicyTable::uniform(1, 1), 1e-12, 3).unwrap_err();
        assert!(matches!(err, PmdError::MaxIterExceeded { iterations: 3, .. }));
    }

    #[test]
    fn optimal_maximal_reward_hits_rbar() {
        let rx = 1.5;
        let tau = 0.25;
        let m = one_state(4, rx);
        let (q, pi) = solve_optimal(&m, tau, 1e-12, 100_000).unwrap();
        let rbar = q_upper_bound(&m, tau);
        assert!((rbar - (rx + 0.9 * tau * 4f64.ln()) / 0.1).abs() < 1e-12);
        assert!((q.get(0, 2) - rbar).abs() < 1e-9);
        assert!((pi.get(0, 0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn optimal_single_action_equals_evaluation() {
        let m = random_mdp(RngSeed(5), 6, 1, 3, 1.0, 0.8).unwrap();
        let (q, _) = solve_optimal(&m, 0.5, 1e-12, 100_000).unwrap();
        let qe = evaluate_policy_exact(&m, 0.5, &PolicyTable::uniform(6, 1), 1e-12, 100_000).unwrap();
        assert!(q.sup_dist(&qe) < 1e-10);
    }

    #[test]
    fn q_upper_bound_cases() {
        let m = random_mdp(RngSeed(1), 3, 4, 2, 1.0, 0.9).unwrap();
        assert!((q_upper_bound(&m, 0.1) - 11.247_664_925_007_9).abs() < 1e-9);
        assert!((q_upper_bound(&m, 0.0) - 10.0).abs() < 1e-12);
        let single = random_mdp(RngSeed(1), 3, 1, 2, 1.0, 0.9).unwrap();
        assert!((q_upper_bound(&single, 5.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn noise_modes() {
        let m = chain_mdp(4, 0.1, 0.9).unwrap();
        let pi = PolicyTable::uniform(4, 2);
        let exact = evaluate_policy_exact(&m, 0.1, &pi, 1e-12, 100_000).unwrap();
        let zero = NoiseSpec::new(0.0, RngSeed(1), NoiseMode::Uniform).unwrap();
        assert_eq!(evaluate_policy_noisy(&m, 0.1, &pi, 1e-12, 100_000, &zero).unwrap(), exact);
        let sm = NoiseSpec::new(0.01, RngSeed(1), NoiseMode::SignedMax).unwrap();
        let noisy = evaluate_policy_noisy(&m, 0.1, &pi, 1e-12, 100_000, &sm).unwrap();
        for (a, b) in noisy.as_slice().iter().zip(exact.as_slice()) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-12);
        }
        assert!(NoiseSpec::new(-1.0, RngSeed(1), NoiseMode::Uniform).is_err());
    }

    #[test]
    fn uniform_noise_stays_bounded() {
        let eps = 0.05;
        let mut q = QTable::zeros(100, 100);
        NoiseSpec::new(eps, RngSeed(11), NoiseMode::Uniform).unwrap().perturb(&mut q);
        assert!(q.sup_norm() <= eps);
        // the 10^4 draws should nearly reach the edge of the band
        assert!(q.sup_norm() > 0.99 * eps);
    }

    #[test]
    fn hard_chain_value() {
        let m = chain_mdp(5, 0.0, 0.9).unwrap();
        let q = solve_hard_optimal(&m, 1e-12, 100_000).unwrap();
        let v0 = q.get(0, 0).max(q.get(0, 1));
        assert!((v0 - 0.9f64.powi(4) / 0.1).abs() < 1e-9);
    }
}
