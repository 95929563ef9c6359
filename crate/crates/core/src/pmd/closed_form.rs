//! Brute-force check of the closed-form regularized greedy step.

use crate::error::{PmdError, Result};
use crate::soft_dp::{kl_divergence, neg_entropy_unchecked};
use crate::tables::{PolicyTable, QTable};

/// Largest action space the simplex grid search accepts.
pub const MAX_GRID_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormReport {
    pub state: usize,
    /// `pi_prev^beta exp(Q / (eta + tau))`, normalized.
    pub closed_form: Vec<f64>,
    pub grid_best: Vec<f64>,
    pub grid_objective: f64,
    pub closed_form_objective: f64,
    pub tv: f64,
    pub tolerance: f64,
}

impl ClosedFormReport {
    pub fn passed(&self) -> bool {
        self.tv <= self.tolerance
    }
}

/// `q . p - tau h(p) - eta KL(p; prev)` with `h` the negative entropy.
pub fn step_objective(q: &[f64], prev: &[f64], tau: f64, eta: f64, p: &[f64]) -> f64 {
    let lin: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
    let kl = match kl_divergence(p, prev) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    lin - tau * neg_entropy_unchecked(p) - eta * kl
}

/// Closed-form maximizer of [`step_objective`].
pub fn closed_form_step(q: &[f64], prev: &[f64], tau: f64, eta: f64) -> Vec<f64> {
    let beta = eta / (eta + tau);
    let logits: Vec<f64> = q
        .iter()
        .zip(prev)
        .map(|(&qa, &pa)| {
            if pa > 0.0 {
                beta * pa.ln() + qa / (eta + tau)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Grid-searches the objective at `state` and compares the argmax with the
/// closed form in total variation.
pub fn check_closed_form_update(
    q: &QTable,
    prev_policy: &PolicyTable,
    tau: f64,
    eta: f64,
    state: usize,
    grid_resolution: f64,
) -> Result<ClosedFormReport> {
    let na = q.n_actions();
    if na > MAX_GRID_ACTIONS {
        return Err(PmdError::ActionSpaceTooLarge(na));
    }
    if !(grid_resolution > 0.0 && grid_resolution <= 1e-2) {
        return Err(PmdError::InvalidParameter(format!(
            "grid resolution must lie in (0, 1e-2], got {grid_resolution}"
        )));
    }
    if !(tau > 0.0) {
        return Err(PmdError::TauNonPositive(tau));
    }
    if !(eta > 0.0) {
        return Err(PmdError::InvalidParameter(format!("eta must be > 0, got {eta}")));
    }
    prev_policy.ensure_shape(q.shape())?;
    if state >= q.n_states() {
        return Err(PmdError::InvalidParameter(format!("state {state} out of range")));
    }

    let qs = q.row(state);
    let prev = prev_policy.row(state);
    let n = (1.0 / grid_resolution).round() as usize;
    let mut counts = vec![0usize; na];
    let mut p = vec![0.0; na];
    let mut best = (f64::NEG_INFINITY, vec![0.0; na]);
    visit(&mut counts, 0, n, &mut |c| {
        for (pi, &ci) in p.iter_mut().zip(c) {
            *pi = ci as f64 / n as f64;
        }
        let v = step_objective(qs, prev, tau, eta, &p);
        if v > best.0 {
            best = (v, p.clone());
        }
    });

    let closed = closed_form_step(qs, prev, tau, eta);
    let tv = 0.5 * closed.iter().zip(&best.1).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(ClosedFormReport {
        state,
        closed_form_objective: step_objective(qs, prev, tau, eta, &closed),
        closed_form: closed,
        grid_best: best.1,
        grid_objective: best.0,
        tv,
        tolerance: (grid_resolution * na as f64).max(1e-3),
    })
}

// all compositions of `left` into the remaining slots
fn visit(counts: &mut [usize], i: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if i + 1 == counts.len() {
        counts[i] = left;
        f(counts);
        return;
    }
    for c in 0..=left {
        counts[i] = c;
        visit(counts, i + 1, left - c, f);
    }
}
