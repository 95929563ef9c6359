//! Behavior policies used for data collection.

use rand::Rng as _;

use crate::error::{PmdError, Result};
use crate::rng::{Rng, RngSeed};
use crate::tables::PolicyTable;

/// `(1 - eps) pi + eps uniform`, row by row.
pub fn epsilon_softmax(policy: &PolicyTable, eps: f64) -> Result<PolicyTable> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(PmdError::EpsOutOfRange(eps));
    }
    let u = eps / policy.n_actions() as f64;
    Ok(PolicyTable(policy.map(|p| (1.0 - eps) * p + u)))
}

/// Index drawn from the distribution `p` by inversion.
pub fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Largest Poisson rate the CDF inversion supports (`exp(-lambda)` must not
/// underflow).
pub const MAX_POISSON_RATE: f64 = 700.0;

/// Poisson draw by sequential CDF inversion.
pub fn sample_poisson(lambda: f64, rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut k = 0usize;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Draws an action from the policy and repeats it for
/// `max(1, Poisson(lambda))` steps before drawing again.
#[derive(Debug, Clone)]
pub struct StickySampler {
    policy: PolicyTable,
    lambda: f64,
    rng: Rng,
    current: Option<(usize, usize)>,
}

impl StickySampler {
    pub fn new(policy: PolicyTable, lambda: f64, seed: RngSeed) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= MAX_POISSON_RATE) {
            return Err(PmdError::InvalidParameter(format!(
                "sticky rate must lie in (0, {MAX_POISSON_RATE}], got {lambda}"
            )));
        }
        Ok(Self {
            policy,
            lambda,
            rng: seed.rng(),
            current: None,
        })
    }

    pub fn set_policy(&mut self, policy: PolicyTable) {
        self.policy = policy;
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    /// Forgets the action in progress, e.g. at an episode boundary.
    pub fn reset(&mut self) {
        self.current = None;
    }

    pub fn draw_duration(&mut self) -> usize {
        sample_poisson(self.lambda, &mut self.rng).max(1)
    }

    pub fn sample(&mut self, state: usize) -> usize {
        match self.current {
            Some((a, left)) if left > 0 => {
                self.current = Some((a, left - 1));
                a
            }
            _ => {
                let a = sample_categorical(self.policy.row(state), &mut self.rng);
                let n = self.draw_duration();
                self.current = Some((a, n - 1));
                a
            }
        }
    }
}
