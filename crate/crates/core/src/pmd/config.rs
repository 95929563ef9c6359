use std::fmt;
use std::str::FromStr;

use crate::error::{PmdError, Result};
use crate::theory::beta_pow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Full-history mirror descent, `xi <- beta xi + alpha Q`.
    Exact,
    /// Truncated geometric sum over the last `M` Q-tables.
    Vanilla,
    /// Truncated sum rescaled by `1 / (1 - beta^M)`.
    WeightCorrected,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Exact => "exact",
            Variant::Vanilla => "vanilla",
            Variant::WeightCorrected => "weight-corrected",
        })
    }
}

impl FromStr for Variant {
    type Err = PmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "exact-epmd" => Ok(Variant::Exact),
            "vanilla" => Ok(Variant::Vanilla),
            "weight-corrected" | "wc" => Ok(Variant::WeightCorrected),
            other => Err(PmdError::Parse(format!("unknown variant `{other}`"))),
        }
    }
}

/// Regularization weights and memory of a PMD run. `alpha` and `beta` are
/// always derived from `(tau, eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmdConfig {
    tau: f64,
    eta: f64,
    alpha: f64,
    beta: f64,
    memory: Option<usize>,
    variant: Variant,
}

impl PmdConfig {
    /// `memory` is ignored (unbounded) for [`Variant::Exact`] and required
    /// otherwise.
    pub fn new(tau: f64, eta: f64, memory: Option<usize>, variant: Variant) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(PmdError::TauNonPositive(tau));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(PmdError::InvalidParameter(format!("eta must be > 0, got {eta}")));
        }
        let memory = match variant {
            Variant::Exact => None,
            _ => match memory {
                Some(m) if m >= 1 => Some(m),
                _ => {
                    return Err(PmdError::InvalidParameter(
                        "finite-memory variants need M >= 1".into(),
                    ))
                }
            },
        };
        Ok(Self {
            tau,
            eta,
            alpha: 1.0 / (eta + tau),
            beta: eta / (eta + tau),
            memory,
            variant,
        })
    }

    /// Config whose KL weight gives the requested `beta`: `eta = tau beta / (1 - beta)`.
    pub fn from_beta(tau: f64, beta: f64, memory: Option<usize>, variant: Variant) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(PmdError::InvalidParameter(format!("beta must lie in (0, 1), got {beta}")));
        }
        Self::new(tau, tau * beta / (1.0 - beta), memory, variant)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// `None` for the unbounded exact variant.
    pub fn memory(&self) -> Option<usize> {
        self.memory
    }

    /// Memory as a real number, `inf` for the exact variant.
    pub fn memory_f64(&self) -> f64 {
        self.memory.map_or(f64::INFINITY, |m| m as f64)
    }

    /// `beta^M` in log space; 0 for the exact variant.
    pub fn beta_pow_memory(&self) -> f64 {
        beta_pow(self.beta, self.memory_f64())
    }

    /// Number of Q-tables the stack keeps.
    pub fn stack_capacity(&self) -> usize {
        self.memory.unwrap_or(1)
    }
}
