//! Convergence constants and bounding sequences for exact, vanilla
//! finite-memory and weight-corrected finite-memory EPMD.
//!
//! Powers of `beta` go through `exp(M ln beta)` so large memories underflow
//! cleanly to zero instead of accumulating rounding through repeated products.

use serde::Serialize;

/// `beta^m`, with `m = inf` mapping to 0.
pub fn beta_pow(beta: f64, m: f64) -> f64 {
    if m.is_infinite() {
        0.0
    } else {
        (m * beta.ln()).exp()
    }
}

/// Exact-EPMD contraction rate `d = beta + gamma (1 - beta)`.
pub fn exact_rate(gamma: f64, beta: f64) -> f64 {
    beta + gamma * (1.0 - beta)
}

/// Evaluation-tolerance slack shared by every bound check: `4 tol / (1 - gamma)`.
pub fn slack(tol: f64, gamma: f64) -> f64 {
    4.0 * tol / (1.0 - gamma)
}

/// `R_bar` from its ingredients.
pub fn rbar(reward_bound: f64, gamma: f64, tau: f64, n_actions: usize) -> f64 {
    (reward_bound + gamma * tau * (n_actions as f64).ln()) / (1.0 - gamma)
}

/// Exact EPMD: `||Q* - Q_k|| <= gamma d^(k-1) (||Q* - Q_0|| + 2 beta ||Q*||)`, `k >= 1`.
pub fn exact_epmd_bound(k: usize, gamma: f64, beta: f64, qstar_norm: f64, q0_gap_norm: f64) -> f64 {
    assert!(k >= 1, "the exact EPMD bound starts at k = 1");
    let d = exact_rate(gamma, beta);
    gamma * d.powi((k - 1) as i32) * (q0_gap_norm + 2.0 * beta * qstar_norm)
}

/// Residual constant `C1` of vanilla finite-memory EPMD, including the
/// `gamma eps / ((1 - gamma)(1 - beta))` addend when `eps_eval > 0`.
/// `memory = inf` is accepted and gives the limit value.
pub fn vanilla_c1(gamma: f64, beta: f64, memory: f64, rbar: f64, eps_eval: f64) -> f64 {
    let bm = beta_pow(beta, memory);
    2.0 * gamma * rbar / (1.0 - gamma) * (1.0 + gamma * (1.0 - bm) / ((1.0 - beta) * (1.0 - gamma)))
        + gamma * eps_eval / ((1.0 - gamma) * (1.0 - beta))
}

/// Vanilla finite-memory bound:
/// `gamma d^k ||Q*|| + beta^M C1 + (1 + gamma^2) eps / ((1 - gamma)^2 (1 - beta))`.
pub fn vanilla_bound(
    k: usize,
    gamma: f64,
    beta: f64,
    memory: f64,
    rbar: f64,
    qstar_norm: f64,
    eps_eval: f64,
) -> f64 {
    let d = exact_rate(gamma, beta);
    gamma * d.powi(k as i32) * qstar_norm
        + beta_pow(beta, memory) * vanilla_c1(gamma, beta, memory, rbar, eps_eval)
        + (1.0 + gamma * gamma) * eps_eval / ((1.0 - gamma).powi(2) * (1.0 - beta))
}

/// Ratio `r` such that the weight-corrected recursion contracts iff `beta^M < r`.
fn memory_ratio(gamma: f64, beta: f64) -> f64 {
    (1.0 - gamma).powi(2) * (1.0 - beta) / (gamma * gamma * (3.0 + beta) + 1.0 - beta)
}

/// Memory threshold `log(r) / log(beta)`; any `M` strictly above it contracts.
pub fn memory_threshold(gamma: f64, beta: f64) -> f64 {
    memory_ratio(gamma, beta).ln() / beta.ln()
}

/// Smallest integer memory strictly above [`memory_threshold`].
pub fn min_memory(gamma: f64, beta: f64) -> usize {
    assert!(gamma > 0.0 && gamma < 1.0 && beta > 0.0 && beta < 1.0);
    let t = memory_threshold(gamma, beta);
    (t.floor() as i64 + 1).max(1) as usize
}

/// `d1 + d2 < 1` decided on the cancellation-free form `M ln beta < ln r`.
pub fn wc_converges(gamma: f64, beta: f64, memory: usize) -> bool {
    memory as f64 * beta.ln() < memory_ratio(gamma, beta).ln()
}

/// Constants of the weight-corrected recursion `x_{k+1} = d1 x_k + d2 x_{k-M}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WcConstants {
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// One-step envelope rate `d1 + d2 / d3`.
    pub rate: f64,
    pub converges: bool,
}

pub fn wc_constants(gamma: f64, beta: f64, memory: usize) -> WcConstants {
    assert!(memory >= 1, "memory must be at least 1");
    let bm = beta_pow(beta, memory as f64);
    let c1 = bm / (1.0 - bm);
    let c2 = ((1.0 + gamma) / (1.0 - gamma) - beta) * c1;
    let d1 = beta + gamma * (1.0 - beta) / (1.0 - bm) + gamma * c2;
    let d2 = 2.0 * c1 * gamma * gamma / (1.0 - gamma);
    let d1m = d1.powi(memory as i32);
    let geo = if (1.0 - d1).abs() < 1e-12 {
        memory as f64
    } else {
        (1.0 - d1m) / (1.0 - d1)
    };
    let d3 = d1m + d2 * geo;
    WcConstants {
        c1,
        c2,
        d1,
        d2,
        d3,
        rate: d1 + d2 / d3,
        converges: wc_converges(gamma, beta, memory),
    }
}

/// Every constant for one `(gamma, beta, M, R_bar)` setting, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub gamma: f64,
    pub beta: f64,
    pub memory: usize,
    pub rbar: f64,
    pub d: f64,
    pub vanilla_c1: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub wc_rate: f64,
    pub min_memory: usize,
    pub wc_converges: bool,
}

impl TheoryConstants {
    pub fn new(gamma: f64, beta: f64, memory: usize, rbar: f64, eps_eval: f64) -> Self {
        let wc = wc_constants(gamma, beta, memory);
        Self {
            gamma,
            beta,
            memory,
            rbar,
            d: exact_rate(gamma, beta),
            vanilla_c1: vanilla_c1(gamma, beta, memory as f64, rbar, eps_eval),
            c1: wc.c1,
            c2: wc.c2,
            d1: wc.d1,
            d2: wc.d2,
            d3: wc.d3,
            wc_rate: wc.rate,
            min_memory: min_memory(gamma, beta),
            wc_converges: wc.converges,
        }
    }

    /// `(name, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("M", self.memory as f64),
            ("Rbar", self.rbar),
            ("d", self.d),
            ("C1", self.vanilla_c1),
            ("c1", self.c1),
            ("c2", self.c2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d1_plus_d2", self.d1 + self.d2),
            ("d3", self.d3),
            ("wc_rate", self.wc_rate),
            ("min_M", self.min_memory as f64),
        ]
    }
}

/// Inputs of the weight-corrected bounding sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XkParams {
    pub gamma: f64,
    pub beta: f64,
    pub memory: usize,
    pub qstar_norm: f64,
    pub q0_norm: f64,
    pub eps_eval: f64,
}

impl XkParams {
    /// Per-step additive error `(1 + gamma^2) eps / (1 - gamma)`.
    pub fn eps_step(&self) -> f64 {
        (1.0 + self.gamma * self.gamma) * self.eps_eval / (1.0 - self.gamma)
    }

    pub fn x0(&self) -> f64 {
        self.qstar_norm
            + self.q0_norm
            + (1.0 + self.gamma * self.gamma) * self.eps_eval
                / ((1.0 - self.gamma) * (1.0 - self.beta))
    }

    /// Value of `x_k` for every `k < 0`.
    pub fn x_negative(&self) -> f64 {
        self.qstar_norm / self.gamma
    }

    /// Starting level of the envelopes: `max(x_{<0}, x_0)`.
    pub fn envelope_base(&self) -> f64 {
        self.x_negative().max(self.x0())
    }

    /// Asymptotic error level `(1 + gamma^2) eps / ((1 - gamma)(1 - d1 - d2))`;
    /// infinite when the recursion does not contract and `eps > 0`.
    pub fn floor(&self, wc: &WcConstants) -> f64 {
        if self.eps_eval == 0.0 {
            0.0
        } else if wc.converges {
            self.eps_step() / (1.0 - wc.d1 - wc.d2)
        } else {
            f64::INFINITY
        }
    }
}

/// Streaming evaluation of `x_{k+1} = d1 x_k + d2 x_{k-M} + e`, keeping only
/// the last `M + 1` terms.
#[derive(Debug, Clone)]
pub struct XkRecursion {
    params: XkParams,
    wc: WcConstants,
    ring: Vec<f64>,
    k: usize,
}

impl XkRecursion {
    pub fn new(params: XkParams) -> Self {
        let wc = wc_constants(params.gamma, params.beta, params.memory);
        let mut ring = vec![params.x_negative(); params.memory + 1];
        ring[0] = params.x0();
        Self { params, wc, ring, k: 0 }
    }

    pub fn constants(&self) -> &WcConstants {
        &self.wc
    }

    pub fn params(&self) -> &XkParams {
        &self.params
    }

    /// Index of the current term.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Current term `x_k`.
    pub fn current(&self) -> f64 {
        self.ring[self.k % self.ring.len()]
    }

    /// Advances to `x_{k+1}` and returns it.
    pub fn advance(&mut self) -> f64 {
        let len = self.ring.len();
        let xk = self.ring[self.k % len];
        // slot (k + 1) mod (M + 1) still holds x_{k-M}
        let x_lag = self.ring[(self.k + 1) % len];
        let next = self.wc.d1 * xk + self.wc.d2 * x_lag + self.params.eps_step();
        self.k += 1;
        self.ring[self.k % len] = next;
        next
    }

    /// `x'_k = (d1 + d2/d3)^k * base + floor`.
    pub fn x_prime(&self, k: usize) -> f64 {
        (k as f64 * self.wc.rate.ln()).exp() * self.params.envelope_base()
            + self.params.floor(&self.wc)
    }

    /// `x''_k = (d1 + d2)^(k / (M + 1)) * base + floor`.
    pub fn x_double_prime(&self, k: usize) -> f64 {
        let a = k as f64 / (self.params.memory + 1) as f64;
        (a * (self.wc.d1 + self.wc.d2).ln()).exp() * self.params.envelope_base()
            + self.params.floor(&self.wc)
    }
}

/// Stored `x_k`, `x'_k`, `x''_k` for `k = 0..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSeries {
    pub k_max: usize,
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub x_double_prime: Vec<f64>,
    pub constants: WcConstants,
    /// Asymptotic level of `x_k` (0 without evaluation error).
    pub eps_eval_floor: f64,
    /// Set when the series blew past `1e12 * x_0` and was cut short.
    pub diverged: bool,
}

/// Truncation level for divergent series, relative to `x_0`.
pub const DIVERGENCE_CUTOFF: f64 = 1e12;

/// Materializes the bounding sequence up to `k_max` (or the divergence cutoff).
pub fn xk_sequence(params: XkParams, k_max: usize) -> SequenceSeries {
    assert!(k_max >= 1, "k_max must be at least 1");
    let mut rec = XkRecursion::new(params);
    let limit = DIVERGENCE_CUTOFF * params.x0();
    let mut x = Vec::with_capacity(k_max + 1);
    x.push(rec.current());
    let mut diverged = false;
    for _ in 0..k_max {
        let v = rec.advance();
        x.push(v);
        if !(v <= limit) {
            diverged = true;
            break;
        }
    }
    let x_prime = (0..x.len()).map(|k| rec.x_prime(k)).collect();
    let x_double_prime = (0..x.len()).map(|k| rec.x_double_prime(k)).collect();
    SequenceSeries {
        k_max,
        x,
        x_prime,
        x_double_prime,
        constants: *rec.constants(),
        eps_eval_floor: params.floor(rec.constants()),
        diverged,
    }
}

/// Magnitude of the vanilla per-iteration improvement bound:
/// `min{2, a b^(M-1) (R+e)} gamma b^M (R+e)/(1-gamma) + (1+gamma) e/(1-gamma)`.
pub fn api_bound_vanilla(
    gamma: f64,
    beta: f64,
    memory: f64,
    alpha: f64,
    rbar: f64,
    eps_eval: f64,
) -> f64 {
    let r = rbar + eps_eval;
    let pinsker = alpha * beta_pow(beta, memory - 1.0) * r;
    pinsker.min(2.0) * gamma * beta_pow(beta, memory) * r / (1.0 - gamma)
        + (1.0 + gamma) * eps_eval / (1.0 - gamma)
}

/// Magnitude of the weight-corrected improvement bound given the measured
/// `||Q_k - Q_{k-M}||`.
pub fn api_bound_wc(gamma: f64, beta: f64, memory: f64, qdiff_norm: f64, eps_eval: f64) -> f64 {
    let bm = beta_pow(beta, memory);
    2.0 * gamma * bm * qdiff_norm / ((1.0 - gamma) * (1.0 - bm))
        + (1.0 + gamma) * eps_eval / (1.0 - gamma)
}

/// Magnitude of the generic approximate-improvement bound for any deleted
/// policy: `gamma eta max_s ||pi - pi~||_1 ||xi - xi~|| / (1 - gamma) + (1+gamma) e/(1-gamma)`.
pub fn api_bound_generic(
    gamma: f64,
    eta: f64,
    policy_l1: f64,
    logit_delta: f64,
    eps_eval: f64,
) -> f64 {
    gamma * eta * policy_l1 * logit_delta / (1.0 - gamma) + (1.0 + gamma) * eps_eval / (1.0 - gamma)
}
