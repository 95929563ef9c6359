#![allow(dead_code)]

use pmd_lab::mdp::{random_mdp, TabularMdp};
use pmd_lab::pmd::{Evaluator, PmdConfig, PmdState, Variant};
use pmd_lab::rng::RngSeed;
use pmd_lab::soft_dp::solve_optimal;
use pmd_lab::tables::{Logits, QTable, Table};
use rand::Rng;

pub const TOL: f64 = 1e-11;

/// The 10x4 random MDPs shared by the convergence checks.
pub fn bench_mdp(seed: u64) -> TabularMdp {
    random_mdp(RngSeed(seed), 10, 4, 3, 1.0, 0.9).unwrap()
}

pub fn q_star(mdp: &TabularMdp, tau: f64) -> QTable {
    solve_optimal(mdp, tau, 1e-13, 1_000_000).unwrap().0
}

/// Runs weight-corrected PMD for `3M` iterations and keeps the additive
/// recursion `xi <- beta xi + alpha Q_k + alpha beta^M/(1-beta^M) (Q_k - Q_{k-M})`
/// beside the engine's stack-built logits. Returns the largest sup distance.
pub fn wc_dual_path(seed: u64) -> f64 {
    let mut rng = RngSeed(seed).stream(99);
    let ns = rng.gen_range(3..10);
    let na = rng.gen_range(2..5);
    let mdp = random_mdp(RngSeed(seed), ns, na, 2, 1.0, rng.gen_range(0.5..0.95)).unwrap();
    let m = rng.gen_range(1..30);
    let cfg = PmdConfig::from_beta(rng.gen_range(0.05..1.0), rng.gen_range(0.3..0.95), Some(m), Variant::WeightCorrected)
        .unwrap();
    let ev = Evaluator::exact(TOL);
    let mut state = PmdState::new(&mdp, &cfg);
    let mut history: Vec<QTable> = Vec::new();
    let mut xi = Logits(Table::zeros(ns, na));
    let c = cfg.alpha() * cfg.beta_pow_memory() / (1.0 - cfg.beta_pow_memory());
    let mut worst: f64 = 0.0;
    for k in 0..3 * m {
        state.step(&mdp, &cfg, &ev).unwrap();
        let q = state.stack().newest().unwrap().clone();
        xi.scale(cfg.beta());
        xi.add_scaled(cfg.alpha() + c, &q);
        if k >= m {
            xi.add_scaled(-c, &history[k - m]);
        }
        history.push(q);
        worst = worst.max(xi.sup_dist(state.logits()));
    }
    worst
}
