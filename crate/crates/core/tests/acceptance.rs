//! Acceptance checks, one line per criterion. Run with
//! `cargo test --release --test acceptance`.

mod common;

use std::time::Instant;

use common::{bench_mdp, q_star, wc_dual_path, TOL};
use pmd_lab::harness::presets::load_preset;
use pmd_lab::harness::run::execute;
use pmd_lab::mdp::{random_mdp, TabularMdp};
use pmd_lab::pmd::closed_form::check_closed_form_update;
use pmd_lab::pmd::{
    run_pmd, softmax_policy, Evaluator, NoiseSeeding, PmdConfig, PmdState, Variant,
};
use pmd_lab::rng::RngSeed;
use pmd_lab::soft_dp::{
    bellman_optimality_op, bellman_policy_op, boltzmann, evaluate_policy_exact, neg_entropy,
    q_upper_bound, soft_max_value, solve_optimal, NoiseMode, NoiseSpec,
};
use pmd_lab::tables::{Logits, PolicyTable, QTable, Table};
use pmd_lab::theory::{
    beta_pow, min_memory, slack, vanilla_c1, wc_constants, XkParams, XkRecursion,
};
use rand::Rng;

const N_MDPS: u64 = 20;
const ITERS: usize = 300;
const FINAL_GAP: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let m = min_memory(0.99, 0.95);
    let at = wc_constants(0.99, 0.95, 265);
    let below = wc_constants(0.99, 0.95, 264);
    let pass = m == 265
        && (0.9994..=0.9999).contains(&at.d1)
        && (1.5e-4..=3.5e-4).contains(&at.d2)
        && at.d1 + at.d2 < 1.0
        && below.d1 + below.d2 >= 1.0;
    outcome(
        pass,
        format!(
            "min_M {m}, d1 {:.6}, d2 {:.3e}, d1+d2 {:.8} (M=265) / {:.8} (M=264)",
            at.d1,
            at.d2,
            at.d1 + at.d2,
            below.d1 + below.d2
        ),
    )
}

fn criterion_2() -> Outcome {
    const STEPS: usize = 10_000_000;
    let params = |memory| XkParams {
        gamma: 0.99,
        beta: 0.95,
        memory,
        qstar_norm: 1.0,
        q0_norm: 1.0,
        eps_eval: 0.0,
    };

    let mut rec = XkRecursion::new(params(265));
    let x0 = rec.current();
    let mut hit = None;
    let mut envelope: f64 = 0.0;
    for _ in 0..STEPS {
        let x = rec.advance();
        envelope = envelope.max((x - rec.x_prime(rec.k())) / rec.x_prime(rec.k()));
        if hit.is_none() && x < 1e-3 * x0 {
            hit = Some(rec.k());
        }
    }

    let mut rec = XkRecursion::new(params(264));
    let x0_below = rec.current();
    let mut min_ratio: f64 = 1.0;
    for _ in 0..STEPS {
        min_ratio = min_ratio.min(rec.advance() / x0_below);
    }

    let pass = hit.is_some() && min_ratio >= 0.5 && envelope <= 1e-9;
    outcome(
        pass,
        format!(
            "M=265 below 1e-3 x0 at k={}, M=264 min x/x0 {min_ratio:.4}, max rel (x - x')/x' {envelope:.2e}",
            hit.map_or("never".to_string(), |k| k.to_string())
        ),
    )
}

struct Audit {
    worst_gap: f64,
    worst_improvement: f64,
    worst_pinsker: f64,
    slack: f64,
}

impl Audit {
    fn new(slack: f64) -> Self {
        Self {
            worst_gap: f64::NEG_INFINITY,
            worst_improvement: f64::NEG_INFINITY,
            worst_pinsker: f64::NEG_INFINITY,
            slack,
        }
    }

    fn absorb(&mut self, state: &PmdState, variant: Variant) {
        for r in state.trace() {
            self.worst_gap = self.worst_gap.max(r.gap_violation());
            if r.iter > 0 {
                self.worst_improvement = self.worst_improvement.max(r.improvement_violation());
            }
            if variant == Variant::Vanilla && r.stack_full {
                self.worst_pinsker = self.worst_pinsker.max(r.pinsker_violation());
            }
        }
    }

    fn audits_hold(&self) -> bool {
        self.worst_improvement <= self.slack && self.worst_pinsker <= self.slack
    }
}

fn run_family(cfg: &PmdConfig, ev: &Evaluator, mdps: &[(TabularMdp, QTable)]) -> Vec<PmdState> {
    mdps.iter()
        .map(|(mdp, qs)| run_pmd(mdp, cfg, ev, ITERS, Some(qs.clone())).unwrap())
        .collect()
}

fn final_gap(state: &PmdState) -> f64 {
    state.trace().last().unwrap().q_gap_inf
}

fn criterion_3(mdps: &[(TabularMdp, QTable)], audit: &mut Audit) -> Outcome {
    let cfg = PmdConfig::new(0.1, 0.4, None, Variant::Exact).unwrap();
    let states = run_family(&cfg, &Evaluator::exact(TOL), mdps);
    let mut local = Audit::new(audit.slack);
    for s in &states {
        local.absorb(s, Variant::Exact);
        audit.absorb(s, Variant::Exact);
    }
    let worst_final = states.iter().map(final_gap).fold(0.0, f64::max);
    outcome(
        local.worst_gap <= audit.slack && worst_final <= FINAL_GAP,
        format!(
            "beta {:.2}, max (gap - bound) {:.2e} vs slack {:.2e}, worst final gap {worst_final:.2e}",
            cfg.beta(),
            local.worst_gap,
            audit.slack
        ),
    )
}

fn criterion_4(mdps: &[(TabularMdp, QTable)], audit: &mut Audit) -> Outcome {
    let (tau, beta) = (0.1, 0.7);
    let vanilla = PmdConfig::from_beta(tau, beta, Some(5), Variant::Vanilla).unwrap();
    let wc_m = min_memory(0.9, beta);
    let wc = PmdConfig::from_beta(tau, beta, Some(wc_m), Variant::WeightCorrected).unwrap();
    let ev = Evaluator::exact(TOL);

    let mut residual_ok = true;
    let mut plateau: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for ((mdp, _), s) in mdps.iter().zip(run_family(&vanilla, &ev, mdps)) {
        audit.absorb(&s, Variant::Vanilla);
        let rbar = q_upper_bound(mdp, tau);
        let residual = beta_pow(beta, 5.0) * vanilla_c1(mdp.gamma(), beta, 5.0, rbar, 0.0);
        let gap = final_gap(&s);
        worst_ratio = worst_ratio.max(gap / residual);
        residual_ok &= gap <= residual;
        // the gap must stay up over the last third of the run
        let tail_min = s.trace()[2 * ITERS / 3..]
            .iter()
            .map(|r| r.q_gap_inf)
            .fold(f64::INFINITY, f64::min);
        plateau = plateau.max(tail_min);
    }

    let wc_states = run_family(&wc, &ev, mdps);
    for s in &wc_states {
        audit.absorb(s, Variant::WeightCorrected);
    }
    let wc_worst = wc_states.iter().map(final_gap).fold(0.0, f64::max);

    outcome(
        residual_ok && plateau > 10.0 * TOL && wc_worst <= FINAL_GAP,
        format!(
            "vanilla M=5 max gap/residual {worst_ratio:.2e}, largest plateau {:.2e} (> {:.0e}), WC M={wc_m} worst final gap {wc_worst:.2e}",
            plateau,
            10.0 * TOL
        ),
    )
}

fn criterion_5(audit: &Audit) -> Outcome {
    outcome(
        audit.audits_hold(),
        format!(
            "max improvement violation {:.2e}, max Pinsker violation {:.2e}, slack {:.2e}",
            audit.worst_improvement, audit.worst_pinsker, audit.slack
        ),
    )
}

fn criterion_6(mdps: &[(TabularMdp, QTable)]) -> Outcome {
    let beta = 0.7;
    let m = min_memory(0.9, beta);
    let cfg = PmdConfig::from_beta(0.1, beta, Some(m), Variant::WeightCorrected).unwrap();
    let eps = 0.01;
    let sl = slack(TOL, 0.9);
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    let mut worst_floor: f64 = f64::NEG_INFINITY;
    let mut floor = 0.0;
    for (i, (mdp, qs)) in mdps.iter().enumerate() {
        let noise = NoiseSpec::new(eps, RngSeed(1000 + i as u64), NoiseMode::SignedMax).unwrap();
        let ev = Evaluator::noisy(TOL, noise, NoiseSeeding::Fresh);
        let s = run_pmd(mdp, &cfg, &ev, ITERS, Some(qs.clone())).unwrap();
        for r in s.trace() {
            worst_gap = worst_gap.max(r.gap_violation());
        }
        let params = XkParams {
            gamma: mdp.gamma(),
            beta,
            memory: m,
            qstar_norm: qs.sup_norm(),
            q0_norm: 0.0,
            eps_eval: eps,
        };
        floor = params.floor(&wc_constants(mdp.gamma(), beta, m));
        worst_floor = worst_floor.max(final_gap(&s) - floor);
    }
    outcome(
        worst_gap <= sl && worst_floor <= sl,
        format!(
            "max (gap - x_k) {worst_gap:.2e}, floor {floor:.3e}, max (final gap - floor) {worst_floor:.2e}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = RngSeed(7).rng();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let q = QTable(Table::from_vec(1, 3, (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap());
        let prev = softmax_policy(&Logits(
            Table::from_vec(1, 3, (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
        ))
        .unwrap();
        let tau = rng.gen_range(0.05..1.0);
        let eta = rng.gen_range(0.05..1.0);
        let report = check_closed_form_update(&q, &prev, tau, eta, 0, 1e-3)
            .unwrap_or_else(|e| panic!("instance {i}: {e}"));
        worst = worst.max(report.tv);
    }
    outcome(worst <= 1e-3, format!("100 instances, worst TV {worst:.2e} (tolerance 1e-3)"))
}

fn random_instance(rng: &mut pmd_lab::rng::Rng) -> (TabularMdp, f64) {
    let ns = rng.gen_range(2..9);
    let na = rng.gen_range(2..5);
    let branching = rng.gen_range(1..=ns);
    let gamma = rng.gen_range(0.5..0.95);
    let mdp = random_mdp(RngSeed(rng.gen()), ns, na, branching, 1.0, gamma).unwrap();
    (mdp, rng.gen_range(0.05..1.0))
}

fn random_table(rng: &mut pmd_lab::rng::Rng, ns: usize, na: usize, scale: f64) -> Table {
    Table::from_vec(ns, na, (0..ns * na).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn random_policy(rng: &mut pmd_lab::rng::Rng, ns: usize, na: usize) -> PolicyTable {
    softmax_policy(&Logits(random_table(rng, ns, na, 3.0))).unwrap()
}

fn criterion_8() -> Outcome {
    const N: usize = 200;
    let mut rng = RngSeed(8).rng();
    let mut fails = Vec::new();
    let count = |name: &'static str, ok: bool, fails: &mut Vec<&'static str>| {
        if !ok && !fails.contains(&name) {
            fails.push(name);
        }
    };
    for _ in 0..N {
        let (mdp, tau) = random_instance(&mut rng);
        let (ns, na) = mdp.shape();
        let g = mdp.gamma();
        let pi = random_policy(&mut rng, ns, na);
        let f = QTable(random_table(&mut rng, ns, na, 5.0));
        let h = QTable(random_table(&mut rng, ns, na, 5.0));

        let tf = bellman_policy_op(&mdp, tau, &pi, &f).unwrap();
        let th = bellman_policy_op(&mdp, tau, &pi, &h).unwrap();
        count("policy contraction", tf.sup_dist(&th) <= g * f.sup_dist(&h) + 1e-12, &mut fails);

        let bump = random_table(&mut rng, ns, na, 1.0).map(f64::abs);
        let above = QTable(h.zip_with(&bump, |a, b| a + b));
        let ta = bellman_policy_op(&mdp, tau, &pi, &above).unwrap();
        count("monotonicity", ta.min_diff(&th) >= -1e-12, &mut fails);

        let q_pi = evaluate_policy_exact(&mdp, tau, &pi, TOL, 1_000_000).unwrap();
        let t_qpi = bellman_policy_op(&mdp, tau, &pi, &q_pi).unwrap();
        count("policy fixed point", t_qpi.sup_dist(&q_pi) <= TOL, &mut fails);

        let of = bellman_optimality_op(&mdp, tau, &f).unwrap();
        let oh = bellman_optimality_op(&mdp, tau, &h).unwrap();
        count("optimal contraction", of.sup_dist(&oh) <= g * f.sup_dist(&h) + 1e-12, &mut fails);

        let (qs, pis) = solve_optimal(&mdp, tau, TOL, 1_000_000).unwrap();
        let t_qs = bellman_optimality_op(&mdp, tau, &qs).unwrap();
        count("optimal fixed point", t_qs.sup_dist(&qs) <= TOL, &mut fails);

        // Bellman consistency: pi* = softmax(Q*/tau) has Q-function Q*,
        // and it attains the soft maximum in every state
        let q_of_pis = evaluate_policy_exact(&mdp, tau, &pis, TOL, 1_000_000).unwrap();
        let consistent = q_of_pis.sup_dist(&qs) <= 4.0 * TOL / (1.0 - g)
            && boltzmann(&qs, tau).max_l1_dist(&pis) <= 1e-12
            && q_pi.min_diff(&qs) <= 4.0 * TOL / (1.0 - g);
        let attained = (0..ns).all(|s| {
            let row = qs.row(s);
            let p = pis.row(s);
            let v: f64 = row.iter().zip(p).map(|(x, q)| x * q).sum::<f64>() - tau * neg_entropy(p).unwrap();
            (v - soft_max_value(row, tau)).abs() <= 1e-10 * (1.0 + v.abs())
        });
        count("Bellman consistency", consistent && attained, &mut fails);
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("6 properties x {N} instances")
        } else {
            format!("failing: {}", fails.join(", "))
        },
    )
}

fn criterion_9() -> Outcome {
    let worst = (0..10).map(wc_dual_path).fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("10 runs, max |xi_rec - xi_cf| {worst:.2e}"))
}

fn criterion_10() -> Outcome {
    let cfgs = load_preset::<&str>("preset-staq-chain", &[]).unwrap();
    let run = |name: &str| {
        let cfg = cfgs.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("section {name}"));
        assert_eq!(cfg.iters, 200);
        execute(cfg).unwrap()
    };
    let field = |rec: &pmd_lab::harness::RunRecord, key: &str| -> Vec<f64> {
        rec.runs.iter().map(|r| r.summary[key].as_f64().unwrap_or(f64::NAN)).collect()
    };
    let m10 = run("staq-m10");
    let m1 = run("staq-m1");
    let ratios = field(&m10, "final_ratio");
    let drops = field(&m1, "max_drop_fraction");
    let good = ratios.iter().filter(|&&r| r >= 0.95).count();
    let unstable = drops.iter().filter(|&&d| d > 0.2).count();
    outcome(
        ratios.len() == 5 && good >= 3 && unstable >= 3,
        format!(
            "M=10 ratios {:?} ({good}/5 >= 0.95), M=1 max drops {:?} ({unstable}/5 > 0.2)",
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            drops.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let mdps: Vec<(TabularMdp, QTable)> = (0..N_MDPS)
        .map(|s| {
            let m = bench_mdp(s);
            let q = q_star(&m, 0.1);
            (m, q)
        })
        .collect();
    let mut audit = Audit::new(slack(TOL, 0.9));

    let mut failed = 0;
    let mut report = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {n:>2}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    };
    report(1, &mut criterion_1);
    report(2, &mut criterion_2);
    report(3, &mut || criterion_3(&mdps, &mut audit));
    report(4, &mut || criterion_4(&mdps, &mut audit));
    report(5, &mut || criterion_5(&audit));
    report(6, &mut || criterion_6(&mdps));
    report(7, &mut criterion_7);
    report(8, &mut criterion_8);
    report(9, &mut criterion_9);
    report(10, &mut criterion_10);

    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
