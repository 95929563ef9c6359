//! Experiment execution and output files.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{PmdError, Result};
use crate::harness::config::{ExperimentConfig, Kind, MdpSource};
use crate::harness::csv::{emit_csv, Cell, CsvTable};
use crate::harness::HarnessError;
use crate::mdp::{chain_mdp, gridworld_mdp_with, random_mdp, TabularMdp};
use crate::pmd::{
    audit_surrogate, perturb_logits, run_pmd, Evaluator, PmdConfig, PmdState, Variant,
};
use crate::rng::RngSeed;
use crate::soft_dp::{default_max_iter, q_upper_bound, solve_optimal_with, NoiseSpec};
use crate::staq::{greedy_return, staq_run, StaqConfig};
use crate::theory::{
    beta_pow, min_memory, rbar, slack, vanilla_c1, xk_sequence, TheoryConstants, XkParams,
};

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "PMD_LAB_OUT";

/// Trace columns of the PMD experiments, in file order.
pub const PMD_COLUMNS: &[&str] = &[
    "iter",
    "q_gap_inf",
    "thm_bound",
    "gap_violation",
    "improvement_gap",
    "improvement_bound",
    "improvement_violation",
    "improvement_bound_crude",
    "generic_improvement_bound",
    "generic_violation",
    "pinsker_lhs",
    "pinsker_rhs",
    "pinsker_violation",
    "xi_delta_inf",
    "stack_full",
];

pub const STAQ_COLUMNS: &[&str] = &[
    "iter",
    "greedy_return",
    "behavior_return",
    "mean_loss",
    "buffer_len",
    "tau_current",
];

pub const AUDIT_COLUMNS: &[&str] = &[
    "iter",
    "improvement_gap",
    "generic_bound",
    "violation",
    "policy_l1",
    "xi_delta_inf",
];

pub const SEQUENCE_COLUMNS: &[&str] = &["k", "x", "x_prime", "x_double_prime", "x_over_x0"];

/// Output of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub table: CsvTable,
    pub summary: Map<String, Value>,
    /// Largest `measured - bound` over all audited columns (NaN-free).
    pub max_violation: f64,
}

/// Everything an experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub kind: Kind,
    pub config_echo: String,
    pub runs: Vec<SeedRun>,
    pub slack: f64,
    pub max_violation: f64,
    pub passed: bool,
    pub summary: Value,
}

impl RunRecord {
    pub fn seed_summary(&self, seed: u64, key: &str) -> Option<&Value> {
        self.runs.iter().find(|r| r.seed == seed)?.summary.get(key)
    }
}

/// Directory the files of `cfg` go to.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.out.clone(),
    }
}

/// Builds the MDP of `cfg` for one seed.
pub fn build_mdp(cfg: &ExperimentConfig, seed: u64) -> Result<TabularMdp> {
    match &cfg.mdp {
        MdpSource::Random {
            n_states,
            n_actions,
            branching,
            reward_bound,
            mdp_seed,
        } => random_mdp(
            RngSeed(mdp_seed.unwrap_or(seed)),
            *n_states,
            *n_actions,
            *branching,
            *reward_bound,
            cfg.gamma,
        ),
        MdpSource::Chain { n_states, slip } => chain_mdp(*n_states, *slip, cfg.gamma),
        MdpSource::Gridworld {
            width,
            height,
            goal,
            step_reward,
            goal_reward,
            mode,
        } => gridworld_mdp_with(*width, *height, *goal, *step_reward, *goal_reward, cfg.gamma, *mode),
        MdpSource::File(path) => TabularMdp::from_json(&fs::read_to_string(path)?),
    }
}

fn max_finite(values: impl IntoIterator<Item = f64>) -> f64 {
    values
        .into_iter()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn num(x: f64) -> Value {
    // NaN and infinities become null
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn pmd_evaluator(cfg: &ExperimentConfig, seed: u64) -> Result<Evaluator> {
    let base = Evaluator::exact(cfg.tol).with_exec(cfg.exec);
    if cfg.eps_eval > 0.0 {
        let noise = NoiseSpec::new(cfg.eps_eval, RngSeed(seed).derive(0xE5), cfg.noise_mode)?;
        Ok(Evaluator {
            noise: Some((noise, cfg.noise_seeding)),
            ..base
        })
    } else {
        Ok(base)
    }
}

fn reference_q(cfg: &ExperimentConfig, mdp: &TabularMdp) -> Result<crate::tables::QTable> {
    let tol = cfg.tol;
    let (q, _) = solve_optimal_with(cfg.exec, mdp, cfg.tau, tol, default_max_iter(mdp, cfg.tau, tol))?;
    Ok(q)
}

fn pmd_seed(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> Result<SeedRun> {
    let mdp = build_mdp(cfg, seed)?;
    let pcfg = PmdConfig::new(cfg.tau, cfg.eta, cfg.memory, variant)?;
    let evaluator = pmd_evaluator(cfg, seed)?;
    let q_star = reference_q(cfg, &mdp)?;
    let qstar_norm = q_star.sup_norm();
    let state = run_pmd(&mdp, &pcfg, &evaluator, cfg.iters, Some(q_star))?;

    let mut table = CsvTable::new(PMD_COLUMNS);
    for r in state.trace() {
        table.push(vec![
            r.iter.into(),
            r.q_gap_inf.into(),
            r.thm_bound.into(),
            r.gap_violation().into(),
            r.improvement_gap.into(),
            r.improvement_bound.into(),
            r.improvement_violation().into(),
            r.improvement_bound_crude.into(),
            r.generic_improvement_bound.into(),
            r.generic_violation().into(),
            r.pinsker_lhs.into(),
            r.pinsker_rhs.into(),
            r.pinsker_violation().into(),
            r.xi_delta_inf.into(),
            r.stack_full.into(),
        ]);
    }
    let trace = state.trace();
    let col_max = |f: fn(&crate::pmd::IterationRecord) -> f64| max_finite(trace.iter().map(f));
    let max_gap = col_max(|r| r.gap_violation());
    let max_imp = col_max(|r| r.improvement_violation());
    let max_generic = col_max(|r| r.generic_violation());
    let max_pinsker = col_max(|r| r.pinsker_violation());
    let max_violation = max_finite([max_gap, max_imp, max_generic, max_pinsker]);
    let final_gap = trace.last().map_or(f64::NAN, |r| r.q_gap_inf);

    let mut summary = Map::new();
    summary.insert("seed".into(), json!(seed));
    summary.insert("final_gap".into(), num(final_gap));
    summary.insert("final_bound".into(), num(trace.last().map_or(f64::NAN, |r| r.thm_bound)));
    summary.insert("converged".into(), json!(final_gap <= cfg.convergence_tol));
    summary.insert("qstar_norm".into(), num(qstar_norm));
    summary.insert("max_gap_violation".into(), num(max_gap));
    summary.insert("max_improvement_violation".into(), num(max_imp));
    summary.insert("max_generic_violation".into(), num(max_generic));
    summary.insert("max_pinsker_violation".into(), num(max_pinsker));
    summary.insert("max_violation".into(), num(max_violation));
    summary.insert("nan_count".into(), json!(table.nan_count()));
    if variant == Variant::Vanilla {
        let r = q_upper_bound(&mdp, cfg.tau);
        let m = pcfg.memory_f64();
        let c1 = vanilla_c1(mdp.gamma(), pcfg.beta(), m, r, cfg.eps_eval);
        summary.insert("vanilla_C1".into(), num(c1));
        summary.insert("residual_bound".into(), num(beta_pow(pcfg.beta(), m) * c1));
    }
    Ok(SeedRun {
        seed,
        table,
        summary,
        max_violation,
    })
}

fn audit_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let mdp = build_mdp(cfg, seed)?;
    let pcfg = PmdConfig::new(cfg.tau, cfg.eta, cfg.memory, cfg.variant)?;
    let evaluator = Evaluator::exact(cfg.tol).with_exec(cfg.exec);
    let mut state = PmdState::new(&mdp, &pcfg);
    let mut table = CsvTable::new(AUDIT_COLUMNS);
    let mut max_violation = f64::NEG_INFINITY;
    for k in 0..cfg.iters {
        let xi = state.logits().clone();
        state.step(&mdp, &pcfg, &evaluator)?;
        let q = state.stack().newest().expect("stack holds the newest evaluation");
        let xi_tilde = perturb_logits(&xi, cfg.perturb_scale, RngSeed(seed).derive(k as u64));
        let a = audit_surrogate(&mdp, &pcfg, &xi, q, &xi_tilde, cfg.tol)?;
        max_violation = max_violation.max(a.violation());
        table.push(vec![
            k.into(),
            a.improvement_gap.into(),
            a.bound.into(),
            a.violation().into(),
            a.policy_l1.into(),
            a.xi_delta_inf.into(),
        ]);
    }
    let mut summary = Map::new();
    summary.insert("seed".into(), json!(seed));
    summary.insert("max_violation".into(), num(max_violation));
    summary.insert("nan_count".into(), json!(table.nan_count()));
    Ok(SeedRun {
        seed,
        table,
        summary,
        max_violation,
    })
}

fn staq_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let mdp = build_mdp(cfg, seed)?;
    let k = &cfg.staq;
    let scfg = StaqConfig {
        tau: cfg.tau,
        eta: cfg.eta,
        memory: cfg.memory.unwrap_or(StaqConfig::default().memory),
        samples_per_iter: k.samples_per_iter,
        buffer_capacity: k.buffer_capacity,
        batch_size: k.batch_size,
        learning_rate: k.learning_rate,
        gradient_steps: k.gradient_steps,
        target_update_interval: k.target_update_interval,
        aggregation: k.aggregation,
        epsilon: k.epsilon,
        behavior: k.behavior,
        tau_schedule: k.tau_schedule,
        horizon: k.horizon,
        start_state: k.start_state,
        seed: RngSeed(seed),
    };
    let run = staq_run(&mdp, &scfg, cfg.iters)?;
    let opt_tau = 1e-3;
    let (q_opt, _) = solve_optimal_with(
        cfg.exec,
        &mdp,
        opt_tau,
        cfg.tol,
        default_max_iter(&mdp, opt_tau, cfg.tol),
    )?;
    let optimal = greedy_return(&mdp, &q_opt, scfg.start_state)?;

    let mut table = CsvTable::new(STAQ_COLUMNS);
    for s in &run.stats {
        table.push(vec![
            s.iter.into(),
            s.greedy_return.into(),
            s.behavior_return.into(),
            s.mean_loss.into(),
            s.buffer_len.into(),
            s.tau_current.into(),
        ]);
    }
    let g: Vec<f64> = run.stats.iter().map(|s| s.greedy_return).collect();
    let final_return = g.last().copied().unwrap_or(f64::NAN);
    let mut summary = Map::new();
    summary.insert("seed".into(), json!(seed));
    summary.insert("final_greedy_return".into(), num(final_return));
    summary.insert("optimal_greedy_return".into(), num(optimal));
    summary.insert("final_ratio".into(), num(final_return / optimal));
    summary.insert("max_drop_fraction".into(), num(max_drop_fraction(&g)));
    summary.insert("tail_median_ratio".into(), num(tail_median_ratio(&g)));
    summary.insert("nan_count".into(), json!(table.nan_count()));
    Ok(SeedRun {
        seed,
        table,
        summary,
        max_violation: f64::NEG_INFINITY,
    })
}

/// Largest relative fall below the running maximum, `(max_so_far - g_k) / max_so_far`.
pub fn max_drop_fraction(g: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &x in g {
        if best > 0.0 {
            worst = worst.max((best - x) / best);
        }
        best = best.max(x);
    }
    worst
}

/// Median of the last quarter divided by the overall maximum.
pub fn tail_median_ratio(g: &[f64]) -> f64 {
    if g.is_empty() {
        return f64::NAN;
    }
    let mut tail = g[g.len() - g.len().div_ceil(4)..].to_vec();
    tail.sort_by(f64::total_cmp);
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    tail[tail.len() / 2] / max
}

fn bounds_run(cfg: &ExperimentConfig) -> Result<SeedRun> {
    let m = cfg.memory.expect("validated: bounds needs M");
    let mdp = build_mdp(cfg, cfg.seeds[0])?;
    let r = rbar(mdp.reward_bound(), cfg.gamma, cfg.tau, mdp.n_actions());
    let c = TheoryConstants::new(cfg.gamma, cfg.beta(), m, r, cfg.eps_eval);
    let rows = c.rows();
    let names: Vec<&str> = rows.iter().map(|(n, _)| *n).collect();
    let mut table = CsvTable::new(&names);
    table.push(rows.iter().map(|&(_, v)| Cell::Float(v)).collect());
    let mut summary = Map::new();
    for (n, v) in rows {
        summary.insert(n.into(), num(v));
    }
    summary.insert("min_M".into(), json!(min_memory(cfg.gamma, cfg.beta())));
    summary.insert("M".into(), json!(m));
    summary.insert("wc_converges".into(), json!(c.wc_converges));
    summary.insert("vanilla_residual".into(), num(beta_pow(cfg.beta(), m as f64) * c.vanilla_c1));
    Ok(SeedRun {
        seed: cfg.seeds[0],
        table,
        summary,
        max_violation: f64::NEG_INFINITY,
    })
}

fn sequence_run(cfg: &ExperimentConfig) -> Result<SeedRun> {
    let params = XkParams {
        gamma: cfg.gamma,
        beta: cfg.beta(),
        memory: cfg.memory.expect("validated: sequence needs M"),
        qstar_norm: cfg.qstar_norm,
        q0_norm: cfg.q0_norm,
        eps_eval: cfg.eps_eval,
    };
    let s = xk_sequence(params, cfg.k_max.max(1));
    let x0 = params.x0();
    let mut table = CsvTable::new(SEQUENCE_COLUMNS);
    let mut rel_violation = f64::NEG_INFINITY;
    for k in 0..s.x.len() {
        if s.constants.converges {
            rel_violation = rel_violation.max((s.x[k] - s.x_prime[k]) / s.x_prime[k]);
        }
        if k % cfg.stride == 0 || k + 1 == s.x.len() {
            table.push(vec![
                k.into(),
                s.x[k].into(),
                s.x_prime[k].into(),
                s.x_double_prime[k].into(),
                (s.x[k] / x0).into(),
            ]);
        }
    }
    let min_ratio = s.x.iter().copied().fold(f64::INFINITY, f64::min) / x0;
    let mut summary = Map::new();
    summary.insert("M".into(), json!(params.memory));
    summary.insert("x0".into(), num(x0));
    summary.insert("final_x".into(), num(*s.x.last().expect("non-empty")));
    summary.insert("min_x_over_x0".into(), num(min_ratio));
    summary.insert("steps".into(), json!(s.x.len() - 1));
    summary.insert("diverged".into(), json!(s.diverged));
    summary.insert("converges".into(), json!(s.constants.converges));
    summary.insert("d1".into(), num(s.constants.d1));
    summary.insert("d2".into(), num(s.constants.d2));
    summary.insert("rate".into(), num(s.constants.rate));
    summary.insert("floor".into(), num(s.eps_eval_floor));
    summary.insert("max_rel_envelope_violation".into(), num(rel_violation));
    Ok(SeedRun {
        seed: cfg.seeds[0],
        table,
        summary,
        max_violation: rel_violation,
    })
}

/// Runs `cfg` without touching the filesystem (except to read an MDP file).
pub fn execute(cfg: &ExperimentConfig) -> std::result::Result<RunRecord, HarnessError> {
    let ctx = |seed: Option<u64>| {
        move |e: PmdError| HarnessError::Run {
            context: match seed {
                Some(s) => format!("{} `{}`, seed {s}", cfg.kind, cfg.name),
                None => format!("{} `{}`", cfg.kind, cfg.name),
            },
            source: e,
        }
    };
    let (runs, tolerance) = match cfg.kind {
        Kind::Bounds => (vec![bounds_run(cfg).map_err(ctx(None))?], 0.0),
        Kind::Sequence => (vec![sequence_run(cfg).map_err(ctx(None))?], 1e-9),
        kind => {
            let per_seed = |&seed: &u64| -> std::result::Result<SeedRun, HarnessError> {
                match kind {
                    Kind::StaqSample => staq_seed(cfg, seed),
                    Kind::ImprovementAudit => audit_seed(cfg, seed),
                    k => pmd_seed(cfg, k.variant().expect("pmd kind"), seed),
                }
                .map_err(ctx(Some(seed)))
            };
            let runs = cfg
                .exec
                .map(&cfg.seeds, per_seed)
                .into_iter()
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (runs, slack(cfg.tol, cfg.gamma))
        }
    };
    let max_violation = max_finite(runs.iter().map(|r| r.max_violation));
    let passed = !(max_violation > tolerance);
    let nan_count: usize = runs.iter().map(|r| r.table.nan_count()).sum();
    let summary = json!({
        "name": cfg.name,
        "kind": cfg.kind.to_string(),
        "config": cfg.echo,
        "seeds": runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        "runs": runs.iter().map(|r| Value::Object(r.summary.clone())).collect::<Vec<_>>(),
        "slack": num(tolerance),
        "max_violation": num(max_violation),
        "passed": passed,
        "nan_count": nan_count,
    });
    Ok(RunRecord {
        name: cfg.name.clone(),
        kind: cfg.kind,
        config_echo: cfg.echo.clone(),
        runs,
        slack: tolerance,
        max_violation,
        passed,
        summary,
    })
}

/// Per-row mean and population standard deviation across seeds; the first
/// column is taken as the row key.
pub fn aggregate(runs: &[SeedRun]) -> Option<CsvTable> {
    let first = &runs.first()?.table;
    let n_rows = runs.iter().map(|r| r.table.rows.len()).min()?;
    let mut header = vec![first.header[0].clone()];
    for h in &first.header[1..] {
        header.push(format!("{h}_mean"));
        header.push(format!("{h}_std"));
    }
    let mut out = CsvTable {
        header,
        rows: Vec::with_capacity(n_rows),
    };
    let n = runs.len() as f64;
    for i in 0..n_rows {
        let mut row = vec![first.rows[i][0]];
        for c in 1..first.header.len() {
            let vals: Vec<f64> = runs.iter().map(|r| r.table.rows[i][c].as_f64()).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.push(mean.into());
            row.push(var.sqrt().into());
        }
        out.rows.push(row);
    }
    Some(out)
}

/// Writes the per-seed CSVs, `_agg.csv` and `_summary.json` under `dir/name/`.
pub fn write_record(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let base = dir.join(&record.name);
    fs::create_dir_all(&base)?;
    match record.kind {
        Kind::Bounds | Kind::Sequence => {
            emit_csv(&record.runs[0].table, &base.join(format!("{}.csv", record.name)))?;
        }
        _ => {
            for r in &record.runs {
                emit_csv(&r.table, &base.join(format!("{}_seed{}.csv", record.name, r.seed)))?;
            }
            if let Some(agg) = aggregate(&record.runs) {
                emit_csv(&agg, &base.join(format!("{}_agg.csv", record.name)))?;
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&record.summary)
        .map_err(|e| PmdError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(base.join(format!("{}_summary.json", record.name)), text)?;
    Ok(base)
}

/// Executes `cfg` and writes its files to [`output_dir`].
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunRecord, HarnessError> {
    let record = execute(cfg)?;
    write_record(&record, &output_dir(cfg)).map_err(|e| HarnessError::Run {
        context: format!("writing `{}`", cfg.name),
        source: e,
    })?;
    Ok(record)
}
