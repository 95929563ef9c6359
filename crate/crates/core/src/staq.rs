//! Sampled stacked-Q loop: behavior-policy data collection, a replay buffer,
//! twin tabular Q-tables fitted by fitted-Q regression, and a
//! weight-corrected stack of the fitted tables.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{PmdError, Result};
use crate::mdp::TabularMdp;
use crate::pmd::behavior::{epsilon_softmax, sample_categorical, StickySampler};
use crate::pmd::{logits_from_stack, softmax_policy, PmdConfig, QStack, Variant};
use crate::rng::{Rng, RngSeed};
use crate::soft_dp::{default_max_iter, evaluate_policy_exact, neg_entropy_unchecked};
use crate::tables::{check_distribution, Logits, PolicyTable, QTable, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// Ring buffer keeping the last `capacity` transitions in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        ts.into_iter().for_each(|t| self.push(t));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<&Transition> {
        if self.items.is_empty() {
            return Err(PmdError::EmptyBuffer);
        }
        Ok(&self.items[rng.gen_range(0..self.items.len())])
    }
}

/// How the twin target tables are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Min,
    Mean,
}

impl Aggregation {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Aggregation::Min => a.min(b),
            Aggregation::Mean => 0.5 * (a + b),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Min => "min",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = PmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Aggregation::Min),
            "mean" => Ok(Aggregation::Mean),
            other => Err(PmdError::Parse(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Two online tables, two frozen targets, hard-copied every
/// `target_update_interval` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinQ {
    pub online: [QTable; 2],
    pub targets: [QTable; 2],
    pub aggregation: Aggregation,
    pub target_update_interval: usize,
    updates: usize,
}

impl TwinQ {
    pub fn zeros(n_states: usize, n_actions: usize, aggregation: Aggregation, interval: usize) -> Self {
        assert!(interval >= 1, "target update interval must be positive");
        let z = QTable::zeros(n_states, n_actions);
        Self {
            online: [z.clone(), z.clone()],
            targets: [z.clone(), z],
            aggregation,
            target_update_interval: interval,
            updates: 0,
        }
    }

    /// Number of update steps taken so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Elementwise aggregate of the online pair.
    pub fn aggregate_online(&self) -> QTable {
        let agg = self.aggregation;
        QTable(self.online[0].zip_with(&self.online[1], |a, b| agg.apply(a, b)))
    }

    pub fn target_value(&self, s: usize, a: usize) -> f64 {
        self.aggregation
            .apply(self.targets[0].get(s, a), self.targets[1].get(s, a))
    }

    fn hard_update(&mut self) {
        self.targets = self.online.clone();
    }
}

/// Regression settings for [`fqi_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FqiParams {
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
}

/// Runs `steps` updates of both online tables towards
/// `r + gamma (agg_i Qhat_i(s', a') - tau h(pi(s')))`, `a' ~ softmax(logits(s'))`,
/// with `Qhat` the frozen targets. Returns the mean squared-error loss.
pub fn fqi_update(
    twin: &mut TwinQ,
    buffer: &ReplayBuffer,
    policy_logits: &Logits,
    params: &FqiParams,
    seed: RngSeed,
) -> Result<f64> {
    if buffer.is_empty() {
        return Err(PmdError::EmptyBuffer);
    }
    let pi = softmax_policy(policy_logits)?;
    let bonus: Vec<f64> = pi
        .iter_rows()
        .map(|p| -params.tau * neg_entropy_unchecked(p))
        .collect();
    let mut rngs = [seed.stream(0), seed.stream(1)];
    let mut batch: Vec<(usize, usize, f64)> = Vec::with_capacity(params.batch_size);
    let mut loss = 0.0;
    let mut count = 0usize;
    for _ in 0..params.steps {
        for (i, rng) in rngs.iter_mut().enumerate() {
            batch.clear();
            for _ in 0..params.batch_size {
                let t = buffer.sample(rng)?;
                let target = if t.terminal {
                    t.reward
                } else {
                    let a2 = sample_categorical(pi.row(t.next_state), rng);
                    t.reward
                        + params.gamma * (twin.target_value(t.next_state, a2) + bonus[t.next_state])
                };
                batch.push((t.state, t.action, target));
            }
            let q = &mut twin.online[i];
            for &(s, a, target) in &batch {
                let err = target - q.get(s, a);
                loss += 0.5 * err * err;
                count += 1;
                let updated = q.get(s, a) + params.learning_rate * err;
                q.set(s, a, updated);
            }
        }
        twin.updates += 1;
        if twin.updates.is_multiple_of(twin.target_update_interval) {
            twin.hard_update();
        }
    }
    Ok(if count == 0 { 0.0 } else { loss / count as f64 })
}

/// Anything that picks an action for the current state.
pub trait ActionSampler {
    fn sample(&mut self, state: usize) -> usize;

    /// Called when an episode restarts.
    fn episode_start(&mut self) {}
}

/// Plain draws from a fixed policy.
#[derive(Debug, Clone)]
pub struct PolicySampler {
    pub policy: PolicyTable,
    rng: Rng,
}

impl PolicySampler {
    pub fn new(policy: PolicyTable, seed: RngSeed) -> Self {
        Self {
            policy,
            rng: seed.rng(),
        }
    }
}

impl ActionSampler for PolicySampler {
    fn sample(&mut self, state: usize) -> usize {
        sample_categorical(self.policy.row(state), &mut self.rng)
    }
}

impl ActionSampler for StickySampler {
    fn sample(&mut self, state: usize) -> usize {
        StickySampler::sample(self, state)
    }

    fn episode_start(&mut self) {
        self.reset();
    }
}

impl<F: FnMut(usize) -> usize> ActionSampler for F {
    fn sample(&mut self, state: usize) -> usize {
        self(state)
    }
}

/// Environment cursor that persists across collection rounds.
#[derive(Debug, Clone)]
pub struct Collector {
    start_dist: Vec<f64>,
    horizon: usize,
    terminal: Vec<bool>,
    rng: Rng,
    state: Option<usize>,
    t: usize,
}

impl Collector {
    /// `terminal` lists absorbing states that end an episode; pass an empty
    /// slice for continuing tasks.
    pub fn new(
        mdp: &TabularMdp,
        start_dist: Vec<f64>,
        horizon: usize,
        terminal: &[usize],
        seed: RngSeed,
    ) -> Result<Self> {
        if start_dist.len() != mdp.n_states() {
            return Err(PmdError::ShapeMismatch {
                expected: (mdp.n_states(), 1),
                got: (start_dist.len(), 1),
            });
        }
        check_distribution(&start_dist)?;
        if horizon == 0 {
            return Err(PmdError::InvalidParameter("horizon must be >= 1".into()));
        }
        let mut flags = vec![false; mdp.n_states()];
        for &s in terminal {
            *flags.get_mut(s).ok_or_else(|| {
                PmdError::InvalidParameter(format!("terminal state {s} out of range"))
            })? = true;
        }
        Ok(Self {
            start_dist,
            horizon,
            terminal: flags,
            rng: seed.rng(),
            state: None,
            t: 0,
        })
    }

    pub fn collect(
        &mut self,
        mdp: &TabularMdp,
        behavior: &mut impl ActionSampler,
        n: usize,
    ) -> Vec<Transition> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = match self.state {
                Some(s) => s,
                None => {
                    behavior.episode_start();
                    self.t = 0;
                    sample_categorical(&self.start_dist, &mut self.rng)
                }
            };
            let a = behavior.sample(s);
            let next = mdp.sample_next(s, a, &mut self.rng);
            let terminal = self.terminal[next];
            out.push(Transition {
                state: s,
                action: a,
                reward: mdp.reward(s, a),
                next_state: next,
                terminal,
            });
            self.t += 1;
            self.state = if terminal || self.t >= self.horizon {
                None
            } else {
                Some(next)
            };
        }
        out
    }
}

/// `n` transitions from a fresh start, resetting at `horizon`.
pub fn collect(
    mdp: &TabularMdp,
    behavior: &mut impl ActionSampler,
    start_dist: &[f64],
    n: usize,
    horizon: usize,
    seed: RngSeed,
) -> Result<Vec<Transition>> {
    if n == 0 {
        return Err(PmdError::InvalidParameter("n must be >= 1".into()));
    }
    let mut c = Collector::new(mdp, start_dist.to_vec(), horizon, &[], seed)?;
    Ok(c.collect(mdp, behavior, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorKind {
    EpsSoftmax,
    Sticky { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSchedule {
    Constant,
    /// Linear from `from` to `to` over `steps` iterations, then `to`.
    Linear { from: f64, to: f64, steps: usize },
}

impl TauSchedule {
    pub fn at(&self, base: f64, iter: usize) -> f64 {
        match *self {
            TauSchedule::Constant => base,
            TauSchedule::Linear { from, to, steps } => {
                if steps == 0 || iter >= steps {
                    to
                } else {
                    from + (to - from) * iter as f64 / steps as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaqConfig {
    pub tau: f64,
    pub eta: f64,
    pub memory: usize,
    pub samples_per_iter: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gradient_steps: usize,
    pub target_update_interval: usize,
    pub aggregation: Aggregation,
    pub epsilon: f64,
    pub behavior: BehaviorKind,
    pub tau_schedule: TauSchedule,
    pub horizon: usize,
    pub start_state: usize,
    pub seed: RngSeed,
}

impl Default for StaqConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            eta: 0.09,
            memory: 10,
            samples_per_iter: 50,
            buffer_capacity: 200,
            batch_size: 8,
            learning_rate: 0.5,
            gradient_steps: 10,
            target_update_interval: 5,
            aggregation: Aggregation::Min,
            epsilon: 0.05,
            behavior: BehaviorKind::EpsSoftmax,
            tau_schedule: TauSchedule::Constant,
            horizon: 20,
            start_state: 0,
            seed: RngSeed(0),
        }
    }
}

impl StaqConfig {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        PmdConfig::new(self.tau, self.eta, Some(self.memory), Variant::WeightCorrected)?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PmdError::EpsOutOfRange(self.epsilon));
        }
        for (name, v) in [
            ("samples_per_iter", self.samples_per_iter),
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("target_update_interval", self.target_update_interval),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return Err(PmdError::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(PmdError::InvalidParameter(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.start_state >= mdp.n_states() {
            return Err(PmdError::InvalidParameter(format!(
                "start state {} out of range",
                self.start_state
            )));
        }
        if let TauSchedule::Linear { from, to, .. } = self.tau_schedule {
            if !(from > 0.0 && to > 0.0) {
                return Err(PmdError::TauNonPositive(from.min(to)));
            }
        }
        if let BehaviorKind::Sticky { lambda } = self.behavior {
            if !(lambda > 0.0) {
                return Err(PmdError::InvalidParameter(format!(
                    "sticky rate must be > 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }

    pub fn pmd_config(&self, iter: usize) -> Result<PmdConfig> {
        let tau = self.tau_schedule.at(self.tau, iter);
        PmdConfig::new(tau, self.eta, Some(self.memory), Variant::WeightCorrected)
    }
}

/// One row per StaQ iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub iter: usize,
    /// Discounted return from the start state of the argmax policy after
    /// this iteration, by exact evaluation without entropy.
    pub greedy_return: f64,
    /// Same for the stationary behavior policy used during collection.
    pub behavior_return: f64,
    pub mean_loss: f64,
    pub buffer_len: usize,
    pub tau_current: f64,
}

#[derive(Debug, Clone)]
pub struct StaqRun {
    pub stats: Vec<EpisodeStats>,
    pub twin: TwinQ,
    pub stack: QStack,
    pub logits: Logits,
}

/// Discounted value from `start` of `pi` with no entropy term.
pub fn policy_return(mdp: &TabularMdp, pi: &PolicyTable, start: usize) -> Result<f64> {
    let tol = 1e-10;
    let q = evaluate_policy_exact(mdp, 0.0, pi, tol, default_max_iter(mdp, 0.0, tol))?;
    Ok(pi.row(start).iter().zip(q.row(start)).map(|(p, v)| p * v).sum())
}

/// Return of the deterministic policy that picks the argmax of each row
/// (lowest index on ties).
pub fn greedy_return(mdp: &TabularMdp, scores: &Table, start: usize) -> Result<f64> {
    let actions: Vec<usize> = scores.iter_rows().map(crate::tables::argmax).collect();
    policy_return(mdp, &PolicyTable::deterministic(&actions, mdp.n_actions()), start)
}

/// Collect, regress, stack, repeat for `iters` iterations.
pub fn staq_run(mdp: &TabularMdp, cfg: &StaqConfig, iters: usize) -> Result<StaqRun> {
    cfg.validate(mdp)?;
    let (ns, na) = mdp.shape();
    let mut start = vec![0.0; ns];
    start[cfg.start_state] = 1.0;
    let mut collector = Collector::new(mdp, start, cfg.horizon, &[], cfg.seed.derive(1))?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut twin = TwinQ::zeros(ns, na, cfg.aggregation, cfg.target_update_interval);
    let mut stack = QStack::new(cfg.memory);
    let mut logits = Logits::zeros(ns, na);
    let mut sticky = match cfg.behavior {
        BehaviorKind::Sticky { lambda } => Some(StickySampler::new(
            PolicyTable::uniform(ns, na),
            lambda,
            cfg.seed.derive(2),
        )?),
        BehaviorKind::EpsSoftmax => None,
    };
    let mut plain = PolicySampler::new(PolicyTable::uniform(ns, na), cfg.seed.derive(3));
    let mut stats = Vec::with_capacity(iters);

    for k in 0..iters {
        let pmd = cfg.pmd_config(k)?;
        let pi = softmax_policy(&logits)?;
        let behavior_pi = epsilon_softmax(&pi, cfg.epsilon)?;
        let batch = match sticky.as_mut() {
            Some(s) => {
                s.set_policy(behavior_pi.clone());
                collector.collect(mdp, s, cfg.samples_per_iter)
            }
            None => {
                plain.policy = behavior_pi.clone();
                collector.collect(mdp, &mut plain, cfg.samples_per_iter)
            }
        };
        buffer.extend(batch);

        let params = FqiParams {
            tau: pmd.tau(),
            gamma: mdp.gamma(),
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            steps: cfg.gradient_steps,
        };
        let loss = fqi_update(&mut twin, &buffer, &logits, &params, cfg.seed.derive(1000 + k as u64))?;

        stack.push(twin.aggregate_online());
        logits = logits_from_stack(&stack, &pmd)?;

        stats.push(EpisodeStats {
            iter: k,
            greedy_return: greedy_return(mdp, &logits, cfg.start_state)?,
            behavior_return: policy_return(mdp, &behavior_pi, cfg.start_state)?,
            mean_loss: loss,
            buffer_len: buffer.len(),
            tau_current: pmd.tau(),
        });
    }
    Ok(StaqRun {
        stats,
        twin,
        stack,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::chain_mdp;

    fn one_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(Table::filled(1, 1, r), 1.0, vec![1.0], gamma).unwrap()
    }

    fn t(s: usize) -> Transition {
        Transition {
            state: s,
            action: 0,
            reward: 0.0,
            next_state: s,
            terminal: false,
        }
    }

    #[test]
    fn buffer_is_fifo() {
        let mut b = ReplayBuffer::new(3);
        b.extend((0..5).map(t));
        let states: Vec<usize> = b.iter().map(|x| x.state).collect();
        assert_eq!(states, vec![2, 3, 4]);
    }

    #[test]
    fn deterministic_single_state_collection() {
        let m = one_state(0.5, 0.9);
        let mut always = |_s: usize| 0;
        let ts = collect(&m, &mut always, &[1.0], 3, 10, RngSeed(0)).unwrap();
        assert_eq!(ts.len(), 3);
        assert!(ts.iter().all(|x| *x == ts[0]));
    }

    #[test]
    fn chain_reward_after_four_moves() {
        let m = chain_mdp(5, 0.0, 0.9).unwrap();
        let mut right = |_s: usize| 1;
        let mut start = vec![0.0; 5];
        start[0] = 1.0;
        let ts = collect(&m, &mut right, &start, 6, 100, RngSeed(0)).unwrap();
        // four moves reach the right end; the transition at index 4 is paid
        let rewards: Vec<f64> = ts.iter().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(ts[3].next_state, 4);
    }

    #[test]
    fn collection_is_deterministic_in_seed() {
        let m = chain_mdp(5, 0.2, 0.9).unwrap();
        let start = [0.2; 5];
        let run = |seed| {
            let mut b = PolicySampler::new(PolicyTable::uniform(5, 2), RngSeed(7));
            collect(&m, &mut b, &start, 200, 13, RngSeed(seed)).unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn fqi_regresses_terminal_reward() {
        let mut twin = TwinQ::zeros(1, 1, Aggregation::Min, 5);
        let mut buf = ReplayBuffer::new(4);
        buf.push(Transition {
            state: 0,
            action: 0,
            reward: 0.7,
            next_state: 0,
            terminal: true,
        });
        let p = FqiParams {
            tau: 0.1,
            gamma: 0.9,
            batch_size: 1,
            learning_rate: 0.05,
            steps: 500,
        };
        fqi_update(&mut twin, &buf, &Logits::zeros(1, 1), &p, RngSeed(1)).unwrap();
        assert!((twin.online[0].get(0, 0) - 0.7).abs() < 1e-3);
        assert!((twin.online[1].get(0, 0) - 0.7).abs() < 1e-3);
    }

    #[test]
    fn fqi_reaches_bellman_fixed_point() {
        let m = one_state(0.5, 0.9);
        let mut twin = TwinQ::zeros(1, 1, Aggregation::Mean, 20);
        let mut buf = ReplayBuffer::new(10);
        let mut always = |_s: usize| 0;
        buf.extend(collect(&m, &mut always, &[1.0], 10, 100, RngSeed(0)).unwrap());
        let p = FqiParams {
            tau: 0.0,
            gamma: 0.9,
            batch_size: 4,
            learning_rate: 0.2,
            steps: 5000,
        };
        fqi_update(&mut twin, &buf, &Logits::zeros(1, 1), &p, RngSeed(1)).unwrap();
        assert!((twin.online[0].get(0, 0) - 5.0).abs() < 0.05);
    }

    #[test]
    fn fqi_needs_data() {
        let mut twin = TwinQ::zeros(1, 1, Aggregation::Min, 1);
        let p = FqiParams {
            tau: 0.1,
            gamma: 0.9,
            batch_size: 1,
            learning_rate: 0.1,
            steps: 1,
        };
        let err = fqi_update(&mut twin, &ReplayBuffer::new(2), &Logits::zeros(1, 1), &p, RngSeed(0));
        assert_eq!(err, Err(PmdError::EmptyBuffer));
    }

    #[test]
    fn min_target_below_mean() {
        let mut twin = TwinQ::zeros(2, 2, Aggregation::Min, 1);
        twin.targets[0] = QTable::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        twin.targets[1] = QTable::from_rows(&[vec![0.0, 4.0], vec![0.7, -1.0]]).unwrap();
        let mut mean = twin.clone();
        mean.aggregation = Aggregation::Mean;
        for s in 0..2 {
            for a in 0..2 {
                assert!(twin.target_value(s, a) <= mean.target_value(s, a));
            }
        }
    }

    #[test]
    fn targets_frozen_between_hard_updates() {
        let m = chain_mdp(4, 0.1, 0.9).unwrap();
        let mut b = PolicySampler::new(PolicyTable::uniform(4, 2), RngSeed(2));
        let mut buf = ReplayBuffer::new(100);
        buf.extend(collect(&m, &mut b, &[0.25; 4], 100, 10, RngSeed(3)).unwrap());
        let mut twin = TwinQ::zeros(4, 2, Aggregation::Min, 4);
        let p = FqiParams {
            tau: 0.1,
            gamma: 0.9,
            batch_size: 8,
            learning_rate: 0.3,
            steps: 1,
        };
        let mut snapshots = Vec::new();
        for i in 0..12 {
            fqi_update(&mut twin, &buf, &Logits::zeros(4, 2), &p, RngSeed(i)).unwrap();
            snapshots.push(twin.targets.clone());
            if twin.updates().is_multiple_of(4) {
                assert_eq!(twin.targets, twin.online);
            }
        }
        for w in [0..3, 4..7, 8..11] {
            let first = &snapshots[w.start];
            assert!(snapshots[w].iter().all(|s| s == first));
        }
    }

    #[test]
    fn memory_one_gives_q_over_tau() {
        let m = chain_mdp(4, 0.1, 0.9).unwrap();
        let cfg = StaqConfig {
            memory: 1,
            samples_per_iter: 20,
            gradient_steps: 5,
            seed: RngSeed(11),
            ..StaqConfig::default()
        };
        let run = staq_run(&m, &cfg, 5).unwrap();
        let q = run.twin.aggregate_online();
        assert!(run.logits.sup_dist(&q.map(|v| v / cfg.tau)) < 1e-9 * q.sup_norm().max(1.0) / cfg.tau);
    }

    #[test]
    fn uniform_behavior_balances_actions() {
        let m = chain_mdp(5, 0.0, 0.9).unwrap();
        let cfg = StaqConfig {
            epsilon: 1.0,
            samples_per_iter: 2000,
            buffer_capacity: 20_000,
            gradient_steps: 1,
            seed: RngSeed(5),
            ..StaqConfig::default()
        };
        let mut buf = ReplayBuffer::new(cfg.buffer_capacity);
        let mut start = vec![0.0; 5];
        start[0] = 1.0;
        let mut col = Collector::new(&m, start, cfg.horizon, &[], cfg.seed).unwrap();
        let mut b = PolicySampler::new(
            epsilon_softmax(&PolicyTable::deterministic(&[1; 5], 2), 1.0).unwrap(),
            RngSeed(6),
        );
        for _ in 0..10 {
            buf.extend(col.collect(&m, &mut b, cfg.samples_per_iter));
        }
        // chi-square with one degree of freedom per visited state
        for s in 0..5 {
            let n: Vec<f64> = (0..2)
                .map(|a| buf.iter().filter(|x| x.state == s && x.action == a).count() as f64)
                .collect();
            let tot = n[0] + n[1];
            if tot < 100.0 {
                continue;
            }
            let chi2: f64 = n.iter().map(|&x| (x - tot / 2.0).powi(2) / (tot / 2.0)).sum();
            assert!(chi2 < 10.83, "state {s}: chi2 {chi2}");
        }
    }

    #[test]
    fn linear_tau_schedule() {
        let s = TauSchedule::Linear {
            from: 1.0,
            to: 0.1,
            steps: 10,
        };
        assert_eq!(s.at(0.5, 0), 1.0);
        assert!((s.at(0.5, 5) - 0.55).abs() < 1e-15);
        assert_eq!(s.at(0.5, 10), 0.1);
        assert_eq!(s.at(0.5, 99), 0.1);
        assert_eq!(TauSchedule::Constant.at(0.5, 3), 0.5);
    }
}
