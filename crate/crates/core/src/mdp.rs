//! Finite MDPs, validation, and the deterministic test-environment generators.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::Deserialize;

use crate::error::{PmdError, Result};
use crate::rng::RngSeed;
use crate::tables::Table;

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite discounted MDP with dense, row-major arrays.
///
/// `transitions[(s * n_actions + a) * n_states + s']` is `P(s' | s, a)` and
/// `rewards` is an `n_states x n_actions` table bounded by `reward_bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    rewards: Table,
    reward_bound: f64,
    transitions: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// Assembles and validates an MDP.
    pub fn new(
        rewards: Table,
        reward_bound: f64,
        transitions: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let (n_states, n_actions) = rewards.shape();
        if n_states == 0 || n_actions == 0 {
            return Err(PmdError::InvalidDimensions(
                "need at least one state and one action".into(),
            ));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(PmdError::InvalidDimensions(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                n_states * n_actions * n_states
            )));
        }
        if !(reward_bound > 0.0) || !reward_bound.is_finite() {
            return Err(PmdError::InvalidParameter(format!(
                "reward bound must be positive, got {reward_bound}"
            )));
        }
        let mdp = Self {
            n_states,
            n_actions,
            rewards,
            reward_bound,
            transitions,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn rewards(&self) -> &Table {
        &self.rewards
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards.get(s, a)
    }

    /// `P(. | s, a)` as a slice over successor states.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    /// `E_{s' ~ P(.|s,a)} v(s')`.
    pub fn expected(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum()
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut m = self.clone();
        m.gamma = gamma;
        m.validate()?;
        Ok(m)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PmdError::BadGamma(self.gamma));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                let row_sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (row_sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(PmdError::NonStochasticRow {
                        state: s,
                        action: a,
                        row_sum,
                    });
                }
                let r = self.reward(s, a);
                if !r.is_finite() || r.abs() > self.reward_bound {
                    return Err(PmdError::RewardOutOfBound {
                        state: s,
                        action: a,
                    });
                }
            }
        }
        Ok(())
    }

    /// Samples a successor state from `P(. | s, a)`.
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut crate::rng::Rng) -> usize {
        let u: f64 = rng.gen();
        let row = self.transition_row(s, a);
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        row.iter().rposition(|&p| p > 0.0).unwrap_or(self.n_states - 1)
    }

    /// JSON document with full-precision scientific floats.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{{\"n_states\":{},\"n_actions\":{},\"gamma\":{},\"reward_bound\":{},\"rewards\":[",
            self.n_states,
            self.n_actions,
            sci(self.gamma),
            sci(self.reward_bound)
        );
        for s in 0..self.n_states {
            if s > 0 {
                out.push(',');
            }
            push_array(&mut out, self.rewards.row(s));
        }
        out.push_str("],\"transitions\":[");
        for s in 0..self.n_states {
            if s > 0 {
                out.push(',');
            }
            out.push('[');
            for a in 0..self.n_actions {
                if a > 0 {
                    out.push(',');
                }
                push_array(&mut out, self.transition_row(s, a));
            }
            out.push(']');
        }
        out.push_str("]}");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            n_states: usize,
            n_actions: usize,
            gamma: f64,
            reward_bound: f64,
            rewards: Vec<Vec<f64>>,
            transitions: Vec<Vec<Vec<f64>>>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| PmdError::Parse(e.to_string()))?;
        let rewards = Table::from_rows(&doc.rewards)?;
        if rewards.shape() != (doc.n_states, doc.n_actions) {
            return Err(PmdError::InvalidDimensions(format!(
                "rewards are {:?}, header says ({}, {})",
                rewards.shape(),
                doc.n_states,
                doc.n_actions
            )));
        }
        let mut transitions = Vec::with_capacity(doc.n_states * doc.n_actions * doc.n_states);
        if doc.transitions.len() != doc.n_states {
            return Err(PmdError::InvalidDimensions("transition state axis".into()));
        }
        for per_state in &doc.transitions {
            if per_state.len() != doc.n_actions {
                return Err(PmdError::InvalidDimensions("transition action axis".into()));
            }
            for row in per_state {
                if row.len() != doc.n_states {
                    return Err(PmdError::InvalidDimensions("transition successor axis".into()));
                }
                transitions.extend_from_slice(row);
            }
        }
        Self::new(rewards, doc.reward_bound, transitions, doc.gamma)
    }
}

/// Scientific notation with 17 significant digits; round-trips every f64.
pub fn sci(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn push_array(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&sci(x));
    }
    out.push(']');
}

/// Random MDP where every `(s, a)` reaches exactly `branching` successors.
pub fn random_mdp(
    seed: RngSeed,
    n_states: usize,
    n_actions: usize,
    branching: usize,
    reward_bound: f64,
    gamma: f64,
) -> Result<TabularMdp> {
    if branching == 0 || branching > n_states {
        return Err(PmdError::InvalidBranching {
            branching,
            n_states,
        });
    }
    let mut rng = seed.rng();
    let mut rewards = Table::zeros(n_states, n_actions);
    for v in rewards.as_mut_slice() {
        *v = rng.gen_range(-reward_bound..=reward_bound);
    }
    let mut transitions = vec![0.0; n_states * n_actions * n_states];
    for row in transitions.chunks_mut(n_states) {
        let succ = sample(&mut rng, n_states, branching);
        // uniform on (0, 1]
        let weights: Vec<f64> = (0..branching).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        for (s, w) in succ.iter().zip(&weights) {
            row[s] = w / total;
        }
    }
    TabularMdp::new(rewards, reward_bound, transitions, gamma)
}

/// `n`-state chain with actions 0 = left, 1 = right. The chosen direction
/// happens with probability `1 - slip`; reward 1 only for moving right in the
/// rightmost state.
pub fn chain_mdp(n: usize, slip: f64, gamma: f64) -> Result<TabularMdp> {
    if n < 2 {
        return Err(PmdError::InvalidDimensions(format!(
            "chain needs at least 2 states, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(PmdError::InvalidSlip(slip));
    }
    let mut rewards = Table::zeros(n, 2);
    rewards.set(n - 1, 1, 1.0);
    let mut transitions = vec![0.0; n * 2 * n];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        for a in 0..2 {
            let (intended, other) = if a == 0 { (left, right) } else { (right, left) };
            let row = &mut transitions[(s * 2 + a) * n..(s * 2 + a + 1) * n];
            row[intended] += 1.0 - slip;
            row[other] += slip;
        }
    }
    TabularMdp::new(rewards, 1.0, transitions, gamma)
}

/// How the absorbing goal pays out in [`gridworld_mdp_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalReward {
    /// `goal_reward` on the entering move, 0 on the self-loop afterwards.
    OnEntry,
    /// `goal_reward` on entry and on every self-loop step inside the goal.
    WhileInGoal,
}

/// Grid actions: 0 = N, 1 = S, 2 = E, 3 = W.
pub const GRID_ACTIONS: usize = 4;

/// Deterministic gridworld; states are `row * width + col` and `goal` is
/// `(row, col)`. Moves into walls leave the agent in place.
pub fn gridworld_mdp(
    width: usize,
    height: usize,
    goal: (usize, usize),
    step_reward: f64,
    goal_reward: f64,
    gamma: f64,
) -> Result<TabularMdp> {
    gridworld_mdp_with(width, height, goal, step_reward, goal_reward, gamma, GoalReward::OnEntry)
}

pub fn gridworld_mdp_with(
    width: usize,
    height: usize,
    goal: (usize, usize),
    step_reward: f64,
    goal_reward: f64,
    gamma: f64,
    mode: GoalReward,
) -> Result<TabularMdp> {
    let n = width * height;
    if n < 2 {
        return Err(PmdError::InvalidDimensions(format!(
            "grid {width}x{height} needs at least 2 cells"
        )));
    }
    if goal.0 >= height || goal.1 >= width {
        return Err(PmdError::GoalOutOfGrid(goal.0, goal.1));
    }
    let goal_state = goal.0 * width + goal.1;
    let mut rewards = Table::zeros(n, GRID_ACTIONS);
    let mut transitions = vec![0.0; n * GRID_ACTIONS * n];
    for s in 0..n {
        let (r, c) = (s / width, s % width);
        for a in 0..GRID_ACTIONS {
            let next = if s == goal_state {
                s
            } else {
                let (nr, nc) = match a {
                    0 => (r.saturating_sub(1), c),
                    1 => ((r + 1).min(height - 1), c),
                    2 => (r, (c + 1).min(width - 1)),
                    _ => (r, c.saturating_sub(1)),
                };
                nr * width + nc
            };
            transitions[(s * GRID_ACTIONS + a) * n + next] = 1.0;
            let reward = match (s == goal_state, next == goal_state, mode) {
                (true, _, GoalReward::OnEntry) => 0.0,
                (true, _, GoalReward::WhileInGoal) => goal_reward,
                (false, true, _) => goal_reward,
                (false, false, _) => step_reward,
            };
            rewards.set(s, a, reward);
        }
    }
    let bound = step_reward.abs().max(goal_reward.abs());
    let bound = if bound > 0.0 { bound } else { 1.0 };
    TabularMdp::new(rewards, bound, transitions, gamma)
}
