//! `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::exec::Exec;
use crate::mdp::GoalReward;
use crate::pmd::{NoiseSeeding, Variant};
use crate::soft_dp::NoiseMode;
use crate::staq::{Aggregation, BehaviorKind, TauSchedule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}`: expected {1}")]
    TypeError(String, String),
    #[error("missing required key `{0}`")]
    MissingRequired(String),
    #[error("line {0}: {1}")]
    Syntax(usize, String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    ExactEpmd,
    Vanilla,
    WeightCorrected,
    Bounds,
    Sequence,
    StaqSample,
    ImprovementAudit,
}

impl Kind {
    /// The PMD variant driven by this kind, if any.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Kind::ExactEpmd => Some(Variant::Exact),
            Kind::Vanilla => Some(Variant::Vanilla),
            Kind::WeightCorrected => Some(Variant::WeightCorrected),
            _ => None,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::ExactEpmd => "exact-epmd",
            Kind::Vanilla => "vanilla",
            Kind::WeightCorrected => "weight-corrected",
            Kind::Bounds => "bounds",
            Kind::Sequence => "sequence",
            Kind::StaqSample => "staq-sample",
            Kind::ImprovementAudit => "improvement-audit",
        })
    }
}

impl FromStr for Kind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "exact-epmd" => Kind::ExactEpmd,
            "vanilla" => Kind::Vanilla,
            "weight-corrected" => Kind::WeightCorrected,
            "bounds" => Kind::Bounds,
            "sequence" => Kind::Sequence,
            "staq-sample" => Kind::StaqSample,
            "improvement-audit" => Kind::ImprovementAudit,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    /// `random_mdp` seeded by `mdp_seed`, or by the run seed when unset.
    Random {
        n_states: usize,
        n_actions: usize,
        branching: usize,
        reward_bound: f64,
        mdp_seed: Option<u64>,
    },
    Chain {
        n_states: usize,
        slip: f64,
    },
    Gridworld {
        width: usize,
        height: usize,
        goal: (usize, usize),
        step_reward: f64,
        goal_reward: f64,
        mode: GoalReward,
    },
    File(PathBuf),
}

/// Fully typed experiment description. Defaults are filled in by
/// [`parse_config`]; unused keys for a kind are accepted and ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub name: String,
    pub mdp: MdpSource,
    pub gamma: f64,
    pub tau: f64,
    pub eta: f64,
    pub memory: Option<usize>,
    /// PMD variant for `improvement-audit`.
    pub variant: Variant,
    pub iters: usize,
    pub tol: f64,
    pub convergence_tol: f64,
    pub eps_eval: f64,
    pub noise_mode: NoiseMode,
    pub noise_seeding: NoiseSeeding,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub exec: Exec,
    pub k_max: usize,
    /// Keep every `stride`-th term of a sequence in the CSV.
    pub stride: usize,
    pub qstar_norm: f64,
    pub q0_norm: f64,
    pub perturb_scale: f64,
    pub staq: StaqKeys,
    /// Canonical `key = value` text the config was built from.
    pub echo: String,
}

/// StaQ-specific keys, mirrored into a `StaqConfig` per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StaqKeys {
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
}

/// Every accepted key with a short type description.
pub const KEYS: &[(&str, &str)] = &[
    ("kind", "experiment kind"),
    ("name", "string"),
    ("mdp", "random | chain | gridworld | file"),
    ("mdp_file", "path"),
    ("n_states", "integer"),
    ("n_actions", "integer"),
    ("branching", "integer"),
    ("reward_bound", "number"),
    ("mdp_seed", "integer"),
    ("slip", "number"),
    ("width", "integer"),
    ("height", "integer"),
    ("goal_row", "integer"),
    ("goal_col", "integer"),
    ("step_reward", "number"),
    ("goal_reward", "number"),
    ("goal_mode", "on-entry | while-in-goal"),
    ("gamma", "number"),
    ("tau", "number"),
    ("eta", "number"),
    ("beta", "number"),
    ("M", "integer"),
    ("variant", "exact | vanilla | weight-corrected"),
    ("iters", "integer"),
    ("tol", "number"),
    ("convergence_tol", "number"),
    ("eps_eval", "number"),
    ("noise_mode", "uniform | signed-max"),
    ("noise_seeding", "fresh | fixed"),
    ("seeds", "integer list (a,b,c) or range (a..b)"),
    ("out", "path"),
    ("exec", "parallel | sequential"),
    ("k_max", "integer"),
    ("stride", "integer"),
    ("qstar_norm", "number"),
    ("q0_norm", "number"),
    ("perturb_scale", "number"),
    ("samples_per_iter", "integer"),
    ("buffer_capacity", "integer"),
    ("batch_size", "integer"),
    ("learning_rate", "number"),
    ("gradient_steps", "integer"),
    ("target_update_interval", "integer"),
    ("aggregation", "min | mean"),
    ("epsilon", "number"),
    ("behavior", "eps-softmax | sticky"),
    ("sticky_lambda", "number"),
    ("tau_schedule", "constant | linear"),
    ("tau_from", "number"),
    ("tau_to", "number"),
    ("tau_steps", "integer"),
    ("horizon", "integer"),
    ("start_state", "integer"),
];

fn expected(key: &str) -> &'static str {
    KEYS.iter()
        .find(|(k, _)| *k == key)
        .map_or("value", |(_, t)| t)
}

/// Raw `key -> value` pairs after comments and whitespace are stripped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax(i + 1, format!("expected `key = value`, got `{line}`")))?;
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    /// Inserts or overrides one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = normalize_key(key);
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey(key));
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    /// Applies `--key value` pairs on top of the file values.
    pub fn apply_flags<S: AsRef<str>>(&mut self, args: &[S]) -> Result<(), ConfigError> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| ConfigError::Syntax(0, format!("expected `--key`, got `{flag}`")))?;
            let value = it
                .next()
                .ok_or_else(|| ConfigError::TypeError(normalize_key(key), "a value".into()))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Canonical `key = value` text, sorted by key.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::TypeError(key.into(), expected(key).into())),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.typed(key)?
            .ok_or_else(|| ConfigError::MissingRequired(key.into()))
    }

    fn choice<T>(&self, key: &str, default: T, table: &[(&str, T)]) -> Result<T, ConfigError>
    where
        T: Copy,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => table
                .iter()
                .find(|(name, _)| *name == v)
                .map(|(_, t)| *t)
                .ok_or_else(|| ConfigError::TypeError(key.into(), expected(key).into())),
        }
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn parse_seeds(text: &str) -> Option<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (a < b).then(|| (a..b).collect());
    }
    let seeds: Option<Vec<u64>> = text.split(',').map(|s| s.trim().parse().ok()).collect();
    seeds.filter(|s| !s.is_empty())
}

/// Parses a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    ExperimentConfig::from_raw(&RawConfig::parse(text)?)
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let kind_text: String = raw.required("kind")?;
        let kind: Kind = kind_text
            .parse()
            .map_err(|_| ConfigError::TypeError("kind".into(), KINDS_EXPECTED.into()))?;

        let n_states = raw.or("n_states", 10usize)?;
        let mdp = match raw.get("mdp").unwrap_or("random") {
            "random" => MdpSource::Random {
                n_states,
                n_actions: raw.or("n_actions", 4usize)?,
                branching: raw.or("branching", n_states)?,
                reward_bound: raw.or("reward_bound", 1.0)?,
                mdp_seed: raw.typed("mdp_seed")?,
            },
            "chain" => MdpSource::Chain {
                n_states: raw.or("n_states", 5usize)?,
                slip: raw.or("slip", 0.0)?,
            },
            "gridworld" => {
                let width = raw.or("width", 3usize)?;
                let height = raw.or("height", 3usize)?;
                MdpSource::Gridworld {
                    width,
                    height,
                    goal: (
                        raw.or("goal_row", height.saturating_sub(1))?,
                        raw.or("goal_col", width.saturating_sub(1))?,
                    ),
                    step_reward: raw.or("step_reward", 0.0)?,
                    goal_reward: raw.or("goal_reward", 1.0)?,
                    mode: raw.choice(
                        "goal_mode",
                        GoalReward::OnEntry,
                        &[
                            ("on-entry", GoalReward::OnEntry),
                            ("while-in-goal", GoalReward::WhileInGoal),
                        ],
                    )?,
                }
            }
            "file" => MdpSource::File(raw.required::<String>("mdp_file")?.into()),
            _ => return Err(ConfigError::TypeError("mdp".into(), expected("mdp").into())),
        };

        let tau = raw.or("tau", 0.1)?;
        let eta = match (raw.typed::<f64>("eta")?, raw.typed::<f64>("beta")?) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::TypeError(
                    "beta".into(),
                    "at most one of `eta` and `beta`".into(),
                ))
            }
            (Some(eta), None) => eta,
            (None, Some(beta)) => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(ConfigError::TypeError("beta".into(), "a number in (0, 1)".into()));
                }
                tau * beta / (1.0 - beta)
            }
            (None, None) => 0.4,
        };

        let memory: Option<usize> = raw.typed("M")?;
        let needs_memory = matches!(
            kind,
            Kind::Vanilla | Kind::WeightCorrected | Kind::Bounds | Kind::Sequence
        );
        if needs_memory && memory.is_none() {
            return Err(ConfigError::MissingRequired("M".into()));
        }

        let seeds = match raw.get("seeds") {
            None => vec![0],
            Some(v) => parse_seeds(v)
                .ok_or_else(|| ConfigError::TypeError("seeds".into(), expected("seeds").into()))?,
        };

        let behavior = match raw.get("behavior").unwrap_or("eps-softmax") {
            "eps-softmax" => BehaviorKind::EpsSoftmax,
            "sticky" => BehaviorKind::Sticky {
                lambda: raw.or("sticky_lambda", 3.0)?,
            },
            _ => return Err(ConfigError::TypeError("behavior".into(), expected("behavior").into())),
        };
        let tau_schedule = match raw.get("tau_schedule").unwrap_or("constant") {
            "constant" => TauSchedule::Constant,
            "linear" => TauSchedule::Linear {
                from: raw.required("tau_from")?,
                to: raw.required("tau_to")?,
                steps: raw.required("tau_steps")?,
            },
            _ => {
                return Err(ConfigError::TypeError(
                    "tau_schedule".into(),
                    expected("tau_schedule").into(),
                ))
            }
        };
        let defaults = crate::staq::StaqConfig::default();
        let staq = StaqKeys {
            samples_per_iter: raw.or("samples_per_iter", defaults.samples_per_iter)?,
            buffer_capacity: raw.or("buffer_capacity", defaults.buffer_capacity)?,
            batch_size: raw.or("batch_size", defaults.batch_size)?,
            learning_rate: raw.or("learning_rate", defaults.learning_rate)?,
            gradient_steps: raw.or("gradient_steps", defaults.gradient_steps)?,
            target_update_interval: raw.or("target_update_interval", defaults.target_update_interval)?,
            aggregation: raw.choice(
                "aggregation",
                defaults.aggregation,
                &[("min", Aggregation::Min), ("mean", Aggregation::Mean)],
            )?,
            epsilon: raw.or("epsilon", defaults.epsilon)?,
            behavior,
            tau_schedule,
            horizon: raw.or("horizon", defaults.horizon)?,
            start_state: raw.or("start_state", defaults.start_state)?,
        };

        Ok(Self {
            kind,
            name: raw.or("name", kind.to_string())?,
            mdp,
            gamma: raw.or("gamma", 0.9)?,
            tau,
            eta,
            memory,
            variant: raw.choice(
                "variant",
                Variant::Exact,
                &[
                    ("exact", Variant::Exact),
                    ("vanilla", Variant::Vanilla),
                    ("weight-corrected", Variant::WeightCorrected),
                ],
            )?,
            iters: raw.or("iters", 300usize)?,
            tol: raw.or("tol", 1e-10)?,
            convergence_tol: raw.or("convergence_tol", 1e-6)?,
            eps_eval: raw.or("eps_eval", 0.0)?,
            noise_mode: raw.choice(
                "noise_mode",
                NoiseMode::Uniform,
                &[("uniform", NoiseMode::Uniform), ("signed-max", NoiseMode::SignedMax)],
            )?,
            noise_seeding: raw.choice(
                "noise_seeding",
                NoiseSeeding::Fresh,
                &[("fresh", NoiseSeeding::Fresh), ("fixed", NoiseSeeding::Fixed)],
            )?,
            seeds,
            out: raw.or::<String>("out", "out".into())?.into(),
            exec: raw.choice(
                "exec",
                Exec::default(),
                &[("parallel", Exec::Parallel), ("sequential", Exec::Sequential)],
            )?,
            k_max: raw.or("k_max", 1000usize)?,
            stride: raw.or("stride", 1usize)?.max(1),
            qstar_norm: raw.or("qstar_norm", 1.0)?,
            q0_norm: raw.or("q0_norm", 1.0)?,
            perturb_scale: raw.or("perturb_scale", 0.5)?,
            staq,
            echo: raw.to_text(),
        })
    }

    /// `beta = eta / (eta + tau)`.
    pub fn beta(&self) -> f64 {
        self.eta / (self.eta + self.tau)
    }
}

const KINDS_EXPECTED: &str =
    "exact-epmd | vanilla | weight-corrected | bounds | sequence | staq-sample | improvement-audit";

/// A preset document: shared keys first, then one `[section]` per
/// experiment. Section keys override the shared ones and the section title
/// becomes the default `name`.
pub fn parse_sections(text: &str) -> Result<Vec<RawConfig>, ConfigError> {
    let mut shared = String::new();
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let t = line.split('#').next().unwrap_or("").trim();
        if let Some(title) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            sections.push((title.trim().to_string(), String::new()));
            continue;
        }
        let buf = match sections.last_mut() {
            Some((_, body)) => body,
            None => &mut shared,
        };
        buf.push_str(line);
        buf.push('\n');
    }
    if sections.is_empty() {
        return Ok(vec![RawConfig::parse(&shared)?]);
    }
    sections
        .into_iter()
        .map(|(title, body)| {
            let mut raw = RawConfig::parse(&shared)?;
            raw.set("name", &title)?;
            for (k, v) in RawConfig::parse(&body)?.values {
                raw.set(&k, &v)?;
            }
            Ok(raw)
        })
        .collect()
}
