//! `pmd-lab <subcommand> [--config FILE] [--key value ...]`

use std::fs;
use std::process::ExitCode;

use pmd_lab::harness::config::{ConfigError, ExperimentConfig, RawConfig};
use pmd_lab::harness::presets::{load_preset, PRESETS};
use pmd_lab::harness::run::{build_mdp, output_dir, run_experiment};
use pmd_lab::harness::HarnessError;

const USAGE: &str = "usage: pmd-lab <subcommand> [--config FILE] [--key value ...]

subcommands:
  run            run the experiment described by the config (`kind` required)
  bounds         theory constants for (gamma, beta, M)
  sequence       bounding sequence x_k
  staq           sampled stacked-Q loop
  validate-mdp   build or load the configured MDP and check it
  preset NAME    run a shipped preset (no NAME lists them)

PMD_LAB_OUT overrides the output directory.";

enum Failure {
    Config(String),
    Violation,
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Splits off `--config FILE` and returns the remaining flag pairs on top of
/// the file contents.
fn load_raw(args: &[String]) -> Result<RawConfig, Failure> {
    let mut rest = Vec::new();
    let mut file = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            file = Some(
                it.next()
                    .ok_or_else(|| Failure::Config("--config needs a path".into()))?,
            );
        } else {
            rest.push(a.clone());
        }
    }
    let mut raw = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {path}: {e}")))?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    raw.apply_flags(&rest)?;
    Ok(raw)
}

fn run_one(cfg: &ExperimentConfig) -> Result<bool, Failure> {
    let rec = run_experiment(cfg)?;
    let violation = if rec.max_violation.is_finite() {
        format!("{:.3e}", rec.max_violation)
    } else {
        "n/a".to_string()
    };
    println!(
        "{} [{}]: {} seed(s), max violation {violation} (slack {:.3e}) -> {}",
        rec.name,
        rec.kind,
        rec.runs.len(),
        rec.slack,
        if rec.passed { "ok" } else { "VIOLATED" }
    );
    println!("  wrote {}", output_dir(cfg).join(&rec.name).display());
    Ok(rec.passed)
}

fn dispatch(args: &[String]) -> Result<(), Failure> {
    let Some(sub) = args.first() else {
        eprintln!("{USAGE}");
        return Err(Failure::Config("missing subcommand".into()));
    };
    let rest = &args[1..];
    match sub.as_str() {
        "-h" | "--help" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        "run" | "bounds" | "sequence" | "staq" => {
            let mut raw = load_raw(rest)?;
            match sub.as_str() {
                "bounds" => raw.set("kind", "bounds")?,
                "sequence" => raw.set("kind", "sequence")?,
                "staq" => raw.set("kind", "staq-sample")?,
                _ => {}
            }
            let cfg = ExperimentConfig::from_raw(&raw)?;
            run_one(&cfg)?;
            Ok(())
        }
        "validate-mdp" => {
            let mut raw = load_raw(rest)?;
            if !raw.contains("kind") {
                raw.set("kind", "exact-epmd")?;
            }
            let cfg = ExperimentConfig::from_raw(&raw)?;
            let mdp = build_mdp(&cfg, cfg.seeds[0]).map_err(|e| Failure::Runtime(e.to_string()))?;
            mdp.validate().map_err(|e| Failure::Runtime(e.to_string()))?;
            println!(
                "ok: {} states, {} actions, gamma {}, reward bound {}",
                mdp.n_states(),
                mdp.n_actions(),
                mdp.gamma(),
                mdp.reward_bound()
            );
            Ok(())
        }
        "preset" => {
            let Some(name) = rest.first() else {
                for (n, _) in PRESETS {
                    println!("{n}");
                }
                return Ok(());
            };
            let cfgs = load_preset(name, &rest[1..])?;
            let mut all = true;
            for cfg in &cfgs {
                all &= run_one(cfg)?;
            }
            if all {
                Ok(())
            } else {
                Err(Failure::Violation)
            }
        }
        other => Err(Failure::Config(format!("unknown subcommand `{other}`\n{USAGE}"))),
    }
}
