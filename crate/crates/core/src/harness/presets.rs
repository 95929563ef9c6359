//! Experiment presets shipped with the crate.

use crate::harness::config::{parse_sections, ConfigError, ExperimentConfig};

pub const PRESETS: &[(&str, &str)] = &[
    ("preset-thm31", include_str!("../../presets/preset-thm31.conf")),
    ("preset-thm42-residual", include_str!("../../presets/preset-thm42-residual.conf")),
    ("preset-thm44", include_str!("../../presets/preset-thm44.conf")),
    ("preset-fig-seqxk", include_str!("../../presets/preset-fig-seqxk.conf")),
    ("preset-staq-chain", include_str!("../../presets/preset-staq-chain.conf")),
];

pub fn preset_text(name: &str) -> Result<&'static str, ConfigError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ConfigError::UnknownPreset(name.into()))
}

/// Experiments of a preset with `--key value` overrides applied to each.
pub fn load_preset<S: AsRef<str>>(name: &str, flags: &[S]) -> Result<Vec<ExperimentConfig>, ConfigError> {
    parse_sections(preset_text(name)?)?
        .into_iter()
        .map(|mut raw| {
            raw.apply_flags(flags)?;
            ExperimentConfig::from_raw(&raw)
        })
        .collect()
}
