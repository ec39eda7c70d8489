//! TOML description of a simulation run.

use std::path::Path;

use serde::Deserialize;

use super::RunConfig;
use crate::datagen::Scenario;
use crate::diagnostics::TailRule;
use crate::error::{Error, Result};
use crate::estimators::{grid, EstimatorConfig, Method};
use crate::models::{ModelSpec, OutcomeStructure};

/// A scenario with the name that keys its random streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEntry {
    pub name: String,
    pub scenario: Scenario,
}

impl ScenarioEntry {
    /// Entry for a built-in preset.
    ///
    /// # Panics
    /// If `name` is not a preset name.
    pub fn preset(name: &str) -> Self {
        let scenario = Scenario::named(name).unwrap_or_else(|| panic!("unknown preset `{name}`"));
        ScenarioEntry { name: name.to_string(), scenario }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    master_seed: Option<u64>,
    n_replicates: Option<usize>,
    sample_sizes: Option<Vec<usize>>,
    primary_n: Option<usize>,
    scenarios: Option<Vec<String>>,
    #[serde(default)]
    custom_scenarios: Vec<toml::Table>,
    model_specs: Option<Vec<String>>,
    estimators: Option<Vec<String>>,
    trims: Option<Vec<f64>>,
    refit_after_trim: Option<bool>,
    outcome_structure: Option<OutcomeStructure>,
    tail_rule: Option<TailRule>,
    diagnostics: Option<bool>,
    phi_draws: Option<usize>,
    calibration_draws: Option<usize>,
    max_redraws: Option<usize>,
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}

/// Parses a run configuration. Missing keys take the defaults of
/// [`RunConfig::default`].
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text.as_bytes()[..s.start.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1);
        let field = match line {
            Some(l) => format!("line {l}"),
            None => "config".to_string(),
        };
        config_err(&field, e.message())
    })?;

    let mut cfg = RunConfig::default();
    if let Some(v) = raw.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = raw.n_replicates {
        cfg.n_replicates = v;
    }
    if let Some(v) = raw.sample_sizes {
        cfg.sample_sizes = v;
    }
    cfg.primary_n = raw.primary_n.unwrap_or(cfg.primary_n);
    if let Some(names) = raw.scenarios {
        cfg.scenarios = names
            .iter()
            .map(|n| {
                Scenario::named(n)
                    .map(|s| ScenarioEntry { name: n.clone(), scenario: s })
                    .ok_or_else(|| config_err("scenarios", format!("unknown preset `{n}`")))
            })
            .collect::<Result<_>>()?;
    }
    for mut table in raw.custom_scenarios {
        let name = match table.remove("name") {
            Some(toml::Value::String(s)) => s,
            _ => return Err(config_err("custom_scenarios", "every custom scenario needs a string `name`")),
        };
        let scenario: Scenario = table
            .try_into()
            .map_err(|e: toml::de::Error| config_err("custom_scenarios", format!("`{name}`: {}", e.message())))?;
        if cfg.scenarios.iter().any(|e| e.name == name) {
            return Err(config_err("custom_scenarios", format!("duplicate scenario name `{name}`")));
        }
        cfg.scenarios.push(ScenarioEntry { name, scenario });
    }
    if let Some(specs) = raw.model_specs {
        cfg.model_specs =
            specs.iter().map(|s| s.parse::<ModelSpec>().map_err(|m| config_err("model_specs", m))).collect::<Result<_>>()?;
    }
    if raw.estimators.is_some() || raw.trims.is_some() || raw.refit_after_trim.is_some() {
        let methods: Vec<Method> = match raw.estimators {
            Some(v) => v.iter().map(|s| s.parse::<Method>().map_err(|m| config_err("estimators", m))).collect::<Result<_>>()?,
            None => Method::ALL.to_vec(),
        };
        let trims = raw.trims.unwrap_or_else(|| vec![0.05, 0.1]);
        let refit = raw.refit_after_trim.unwrap_or(true);
        cfg.grid = grid(&methods, &trims)
            .into_iter()
            .map(|c| EstimatorConfig { refit_after_trim: refit || c.trim.is_none(), ..c })
            .collect();
    }
    if let Some(v) = raw.outcome_structure {
        cfg.outcome_structure = v;
    }
    if let Some(v) = raw.tail_rule {
        cfg.tail_rule = v;
    }
    if let Some(v) = raw.diagnostics {
        cfg.diagnostics = v;
    }
    if let Some(v) = raw.phi_draws {
        cfg.phi_draws = v;
    }
    if let Some(v) = raw.calibration_draws {
        cfg.calibration_draws = v;
    }
    if let Some(v) = raw.max_redraws {
        cfg.max_redraws = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_run_config(&text)
}
