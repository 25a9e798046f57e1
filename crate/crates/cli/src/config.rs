use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use ude_grid::residual::DEFAULT_LAYER_SIZES;
use ude_grid::trainer::{DEFAULT_E_SCALE, DEFAULT_ITERATIONS};
use ude_grid::{InjectedResidual, InputNormalizer, ScenarioConfig, SolverSpec};

/// Everything one run needs: the scenario, the solver, and training knobs.
/// Every field is optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_step_hours")]
    pub step_hours: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_layer_sizes")]
    pub layer_sizes: Vec<usize>,
    /// Defaults to the training horizon.
    #[serde(default)]
    pub t_scale: Option<f64>,
    #[serde(default)]
    pub e_scale: Option<f64>,
    #[serde(default)]
    pub inject_residual: Option<InjectedResidual>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn default_step_hours() -> f64 {
    SolverSpec::default().step_hours
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_lr() -> f64 {
    ude_grid::adam::DEFAULT_LR
}

fn default_layer_sizes() -> Vec<usize> {
    DEFAULT_LAYER_SIZES.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            step_hours: default_step_hours(),
            seed: 0,
            iterations: default_iterations(),
            lr: default_lr(),
            layer_sizes: default_layer_sizes(),
            t_scale: None,
            e_scale: None,
            inject_residual: None,
            checkpoint_every: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        Ok(cfg)
    }

    /// Fill derived defaults and check every invariant.
    pub fn finish(mut self) -> anyhow::Result<Self> {
        self.scenario = self.scenario.resolved()?;
        self.solver().steps_per_sample(self.scenario.sample_interval_hours)?;
        self.normalizer().validate()?;
        ude_grid::residual::validate_layer_sizes(&self.layer_sizes)?;
        if self.iterations == 0 {
            bail!("iterations must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!("lr must be positive, got {}", self.lr);
        }
        if let Some(r) = self.inject_residual {
            if !(r.amplitude.is_finite() && r.omega.is_finite()) {
                bail!("inject_residual values must be finite");
            }
        }
        Ok(self)
    }

    pub fn solver(&self) -> SolverSpec {
        SolverSpec::with_step(self.step_hours)
    }

    pub fn normalizer(&self) -> InputNormalizer {
        InputNormalizer {
            t_scale: self.t_scale.unwrap_or(self.scenario.train_horizon_hours),
            e_scale: self.e_scale.unwrap_or(DEFAULT_E_SCALE),
        }
    }
}

/// Parses the `--inject-residual "a,omega"` flag.
pub fn parse_injection(text: &str) -> Result<InjectedResidual, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected \"a,omega\", got {text:?}"));
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    Ok(InjectedResidual {
        amplitude: parse(parts[0])?,
        omega: parse(parts[1])?,
    })
}
