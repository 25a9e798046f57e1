//! Full-batch training of the residual network, forecasting with the trained
//! model, and trajectory error metrics.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adam::{adam_init, DEFAULT_LR};
use crate::dynamics::{format_value, simulate_forced, SolverSpec, Trajectory};
use crate::error::{Result, UdeError};
use crate::residual::{init_params, InputNormalizer, MlpParams, DEFAULT_LAYER_SIZES};
use crate::signals::{net_unchecked, ScenarioConfig};
use crate::ude::{loss_and_grad, rollout, UdeSystem};

pub const DEFAULT_ITERATIONS: usize = 300;
pub const DEFAULT_E_SCALE: f64 = 50.0;

/// Known residual `a·sin(ω t)` added to the truth dynamics, so that training
/// has a non-trivial target. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedResidual {
    pub amplitude: f64,
    pub omega: f64,
}

impl InjectedResidual {
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub iterations: usize,
    pub lr: f64,
    pub layer_sizes: Vec<usize>,
    /// Defaults to `t_scale = train_horizon_hours`, `e_scale = 50`.
    pub norm: Option<InputNormalizer>,
    pub injected: Option<InjectedResidual>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            lr: DEFAULT_LR,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            norm: None,
            injected: None,
        }
    }
}

impl TrainOptions {
    pub fn normalizer(&self, cfg: &ScenarioConfig) -> InputNormalizer {
        self.norm.unwrap_or(InputNormalizer {
            t_scale: cfg.train_horizon_hours,
            e_scale: DEFAULT_E_SCALE,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss before each iteration's update; entry 0 is the initial loss.
    pub loss_history: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Nodes × samples; divide a loss by this to get the mean squared error.
    pub sample_count: usize,
    pub wall_time_seconds: f64,
    pub injected_residual: Option<InjectedResidual>,
}

impl TrainReport {
    pub fn loss_history_csv(&self) -> String {
        loss_history_csv(&self.loss_history)
    }
}

pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("iter,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", format_value(*l));
    }
    out
}

#[derive(Debug, Error)]
pub enum TrainError {
    /// The rollout or its gradient went non-finite. Carries the losses
    /// recorded before the failure.
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        loss_history: Vec<f64>,
        #[source]
        source: UdeError,
    },
    #[error(transparent)]
    Setup(#[from] UdeError),
}

/// Reference trajectory over `[0, horizon]`: the physical model, plus the
/// injected residual when one is given.
pub fn reference_truth(
    cfg: &ScenarioConfig,
    spec: &SolverSpec,
    horizon: f64,
    injected: Option<InjectedResidual>,
) -> Result<Trajectory> {
    match injected {
        None => crate::dynamics::simulate_truth(cfg, spec, horizon),
        Some(r) => simulate_forced(cfg, spec, horizon, |node, t| net_unchecked(node, t, cfg) + r.value(t)),
    }
}

/// Trains with defaults for everything except the listed arguments.
pub fn train(
    cfg: &ScenarioConfig,
    spec: &SolverSpec,
    seed: u64,
    iterations: usize,
    lr: f64,
) -> std::result::Result<(MlpParams, TrainReport), TrainError> {
    let opts = TrainOptions {
        seed,
        iterations,
        lr,
        ..TrainOptions::default()
    };
    train_with(cfg, spec, &opts, |_, _| Ok(()))
}

/// Runs the training loop. `on_iteration(i, params)` is called after the
/// `i`-th update (1-based) and may write intermediate checkpoints.
pub fn train_with<F>(
    cfg: &ScenarioConfig,
    spec: &SolverSpec,
    opts: &TrainOptions,
    mut on_iteration: F,
) -> std::result::Result<(MlpParams, TrainReport), TrainError>
where
    F: FnMut(usize, &MlpParams) -> Result<()>,
{
    if opts.iterations == 0 {
        return Err(UdeError::Validation("iterations must be at least 1".into()).into());
    }
    let started = Instant::now();
    let truth = reference_truth(cfg, spec, cfg.train_horizon_hours, opts.injected)?;
    let params = init_params(opts.seed, &opts.layer_sizes)?;
    let mut sys = UdeSystem::new(cfg.clone(), params, opts.normalizer(cfg), *spec)?;
    let mut adam = adam_init(sys.params.len(), opts.lr)?;
    let mut history = Vec::with_capacity(opts.iterations);

    for iteration in 0..opts.iterations {
        let report = match loss_and_grad(&sys, &truth) {
            Ok(r) => r,
            Err(source) => {
                return Err(TrainError::Diverged {
                    iteration,
                    loss_history: history,
                    source,
                })
            }
        };
        if !report.loss.is_finite() {
            return Err(TrainError::Diverged {
                iteration,
                loss_history: history,
                source: UdeError::Domain(format!("loss is {}", report.loss)),
            });
        }
        history.push(report.loss);
        adam.step_in_place(&mut sys.params.theta, &report.grad_theta)?;
        on_iteration(iteration + 1, &sys.params)?;
    }

    let report = TrainReport {
        final_theta: sys.params.theta.clone(),
        loss_history: history,
        iterations: opts.iterations,
        lr: opts.lr,
        beta1: adam.beta1,
        beta2: adam.beta2,
        eps: adam.eps,
        seed: opts.seed,
        sample_count: truth.n_nodes() * truth.n_samples(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        injected_residual: opts.injected,
    };
    Ok((sys.params, report))
}

/// Rolls the trained hybrid model out over `[0, horizon]`.
pub fn forecast(
    params: &MlpParams,
    norm: &InputNormalizer,
    cfg: &ScenarioConfig,
    spec: &SolverSpec,
    horizon: f64,
) -> Result<Trajectory> {
    if horizon < cfg.train_horizon_hours {
        return Err(UdeError::Validation(format!(
            "forecast horizon {horizon} h is shorter than the training window {} h",
            cfg.train_horizon_hours
        )));
    }
    let sys = UdeSystem::new(cfg.clone(), params.clone(), *norm, *spec)?;
    rollout(&sys, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse_per_node: Vec<f64>,
    pub rmse_total: f64,
    pub max_abs_err: f64,
}

pub fn evaluate(pred: &Trajectory, truth: &Trajectory) -> Result<Metrics> {
    pred.check_same_grid(truth)?;
    let n = pred.n_samples() as f64;
    let mut total = 0.0;
    let mut max_abs_err: f64 = 0.0;
    let rmse_per_node = pred
        .states
        .iter()
        .zip(&truth.states)
        .map(|(p, q)| {
            let sse: f64 = p
                .iter()
                .zip(q)
                .map(|(a, b)| {
                    let d = a - b;
                    max_abs_err = max_abs_err.max(d.abs());
                    d * d
                })
                .sum();
            total += sse;
            (sse / n).sqrt()
        })
        .collect();
    Ok(Metrics {
        rmse_per_node,
        rmse_total: (total / (n * pred.n_nodes() as f64)).sqrt(),
        max_abs_err,
    })
}
