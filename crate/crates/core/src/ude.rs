//! The hybrid model `dE/dt = P_s − P_d + NN(t, E)`, its rollout, the
//! trajectory loss, and the exact gradient of that loss obtained by running
//! reverse-mode through every stored RK4 stage.

use crate::dynamics::{integrate, integrate_recorded, step_end_time, SolverSpec, StageTape, Trajectory};
use crate::error::{ensure_finite, Result, UdeError};
use crate::residual::{InputNormalizer, MlpParams, MlpScratch};
use crate::signals::{net_unchecked, ScenarioConfig};

#[derive(Debug, Clone)]
pub struct UdeSystem {
    pub cfg: ScenarioConfig,
    pub params: MlpParams,
    pub norm: InputNormalizer,
    pub spec: SolverSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
}

impl UdeSystem {
    pub fn new(cfg: ScenarioConfig, params: MlpParams, norm: InputNormalizer, spec: SolverSpec) -> Result<Self> {
        let sys = Self {
            cfg,
            params,
            norm,
            spec,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.params.validate()?;
        self.norm.validate()?;
        self.spec.steps_per_sample(self.cfg.sample_interval_hours)?;
        Ok(())
    }

    fn run(&self, horizon: f64, tape: Option<&mut StageTape>) -> Result<Trajectory> {
        self.validate()?;
        if !(horizon > 0.0) {
            return Err(UdeError::Validation(format!("horizon must be positive, got {horizon}")));
        }
        let cfg = &self.cfg;
        let mut scratch = MlpScratch::new(&self.params.layer_sizes);
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            for (node, (d, &e)) in dy.iter_mut().zip(y).enumerate() {
                *d = net_unchecked(node, t, cfg) + scratch.forward(&self.params, &self.norm, t, e);
            }
        };
        let y0 = vec![cfg.initial_energy; cfg.n_nodes];
        let dt = cfg.sample_interval_hours;
        match tape {
            Some(tape) => integrate_recorded(rhs, &y0, 0.0, horizon, &self.spec, dt, tape),
            None => integrate(rhs, &y0, 0.0, horizon, &self.spec, dt),
        }
    }
}

/// Physical net power plus the learned residual.
pub fn rhs_ude(node: usize, t: f64, e: f64, sys: &UdeSystem) -> Result<f64> {
    let physical = crate::dynamics::rhs_physical(node, t, e, &sys.cfg)?;
    Ok(physical + crate::residual::forward(&sys.params, &sys.norm, t, e)?)
}

/// Integrates the hybrid model for all nodes over `[0, horizon]`.
pub fn rollout(sys: &UdeSystem, horizon: f64) -> Result<Trajectory> {
    sys.run(horizon, None)
}

/// Sum of squared errors over every node and every sample (t = 0 included).
pub fn trajectory_sse(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    pred.check_same_grid(truth)?;
    let mut total = 0.0;
    for (p, q) in pred.states.iter().zip(&truth.states) {
        for (a, b) in p.iter().zip(q) {
            let d = a - b;
            total += d * d;
        }
    }
    Ok(total)
}

fn horizon_of(truth: &Trajectory) -> Result<f64> {
    match truth.times.last() {
        Some(&t) if truth.n_samples() >= 2 => Ok(t),
        _ => Err(UdeError::Shape("truth needs at least two samples".into())),
    }
}

pub fn loss(sys: &UdeSystem, truth: &Trajectory) -> Result<f64> {
    if truth.n_nodes() != sys.cfg.n_nodes {
        return Err(UdeError::Shape(format!(
            "truth has {} nodes, system has {}",
            truth.n_nodes(),
            sys.cfg.n_nodes
        )));
    }
    let pred = rollout(sys, horizon_of(truth)?)?;
    trajectory_sse(&pred, truth)
}

/// Loss and its exact gradient with respect to `theta`.
///
/// The forward sweep records every RK4 stage input. The reverse sweep walks
/// the steps backwards, injecting `2·(pred − truth)` into the state adjoint at
/// each sample and pulling it through the four stages. Only the network
/// depends on the state or on `theta`, so the physical term drops out.
pub fn loss_and_grad(sys: &UdeSystem, truth: &Trajectory) -> Result<LossReport> {
    let mut tape = StageTape::default();
    let (pred, loss) = forward_with_tape(sys, truth, &mut tape)?;
    let grad_theta = adjoint_sweep(sys, truth, &pred, &tape)?;
    Ok(LossReport { loss, grad_theta })
}

fn forward_with_tape(sys: &UdeSystem, truth: &Trajectory, tape: &mut StageTape) -> Result<(Trajectory, f64)> {
    if truth.n_nodes() != sys.cfg.n_nodes {
        return Err(UdeError::Shape(format!(
            "truth has {} nodes, system has {}",
            truth.n_nodes(),
            sys.cfg.n_nodes
        )));
    }
    let pred = sys.run(horizon_of(truth)?, Some(tape))?;
    let loss = trajectory_sse(&pred, truth)?;
    Ok((pred, loss))
}

fn adjoint_sweep(sys: &UdeSystem, truth: &Trajectory, pred: &Trajectory, tape: &StageTape) -> Result<Vec<f64>> {
    let params = &sys.params;
    let norm = &sys.norm;
    let per_sample = sys.spec.steps_per_sample(sys.cfg.sample_interval_hours)?;
    let h = tape.step_hours;
    let n_nodes = tape.dim;

    let mut scratch = MlpScratch::new(&params.layer_sizes);
    let mut grad = vec![0.0; params.theta.len()];
    let mut adj = vec![0.0; n_nodes];

    for n in (0..tape.n_steps()).rev() {
        if (n + 1) % per_sample == 0 {
            let k = (n + 1) / per_sample;
            for (i, a) in adj.iter_mut().enumerate() {
                *a += 2.0 * (pred.states[i][k] - truth.states[i][k]);
            }
        }
        let t = tape.step_time(n);
        let [s1, s2, s3, s4] = tape.step(n);
        for i in 0..n_nodes {
            let y_bar = adj[i];
            if y_bar == 0.0 {
                continue;
            }
            // y' = y + h/6·(k1 + 2k2 + 2k3 + k4)
            let mut k1_bar = h / 6.0 * y_bar;
            let mut k2_bar = h / 6.0 * 2.0 * y_bar;
            let mut k3_bar = h / 6.0 * 2.0 * y_bar;
            let k4_bar = h / 6.0 * y_bar;
            let mut acc = y_bar;

            // k4 = f(t + h, y + h·k3)
            let g = scratch.accumulate_backward(params, norm, step_end_time(t, h), s4[i], k4_bar, &mut grad);
            acc += g;
            k3_bar += h * g;
            // k3 = f(t + h/2, y + h/2·k2)
            let g = scratch.accumulate_backward(params, norm, t + 0.5 * h, s3[i], k3_bar, &mut grad);
            acc += g;
            k2_bar += 0.5 * h * g;
            // k2 = f(t + h/2, y + h/2·k1)
            let g = scratch.accumulate_backward(params, norm, t + 0.5 * h, s2[i], k2_bar, &mut grad);
            acc += g;
            k1_bar += 0.5 * h * g;
            // k1 = f(t, y)
            let g = scratch.accumulate_backward(params, norm, t, s1[i], k1_bar, &mut grad);
            acc += g;

            adj[i] = acc;
        }
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(UdeError::Domain(format!("non-finite gradient component {bad}")));
    }
    Ok(grad)
}

/// Central finite-difference gradient of [`loss`]. Slow; an oracle for
/// validating [`loss_and_grad`].
pub fn finite_difference_grad(sys: &UdeSystem, truth: &Trajectory, eps: f64) -> Result<Vec<f64>> {
    ensure_finite("eps", eps)?;
    let mut probe = sys.clone();
    let mut grad = Vec::with_capacity(sys.params.theta.len());
    for j in 0..sys.params.theta.len() {
        let base = sys.params.theta[j];
        probe.params.theta[j] = base + eps;
        let plus = loss(&probe, truth)?;
        probe.params.theta[j] = base - eps;
        let minus = loss(&probe, truth)?;
        probe.params.theta[j] = base;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}
