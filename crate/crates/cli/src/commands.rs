use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use ude_grid::dynamics::{write_columns, Trajectory};
use ude_grid::signals::{load_demand, solar_power_with};
use ude_grid::trainer::{loss_history_csv, reference_truth, TrainError, TrainOptions};
use ude_grid::{evaluate, forecast, train_with, Checkpoint, Metrics, UdeError};

use crate::config::RunConfig;
use crate::output::{line_plot, OutputDir};

/// First and last hour of the single-day slice (day 6 of days 1..=10).
pub const DAY6_START: f64 = 120.0;
pub const DAY6_END: f64 = 144.0;

pub struct Invocation {
    pub cfg: RunConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    pub horizon: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

fn sample_grid(interval: f64, from: f64, to: f64) -> Vec<f64> {
    let first = (from / interval).round() as i64;
    let last = (to / interval + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * interval).collect()
}

fn signals_table(cfg: &RunConfig, times: &[f64]) -> anyhow::Result<String> {
    let sc = &cfg.scenario;
    let solar = times
        .iter()
        .map(|&t| solar_power_with(sc, t))
        .collect::<ude_grid::Result<Vec<_>>>()?;
    let mut columns = vec![solar];
    let mut header = vec!["solar".to_string()];
    for node in 0..sc.n_nodes {
        columns.push(
            times
                .iter()
                .map(|&t| load_demand(node, t, sc))
                .collect::<ude_grid::Result<Vec<_>>>()?,
        );
        header.push(format!("load_node{node}"));
    }
    let cols: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    Ok(write_columns(&header, times, &cols))
}

pub fn cmd_signals(ctx: &Invocation) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let sc = &cfg.scenario;
    let mut out = OutputDir::create(&ctx.out)?;
    let horizon = ctx.horizon.unwrap_or(sc.train_horizon_hours);
    let n_cols = sc.n_nodes + 2;

    let full = sample_grid(sc.sample_interval_hours, 0.0, horizon);
    out.write("signals.csv", &signals_table(cfg, &full)?)?;
    out.write(
        "signals.gp",
        &line_plot("signals.csv", "Solar input and load demand", ("t (h)", "power"), n_cols, false),
    )?;

    let day = sample_grid(sc.sample_interval_hours, DAY6_START, DAY6_END);
    out.write("signals_day6.csv", &signals_table(cfg, &day)?)?;
    out.write(
        "signals_day6.gp",
        &line_plot("signals_day6.csv", "Solar input and load demand, day 6", ("t (h)", "power"), n_cols, false),
    )?;
    out.finish("signals", ctx.config_path.as_deref(), cfg.seed)
}

pub fn cmd_truth(ctx: &Invocation) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let horizon = ctx.horizon.unwrap_or(cfg.scenario.train_horizon_hours);
    let truth = reference_truth(&cfg.scenario, &cfg.solver(), horizon, cfg.inject_residual)?;
    let mut out = OutputDir::create(&ctx.out)?;
    out.write("truth.csv", &truth.to_csv())?;
    out.write(
        "truth.gp",
        &line_plot("truth.csv", "Ground truth battery energy", ("t (h)", "energy"), truth.n_nodes() + 1, false),
    )?;
    out.finish("truth", ctx.config_path.as_deref(), cfg.seed)
}

fn side_by_side(truth: &Trajectory, pred: &Trajectory) -> String {
    let mut header = Vec::new();
    let mut cols: Vec<&[f64]> = Vec::new();
    for node in 0..truth.n_nodes() {
        header.push(format!("truth_node{node}"));
        cols.push(truth.node(node));
    }
    for node in 0..pred.n_nodes() {
        header.push(format!("pred_node{node}"));
        cols.push(pred.node(node));
    }
    write_columns(&header, &truth.times, &cols)
}

pub fn cmd_train(ctx: &Invocation) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let sc = &cfg.scenario;
    let spec = cfg.solver();
    let norm = cfg.normalizer();
    let opts = TrainOptions {
        seed: cfg.seed,
        iterations: cfg.iterations,
        lr: cfg.lr,
        layer_sizes: cfg.layer_sizes.clone(),
        norm: Some(norm),
        injected: cfg.inject_residual,
    };
    let mut out = OutputDir::create(&ctx.out)?;

    let every = cfg.checkpoint_every.filter(|&n| n > 0);
    let result = train_with(sc, &spec, &opts, |iteration, params| {
        if let Some(n) = every {
            if iteration % n == 0 && iteration < opts.iterations {
                let ckpt = Checkpoint::new(params, &norm, cfg.seed, iteration);
                out.write(&format!("checkpoint_iter{iteration:05}.json"), &ckpt.to_json()?)
                    .map_err(|e| UdeError::Io(std::io::Error::other(e.to_string())))?;
            }
        }
        Ok(())
    });

    let (params, report) = match result {
        Ok(r) => r,
        Err(TrainError::Diverged {
            iteration,
            loss_history,
            source,
        }) => {
            out.write("loss_history.csv", &loss_history_csv(&loss_history))?;
            out.finish("train", ctx.config_path.as_deref(), cfg.seed)?;
            return Err(anyhow!(TrainError::Diverged {
                iteration,
                loss_history,
                source,
            }));
        }
        Err(e) => return Err(e.into()),
    };

    let ckpt = Checkpoint::new(&params, &norm, cfg.seed, report.iterations);
    out.write("checkpoint.json", &ckpt.to_json()?)?;
    out.write("loss_history.csv", &report.loss_history_csv())?;
    out.write(
        "loss_history.gp",
        &line_plot("loss_history.csv", "Training loss", ("iteration", "loss"), 2, true),
    )?;

    let truth = reference_truth(sc, &spec, sc.train_horizon_hours, cfg.inject_residual)?;
    let pred = forecast(&params, &norm, sc, &spec, sc.train_horizon_hours)?;
    out.write("train_vs_truth.csv", &side_by_side(&truth, &pred))?;
    out.write(
        "train_vs_truth.gp",
        &line_plot(
            "train_vs_truth.csv",
            "Trained prediction vs ground truth",
            ("t (h)", "energy"),
            2 * truth.n_nodes() + 1,
            false,
        ),
    )?;
    out.write_json("metrics.json", &evaluate(&pred, &truth)?)?;
    out.write_json("train_report.json", &report)?;
    out.finish("train", ctx.config_path.as_deref(), cfg.seed)
}

fn load_checkpoint(path: Option<&Path>, cfg: &RunConfig) -> anyhow::Result<Checkpoint> {
    let path = path.ok_or_else(|| anyhow!(UdeError::Validation("--checkpoint is required".into())))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ckpt = Checkpoint::from_json(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    let mismatch = |field: &str, a: String, b: String| {
        anyhow!(UdeError::Validation(format!(
            "checkpoint field `{field}` is {a} but the config has {b}"
        )))
    };
    if ckpt.layer_sizes != cfg.layer_sizes {
        return Err(mismatch(
            "layer_sizes",
            format!("{:?}", ckpt.layer_sizes),
            format!("{:?}", cfg.layer_sizes),
        ));
    }
    if let Some(t) = cfg.t_scale {
        if t != ckpt.t_scale {
            return Err(mismatch("t_scale", ckpt.t_scale.to_string(), t.to_string()));
        }
    }
    if let Some(e) = cfg.e_scale {
        if e != ckpt.e_scale {
            return Err(mismatch("e_scale", ckpt.e_scale.to_string(), e.to_string()));
        }
    }
    Ok(ckpt)
}

#[derive(serde::Serialize)]
struct ForecastMetrics {
    horizon_hours: f64,
    full: Metrics,
    training_window: Metrics,
    beyond_training: Option<Metrics>,
}

pub fn cmd_forecast(ctx: &Invocation) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let sc = &cfg.scenario;
    let spec = cfg.solver();
    let ckpt = load_checkpoint(ctx.checkpoint.as_deref(), cfg)?;
    let params = ckpt.params()?;
    let norm = ckpt.normalizer()?;
    let horizon = ctx.horizon.unwrap_or(sc.forecast_horizon_hours);

    let pred = forecast(&params, &norm, sc, &spec, horizon)?;
    let truth = reference_truth(sc, &spec, horizon, cfg.inject_residual)?;
    let train_end = sc.train_horizon_hours;
    let beyond = if horizon > train_end {
        Some(evaluate(&pred.tail_from(train_end), &truth.tail_from(train_end))?)
    } else {
        None
    };
    let metrics = ForecastMetrics {
        horizon_hours: horizon,
        full: evaluate(&pred, &truth)?,
        training_window: evaluate(&pred.truncated(train_end), &truth.truncated(train_end))?,
        beyond_training: beyond,
    };

    let mut out = OutputDir::create(&ctx.out)?;
    out.write("forecast.csv", &pred.to_csv())?;
    out.write("forecast_truth.csv", &truth.to_csv())?;
    out.write(
        "forecast.gp",
        &line_plot("forecast.csv", "Battery energy forecast", ("t (h)", "energy"), pred.n_nodes() + 1, false),
    )?;
    out.write_json("forecast_metrics.json", &metrics)?;
    out.finish("forecast", ctx.config_path.as_deref(), ckpt.seed)
}

pub fn cmd_eval(ctx: &Invocation) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let sc = &cfg.scenario;
    let (pred, truth, seed) = match (&ctx.pred, &ctx.truth) {
        (Some(p), Some(t)) => (
            Trajectory::read_csv(p).with_context(|| format!("reading {}", p.display()))?,
            Trajectory::read_csv(t).with_context(|| format!("reading {}", t.display()))?,
            cfg.seed,
        ),
        (None, None) => {
            let spec = cfg.solver();
            let ckpt = load_checkpoint(ctx.checkpoint.as_deref(), cfg)?;
            let horizon = ctx.horizon.unwrap_or(sc.train_horizon_hours);
            let pred = forecast(&ckpt.params()?, &ckpt.normalizer()?, sc, &spec, horizon)?;
            let truth = reference_truth(sc, &spec, horizon, cfg.inject_residual)?;
            (pred, truth, ckpt.seed)
        }
        _ => bail!(UdeError::Validation("--pred and --truth must be given together".into())),
    };
    let metrics = evaluate(&pred, &truth)?;
    let mut out = OutputDir::create(&ctx.out)?;
    out.write_json("eval_metrics.json", &metrics)?;
    out.finish("eval", ctx.config_path.as_deref(), seed)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_six_slice_has_25_hours() {
        let grid = sample_grid(1.0, DAY6_START, DAY6_END);
        assert_eq!(grid.len(), 25);
        assert_eq!(grid[0], 120.0);
        assert_eq!(*grid.last().unwrap(), 144.0);
        assert_eq!(sample_grid(1.0, 0.0, 240.0).len(), 241);
    }
}
