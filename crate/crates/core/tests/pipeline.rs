use ude_grid::trainer::TrainOptions;
use ude_grid::{
    evaluate, forecast, simulate_truth, train_with, Checkpoint, ScenarioConfig, SolverSpec, TrainError, UdeError,
};

fn short_scenario() -> ScenarioConfig {
    ScenarioConfig {
        train_horizon_hours: 48.0,
        forecast_horizon_hours: 96.0,
        ..ScenarioConfig::default()
    }
}

#[test]
fn short_training_reduces_loss_and_survives_a_checkpoint() {
    let cfg = short_scenario();
    let spec = SolverSpec::default();
    let opts = TrainOptions {
        iterations: 40,
        ..TrainOptions::default()
    };
    let (params, report) = train_with(&cfg, &spec, &opts, |_, _| Ok(())).unwrap();
    assert_eq!(report.loss_history.len(), 40);
    assert!(report.loss_history[39] < report.loss_history[0]);
    assert_eq!(report.sample_count, 3 * 49);

    let norm = opts.normalizer(&cfg);
    let json = Checkpoint::new(&params, &norm, opts.seed, report.iterations).to_json().unwrap();
    let restored = Checkpoint::from_json(&json).unwrap();
    assert_eq!(restored.params().unwrap(), params);

    let direct = forecast(&params, &norm, &cfg, &spec, 96.0).unwrap();
    let reloaded = forecast(&restored.params().unwrap(), &restored.normalizer().unwrap(), &cfg, &spec, 96.0).unwrap();
    assert_eq!(direct, reloaded);

    let truth = simulate_truth(&cfg, &spec, 96.0).unwrap();
    let m = evaluate(&direct, &truth).unwrap();
    assert_eq!(m.rmse_per_node.len(), 3);
    assert!(m.max_abs_err >= m.rmse_total);
}

#[test]
fn forecast_shorter_than_training_window_is_rejected() {
    let cfg = short_scenario();
    let spec = SolverSpec::default();
    let opts = TrainOptions {
        iterations: 1,
        ..TrainOptions::default()
    };
    let (params, _) = train_with(&cfg, &spec, &opts, |_, _| Ok(())).unwrap();
    assert!(forecast(&params, &opts.normalizer(&cfg), &cfg, &spec, 24.0).is_err());
}

#[test]
fn callback_errors_stop_training() {
    let cfg = short_scenario();
    let opts = TrainOptions {
        iterations: 10,
        ..TrainOptions::default()
    };
    let result = train_with(&cfg, &SolverSpec::default(), &opts, |i, _| {
        if i == 3 {
            Err(UdeError::Validation("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(matches!(result, Err(TrainError::Setup(_)) | Err(TrainError::Diverged { .. })));
}
