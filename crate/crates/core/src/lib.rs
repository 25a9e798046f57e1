//! Hybrid physics/neural modelling of battery energy on a small synthetic
//! smart grid.
//!
//! Each node's battery follows `dE/dt = P_s(t) − P_d(t) + NN(t, E)`: a shared
//! solar input, a per-node household load, and a learned residual. The crate
//! covers signal generation, RK4 integration, the residual network, exact
//! reverse-mode gradients through the solver, Adam, training and forecasting.
//!
//! Power and energy are dimensionless; time is in hours.

pub mod adam;
pub mod dynamics;
pub mod error;
pub mod residual;
pub mod signals;
pub mod trainer;
pub mod ude;

pub use adam::{adam_init, adam_step, AdamState};
pub use dynamics::{integrate, rhs_physical, simulate_truth, SolverMethod, SolverSpec, Trajectory};
pub use error::{Result, UdeError};
pub use residual::{backward, forward, init_params, Checkpoint, InputNormalizer, MlpParams};
pub use signals::{load_demand, net_power, solar_power, ScenarioConfig};
pub use trainer::{evaluate, forecast, train, train_with, InjectedResidual, Metrics, TrainError, TrainOptions, TrainReport};
pub use ude::{loss, loss_and_grad, rhs_ude, rollout, LossReport, UdeSystem};
