//! Battery energy balance, the fixed-step RK4 integrator and ground truth.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, UdeError};
use crate::signals::{net_unchecked, ScenarioConfig};

/// Relative tolerance used when checking that grids divide evenly.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SolverMethod {
    #[default]
    #[serde(rename = "RK4")]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "default_step_hours")]
    pub step_hours: f64,
    #[serde(default)]
    pub method: SolverMethod,
}

fn default_step_hours() -> f64 {
    0.25
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            step_hours: default_step_hours(),
            method: SolverMethod::Rk4,
        }
    }
}

impl SolverSpec {
    pub fn with_step(step_hours: f64) -> Self {
        Self {
            step_hours,
            ..Self::default()
        }
    }

    /// Number of solver steps between consecutive samples.
    pub fn steps_per_sample(&self, sample_interval: f64) -> Result<usize> {
        if !(self.step_hours.is_finite() && self.step_hours > 0.0) {
            return Err(UdeError::Validation(format!(
                "step_hours must be positive, got {}",
                self.step_hours
            )));
        }
        whole_ratio(sample_interval, self.step_hours).ok_or_else(|| {
            UdeError::Validation(format!(
                "sample interval {sample_interval} h is not a whole multiple of step {} h",
                self.step_hours
            ))
        })
    }
}

/// `num / den` as a positive integer, if it is one within [`GRID_TOL`].
fn whole_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    if r.is_finite() && k >= 1.0 && (r - k).abs() <= GRID_TOL * k {
        Some(k as usize)
    } else {
        None
    }
}

/// Per-node battery energy sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[node][k]` is the energy of `node` at `times[k]`.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn n_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.states[node]
    }

    pub fn final_state(&self, node: usize) -> f64 {
        *self.states[node].last().expect("trajectory has at least one sample")
    }

    /// Leading samples with `t <= until` (within grid tolerance).
    pub fn truncated(&self, until: f64) -> Trajectory {
        let n = self
            .times
            .iter()
            .take_while(|&&t| t <= until + GRID_TOL * until.abs().max(1.0))
            .count();
        Trajectory {
            times: self.times[..n].to_vec(),
            states: self.states.iter().map(|s| s[..n].to_vec()).collect(),
        }
    }

    /// Samples with `t >= from`.
    pub fn tail_from(&self, from: f64) -> Trajectory {
        let skip = self
            .times
            .iter()
            .take_while(|&&t| t < from - GRID_TOL * from.abs().max(1.0))
            .count();
        Trajectory {
            times: self.times[skip..].to_vec(),
            states: self.states.iter().map(|s| s[skip..].to_vec()).collect(),
        }
    }

    /// Fails unless `other` has the same node count and sample times.
    pub fn check_same_grid(&self, other: &Trajectory) -> Result<()> {
        if self.n_nodes() != other.n_nodes() {
            return Err(UdeError::Shape(format!(
                "node count {} vs {}",
                self.n_nodes(),
                other.n_nodes()
            )));
        }
        if self.n_samples() != other.n_samples() {
            return Err(UdeError::Shape(format!(
                "sample count {} vs {}",
                self.n_samples(),
                other.n_samples()
            )));
        }
        for (k, (a, b)) in self.times.iter().zip(&other.times).enumerate() {
            if (a - b).abs() > GRID_TOL * a.abs().max(1.0) {
                return Err(UdeError::Shape(format!("sample {k} at t = {a} vs t = {b}")));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let header: Vec<String> = (0..self.n_nodes()).map(|i| format!("node{i}")).collect();
        let columns: Vec<&[f64]> = self.states.iter().map(Vec::as_slice).collect();
        write_columns(&header, &self.times, &columns)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| UdeError::Parse("empty trajectory CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(UdeError::Parse(format!("unexpected header {header:?}")));
        }
        let n_nodes = cols.len() - 1;
        let mut times = Vec::new();
        let mut states = vec![Vec::new(); n_nodes];
        for (row, line) in lines.enumerate() {
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| UdeError::Parse(format!("row {}: {e}", row + 1)))?;
            if values.len() != n_nodes + 1 {
                return Err(UdeError::Parse(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    values.len(),
                    n_nodes + 1
                )));
            }
            times.push(values[0]);
            for (node, v) in values[1..].iter().enumerate() {
                states[node].push(*v);
            }
        }
        Ok(Self { times, states })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Formats a value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders a `t,<header...>` CSV with one row per time.
pub fn write_columns(header: &[String], times: &[f64], columns: &[&[f64]]) -> String {
    let mut out = String::from("t");
    for h in header {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        out.push_str(&format_value(*t));
        for col in columns {
            let _ = write!(out, ",{}", format_value(col[k]));
        }
        out.push('\n');
    }
    out
}

/// Stage inputs recorded during a forward RK4 sweep, for reverse-mode replay.
///
/// Layout is `[step][stage][state]` with stages ordered `y, y + h/2·k1,
/// y + h/2·k2, y + h·k3`.
#[derive(Debug, Default, Clone)]
pub struct StageTape {
    pub dim: usize,
    pub step_hours: f64,
    pub t0: f64,
    pub stages: Vec<f64>,
}

impl StageTape {
    pub fn n_steps(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.stages.len() / (4 * self.dim)
        }
    }

    /// The four stage inputs of `step`, each of length `dim`.
    pub fn step(&self, step: usize) -> [&[f64]; 4] {
        let base = step * 4 * self.dim;
        let d = self.dim;
        [
            &self.stages[base..base + d],
            &self.stages[base + d..base + 2 * d],
            &self.stages[base + 2 * d..base + 3 * d],
            &self.stages[base + 3 * d..base + 4 * d],
        ]
    }

    pub fn step_time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.step_hours
    }
}

/// Time at which the last RK4 stage of the step starting at `t` is evaluated.
///
/// This is the left limit of `t + h`: the daily load profile jumps at
/// midnight, which is always a step boundary, and the step ending there must
/// see the value from before the wrap.
#[inline]
pub fn step_end_time(t: f64, h: f64) -> f64 {
    (t + h).next_down()
}

/// Integrate `dy/dt = rhs(t, y)` with classic RK4 and sample every
/// `sample_interval` hours, including both endpoints.
pub fn integrate<F>(
    rhs: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
    sample_interval: f64,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    run_rk4(rhs, y0, t0, t1, spec, sample_interval, None)
}

/// Same as [`integrate`], additionally filling `tape` with every stage input.
pub fn integrate_recorded<F>(
    rhs: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
    sample_interval: f64,
    tape: &mut StageTape,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    run_rk4(rhs, y0, t0, t1, spec, sample_interval, Some(tape))
}

fn run_rk4<F>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
    sample_interval: f64,
    mut tape: Option<&mut StageTape>,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    ensure_finite("t0", t0)?;
    ensure_finite("t1", t1)?;
    if t1 <= t0 {
        return Err(UdeError::Validation(format!("empty interval [{t0}, {t1}]")));
    }
    if let Some(bad) = y0.iter().find(|v| !v.is_finite()) {
        return Err(UdeError::Domain(format!("initial state must be finite, got {bad}")));
    }
    let per_sample = spec.steps_per_sample(sample_interval)?;
    let n_intervals = whole_ratio(t1 - t0, sample_interval).ok_or_else(|| {
        UdeError::Validation(format!(
            "horizon {} h is not a whole number of {sample_interval} h samples",
            t1 - t0
        ))
    })?;
    let h = sample_interval / per_sample as f64;
    let dim = y0.len();
    let n_steps = n_intervals * per_sample;

    if let Some(tape) = tape.as_deref_mut() {
        tape.dim = dim;
        tape.step_hours = h;
        tape.t0 = t0;
        tape.stages.clear();
        tape.stages.reserve(n_steps * 4 * dim);
    }

    let mut times = Vec::with_capacity(n_intervals + 1);
    let mut states: Vec<Vec<f64>> = y0
        .iter()
        .map(|&v| {
            let mut s = Vec::with_capacity(n_intervals + 1);
            s.push(v);
            s
        })
        .collect();
    times.push(t0);

    let mut y = y0.to_vec();
    let mut stage = vec![0.0; dim];
    let (mut k1, mut k2, mut k3, mut k4) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);

    for n in 0..n_steps {
        let t = t0 + n as f64 * h;
        if let Some(tape) = tape.as_deref_mut() {
            tape.stages.extend_from_slice(&y);
        }
        rhs(t, &y, &mut k1);

        for i in 0..dim {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        if let Some(tape) = tape.as_deref_mut() {
            tape.stages.extend_from_slice(&stage);
        }
        rhs(t + 0.5 * h, &stage, &mut k2);

        for i in 0..dim {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        if let Some(tape) = tape.as_deref_mut() {
            tape.stages.extend_from_slice(&stage);
        }
        rhs(t + 0.5 * h, &stage, &mut k3);

        for i in 0..dim {
            stage[i] = y[i] + h * k3[i];
        }
        if let Some(tape) = tape.as_deref_mut() {
            tape.stages.extend_from_slice(&stage);
        }
        rhs(step_end_time(t, h), &stage, &mut k4);

        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(UdeError::Divergence {
                step: n,
                time: t + h,
            });
        }

        if (n + 1) % per_sample == 0 {
            let k = (n + 1) / per_sample;
            times.push(t0 + k as f64 * sample_interval);
            for (s, v) in states.iter_mut().zip(&y) {
                s.push(*v);
            }
        }
    }

    Ok(Trajectory { times, states })
}

/// Right-hand side of the physical battery model. The state `_e` does not
/// enter: storage is lossless and unbounded.
pub fn rhs_physical(node: usize, t: f64, e: f64, cfg: &ScenarioConfig) -> Result<f64> {
    ensure_finite("e", e)?;
    crate::signals::net_power(node, t, cfg)
}

/// Integrate the physical model for every node over `[0, horizon]`.
pub fn simulate_truth(cfg: &ScenarioConfig, spec: &SolverSpec, horizon: f64) -> Result<Trajectory> {
    simulate_forced(cfg, spec, horizon, |node, t| net_unchecked(node, t, cfg))
}

/// Integrate `dE_i/dt = forcing(i, t)` for every node from the configured
/// initial energy. Used for the physical truth and its test-time variants.
pub fn simulate_forced<F>(
    cfg: &ScenarioConfig,
    spec: &SolverSpec,
    horizon: f64,
    forcing: F,
) -> Result<Trajectory>
where
    F: Fn(usize, f64) -> f64,
{
    cfg.validate()?;
    if !(horizon > 0.0) {
        return Err(UdeError::Validation(format!("horizon must be positive, got {horizon}")));
    }
    let y0 = vec![cfg.initial_energy; cfg.n_nodes];
    integrate(
        |t, _y, dy| {
            for (node, d) in dy.iter_mut().enumerate() {
                *d = forcing(node, t);
            }
        },
        &y0,
        0.0,
        horizon,
        spec,
        cfg.sample_interval_hours,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{load_unchecked, solar_unchecked};

    #[test]
    fn constant_field_is_exact() {
        let c = -0.3721;
        let traj = integrate(
            |_, _, dy| dy[0] = c,
            &[0.0],
            0.0,
            240.0,
            &SolverSpec::default(),
            1.0,
        )
        .unwrap();
        assert_eq!(traj.n_samples(), 241);
        for (t, y) in traj.times.iter().zip(traj.node(0)) {
            let exact = c * t;
            assert!((y - exact).abs() <= 1e-12 * exact.abs().max(1e-300), "t={t}");
        }
    }

    #[test]
    fn zero_field_keeps_initial_state() {
        let traj = integrate(|_, _, dy| dy.fill(0.0), &[1.5, -2.0], 0.0, 10.0, &SolverSpec::default(), 1.0)
            .unwrap();
        assert!(traj.node(0).iter().all(|&v| v == 1.5));
        assert!(traj.node(1).iter().all(|&v| v == -2.0));
    }

    fn cosine_error(step: f64) -> f64 {
        let traj = integrate(
            |t, _, dy| dy[0] = t.cos(),
            &[0.0],
            0.0,
            20.0,
            &SolverSpec::with_step(step),
            1.0,
        )
        .unwrap();
        traj.times
            .iter()
            .zip(traj.node(0))
            .map(|(t, y)| (y - t.sin()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn fourth_order_on_cosine() {
        let coarse = cosine_error(0.5);
        let fine = cosine_error(0.25);
        let ratio = coarse / fine;
        assert!(coarse < 1e-3);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn sample_times_are_multiplied_not_accumulated() {
        let traj = integrate(|_, _, dy| dy[0] = 1.0, &[0.0], 0.0, 30.0, &SolverSpec::with_step(0.1), 0.3)
            .unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            assert_eq!(*t, k as f64 * 0.3);
        }
    }

    #[test]
    fn rejects_misaligned_grids() {
        let spec = SolverSpec::with_step(0.3);
        let err = integrate(|_, _, dy| dy[0] = 0.0, &[0.0], 0.0, 10.0, &spec, 1.0).unwrap_err();
        assert!(matches!(err, UdeError::Validation(_)));
        let err = integrate(|_, _, dy| dy[0] = 0.0, &[0.0], 0.0, 10.5, &SolverSpec::default(), 1.0)
            .unwrap_err();
        assert!(matches!(err, UdeError::Validation(_)));
        let err = integrate(|_, _, dy| dy[0] = 0.0, &[0.0], 5.0, 5.0, &SolverSpec::default(), 1.0)
            .unwrap_err();
        assert!(matches!(err, UdeError::Validation(_)));
    }

    #[test]
    fn divergence_names_first_bad_step() {
        // y' = y^4 from y0 = 1 blows up at t = 1/3.
        let err = integrate(|_, y, dy| dy[0] = y[0] * y[0] * y[0] * y[0], &[1.0], 0.0, 10.0, &SolverSpec::default(), 1.0)
            .unwrap_err();
        match err {
            UdeError::Divergence { step, time } => {
                assert!(step < 40);
                assert_eq!(time, (step + 1) as f64 * 0.25);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn physical_rhs_ignores_state() {
        let cfg = ScenarioConfig::default();
        for &t in &[0.0, 7.3, 13.0, 150.5] {
            let a = rhs_physical(1, t, 0.0, &cfg).unwrap();
            let b = rhs_physical(1, t, 100.0, &cfg).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let cfg = ScenarioConfig {
            load_noise_phases: vec![0.0; 3],
            ..ScenarioConfig::default()
        };
        assert!((rhs_physical(0, 0.0, 3.0, &cfg).unwrap() + 0.450_000_199_750_844_1).abs() < 1e-14);
        assert!(matches!(rhs_physical(0, 0.0, f64::NAN, &cfg), Err(UdeError::Domain(_))));
    }

    #[test]
    fn balanced_supply_gives_flat_trajectory() {
        let flat = ScenarioConfig {
            base_loads: vec![0.6; 3],
            morning_peak_amp: 0.0,
            evening_peak_amp: 0.0,
            load_noise_amp: 0.0,
            solar_noise_amp: 0.0,
            initial_energy: 4.0,
            ..ScenarioConfig::default()
        };
        let traj = simulate_forced(&flat, &SolverSpec::default(), 48.0, |node, t| {
            0.6 - load_unchecked(node, t, &flat)
        })
        .unwrap();
        for node in 0..3 {
            assert!(traj.node(node).iter().all(|&e| e == 4.0));
        }
    }

    #[test]
    fn lower_base_load_ends_higher() {
        let cfg = ScenarioConfig::default();
        let traj = simulate_truth(&cfg, &SolverSpec::default(), 240.0).unwrap();
        assert_eq!(traj.n_samples(), 241);
        assert!(traj.final_state(0) > traj.final_state(2));

        // Brute-force midpoint quadrature of the load difference between
        // node 2 and node 0.
        let n = 240_000;
        let dt = 240.0 / n as f64;
        let gap: f64 = (0..n)
            .map(|j| {
                let t = (j as f64 + 0.5) * dt;
                load_unchecked(2, t, &cfg) - load_unchecked(0, t, &cfg)
            })
            .sum::<f64>()
            * dt;
        let simulated = traj.final_state(0) - traj.final_state(2);
        assert!((simulated - gap).abs() < 1e-6, "{simulated} vs {gap}");
    }

    #[test]
    fn state_rises_through_solar_surplus() {
        let cfg = ScenarioConfig::default();
        let traj = simulate_truth(&cfg, &SolverSpec::default(), 240.0).unwrap();
        let mut checked = 0;
        for node in 0..cfg.n_nodes {
            for k in 0..traj.n_samples() - 1 {
                let (a, b) = (traj.times[k], traj.times[k + 1]);
                // fine-grid sign oracle over the interval
                let surplus = (0..=100).all(|j| {
                    let t = a + (b - a) * j as f64 / 100.0;
                    solar_unchecked(&cfg, t) > load_unchecked(node, t, &cfg)
                });
                if surplus {
                    checked += 1;
                    assert!(traj.node(node)[k + 1] > traj.node(node)[k]);
                }
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = ScenarioConfig::default();
        let traj = simulate_truth(&cfg, &SolverSpec::default(), 24.0).unwrap();
        let text = traj.to_csv();
        assert!(text.starts_with("t,node0,node1,node2\n"));
        assert_eq!(text.lines().count(), 26);
        assert_eq!(Trajectory::from_csv(&text).unwrap(), traj);
    }

    #[test]
    fn truncation_and_grid_checks() {
        let cfg = ScenarioConfig::default();
        let long = simulate_truth(&cfg, &SolverSpec::default(), 72.0).unwrap();
        let short = simulate_truth(&cfg, &SolverSpec::default(), 24.0).unwrap();
        assert_eq!(long.truncated(24.0), short);
        assert_eq!(long.tail_from(48.0).n_samples(), 25);
        assert!(matches!(long.check_same_grid(&short), Err(UdeError::Shape(_))));
    }
}
