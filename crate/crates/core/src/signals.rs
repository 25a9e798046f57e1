//! Synthetic solar generation and household load profiles.
//!
//! Both signals are closed-form functions of time in hours. The "noise" terms
//! are fixed low-frequency sinusoids, so every value here is deterministic.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, UdeError};

const HOURS_PER_DAY: f64 = 24.0;

/// Every constant that defines a grid scenario.
///
/// Power and energy are dimensionless; time is measured in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::n_nodes")]
    pub n_nodes: usize,
    #[serde(default = "defaults::base_loads")]
    pub base_loads: Vec<f64>,
    #[serde(default = "defaults::peak_width_sigma")]
    pub peak_width_sigma: f64,
    #[serde(default = "defaults::morning_peak_amp")]
    pub morning_peak_amp: f64,
    #[serde(default = "defaults::morning_peak_hour")]
    pub morning_peak_hour: f64,
    #[serde(default = "defaults::evening_peak_amp")]
    pub evening_peak_amp: f64,
    #[serde(default = "defaults::evening_peak_hour")]
    pub evening_peak_hour: f64,
    #[serde(default = "defaults::solar_noise_amp")]
    pub solar_noise_amp: f64,
    #[serde(default = "defaults::solar_noise_freq")]
    pub solar_noise_freq: f64,
    #[serde(default = "defaults::load_noise_amp")]
    pub load_noise_amp: f64,
    #[serde(default = "defaults::load_noise_freq")]
    pub load_noise_freq: f64,
    /// Per-node phase of the load noise. Left empty in a config file, it is
    /// filled with `2πi/n` by [`ScenarioConfig::resolved`].
    #[serde(default)]
    pub load_noise_phases: Vec<f64>,
    #[serde(default = "defaults::train_horizon_hours")]
    pub train_horizon_hours: f64,
    #[serde(default = "defaults::forecast_horizon_hours")]
    pub forecast_horizon_hours: f64,
    #[serde(default = "defaults::sample_interval_hours")]
    pub sample_interval_hours: f64,
    #[serde(default)]
    pub initial_energy: f64,
}

mod defaults {
    pub fn n_nodes() -> usize {
        3
    }
    pub fn base_loads() -> Vec<f64> {
        vec![0.45, 0.5, 0.55]
    }
    pub fn peak_width_sigma() -> f64 {
        1.5
    }
    pub fn morning_peak_amp() -> f64 {
        0.3
    }
    pub fn morning_peak_hour() -> f64 {
        8.0
    }
    pub fn evening_peak_amp() -> f64 {
        0.4
    }
    pub fn evening_peak_hour() -> f64 {
        19.0
    }
    pub fn solar_noise_amp() -> f64 {
        0.05
    }
    pub fn solar_noise_freq() -> f64 {
        0.1
    }
    pub fn load_noise_amp() -> f64 {
        0.02
    }
    pub fn load_noise_freq() -> f64 {
        0.07
    }
    pub fn train_horizon_hours() -> f64 {
        240.0
    }
    pub fn forecast_horizon_hours() -> f64 {
        720.0
    }
    pub fn sample_interval_hours() -> f64 {
        1.0
    }
}

/// Evenly spread phases `2πi/n` for `n` nodes.
pub fn default_phases(n_nodes: usize) -> Vec<f64> {
    (0..n_nodes)
        .map(|i| 2.0 * PI * i as f64 / n_nodes as f64)
        .collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_nodes: defaults::n_nodes(),
            base_loads: defaults::base_loads(),
            peak_width_sigma: defaults::peak_width_sigma(),
            morning_peak_amp: defaults::morning_peak_amp(),
            morning_peak_hour: defaults::morning_peak_hour(),
            evening_peak_amp: defaults::evening_peak_amp(),
            evening_peak_hour: defaults::evening_peak_hour(),
            solar_noise_amp: defaults::solar_noise_amp(),
            solar_noise_freq: defaults::solar_noise_freq(),
            load_noise_amp: defaults::load_noise_amp(),
            load_noise_freq: defaults::load_noise_freq(),
            load_noise_phases: default_phases(defaults::n_nodes()),
            train_horizon_hours: defaults::train_horizon_hours(),
            forecast_horizon_hours: defaults::forecast_horizon_hours(),
            sample_interval_hours: defaults::sample_interval_hours(),
            initial_energy: 0.0,
        }
    }
}

impl ScenarioConfig {
    /// Parse a JSON document; absent fields take their defaults.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(json)?;
        cfg.resolved()
    }

    /// Fill derived defaults (the load phases) and validate.
    pub fn resolved(mut self) -> Result<Self> {
        if self.load_noise_phases.is_empty() {
            self.load_noise_phases = default_phases(self.n_nodes);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(UdeError::Validation(msg));
        if self.n_nodes == 0 {
            return invalid("n_nodes must be at least 1".into());
        }
        if self.base_loads.len() != self.n_nodes {
            return invalid(format!(
                "base_loads has {} entries but n_nodes is {}",
                self.base_loads.len(),
                self.n_nodes
            ));
        }
        if self.load_noise_phases.len() != self.n_nodes {
            return invalid(format!(
                "load_noise_phases has {} entries but n_nodes is {}",
                self.load_noise_phases.len(),
                self.n_nodes
            ));
        }
        if let Some(b) = self.base_loads.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return invalid(format!("base loads must be positive, got {b}"));
        }
        if self.load_noise_phases.iter().any(|p| !p.is_finite()) {
            return invalid("load_noise_phases must be finite".into());
        }
        let positive = [
            ("peak_width_sigma", self.peak_width_sigma),
            ("train_horizon_hours", self.train_horizon_hours),
            ("forecast_horizon_hours", self.forecast_horizon_hours),
            ("sample_interval_hours", self.sample_interval_hours),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return invalid(format!("{name} must be positive, got {value}"));
            }
        }
        // Amplitudes may be zero: noise-free scenarios are part of the test matrix.
        let non_negative = [
            ("morning_peak_amp", self.morning_peak_amp),
            ("evening_peak_amp", self.evening_peak_amp),
            ("solar_noise_amp", self.solar_noise_amp),
            ("load_noise_amp", self.load_noise_amp),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return invalid(format!("{name} must be non-negative, got {value}"));
            }
        }
        for (name, value) in [
            ("morning_peak_hour", self.morning_peak_hour),
            ("evening_peak_hour", self.evening_peak_hour),
            ("solar_noise_freq", self.solar_noise_freq),
            ("load_noise_freq", self.load_noise_freq),
            ("initial_energy", self.initial_energy),
        ] {
            if !value.is_finite() {
                return invalid(format!("{name} must be finite, got {value}"));
            }
        }
        if self.train_horizon_hours > self.forecast_horizon_hours {
            return invalid(format!(
                "train horizon {} h exceeds forecast horizon {} h",
                self.train_horizon_hours, self.forecast_horizon_hours
            ));
        }
        Ok(())
    }

    /// Noise-free copy: both sinusoidal noise terms switched off.
    pub fn without_noise(&self) -> Self {
        Self {
            solar_noise_amp: 0.0,
            load_noise_amp: 0.0,
            ..self.clone()
        }
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node < self.n_nodes {
            Ok(())
        } else {
            Err(UdeError::NodeIndex {
                node,
                n_nodes: self.n_nodes,
            })
        }
    }
}

fn hour_of_day(t: f64) -> f64 {
    t.rem_euclid(HOURS_PER_DAY)
}

/// Daytime half-sine peaking at noon, clamped at zero overnight.
fn clamped_half_sine(t: f64) -> f64 {
    (PI * (hour_of_day(t) - 6.0) / 12.0).sin().max(0.0)
}

/// Solar input using the default noise constants.
pub fn solar_power(t: f64) -> Result<f64> {
    solar_power_with(&ScenarioConfig::default(), t)
}

/// Solar input with the noise amplitude and frequency taken from `cfg`.
///
/// The noise is added after the clamp, so night-time values can dip slightly
/// below zero.
pub fn solar_power_with(cfg: &ScenarioConfig, t: f64) -> Result<f64> {
    ensure_finite("t", t)?;
    Ok(solar_unchecked(cfg, t))
}

#[inline]
pub(crate) fn solar_unchecked(cfg: &ScenarioConfig, t: f64) -> f64 {
    clamped_half_sine(t) + cfg.solar_noise_amp * (cfg.solar_noise_freq * t).sin()
}

/// Demand of `node`: base load, morning and evening Gaussian peaks, and a
/// phase-shifted sinusoidal wobble.
pub fn load_demand(node: usize, t: f64, cfg: &ScenarioConfig) -> Result<f64> {
    cfg.check_node(node)?;
    ensure_finite("t", t)?;
    Ok(load_unchecked(node, t, cfg))
}

#[inline]
pub(crate) fn load_unchecked(node: usize, t: f64, cfg: &ScenarioConfig) -> f64 {
    let h = hour_of_day(t);
    let two_var = 2.0 * cfg.peak_width_sigma * cfg.peak_width_sigma;
    let morning = (h - cfg.morning_peak_hour).powi(2);
    let evening = (h - cfg.evening_peak_hour).powi(2);
    cfg.base_loads[node]
        + cfg.morning_peak_amp * (-morning / two_var).exp()
        + cfg.evening_peak_amp * (-evening / two_var).exp()
        + cfg.load_noise_amp * (cfg.load_noise_freq * t + cfg.load_noise_phases[node]).sin()
}

/// Solar surplus at `node` (negative when the household draws from storage).
pub fn net_power(node: usize, t: f64, cfg: &ScenarioConfig) -> Result<f64> {
    cfg.check_node(node)?;
    ensure_finite("t", t)?;
    Ok(net_unchecked(node, t, cfg))
}

#[inline]
pub(crate) fn net_unchecked(node: usize, t: f64, cfg: &ScenarioConfig) -> f64 {
    solar_unchecked(cfg, t) - load_unchecked(node, t, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Reference values from a 30-digit evaluation of the closed forms.
    const SOLAR_T12: f64 = 1.046_601_954_298_361_3;
    const SOLAR_T36: f64 = 0.977_873_977_835_257_4;
    const LOAD_B050_T8: f64 = 0.810_623_723_959_257_8;
    const LOAD_B045_T0: f64 = 0.450_000_199_750_844_1;
    const LOAD_B050_T12: f64 = 0.523_469_978_422_427_7;
    const LOAD_NODE1_T30_5: f64 = 0.664_247_029_131_114_8;
    const NET_NODE2_T200_75: f64 = -0.096_926_540_504_472_32;

    fn zero_phase(base: f64) -> ScenarioConfig {
        ScenarioConfig {
            n_nodes: 1,
            base_loads: vec![base],
            load_noise_phases: vec![0.0],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn solar_reference_points() {
        assert_eq!(solar_power(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(solar_power(12.0).unwrap(), SOLAR_T12, epsilon = 1e-14);
        assert_abs_diff_eq!(solar_power(36.0).unwrap(), SOLAR_T36, epsilon = 1e-14);
        assert_abs_diff_eq!(solar_power(3.5).unwrap(), 0.017_144_890_372_772_567, epsilon = 1e-14);
        // night time with negative noise dips below zero
        assert_abs_diff_eq!(solar_power(100.25).unwrap(), -0.028_241_285_817_981_49, epsilon = 1e-14);
    }

    #[test]
    fn load_reference_points() {
        let cfg = zero_phase(0.5);
        assert_abs_diff_eq!(load_demand(0, 8.0, &cfg).unwrap(), LOAD_B050_T8, epsilon = 1e-14);
        assert_abs_diff_eq!(load_demand(0, 12.0, &cfg).unwrap(), LOAD_B050_T12, epsilon = 1e-14);
        let cfg = zero_phase(0.45);
        assert_abs_diff_eq!(load_demand(0, 0.0, &cfg).unwrap(), LOAD_B045_T0, epsilon = 1e-14);

        let cfg = ScenarioConfig::default();
        assert_abs_diff_eq!(load_demand(1, 30.5, &cfg).unwrap(), LOAD_NODE1_T30_5, epsilon = 1e-14);
    }

    #[test]
    fn net_reference_points() {
        let cfg = zero_phase(0.45);
        assert_abs_diff_eq!(net_power(0, 0.0, &cfg).unwrap(), -LOAD_B045_T0, epsilon = 1e-14);
        let cfg = zero_phase(0.5);
        assert_abs_diff_eq!(
            net_power(0, 12.0, &cfg).unwrap(),
            SOLAR_T12 - LOAD_B050_T12,
            epsilon = 1e-14
        );
        let cfg = ScenarioConfig::default();
        assert_abs_diff_eq!(net_power(2, 200.75, &cfg).unwrap(), NET_NODE2_T200_75, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ScenarioConfig::default();
        assert!(matches!(
            load_demand(3, 1.0, &cfg),
            Err(UdeError::NodeIndex { node: 3, n_nodes: 3 })
        ));
        assert!(matches!(solar_power(f64::NAN), Err(UdeError::Domain(_))));
        assert!(matches!(net_power(0, f64::INFINITY, &cfg), Err(UdeError::Domain(_))));
    }

    #[test]
    fn json_defaults_and_phase_fill() {
        let cfg = ScenarioConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());

        let cfg = ScenarioConfig::from_json_str(r#"{"n_nodes": 2, "base_loads": [0.4, 0.6]}"#).unwrap();
        assert_eq!(cfg.load_noise_phases, vec![0.0, PI]);

        let err = ScenarioConfig::from_json_str(r#"{"n_nodes": 4}"#).unwrap_err();
        assert!(matches!(err, UdeError::Validation(_)));
        let err = ScenarioConfig::from_json_str(r#"{"base_loads": [0.4, -0.5, 0.6]}"#).unwrap_err();
        assert!(matches!(err, UdeError::Validation(_)));
        let err = ScenarioConfig::from_json_str(r#"{"train_horizon_hours": 1000}"#).unwrap_err();
        assert!(matches!(err, UdeError::Validation(_)));
    }

    proptest! {
        #[test]
        fn noise_free_signals_are_daily_periodic(t in 0.0f64..2000.0, node in 0usize..3) {
            let cfg = ScenarioConfig::default().without_noise();
            let a = solar_power_with(&cfg, t).unwrap();
            let b = solar_power_with(&cfg, t + 24.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            let a = load_demand(node, t, &cfg).unwrap();
            let b = load_demand(node, t + 24.0, &cfg).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn signals_stay_in_range(t in 0.0f64..5000.0, node in 0usize..3) {
            let cfg = ScenarioConfig::default();
            let s = solar_power(t).unwrap();
            prop_assert!(s >= -cfg.solar_noise_amp && s <= 1.0 + cfg.solar_noise_amp);

            let quiet = cfg.without_noise();
            let b = quiet.base_loads[node];
            let d = load_demand(node, t, &quiet).unwrap();
            prop_assert!(d >= b && d <= b + 0.3 + 0.4);
        }

        #[test]
        fn node_gap_is_base_load_gap_without_noise(t in 0.0f64..1000.0) {
            let cfg = ScenarioConfig::default().without_noise();
            let d0 = load_demand(0, t, &cfg).unwrap();
            let d2 = load_demand(2, t, &cfg).unwrap();
            prop_assert!(((d2 - d0) - (0.55 - 0.45)).abs() <= 1e-12);
        }

        #[test]
        fn net_is_solar_minus_load(t in 0.0f64..1000.0, node in 0usize..3) {
            let cfg = ScenarioConfig::default();
            let net = net_power(node, t, &cfg).unwrap();
            let direct = solar_power_with(&cfg, t).unwrap() - load_demand(node, t, &cfg).unwrap();
            prop_assert_eq!(net.to_bits(), direct.to_bits());
        }
    }
}
