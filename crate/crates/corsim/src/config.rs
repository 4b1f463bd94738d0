//! Run configuration: one TOML file covering every tunable in the simulator.
//!
//! Every section and field has a default, so an empty file (or no file) is a
//! complete configuration. Unknown keys are rejected rather than silently
//! ignored — a misspelled parameter should fail loudly, not run with the
//! default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{GuardParams, HeadwayParams};
use crate::corridor::{CorridorLayout, CorridorNetwork};
use crate::demand::{DemandParams, VolumePreset};
use crate::driver::{GapAcceptanceParams, WiedemannParams};
use crate::dynamics::ControlBounds;
use crate::fuel::FuelParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    /// Integration step, s.
    pub dt_s: f64,
    /// Demand horizon, s. Spawning stops here; the network then drains.
    pub horizon_s: f64,
    /// Drain allowance: the run is cut off at `drain_factor * horizon_s`.
    pub drain_factor: f64,
    /// Master seed; per-run streams are derived from it.
    pub master_seed: u64,
    /// Volume preset used by single runs (sweeps set their own).
    pub volume: VolumePreset,
    /// Automation share in percent used by single runs.
    pub penetration_pct: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            dt_s: 0.1,
            horizon_s: 3600.0,
            drain_factor: 2.0,
            master_seed: 42,
            volume: VolumePreset::High,
            penetration_pct: 100.0,
        }
    }
}

/// Human-driven vehicle behaviour.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdvParams {
    pub following: WiedemannParams,
    pub gap: GapAcceptanceParams,
}

/// Automated vehicle behaviour around the coordinated plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavParams {
    pub headway: HeadwayParams,
    pub guard: GuardParams,
    /// Spacing multiple of the safety headway required before a vehicle that
    /// fell back to car-following may resume its coordinated plan.
    pub reengage_gap_factor: f64,
    /// How long the spacing must hold continuously before resuming, s.
    pub reengage_hold_s: f64,
    /// Braking assumed available when sizing the closing-speed disengage
    /// margin, m/s². Below the hard actuation floor on purpose: the spare
    /// capacity absorbs reaction lag.
    pub fallback_brake_margin_mps2: f64,
}

impl Default for CavParams {
    fn default() -> Self {
        CavParams {
            headway: HeadwayParams::default(),
            guard: GuardParams::default(),
            reengage_gap_factor: 1.2,
            reengage_hold_s: 1.0,
            fallback_brake_margin_mps2: 2.5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub run: RunParams,
    pub bounds: ControlBounds,
    pub corridor: CorridorLayout,
    pub demand: DemandParams,
    pub hdv: HdvParams,
    pub cav: CavParams,
    pub fuel: FuelParams,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Builds the corridor network this configuration describes.
    pub fn network(&self) -> Result<CorridorNetwork, ConfigError> {
        self.corridor.build().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.run.dt_s > 0.0 && self.run.dt_s <= 1.0) {
            return invalid(format!("run.dt_s must be in (0, 1], got {}", self.run.dt_s));
        }
        if self.run.horizon_s <= 0.0 || self.run.drain_factor < 1.0 {
            return invalid("run.horizon_s must be positive and drain_factor >= 1".into());
        }
        if !(0.0..=100.0).contains(&self.run.penetration_pct) {
            return invalid(format!(
                "run.penetration_pct must be in 0..=100, got {}",
                self.run.penetration_pct
            ));
        }
        self.bounds.validate().map_err(ConfigError::Invalid)?;
        self.corridor.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.demand.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.hdv.following.validate().map_err(ConfigError::Invalid)?;
        if self.hdv.gap.critical_gap_s <= 0.0 || self.hdv.gap.decision_range_m <= 0.0 {
            return invalid("hdv.gap parameters must be positive".into());
        }
        if self.cav.headway.standstill_m <= 0.0 || self.cav.headway.time_headway_s < 0.0 {
            return invalid("cav.headway parameters out of range".into());
        }
        if self.cav.reengage_gap_factor < 1.0 || self.cav.reengage_hold_s < 0.0 {
            return invalid("cav re-engagement parameters out of range".into());
        }
        if self.cav.fallback_brake_margin_mps2 <= 0.0 {
            return invalid("cav.fallback_brake_margin_mps2 must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_configuration() {
        let cfg = SimConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.run.dt_s, 0.1);
        assert_eq!(cfg.run.horizon_s, 3600.0);
        assert_eq!(cfg.bounds.u_min, -3.0);
        assert_eq!(cfg.hdv.gap.critical_gap_s, 6.5);
        assert_eq!(cfg.cav.headway.time_headway_s, 1.2);
        assert_eq!(cfg.corridor.speed_reduction.v_max_mps, 18.6);
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = SimConfig::from_toml_str(
            r#"
            [run]
            dt_s = 0.05
            penetration_pct = 30.0

            [corridor.roundabout]
            priority = "main"

            [hdv.following]
            bx_mult = 2.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.run.dt_s, 0.05);
        assert_eq!(cfg.run.penetration_pct, 30.0);
        assert_eq!(cfg.run.horizon_s, 3600.0);
        assert_eq!(cfg.corridor.roundabout.priority, "main");
        assert_eq!(cfg.hdv.following.bx_mult, 2.5);
        assert_eq!(cfg.hdv.following.bx_add, 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(SimConfig::from_toml_str("[run]\ndt = 0.1\n").is_err());
        assert!(SimConfig::from_toml_str("[simulation]\ndt_s = 0.1\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(SimConfig::from_toml_str("[run]\ndt_s = 0.0\n").is_err());
        assert!(SimConfig::from_toml_str("[run]\npenetration_pct = 130.0\n").is_err());
        assert!(SimConfig::from_toml_str("[demand.high]\nramp_vph = 9000.0\n").is_err());
        assert!(SimConfig::from_toml_str("[corridor.roundabout]\npriority = \"left\"\n").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.run.master_seed, cfg.run.master_seed);
        assert_eq!(back.fuel.cruise, cfg.fuel.cruise);
        assert_eq!(back.demand.high.ramp_vph, cfg.demand.high.ramp_vph);
    }

    #[test]
    fn network_builds_from_the_default_config() {
        let cfg = SimConfig::default();
        let net = cfg.network().unwrap();
        assert_eq!(net.routes.len(), 3);
        assert_eq!(net.zones.len(), 3);
    }
}
