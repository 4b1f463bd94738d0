//! Traffic demand: deterministic arrival schedules.
//!
//! Every run's demand is generated up front as a spawn schedule, one stream
//! per route. Inter-arrival gaps are a minimum headway plus an exponential
//! tail (so arrivals are Poisson-like but never tailgate the spawn point),
//! entry speeds are a truncated normal around a fraction of the route's
//! posted limit, and each arrival carries its own driver profile.
//!
//! Automation class is assigned by a *separate* random stream keyed only by
//! (master seed, volume, seed index) — not by penetration. Each vehicle gets
//! a latent uniform draw and is automated when it falls below the penetration
//! fraction, so the automated set at 30% is a subset of the set at 60% and
//! sweep comparisons across penetrations reuse the same traffic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::{CorridorNetwork, RouteId, MAIN_ROUTE, RAMP_ROUTE, SIDE_ROUTE};
use crate::driver::DriverProfile;
use crate::VehicleClass;

/// Stable stream splitter: folds a master seed and a path of integers into an
/// independent 64-bit seed (splitmix-style finalisation per component).
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumePreset {
    High,
    Medium,
    Low,
}

impl VolumePreset {
    pub const ALL: [VolumePreset; 3] = [VolumePreset::High, VolumePreset::Medium, VolumePreset::Low];

    pub fn label(self) -> &'static str {
        match self {
            VolumePreset::High => "high",
            VolumePreset::Medium => "medium",
            VolumePreset::Low => "low",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            VolumePreset::High => 0,
            VolumePreset::Medium => 1,
            VolumePreset::Low => 2,
        }
    }
}

impl std::str::FromStr for VolumePreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(VolumePreset::High),
            "medium" => Ok(VolumePreset::Medium),
            "low" => Ok(VolumePreset::Low),
            other => Err(format!("unknown volume preset \"{other}\" (use high|medium|low)")),
        }
    }
}

/// Hourly demand per route for one volume preset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteFlows {
    pub main_vph: f64,
    pub ramp_vph: f64,
    pub side_vph: f64,
}

impl Default for RouteFlows {
    fn default() -> Self {
        RouteFlows { main_vph: 400.0, ramp_vph: 600.0, side_vph: 600.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandParams {
    /// Hard floor between consecutive arrivals on one route, s.
    pub min_headway_s: f64,
    /// Entry speed mean as a fraction of the route's spawn-point limit.
    pub entry_speed_mean_factor: f64,
    pub entry_speed_sd_mps: f64,
    pub entry_speed_min_mps: f64,
    /// Driver desired-speed factor range (low..high multiplier on limits).
    pub desired_speed_factor_range: [f64; 2],
    pub high: RouteFlows,
    pub medium: RouteFlows,
    pub low: RouteFlows,
}

impl Default for DemandParams {
    fn default() -> Self {
        DemandParams {
            min_headway_s: 1.5,
            entry_speed_mean_factor: 0.8,
            entry_speed_sd_mps: 2.0,
            entry_speed_min_mps: 5.0,
            desired_speed_factor_range: [0.85, 1.0],
            high: RouteFlows { main_vph: 500.0, ramp_vph: 800.0, side_vph: 800.0 },
            medium: RouteFlows { main_vph: 400.0, ramp_vph: 600.0, side_vph: 600.0 },
            low: RouteFlows { main_vph: 300.0, ramp_vph: 400.0, side_vph: 400.0 },
        }
    }
}

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("flow {vph:.0} veh/h leaves no room for the {min_headway_s} s minimum headway")]
    FlowTooHigh { vph: f64, min_headway_s: f64 },
    #[error("invalid demand parameter: {0}")]
    BadParameter(String),
}

impl DemandParams {
    pub fn flows(&self, volume: VolumePreset) -> RouteFlows {
        match volume {
            VolumePreset::High => self.high,
            VolumePreset::Medium => self.medium,
            VolumePreset::Low => self.low,
        }
    }

    pub fn validate(&self) -> Result<(), DemandError> {
        if self.min_headway_s <= 0.0 {
            return Err(DemandError::BadParameter("min_headway_s must be positive".into()));
        }
        if !(0.0 < self.entry_speed_mean_factor && self.entry_speed_mean_factor <= 1.0) {
            return Err(DemandError::BadParameter("entry_speed_mean_factor must be in (0, 1]".into()));
        }
        if self.entry_speed_sd_mps < 0.0 || self.entry_speed_min_mps <= 0.0 {
            return Err(DemandError::BadParameter("entry speed spread must be non-negative".into()));
        }
        let [lo, hi] = self.desired_speed_factor_range;
        if !(0.0 < lo && lo <= hi) {
            return Err(DemandError::BadParameter("desired_speed_factor_range must be 0 < lo <= hi".into()));
        }
        for volume in VolumePreset::ALL {
            let f = self.flows(volume);
            for vph in [f.main_vph, f.ramp_vph, f.side_vph] {
                if vph < 0.0 {
                    return Err(DemandError::BadParameter("negative flow".into()));
                }
                if vph > 0.0 && 3600.0 / vph <= self.min_headway_s {
                    return Err(DemandError::FlowTooHigh { vph, min_headway_s: self.min_headway_s });
                }
            }
        }
        Ok(())
    }
}

/// One scheduled vehicle creation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnRequest {
    pub time_s: f64,
    pub route: RouteId,
    pub class: VehicleClass,
    pub entry_speed_mps: f64,
    pub profile: DriverProfile,
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let dist = Normal::new(mean, sd).expect("finite mean/sd");
    for _ in 0..64 {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

/// Builds the full spawn schedule for one run. Arrivals stop at `horizon_s`;
/// vehicles already in the network then drain out.
pub fn generate_schedule(
    params: &DemandParams,
    net: &CorridorNetwork,
    volume: VolumePreset,
    penetration_pct: f64,
    master_seed: u64,
    seed_index: u32,
    horizon_s: f64,
) -> Result<Vec<SpawnRequest>, DemandError> {
    params.validate()?;
    if !(0.0..=100.0).contains(&penetration_pct) {
        return Err(DemandError::BadParameter(format!(
            "penetration {penetration_pct}% outside 0..=100"
        )));
    }
    let flows = params.flows(volume);
    let per_route: [(RouteId, f64); 3] = [
        (MAIN_ROUTE, flows.main_vph),
        (RAMP_ROUTE, flows.ramp_vph),
        (SIDE_ROUTE, flows.side_vph),
    ];

    let mut schedule: Vec<SpawnRequest> = Vec::new();
    for (route, vph) in per_route {
        if vph <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            master_seed,
            &[volume.index(), seed_index as u64, route.0 as u64, 0xA221],
        ));
        let mean_gap = 3600.0 / vph;
        let tail = Exp::new(1.0 / (mean_gap - params.min_headway_s))
            .map_err(|e| DemandError::BadParameter(e.to_string()))?;
        let limit = net.route(route).spawn_speed_limit_mps;
        let mean_speed = params.entry_speed_mean_factor * limit;
        let [dsf_lo, dsf_hi] = params.desired_speed_factor_range;

        let mut t = 0.0;
        loop {
            t += params.min_headway_s + tail.sample(&mut rng);
            if t > horizon_s {
                break;
            }
            let entry_speed = truncated_normal(
                &mut rng,
                mean_speed,
                params.entry_speed_sd_mps,
                params.entry_speed_min_mps,
                limit,
            );
            let profile = DriverProfile {
                driver_factor: rng.gen::<f64>(),
                desired_speed_factor: dsf_lo + (dsf_hi - dsf_lo) * rng.gen::<f64>(),
            };
            schedule.push(SpawnRequest {
                time_s: t,
                route,
                class: VehicleClass::Hdv, // assigned below
                entry_speed_mps: entry_speed,
                profile,
            });
        }
    }

    // Global arrival order, then class assignment from its own stream so the
    // latent draws line up across penetration levels.
    schedule.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(a.route.0.cmp(&b.route.0)));
    let mut class_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        master_seed,
        &[volume.index(), seed_index as u64, 0xC1A5],
    ));
    let threshold = penetration_pct / 100.0;
    for req in &mut schedule {
        let latent: f64 = class_rng.gen();
        req.class = if latent < threshold { VehicleClass::Cav } else { VehicleClass::Hdv };
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::CorridorLayout;

    fn net() -> CorridorNetwork {
        CorridorLayout::default().build().unwrap()
    }

    fn schedule(pen: f64, master: u64, seed: u32) -> Vec<SpawnRequest> {
        generate_schedule(&DemandParams::default(), &net(), VolumePreset::High, pen, master, seed, 3600.0)
            .unwrap()
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(42, &[0, 0, 1]);
        let b = derive_seed(42, &[0, 1, 0]);
        let c = derive_seed(42, &[0, 0, 1]);
        assert_eq!(a, c);
        assert_ne!(a, b);
        assert_ne!(derive_seed(42, &[]), derive_seed(43, &[]));
    }

    #[test]
    fn same_inputs_reproduce_the_schedule_exactly() {
        let a = schedule(40.0, 7, 3);
        let b = schedule(40.0, 7, 3);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.time_s.to_bits(), y.time_s.to_bits());
            assert_eq!(x.entry_speed_mps.to_bits(), y.entry_speed_mps.to_bits());
            assert_eq!(x.class, y.class);
        }
        assert_ne!(schedule(40.0, 7, 4).len(), 0);
        let c = schedule(40.0, 8, 3);
        assert!(a.iter().zip(&c).any(|(
            x,
            y,
        )| x.time_s.to_bits() != y.time_s.to_bits()));
    }

    #[test]
    fn traffic_is_identical_across_penetrations() {
        let a = schedule(20.0, 11, 0);
        let b = schedule(80.0, 11, 0);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.time_s.to_bits(), y.time_s.to_bits());
            assert_eq!(x.route, y.route);
            assert_eq!(x.entry_speed_mps.to_bits(), y.entry_speed_mps.to_bits());
        }
    }

    #[test]
    fn automated_sets_nest_as_penetration_rises() {
        let low = schedule(30.0, 11, 0);
        let high = schedule(60.0, 11, 0);
        let mut automated_low = 0;
        for (x, y) in low.iter().zip(&high) {
            if x.class == VehicleClass::Cav {
                automated_low += 1;
                assert_eq!(y.class, VehicleClass::Cav, "vehicle automated at 30% but not at 60%");
            }
        }
        assert!(automated_low > 0);
    }

    #[test]
    fn penetration_endpoints_are_pure_fleets() {
        assert!(schedule(0.0, 5, 0).iter().all(|r| r.class == VehicleClass::Hdv));
        assert!(schedule(100.0, 5, 0).iter().all(|r| r.class == VehicleClass::Cav));
    }

    #[test]
    fn automated_share_tracks_the_penetration_rate() {
        let s = schedule(50.0, 123, 2);
        let cav = s.iter().filter(|r| r.class == VehicleClass::Cav).count();
        let share = cav as f64 / s.len() as f64;
        assert!(s.len() > 1500, "expected a busy hour, got {}", s.len());
        assert!((share - 0.5).abs() < 0.05, "share {share}");
    }

    #[test]
    fn per_route_arrivals_respect_the_minimum_headway() {
        let s = schedule(50.0, 9, 1);
        for route in [MAIN_ROUTE, RAMP_ROUTE, SIDE_ROUTE] {
            let times: Vec<f64> =
                s.iter().filter(|r| r.route == route).map(|r| r.time_s).collect();
            assert!(!times.is_empty());
            for w in times.windows(2) {
                assert!(w[1] - w[0] >= 1.5 - 1e-9, "headway {}", w[1] - w[0]);
            }
        }
    }

    #[test]
    fn arrival_rates_match_the_preset_flows() {
        let s = schedule(50.0, 2024, 0);
        let count = |route: RouteId| s.iter().filter(|r| r.route == route).count() as f64;
        // One hour of arrivals; Poisson noise on ~500-800 counts stays well
        // inside 12%.
        assert!((count(MAIN_ROUTE) - 500.0).abs() < 60.0, "main {}", count(MAIN_ROUTE));
        assert!((count(RAMP_ROUTE) - 800.0).abs() < 96.0, "ramp {}", count(RAMP_ROUTE));
        assert!((count(SIDE_ROUTE) - 800.0).abs() < 96.0, "side {}", count(SIDE_ROUTE));
    }

    #[test]
    fn entry_speeds_are_truncated_to_the_route_limit() {
        let s = schedule(50.0, 31, 0);
        let n = net();
        for r in &s {
            let limit = n.route(r.route).spawn_speed_limit_mps;
            assert!(r.entry_speed_mps >= 5.0 - 1e-9 && r.entry_speed_mps <= limit + 1e-9);
            assert!(r.profile.driver_factor >= 0.0 && r.profile.driver_factor < 1.0);
            assert!(
                r.profile.desired_speed_factor >= 0.85 && r.profile.desired_speed_factor <= 1.0
            );
        }
    }

    #[test]
    fn arrivals_stop_at_the_horizon_and_stay_sorted() {
        let s = schedule(50.0, 3, 0);
        assert!(s.iter().all(|r| r.time_s <= 3600.0));
        for w in s.windows(2) {
            assert!(w[0].time_s <= w[1].time_s);
        }
    }

    #[test]
    fn oversaturated_flow_is_rejected() {
        let mut p = DemandParams::default();
        p.high.ramp_vph = 3000.0;
        assert!(p.validate().is_err());
        assert!(matches!(
            generate_schedule(&p, &net(), VolumePreset::High, 50.0, 1, 0, 100.0),
            Err(DemandError::FlowTooHigh { .. })
        ));
    }

    #[test]
    fn volume_labels_round_trip() {
        for v in VolumePreset::ALL {
            assert_eq!(v.label().parse::<VolumePreset>().unwrap(), v);
        }
        assert!("rush".parse::<VolumePreset>().is_err());
    }
}
