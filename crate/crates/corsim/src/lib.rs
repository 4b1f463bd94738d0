//! Microscopic simulation of a single-lane corridor where connected automated
//! vehicles (CAVs) schedule conflict-free merge times and drive minimum-effort
//! trajectories through three bottlenecks (an on-ramp merge, a reduced-speed
//! segment, a roundabout) while human-driven vehicles (HDVs) car-follow and
//! yield at signs.
//!
//! The crate is organised around the simulation pipeline:
//!
//! * [`corridor`]: route geometry, zones, conflict topology
//! * [`dynamics`]: exact double-integrator stepping under bounds
//! * [`driver`]: Wiedemann-style car following and gap acceptance
//! * [`coordination`]: merge-time recursion, trajectory planning, switching
//! * [`fuel`]: polynomial fuel-rate metamodel
//! * [`demand`]: seeded arrival generation and fleet-class assignment
//! * [`engine`]: the fixed-step synchronous simulation loop
//! * [`metrics`] / [`sweep`] / [`report`]: audits, penetration sweeps, CSV/SVG

pub mod config;
pub mod coordination;
pub mod corridor;
pub mod demand;
pub mod driver;
pub mod dynamics;
pub mod engine;
pub mod fuel;
pub mod metrics;
pub mod report;
pub mod sweep;

use serde::{Deserialize, Serialize};

/// Identifies one vehicle for the lifetime of a run. Ids are assigned in
/// arrival-schedule order, so they are stable for a given (config, seed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Fleet class of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    /// Connected automated vehicle, coordinated inside control zones.
    Cav,
    /// Human-driven vehicle.
    Hdv,
}

impl VehicleClass {
    pub fn label(self) -> &'static str {
        match self {
            VehicleClass::Cav => "cav",
            VehicleClass::Hdv => "hdv",
        }
    }
}
