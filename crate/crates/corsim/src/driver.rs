//! Human driver behaviour: psycho-physical car-following and gap acceptance.
//!
//! Car-following is a four-regime perceptual model. The follower reacts to
//! front-to-front spacing `dx` and closing speed `dv = v - v_leader`, with
//! perception thresholds that widen with speed and vary per driver:
//!
//! - `AX`  desired standstill spacing (leader length + margin)
//! - `BX`  speed-dependent part of the desired following distance
//! - `ABX` minimum safe following distance at speed
//! - `SDX` maximum following distance (upper edge of the following band)
//! - `SDV` closing-speed perception threshold at long range
//! - `CLDV`/`OPDV` closing/opening thresholds inside the following band
//!
//! Regimes: free driving (no constraint), following (drift around the band
//! with gentle ±b_null nudges), approaching (brake to equalise speeds at the
//! safe distance), emergency (spacing below ABX).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlBounds, VehicleState};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WiedemannParams {
    /// Physical vehicle length, m. Front-to-front spacing includes it.
    pub vehicle_length_m: f64,
    /// Additive standstill margin on top of the leader's length, m.
    pub ax_m: f64,
    /// Following-distance base term, multiplied by sqrt(speed).
    pub bx_add: f64,
    /// Following-distance spread across the driver population.
    pub bx_mult: f64,
    /// Ratio of the following band's upper edge to its lower edge.
    pub ex: f64,
    /// Perception range scale for closing-speed detection, m.
    pub cx: f64,
    /// Magnitude of the gentle nudges used inside the following band, m/s².
    pub b_null_mps2: f64,
    /// Free-driving speed-tracking gain, 1/s.
    pub k_free: f64,
    pub comfort_accel_mps2: f64,
    pub comfort_decel_mps2: f64,
}

impl Default for WiedemannParams {
    fn default() -> Self {
        WiedemannParams {
            vehicle_length_m: 4.5,
            ax_m: 2.0,
            bx_add: 2.0,
            bx_mult: 3.0,
            ex: 2.0,
            cx: 45.0,
            b_null_mps2: 0.2,
            k_free: 0.5,
            comfort_accel_mps2: 1.5,
            comfort_decel_mps2: 1.8,
        }
    }
}

impl WiedemannParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.vehicle_length_m <= 0.0 || self.ax_m <= 0.0 {
            return Err("standstill spacing terms must be positive".into());
        }
        if self.ex < 1.0 {
            return Err("ex must be >= 1 (upper band edge above lower)".into());
        }
        if self.cx <= 0.0 || self.k_free <= 0.0 || self.b_null_mps2 <= 0.0 {
            return Err("perception and gain parameters must be positive".into());
        }
        if self.comfort_accel_mps2 <= 0.0 || self.comfort_decel_mps2 <= 0.0 {
            return Err("comfort limits must be positive".into());
        }
        Ok(())
    }
}

/// Per-driver variation, drawn once at spawn time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    /// In [0, 1]; scales the following-distance spread (timid = large).
    pub driver_factor: f64,
    /// Multiplies the posted limit to give this driver's desired speed.
    pub desired_speed_factor: f64,
}

impl DriverProfile {
    /// The neutral profile used for machine-driven vehicles outside their
    /// coordinated segments: median spacing, exact limit tracking.
    pub fn neutral() -> Self {
        DriverProfile { driver_factor: 0.5, desired_speed_factor: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    FreeDriving,
    Following,
    Approaching,
    Emergency,
}

/// What the follower perceives of its leader.
#[derive(Debug, Clone, Copy)]
pub struct LeaderObservation {
    /// Front-to-front spacing, m. Must be positive.
    pub spacing_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("non-finite input to the car-following model")]
    NonFiniteInput,
    #[error("leader spacing {0:.3} m is not positive; vehicles overlap")]
    NonPositiveSpacing(f64),
}

/// One car-following decision. Returns the commanded acceleration (within
/// `bounds`) and the perceptual regime it came from.
pub fn wiedemann_accel(
    follower: &VehicleState,
    leader: Option<LeaderObservation>,
    v_desired: f64,
    profile: &DriverProfile,
    p: &WiedemannParams,
    bounds: &ControlBounds,
) -> Result<(f64, Regime), DriverError> {
    if !follower.v.is_finite() || !v_desired.is_finite() {
        return Err(DriverError::NonFiniteInput);
    }
    let free_u = (p.k_free * (v_desired - follower.v))
        .clamp(-p.comfort_decel_mps2, p.comfort_accel_mps2);

    let Some(lead) = leader else {
        return Ok((free_u.clamp(bounds.u_min, bounds.u_max), Regime::FreeDriving));
    };
    if !lead.spacing_m.is_finite() || !lead.speed_mps.is_finite() {
        return Err(DriverError::NonFiniteInput);
    }
    if lead.spacing_m <= 0.0 {
        return Err(DriverError::NonPositiveSpacing(lead.spacing_m));
    }

    let v = follower.v;
    let dx = lead.spacing_m;
    let dv = v - lead.speed_mps;

    let ax = p.vehicle_length_m + p.ax_m;
    let bx = (p.bx_add + p.bx_mult * profile.driver_factor) * v.min(lead.speed_mps).max(0.0).sqrt();
    let abx = ax + bx;
    let sdx = ax + p.ex * bx;
    let sdv = ((dx - ax).max(0.0) / p.cx).powi(2);
    let cldv = sdv * p.ex * p.ex;

    // Interaction regimes may demand more braking than free driving, never
    // less: the driver keeps honouring a falling desired speed (an upcoming
    // limit drop) even while glued to a leader.
    let (u, regime) = if dx < abx {
        // Too close. Brake hard while still closing; ease off once opening.
        if dv > 0.0 {
            (bounds.u_min, Regime::Emergency)
        } else {
            ((-p.b_null_mps2).min(free_u), Regime::Emergency)
        }
    } else if (dx <= sdx && dv > cldv) || (dx > sdx && dv > sdv) {
        // Perceptibly closing: brake so speeds equalise near ABX.
        let room = (dx - abx).max(0.5);
        let u = -(dv * dv) / (2.0 * room);
        (u.clamp(bounds.u_min, 0.0).min(free_u), Regime::Approaching)
    } else if dx <= sdx {
        // Inside the following band: drift around its midpoint, never
        // pushing past the driver's own desired speed.
        let mid = 0.5 * (abx + sdx);
        let nudge = if dx >= mid { p.b_null_mps2 } else { -p.b_null_mps2 };
        (nudge.min(free_u), Regime::Following)
    } else {
        (free_u, Regime::FreeDriving)
    };

    Ok((u.clamp(bounds.u_min, bounds.u_max), regime))
}

// ---------------------------------------------------------------------------
// Gap acceptance at priority-controlled merges.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapAcceptanceParams {
    /// Minimum acceptable arrival headway of conflicting traffic, s.
    pub critical_gap_s: f64,
    /// Stop line position upstream of the merge entry, m.
    pub stop_line_offset_m: f64,
    /// The gate is evaluated within this distance of the merge entry, m.
    pub decision_range_m: f64,
}

impl Default for GapAcceptanceParams {
    fn default() -> Self {
        GapAcceptanceParams {
            critical_gap_s: 6.5,
            stop_line_offset_m: 5.0,
            decision_range_m: 120.0,
        }
    }
}

/// A conflicting vehicle as seen from the yield line.
#[derive(Debug, Clone, Copy)]
pub struct ConflictObservation {
    /// Remaining distance to its merge-zone entry, m.
    pub dist_to_merge_m: f64,
    pub speed_mps: f64,
    /// True while it occupies the merge zone itself.
    pub inside_merge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateVerdict {
    Go,
    Yield,
}

/// Accept-or-yield decision against everything on conflicting approaches.
/// Occupants of the merge zone always block; an approaching vehicle blocks
/// when its constant-speed arrival falls inside the critical gap.
pub fn priority_gate(conflicts: &[ConflictObservation], p: &GapAcceptanceParams) -> GateVerdict {
    for c in conflicts {
        if c.inside_merge {
            return GateVerdict::Yield;
        }
        if c.speed_mps > 0.5 && c.dist_to_merge_m >= 0.0 {
            let arrival_s = c.dist_to_merge_m / c.speed_mps;
            if arrival_s < p.critical_gap_s {
                return GateVerdict::Yield;
            }
        }
    }
    GateVerdict::Go
}

/// Deceleration that brings the vehicle to rest at a stop line `dist` metres
/// ahead. Saturates at `u_min` once the line is unreachable at comfort.
pub fn stop_line_decel(v: f64, dist_to_line_m: f64, bounds: &ControlBounds) -> f64 {
    if dist_to_line_m <= 0.05 {
        return bounds.u_min;
    }
    (-(v * v) / (2.0 * dist_to_line_m)).clamp(bounds.u_min, 0.0)
}
