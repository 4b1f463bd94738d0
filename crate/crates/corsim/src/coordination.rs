//! Cooperative merge coordination for automated vehicles.
//!
//! When an automated vehicle enters a control zone it is appended to that
//! zone's coordination queue and assigned a merge-entry time by a recursion
//! over its queue predecessor: keep at least a speed-dependent spacing behind
//! a same-lane predecessor, or one merge-zone traversal behind a conflicting
//! one, never arrive earlier than free flow allows, and never plan to arrive
//! later than crawling through the control zone at the planning floor speed.
//!
//! Given the assigned arrival time, the vehicle follows the smoothest
//! trajectory that gets it there: the control history minimising ∫u²/2 under
//! double-integrator dynamics with fixed entry state and fixed arrival
//! position, with the control fading to zero at arrival. That optimum is
//! linear in time, making speed quadratic and position cubic.
//!
//! Coefficients are stored in zone-local time (τ = t − t0). Evaluating the
//! cubic in absolute simulation time loses ~9 digits to cancellation an hour
//! in; in shifted time the boundary conditions hold to machine precision for
//! the whole run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::ScenarioZone;
use crate::dynamics::ControlBounds;

/// Minimum spacing a vehicle must keep to the one ahead, as a function of its
/// own speed: a standstill margin plus a time-headway term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadwayParams {
    pub standstill_m: f64,
    pub time_headway_s: f64,
}

impl Default for HeadwayParams {
    fn default() -> Self {
        HeadwayParams { standstill_m: 2.0, time_headway_s: 1.2 }
    }
}

impl HeadwayParams {
    /// Required spacing at speed `v`, m.
    pub fn gap(&self, v: f64) -> f64 {
        self.standstill_m + self.time_headway_s * v.max(0.0)
    }
}

/// The slice of zone geometry the scheduler needs.
#[derive(Debug, Clone, Copy)]
pub struct PlanningZone {
    pub control_length_m: f64,
    pub merge_length_m: f64,
    pub v_min_mps: f64,
    pub v_max_mps: f64,
}

impl From<&ScenarioZone> for PlanningZone {
    fn from(z: &ScenarioZone) -> Self {
        PlanningZone {
            control_length_m: z.control_zone_length_m,
            merge_length_m: z.merge_zone_length_m,
            v_min_mps: z.v_min_mps,
            v_max_mps: z.v_max_mps,
        }
    }
}

/// Physically reachable merge-entry times from a control-zone entry at `t0`:
/// no earlier than flat-out at the zone limit, no later than crawling at the
/// planning floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmBand {
    pub earliest_s: f64,
    pub latest_s: f64,
}

impl TmBand {
    pub fn from_entry(t0: f64, zone: &PlanningZone) -> Self {
        TmBand {
            earliest_s: t0 + zone.control_length_m / zone.v_max_mps,
            latest_s: t0 + zone.control_length_m / zone.v_min_mps,
        }
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.earliest_s, self.latest_s)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.earliest_s - 1e-9 && t <= self.latest_s + 1e-9
    }
}

/// Below this, a predecessor's speed carries no usable timing information
/// (stalled or numerically zero) and the planning floor substitutes for it.
const PREDECESSOR_SPEED_FLOOR_MPS: f64 = 0.1;

/// The speed a predecessor is assumed to hold for gap-term purposes: its
/// reported speed clamped into the zone envelope, or the planning floor when
/// it is effectively stationary.
pub fn effective_pred_speed(v: f64, zone: &PlanningZone) -> f64 {
    if v <= PREDECESSOR_SPEED_FLOOR_MPS {
        zone.v_min_mps
    } else {
        v.clamp(zone.v_min_mps, zone.v_max_mps)
    }
}

fn schedule(pred_tm: f64, gap_term_s: f64, base_tm: f64, t0: f64, zone: &PlanningZone) -> f64 {
    let band = TmBand::from_entry(t0, zone);
    // The predecessor constraint, capped at the band's late edge (queueing
    // never schedules slower than the crawl floor), but never earlier than
    // this vehicle's unconstrained arrival.
    (pred_tm + gap_term_s).min(band.latest_s).max(base_tm)
}

/// Merge-entry time of an unconstrained vehicle: maintain the entry speed.
pub fn free_flow_merge_time(t0: f64, v0: f64, zone: &PlanningZone) -> f64 {
    let v0c = v0.clamp(zone.v_min_mps, zone.v_max_mps);
    t0 + zone.control_length_m / v0c
}

/// Merge-entry time behind a predecessor on the same lane: trail it by the
/// spacing headway, converted to time at the predecessor's arrival speed.
///
/// `base_tm` is the arrival the vehicle would make with no one ahead:
/// [`free_flow_merge_time`] when the entry speed is worth holding, or an
/// accelerate-and-hold floor for a vehicle entering slowly out of a queue
/// (pricing the whole zone at a crawl would stall every successor too).
pub fn merge_time_same_lane(
    pred_tm: f64,
    pred_speed_at_tm: f64,
    t0: f64,
    v0: f64,
    base_tm: f64,
    zone: &PlanningZone,
    headway: &HeadwayParams,
) -> f64 {
    let vp = effective_pred_speed(pred_speed_at_tm, zone);
    schedule(pred_tm, headway.gap(v0.max(0.0)) / vp, base_tm, t0, zone)
}

/// Merge-entry time behind a predecessor on a conflicting approach: wait one
/// merge-zone traversal, at the predecessor's arrival speed. `base_tm` as in
/// [`merge_time_same_lane`].
pub fn merge_time_conflict_lane(
    pred_tm: f64,
    pred_speed_at_tm: f64,
    t0: f64,
    base_tm: f64,
    zone: &PlanningZone,
) -> f64 {
    let vp = effective_pred_speed(pred_speed_at_tm, zone);
    schedule(pred_tm, zone.merge_length_m / vp, base_tm, t0, zone)
}

// ---------------------------------------------------------------------------
// Minimum-effort arrival trajectories.
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("arrival horizon {horizon_s:.6} s is not usable for planning")]
    DegenerateHorizon { horizon_s: f64 },
    #[error("non-finite trajectory boundary data")]
    NonFiniteInput,
}

/// Cubic position trajectory in zone-local time τ = t − t0:
/// p(τ) = a τ³/6 + b τ²/2 + c τ + d, so u(τ) = a τ + b and the boundary
/// conditions p(0) = p0, v(0) = v0, p(T) = target, u(T) = 0 pin all four
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCoeffs {
    /// Absolute time the local clock starts at.
    pub t0: f64,
    /// Arrival horizon T = tm − t0, s.
    pub horizon_s: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl TrajectoryCoeffs {
    pub fn control_at(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        self.a * tau + self.b
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        (0.5 * self.a * tau + self.b) * tau + self.c
    }

    pub fn position_at(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        ((self.a * tau / 3.0 + self.b) * tau * 0.5 + self.c) * tau + self.d
    }

    /// Speed at the arrival instant: 1.5·Δp/T − 0.5·v0.
    pub fn terminal_speed(&self) -> f64 {
        self.speed_at(self.t0 + self.horizon_s)
    }

    /// The cost this trajectory was optimised for: ∫₀ᵀ u²/2 dτ, closed form.
    pub fn effort(&self) -> f64 {
        let t = self.horizon_s;
        0.5 * (self.a * self.a * t * t * t / 3.0 + self.a * self.b * t * t + self.b * self.b * t)
    }
}

/// Solves the fixed-arrival smoothest-trajectory problem from state (p0, v0)
/// at time t0 to position `p_target` at time `tm`.
pub fn solve_trajectory(
    t0: f64,
    tm: f64,
    p0: f64,
    v0: f64,
    p_target: f64,
) -> Result<TrajectoryCoeffs, CoordinationError> {
    if ![t0, tm, p0, v0, p_target].iter().all(|x| x.is_finite()) {
        return Err(CoordinationError::NonFiniteInput);
    }
    let horizon = tm - t0;
    if horizon <= 1e-6 {
        return Err(CoordinationError::DegenerateHorizon { horizon_s: horizon });
    }
    let dp = p_target - p0;
    let a = 3.0 * (v0 * horizon - dp) / (horizon * horizon * horizon);
    Ok(TrajectoryCoeffs { t0, horizon_s: horizon, a, b: -a * horizon, c: v0, d: p0 })
}

/// True when an arrival `horizon` seconds from now is reachable over `dist`
/// metres within the zone's speed envelope.
pub fn horizon_feasible(dist_m: f64, horizon_s: f64, zone: &PlanningZone) -> bool {
    if dist_m <= 0.0 || horizon_s <= 0.0 {
        return false;
    }
    horizon_s >= dist_m / zone.v_max_mps && horizon_s <= dist_m / zone.v_min_mps
}

/// Earliest and latest arrival (seconds from now) over `dist` metres that the
/// actuators can actually deliver from entry speed `v0`.
///
/// The speed-envelope band assumes speed can jump instantly; a vehicle
/// entering fast cannot be arbitrarily late over a short zone because braking
/// to the planning floor eats distance. Earliest: full throttle to the zone
/// ceiling, then hold. Latest: full braking to the floor, then crawl. Both
/// profiles stay inside the zone's speed envelope, so the window is always a
/// sub-interval of the band.
pub fn control_feasible_window(
    dist_m: f64,
    v0: f64,
    zone: &PlanningZone,
    bounds: &ControlBounds,
) -> (f64, f64) {
    let (earliest, _) = earliest_arrival_with_ceiling(dist_m, v0, zone.v_max_mps, bounds);
    let latest = if v0 < zone.v_min_mps {
        // Below the floor: the slowest compliant profile climbs up to it.
        ramp_then_hold(dist_m, v0, zone.v_min_mps, bounds.u_max).0
    } else {
        ramp_then_hold(dist_m, v0, zone.v_min_mps, bounds.u_min).0
    };
    // Plans are drawn from the cubic family, whose arrival speed is
    // 1.5·d/T − 0.5·v0. Stretching T past the point where that drops under
    // the zone floor would command the vehicle to overshoot and back up, so
    // the deliverable late edge is also capped by the terminal-speed floor.
    let latest = latest.min(1.5 * dist_m / (zone.v_min_mps + 0.5 * v0.max(0.0)));
    (earliest, latest.max(earliest))
}

/// Time to cover `dist_m` while ramping from `v0` toward `v_hold` at rate
/// `a` (either sign), holding `v_hold` once reached, plus the arrival speed.
fn ramp_then_hold(dist_m: f64, v0: f64, v_hold: f64, a: f64) -> (f64, f64) {
    let d_ramp = (v_hold * v_hold - v0 * v0) / (2.0 * a);
    if d_ramp >= dist_m {
        // Target speed not reached within the distance.
        let v_end = (v0 * v0 + 2.0 * a * dist_m).max(0.0).sqrt();
        ((v_end - v0) / a, v_end)
    } else {
        ((v_hold - v0) / a + (dist_m - d_ramp) / v_hold, v_hold)
    }
}

/// Soonest arrival `dist_m` ahead for a vehicle free to ramp toward
/// `ceiling_mps` and hold it, with the speed it arrives at.
///
/// This is the honest schedule floor for a vehicle whose instantaneous speed
/// understates what it can deliver — one released from a queue accelerates
/// back to the corridor's pace instead of crawling the whole zone.
pub fn earliest_arrival_with_ceiling(
    dist_m: f64,
    v0: f64,
    ceiling_mps: f64,
    bounds: &ControlBounds,
) -> (f64, f64) {
    if v0 > ceiling_mps {
        // Entered hot: shed the excess at full braking, then hold.
        ramp_then_hold(dist_m, v0, ceiling_mps, bounds.u_min)
    } else {
        ramp_then_hold(dist_m, v0, ceiling_mps, bounds.u_max)
    }
}

// ---------------------------------------------------------------------------
// Merge-entry guard.
// ---------------------------------------------------------------------------

/// Last-line interlock ahead of a contested merge entry. The scheduler keeps
/// coordinated arrivals separated, but disturbances (safety fallbacks,
/// yielding humans caught inside) can leave the merge zone occupied when a
/// vehicle is about to enter; the guard paces or stops it until clear.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardParams {
    /// Engagement range upstream of the merge entry, m.
    pub range_m: f64,
    /// Extra clearance added behind the blocking traffic, s.
    pub margin_s: f64,
    /// Below this paced speed the vehicle stops at the line instead, m/s.
    pub crawl_mps: f64,
    /// Speed-tracking gain for pacing, 1/s.
    pub pace_gain: f64,
    /// Stop-line setback from the merge entry while guarding, m.
    pub hold_back_m: f64,
}

impl Default for GuardParams {
    fn default() -> Self {
        GuardParams {
            range_m: 120.0,
            margin_s: 0.3,
            crawl_mps: 1.0,
            pace_gain: 0.8,
            hold_back_m: 2.0,
        }
    }
}

/// Braking command keeping this vehicle out of the merge zone until the
/// blocking traffic has cleared, or `None` when no interference is predicted.
///
/// `predicted_entry_s` is the caller's best (conservatively early) estimate
/// of when this vehicle reaches the entry line; `blocking_clear_s` holds,
/// for each vehicle that would block it, the predicted time until that one
/// has left the merge zone. Callers resolve priority and commitment before
/// building the list.
pub fn merge_entry_guard(
    dist_to_entry_m: f64,
    v: f64,
    predicted_entry_s: f64,
    blocking_clear_s: &[f64],
    gp: &GuardParams,
    bounds: &ControlBounds,
) -> Option<f64> {
    if dist_to_entry_m <= 0.0 || dist_to_entry_m > gp.range_m {
        return None;
    }
    let latest_clear = blocking_clear_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !latest_clear.is_finite() {
        return None;
    }
    let t_need = latest_clear + gp.margin_s;
    if predicted_entry_s >= t_need {
        return None;
    }
    let v_target = dist_to_entry_m / t_need;
    if v_target >= gp.crawl_mps {
        Some((gp.pace_gain * (v_target - v)).clamp(bounds.u_min, 0.0))
    } else {
        Some(crate::driver::stop_line_decel(
            v,
            dist_to_entry_m - gp.hold_back_m,
            bounds,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zone(l: f64, s: f64, vmin: f64, vmax: f64) -> PlanningZone {
        PlanningZone { control_length_m: l, merge_length_m: s, v_min_mps: vmin, v_max_mps: vmax }
    }

    #[test]
    fn headway_grows_linearly_with_speed() {
        let h = HeadwayParams::default();
        assert!((h.gap(0.0) - 2.0).abs() < 1e-12);
        assert!((h.gap(15.0) - 20.0).abs() < 1e-12);
        assert!((h.gap(40.0) - 50.0).abs() < 1e-12);
        assert!((h.gap(-1.0) - 2.0).abs() < 1e-12); // negative speed = standstill margin
    }

    #[test]
    fn free_flow_holds_entry_speed() {
        let z = zone(150.0, 30.0, 5.0, 40.0);
        // 150 m at 12.5 m/s takes 12 s.
        assert!((free_flow_merge_time(2.0, 12.5, &z) - 14.0).abs() < 1e-12);
        // Entry faster than the zone limit: planned at the limit.
        assert!((free_flow_merge_time(0.0, 50.0, &z) - 150.0 / 40.0).abs() < 1e-12);
        // Near-stopped entry: planned at the floor, t0 + 150/5.
        assert!((free_flow_merge_time(4.0, 0.1, &z) - 34.0).abs() < 1e-12);
    }

    #[test]
    fn same_lane_free_flow_dominates_a_loose_predecessor() {
        let z = zone(150.0, 30.0, 5.0, 40.0);
        let h = HeadwayParams::default();
        // Predecessor arrives at 12 s doing 15 m/s; spacing 20 m behind it
        // costs 20/15 s, but free flow from (4 s, 15 m/s) already takes
        // until 14 s, which is later — free flow wins.
        let base = free_flow_merge_time(4.0, 15.0, &z);
        let tm = merge_time_same_lane(12.0, 15.0, 4.0, 15.0, base, &z, &h);
        assert!((tm - 14.0).abs() < 1e-12);
    }

    #[test]
    fn same_lane_trails_a_tight_predecessor() {
        let z = zone(150.0, 30.0, 5.0, 40.0);
        let h = HeadwayParams::default();
        // Predecessor at 20 s: 20 + 20/15 = 64/3 ≈ 21.333 s.
        let base = free_flow_merge_time(4.0, 15.0, &z);
        let tm = merge_time_same_lane(20.0, 15.0, 4.0, 15.0, base, &z, &h);
        assert!((tm - 64.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn conflict_lane_waits_one_merge_traversal() {
        let z = zone(150.0, 20.0, 5.0, 40.0);
        let base = free_flow_merge_time(4.0, 15.0, &z);
        // 12 + 20/10 = 14 exactly ties the free-flow floor.
        let tm = merge_time_conflict_lane(12.0, 10.0, 4.0, base, &z);
        assert!((tm - 14.0).abs() < 1e-12);
        // Later predecessor: 20 + 2 = 22.
        let tm = merge_time_conflict_lane(20.0, 10.0, 4.0, base, &z);
        assert!((tm - 22.0).abs() < 1e-12);
    }

    #[test]
    fn stalled_predecessor_times_out_at_the_floor_speed() {
        let z = zone(150.0, 30.0, 5.0, 40.0);
        let h = HeadwayParams::default();
        // Predecessor speed 0.05 m/s carries no information; the gap term is
        // evaluated at the 5 m/s floor: 12 + 20/5 = 16.
        let base = free_flow_merge_time(4.0, 15.0, &z);
        let tm = merge_time_same_lane(12.0, 0.05, 4.0, 15.0, base, &z, &h);
        assert!((tm - 16.0).abs() < 1e-12);
    }

    #[test]
    fn deep_queue_is_capped_at_the_crawl_edge() {
        let z = zone(150.0, 30.0, 5.0, 40.0);
        let h = HeadwayParams::default();
        // Predecessor not due until t = 40; the band's late edge is
        // 4 + 150/5 = 34 and wins.
        let base = free_flow_merge_time(4.0, 15.0, &z);
        let tm = merge_time_same_lane(40.0, 15.0, 4.0, 15.0, base, &z, &h);
        assert!((tm - 34.0).abs() < 1e-12);
    }

    #[test]
    fn scheduled_times_stay_inside_the_entry_band() {
        let z = zone(150.0, 25.0, 2.0, 40.0);
        let h = HeadwayParams::default();
        for pred_tm in [0.0, 5.0, 20.0, 100.0, 500.0] {
            for pred_v in [0.0, 0.05, 0.1, 2.0, 11.0, 40.0, 80.0] {
                for v0 in [0.0, 0.5, 8.0, 25.0, 40.0, 60.0] {
                    let t0 = 12.0;
                    let band = TmBand::from_entry(t0, &z);
                    let ff = free_flow_merge_time(t0, v0, &z);
                    let a = merge_time_same_lane(pred_tm, pred_v, t0, v0, ff, &z, &h);
                    let b = merge_time_conflict_lane(pred_tm, pred_v, t0, ff, &z);
                    assert!(band.contains(a), "same-lane tm {a} outside {band:?}");
                    assert!(band.contains(b), "conflict tm {b} outside {band:?}");
                    // Never earlier than holding the (clamped) entry speed.
                    assert!(a >= ff - 1e-9 && b >= ff - 1e-9);
                }
            }
        }
    }

    #[test]
    fn later_predecessors_never_pull_arrivals_earlier() {
        let z = zone(150.0, 30.0, 2.0, 40.0);
        let h = HeadwayParams::default();
        let mut last = 0.0;
        let base = free_flow_merge_time(3.0, 18.0, &z);
        for i in 0..200 {
            let pred_tm = i as f64 * 0.5;
            let tm = merge_time_same_lane(pred_tm, 12.0, 3.0, 18.0, base, &z, &h);
            assert!(tm >= last - 1e-12);
            last = tm;
        }
    }

    #[test]
    fn trajectory_coefficients_for_a_late_arrival() {
        // 150 m in 10 s entering at 10 m/s: must catch up 50 m.
        // a = 3(100 - 150)/1000 = -0.15, b = 1.5.
        let c = solve_trajectory(0.0, 10.0, 0.0, 10.0, 150.0).unwrap();
        assert!((c.a + 0.15).abs() < 1e-12);
        assert!((c.b - 1.5).abs() < 1e-12);
        assert!((c.c - 10.0).abs() < 1e-12);
        assert!(c.d.abs() < 1e-12);
    }

    #[test]
    fn exact_pace_needs_no_control() {
        // 100 m in 10 s at 10 m/s: already on schedule, u ≡ 0.
        let c = solve_trajectory(0.0, 10.0, 0.0, 10.0, 100.0).unwrap();
        assert_eq!(c.a, 0.0);
        assert_eq!(c.b, 0.0);
        assert!((c.effort() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_clock_makes_coefficients_translation_invariant() {
        let early = solve_trajectory(0.0, 10.0, 0.0, 10.0, 150.0).unwrap();
        let late = solve_trajectory(7000.0, 7010.0, 0.0, 10.0, 150.0).unwrap();
        assert_eq!(early.a, late.a);
        assert_eq!(early.b, late.b);
        // Boundary conditions hold to machine precision an hour in.
        assert!((late.position_at(7000.0) - 0.0).abs() < 1e-12);
        assert!((late.speed_at(7000.0) - 10.0).abs() < 1e-12);
        assert!((late.position_at(7010.0) - 150.0).abs() < 1e-9);
        assert!(late.control_at(7010.0).abs() < 1e-12);
    }

    #[test]
    fn control_fades_to_zero_at_arrival() {
        for (t0, tm, v0, dp) in [(3.0, 17.0, 22.0, 150.0), (100.0, 131.0, 4.0, 150.0)] {
            let c = solve_trajectory(t0, tm, 200.0, v0, 200.0 + dp).unwrap();
            assert!(c.control_at(tm).abs() < 1e-10);
            assert!((c.position_at(tm) - (200.0 + dp)).abs() < 1e-8);
        }
    }

    #[test]
    fn terminal_speed_matches_closed_form() {
        let c = solve_trajectory(2.0, 14.0, 50.0, 18.0, 200.0).unwrap();
        let expect = 1.5 * 150.0 / 12.0 - 0.5 * 18.0;
        assert!((c.terminal_speed() - expect).abs() < 1e-10);
    }

    #[test]
    fn effort_matches_numeric_quadrature() {
        let c = solve_trajectory(0.0, 13.0, 0.0, 19.0, 150.0).unwrap();
        // Simpson is exact for the quadratic u²; any n works.
        let n = 64;
        let h = c.horizon_s / n as f64;
        let u2 = |t: f64| c.control_at(t) * c.control_at(t);
        let mut sum = u2(0.0) + u2(c.horizon_s);
        for k in 1..n {
            sum += u2(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let numeric = 0.5 * sum * h / 3.0;
        assert!((c.effort() - numeric).abs() < 1e-10);
    }

    #[test]
    fn delayed_arrivals_never_exceed_the_entry_speed() {
        // Whenever the required mean pace Δp/T is at or below v0 (every
        // queued schedule), the planned speed profile peaks at v0.
        for v0 in [5.0_f64, 12.0, 25.0, 40.0] {
            for t in [5.0_f64, 10.0, 30.0, 60.0] {
                let dp = (v0 * t).min(150.0);
                let c = solve_trajectory(0.0, t, 0.0, v0, dp).unwrap();
                let mut tau = 0.0;
                while tau <= t {
                    assert!(c.speed_at(tau) <= v0 + 1e-9, "v0={v0} t={t} tau={tau}");
                    tau += t / 200.0;
                }
            }
        }
    }

    #[test]
    fn degenerate_horizons_are_rejected() {
        assert!(solve_trajectory(5.0, 5.0, 0.0, 10.0, 100.0).is_err());
        assert!(solve_trajectory(5.0, 4.0, 0.0, 10.0, 100.0).is_err());
        assert!(solve_trajectory(0.0, f64::NAN, 0.0, 10.0, 100.0).is_err());
    }

    #[test]
    fn horizon_feasibility_window() {
        let z = zone(150.0, 30.0, 2.0, 40.0);
        // 100 m: reachable between 2.5 s (flat out) and 50 s (crawl).
        assert!(horizon_feasible(100.0, 10.0, &z));
        assert!(!horizon_feasible(100.0, 2.0, &z));
        assert!(!horizon_feasible(100.0, 60.0, &z));
        assert!(!horizon_feasible(-5.0, 10.0, &z));
    }

    #[test]
    fn deliverable_window_narrows_with_entry_speed() {
        let b = ControlBounds::default();
        let z = zone(150.0, 30.0, 2.0, 40.0);
        // Entering at the ceiling: earliest is flat-out 150/40 = 3.75 s, and
        // full braking (−3) cannot reach the floor within 150 m, so latest
        // solves 150 = 40t − 1.5t² → ≈ 4.514 s. Nowhere near 150/2 = 75.
        let (e, l) = control_feasible_window(150.0, 40.0, &z, &b);
        assert!((e - 3.75).abs() < 1e-12, "e = {e}");
        assert!((l - 4.5142).abs() < 1e-3, "l = {l}");

        // Entering slow: accelerating at 1.5 the whole way gives ≈ 8.081 s;
        // braking to the floor then crawling would cover 150 m in 65.8 s, but
        // a cubic stretched that far would end in reverse — the terminal
        // floor binds first: 1.5·150/(2 + 6.25) ≈ 27.27 s.
        let (e, l) = control_feasible_window(150.0, 12.5, &z, &b);
        assert!((e - 8.0814).abs() < 1e-3, "e = {e}");
        assert!((l - 225.0 / 8.25).abs() < 1e-9, "l = {l}");
    }

    #[test]
    fn deliverable_window_handles_out_of_envelope_entries() {
        let b = ControlBounds::default();
        // A reduced-limit zone entered well above its ceiling: both edges are
        // the same full-braking profile because 40 → 18.6 needs 209 m > 150.
        let z = zone(150.0, 10.0, 2.0, 18.6);
        let (e, l) = control_feasible_window(150.0, 40.0, &z, &b);
        assert!((e - l).abs() < 1e-12);
        assert!((e - 4.5142).abs() < 1e-3, "e = {e}");

        // Below the floor: slowest profile climbs to 2 m/s and holds.
        let z = zone(100.0, 10.0, 2.0, 40.0);
        let (e, l) = control_feasible_window(100.0, 0.5, &z, &b);
        // (2−0.5)/1.5 + (100 − 1.25)/2 = 1 + 49.375
        assert!((l - 50.375).abs() < 1e-9, "l = {l}");
        assert!(e > 5.0 && e < l);
    }

    #[test]
    fn deliverable_window_sits_inside_the_band_for_envelope_entries() {
        let b = ControlBounds::default();
        let z = zone(150.0, 30.0, 2.0, 40.0);
        for v0 in [2.0, 5.0, 12.5, 20.0, 33.0, 40.0] {
            let (e, l) = control_feasible_window(150.0, v0, &z, &b);
            assert!(e >= 150.0 / 40.0 - 1e-9);
            assert!(l <= 150.0 / 2.0 + 1e-9);
            assert!(e <= l);
        }
    }

    #[test]
    fn queued_release_recovers_toward_the_ceiling() {
        let b = ControlBounds::default();
        // Released at 2 m/s with 150 m to go and a 25 m/s ceiling: the ramp
        // would need 207 m, so the whole zone is spent accelerating.
        // 2t + 0.75t² = 150 ⟹ t ≈ 12.872 s, arriving at 2 + 1.5t ≈ 21.31.
        let (t, v) = earliest_arrival_with_ceiling(150.0, 2.0, 25.0, &b);
        assert!((t - 12.8715).abs() < 1e-3, "t = {t}");
        assert!((v - (2.0 + 1.5 * t)).abs() < 1e-9);
        // Crawling at 2 m/s the whole way would have claimed 75 s.
        assert!(t < 15.0);

        // A lower ceiling is reached mid-zone and held: ramp 2→10 takes
        // 5.333 s over 32 m, then 118 m at 10 m/s.
        let (t, v) = earliest_arrival_with_ceiling(150.0, 2.0, 10.0, &b);
        assert!((t - (8.0 / 1.5 + 118.0 / 10.0)).abs() < 1e-9, "t = {t}");
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn hot_release_sheds_speed_down_to_the_ceiling() {
        let b = ControlBounds::default();
        // 30 m/s against a 20 m/s ceiling: brake at 3 for 10/3 s (83.3 m),
        // then hold 20 for the remaining 66.67 m.
        let (t, v) = earliest_arrival_with_ceiling(150.0, 30.0, 20.0, &b);
        assert!((t - (10.0 / 3.0 + (150.0 - 500.0 / 6.0) / 20.0)).abs() < 1e-9);
        assert!((v - 20.0).abs() < 1e-12);
        // Cruising exactly at the ceiling degenerates to dist/v.
        let (t, v) = earliest_arrival_with_ceiling(150.0, 20.0, 20.0, &b);
        assert!((t - 7.5).abs() < 1e-12);
        assert!((v - 20.0).abs() < 1e-12);
    }

    #[test]
    fn guard_idles_without_interference() {
        let gp = GuardParams::default();
        let b = ControlBounds::default();
        assert_eq!(merge_entry_guard(50.0, 10.0, 5.0, &[], &gp, &b), None);
        // Blocker clears at 2 s; I arrive at 5 s — no overlap.
        assert_eq!(merge_entry_guard(50.0, 10.0, 5.0, &[2.0], &gp, &b), None);
        // Out of range or already inside: not the guard's problem.
        assert_eq!(merge_entry_guard(130.0, 10.0, 13.0, &[99.0], &gp, &b), None);
        assert_eq!(merge_entry_guard(-1.0, 10.0, 0.0, &[99.0], &gp, &b), None);
    }

    #[test]
    fn guard_paces_behind_clearing_traffic() {
        let gp = GuardParams::default();
        let b = ControlBounds::default();
        // I'd arrive at 5 s but the zone clears at 6 (+0.3 margin):
        // target 50/6.3 ≈ 7.94 m/s, command 0.8·(7.94 − 10) ≈ −1.65.
        let u = merge_entry_guard(50.0, 10.0, 5.0, &[6.0], &gp, &b).unwrap();
        assert!((u + 0.8 * (10.0 - 50.0 / 6.3)).abs() < 1e-9);
        assert!(u < 0.0);
    }

    #[test]
    fn guard_stops_at_the_line_for_a_parked_blocker() {
        let gp = GuardParams::default();
        let b = ControlBounds::default();
        // Zone blocked for 30 s: paced speed 20/30.3 < 1 m/s, so stop at
        // the line 2 m short: u = −5²/(2·18) ≈ −0.694.
        let u = merge_entry_guard(20.0, 5.0, 4.0, &[30.0], &gp, &b).unwrap();
        assert!((u + 25.0 / 36.0).abs() < 1e-9);
    }

    #[test]
    fn guard_never_accelerates() {
        let gp = GuardParams::default();
        let b = ControlBounds::default();
        for dist in [5.0, 20.0, 60.0, 119.0] {
            for v in [0.5, 2.0, 10.0, 25.0] {
                for clear in [0.5, 3.0, 10.0, 40.0] {
                    let eta = dist / v;
                    if let Some(u) = merge_entry_guard(dist, v, eta, &[clear], &gp, &b) {
                        assert!(u <= 0.0 && u >= b.u_min - 1e-12);
                    }
                }
            }
        }
    }
}
