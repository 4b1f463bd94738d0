//! Double-integrator vehicle kinematics.
//!
//! Every vehicle follows p' = v, v' = u. Steps integrate a piecewise-constant
//! control exactly (no Euler drift): p advances by `v*dt + u*dt^2/2`. When a
//! speed bound would be crossed mid-step the step is split analytically at the
//! crossing instant and the remainder runs at the bound.

use serde::{Deserialize, Serialize};

/// Kinematic state of one vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Arc-length position along the vehicle's route, m.
    pub p: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Acceleration commanded over the step that produced this state, m/s^2.
    pub u: f64,
    /// Simulation time, s.
    pub t: f64,
}

impl VehicleState {
    pub fn new(p: f64, v: f64, t: f64) -> Self {
        VehicleState { p, v, u: 0.0, t }
    }
}

/// Control and speed envelope enforced on a vehicle at one location.
///
/// `u_min`/`u_max` are global actuation limits. `v_min`/`v_max` are the speed
/// bounds that govern at the vehicle's current position; the run-time floor is
/// 0 (vehicles may stop), zone minimum speeds only constrain planning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        ControlBounds { u_min: -3.0, u_max: 1.5, v_min: 0.0, v_max: 40.0 }
    }
}

impl ControlBounds {
    /// Same actuation limits with a different governing speed range.
    pub fn with_speed_range(self, v_min: f64, v_max: f64) -> Self {
        ControlBounds { v_min, v_max, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.u_min < 0.0 && self.u_max > 0.0) {
            return Err(format!("control bounds must straddle zero, got [{}, {}]", self.u_min, self.u_max));
        }
        if !(self.v_min >= 0.0 && self.v_min < self.v_max) {
            return Err(format!("speed bounds must satisfy 0 <= v_min < v_max, got [{}, {}]", self.v_min, self.v_max));
        }
        Ok(())
    }
}

/// Restricts a requested acceleration to the actuation range and, when the
/// unclamped value would push the end-of-step speed outside `[v_min, v_max]`,
/// reduces it so the step lands exactly on the bound.
pub fn clamp_control(u_requested: f64, state: &VehicleState, bounds: &ControlBounds, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    let mut u = u_requested.clamp(bounds.u_min, bounds.u_max);
    let v_end = state.v + u * dt;
    if v_end > bounds.v_max {
        u = (bounds.v_max - state.v) / dt;
    } else if v_end < bounds.v_min {
        u = (bounds.v_min - state.v) / dt;
    }
    u.clamp(bounds.u_min, bounds.u_max)
}

/// Advances a state by `dt` under constant commanded acceleration `u`.
///
/// Exact integration: within a regime, p' = p + v dt + u dt^2 / 2. If the
/// speed would cross `v_max` (or `v_min`) strictly inside the step, the step
/// splits at the crossing time and the remainder integrates at constant
/// bounded speed. The returned state records the commanded `u`.
pub fn step_state(state: &VehicleState, u: f64, dt: f64, bounds: &ControlBounds) -> VehicleState {
    debug_assert!(dt > 0.0);
    let v0 = state.v;
    let v_end = v0 + u * dt;

    let (p_delta, v_new) = if u > 0.0 && v0 < bounds.v_max && v_end > bounds.v_max {
        let t_cross = (bounds.v_max - v0) / u;
        let ramp = v0 * t_cross + 0.5 * u * t_cross * t_cross;
        (ramp + bounds.v_max * (dt - t_cross), bounds.v_max)
    } else if u < 0.0 && v0 > bounds.v_min && v_end < bounds.v_min {
        let t_cross = (bounds.v_min - v0) / u;
        let ramp = v0 * t_cross + 0.5 * u * t_cross * t_cross;
        (ramp + bounds.v_min * (dt - t_cross), bounds.v_min)
    } else if (u > 0.0 && v0 >= bounds.v_max) || (u < 0.0 && v0 <= bounds.v_min) {
        // Already pinned at the bound and pushing outward: hold speed.
        (v0 * dt, v0)
    } else {
        (v0 * dt + 0.5 * u * dt * dt, v_end)
    };

    VehicleState { p: state.p + p_delta, v: v_new, u, t: state.t + dt }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounds() -> ControlBounds {
        ControlBounds::default()
    }

    #[test]
    fn step_accelerating() {
        let s = VehicleState::new(0.0, 10.0, 0.0);
        let next = step_state(&s, 1.0, 0.1, &bounds());
        assert!((next.p - 1.005).abs() < 1e-12);
        assert!((next.v - 10.1).abs() < 1e-12);
        assert!((next.t - 0.1).abs() < 1e-12);
    }

    #[test]
    fn step_coasting() {
        let s = VehicleState::new(5.0, 20.0, 1.0);
        let next = step_state(&s, 0.0, 0.1, &bounds());
        assert!((next.p - 7.0).abs() < 1e-12);
        assert!((next.v - 20.0).abs() < 1e-12);
    }

    #[test]
    fn step_braking() {
        let s = VehicleState::new(0.0, 10.0, 0.0);
        let next = step_state(&s, -3.0, 0.1, &bounds());
        assert!((next.p - 0.985).abs() < 1e-12);
        assert!((next.v - 9.7).abs() < 1e-12);
    }

    #[test]
    fn two_half_steps_equal_one_full_step() {
        let s = VehicleState::new(3.2, 17.3, 2.0);
        let full = step_state(&s, 0.7, 0.1, &bounds());
        let half = step_state(&s, 0.7, 0.05, &bounds());
        let half2 = step_state(&half, 0.7, 0.05, &bounds());
        assert!((full.p - half2.p).abs() < 1e-12);
        assert!((full.v - half2.v).abs() < 1e-12);
    }

    #[test]
    fn split_at_upper_speed_bound() {
        // v reaches 40 after 1/15 s; the remainder of the step coasts at 40.
        let s = VehicleState::new(0.0, 39.9, 0.0);
        let next = step_state(&s, 1.5, 0.1, &bounds());
        let t_cross = 0.1 / 1.5;
        let expect_p = 39.9 * t_cross + 0.5 * 1.5 * t_cross * t_cross + 40.0 * (0.1 - t_cross);
        assert!((next.v - 40.0).abs() < 1e-12);
        assert!((next.p - expect_p).abs() < 1e-12);
    }

    #[test]
    fn split_at_standstill() {
        // Braking through zero: stop 0.05 s into the step and stay stopped.
        let s = VehicleState::new(0.0, 0.15, 0.0);
        let next = step_state(&s, -3.0, 0.1, &bounds());
        assert_eq!(next.v, 0.0);
        let expect_p = 0.15 * 0.05 - 0.5 * 3.0 * 0.05 * 0.05;
        assert!((next.p - expect_p).abs() < 1e-12);
    }

    #[test]
    fn clamp_to_actuation_range() {
        let s = VehicleState::new(0.0, 10.0, 0.0);
        assert_eq!(clamp_control(2.0, &s, &bounds(), 0.1), 1.5);
        assert_eq!(clamp_control(-5.0, &s, &bounds(), 0.1), -3.0);
    }

    #[test]
    fn clamp_blocks_overshoot_at_v_max() {
        let s = VehicleState::new(0.0, 40.0, 0.0);
        assert_eq!(clamp_control(1.0, &s, &bounds(), 0.1), 0.0);
    }

    #[test]
    fn clamp_blocks_undershoot_at_standstill() {
        let s = VehicleState::new(0.0, 0.1, 0.0);
        let u = clamp_control(-3.0, &s, &bounds(), 0.1);
        assert!((u - (-1.0)).abs() < 1e-12);
        assert!((s.v + u * 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn speed_stays_inside_bounds(
            v0 in 0.0f64..40.0,
            controls in proptest::collection::vec(-5.0f64..5.0, 1..200),
        ) {
            let b = bounds();
            let mut s = VehicleState::new(0.0, v0, 0.0);
            for raw in controls {
                let u = clamp_control(raw, &s, &b, 0.1);
                s = step_state(&s, u, 0.1, &b);
                prop_assert!(s.v >= b.v_min - 1e-9 && s.v <= b.v_max + 1e-9);
            }
        }

        #[test]
        fn position_never_decreases_for_nonnegative_speed(
            v0 in 0.0f64..40.0,
            controls in proptest::collection::vec(-5.0f64..5.0, 1..100),
        ) {
            let b = bounds();
            let mut s = VehicleState::new(0.0, v0, 0.0);
            let mut last_p = s.p;
            for raw in controls {
                let u = clamp_control(raw, &s, &b, 0.1);
                s = step_state(&s, u, 0.1, &b);
                prop_assert!(s.p >= last_p - 1e-12);
                last_p = s.p;
            }
        }
    }
}
