//! Instantaneous fuel-rate model.
//!
//! Consumption in mL/s is a cubic polynomial in speed (cruise term) plus, when
//! the vehicle accelerates, a quadratic-in-speed term scaled by the
//! acceleration. Braking adds nothing, and the rate never falls below the
//! engine idle rate (the cruise polynomial at v = 0).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuelParams {
    /// Cruise polynomial b0..b3, mL/s over speed in m/s.
    pub cruise: [f64; 4],
    /// Acceleration polynomial c0..c2, multiplied by positive acceleration.
    pub accel: [f64; 3],
}

impl Default for FuelParams {
    fn default() -> Self {
        FuelParams {
            cruise: [0.1569, 2.450e-2, -7.415e-4, 5.975e-5],
            accel: [0.07224, 9.681e-2, 1.075e-3],
        }
    }
}

impl FuelParams {
    pub fn idle_rate(&self) -> f64 {
        self.cruise[0]
    }

    /// Fuel rate in mL/s at speed `v` (m/s) and acceleration `u` (m/s²).
    pub fn rate(&self, v: f64, u: f64) -> f64 {
        let b = &self.cruise;
        let cruise = b[0] + v * (b[1] + v * (b[2] + v * b[3]));
        let c = &self.accel;
        let accel = u.max(0.0) * (c[0] + v * (c[1] + v * c[2]));
        (cruise + accel).max(self.idle_rate())
    }
}

/// Running fuel total for one vehicle, accumulated left-Riemann style: each
/// step contributes rate(state at step start) × dt.
#[derive(Debug, Clone, Default)]
pub struct FuelMeter {
    total_ml: f64,
}

impl FuelMeter {
    pub fn new() -> Self {
        FuelMeter::default()
    }

    pub fn accumulate(&mut self, params: &FuelParams, v: f64, u: f64, dt: f64) {
        self.total_ml += params.rate(v, u) * dt;
    }

    pub fn total_ml(&self) -> f64 {
        self.total_ml
    }
}
