//! Measurement primitives: spatial speed profiles, safety-event counters,
//! and the small statistics used by the sweep aggregation.

use std::collections::HashSet;

use crate::coordination::HeadwayParams;
use crate::VehicleClass;

/// Which vehicles a profile or aggregate looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassFilter {
    All,
    CavOnly,
    HdvOnly,
}

impl ClassFilter {
    pub const ALL_FILTERS: [ClassFilter; 3] =
        [ClassFilter::All, ClassFilter::CavOnly, ClassFilter::HdvOnly];

    pub fn label(self) -> &'static str {
        match self {
            ClassFilter::All => "all",
            ClassFilter::CavOnly => "cav",
            ClassFilter::HdvOnly => "hdv",
        }
    }

    pub fn accepts(self, class: VehicleClass) -> bool {
        match self {
            ClassFilter::All => true,
            ClassFilter::CavOnly => class == VehicleClass::Cav,
            ClassFilter::HdvOnly => class == VehicleClass::Hdv,
        }
    }
}

/// Time-weighted mean speed per position bin along a lane: every sample adds
/// the vehicle's current speed to the bin under it, so a bin's mean is the
/// average speed observed at that location over the whole run.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    bin_m: f64,
    sums: [Vec<f64>; 3],
    counts: [Vec<u64>; 3],
}

impl SpeedProfile {
    pub fn new(length_m: f64, bin_m: f64) -> Self {
        assert!(bin_m > 0.0 && length_m > 0.0);
        let bins = (length_m / bin_m).ceil() as usize;
        SpeedProfile {
            bin_m,
            sums: [vec![0.0; bins], vec![0.0; bins], vec![0.0; bins]],
            counts: [vec![0; bins], vec![0; bins], vec![0; bins]],
        }
    }

    pub fn bin_m(&self) -> f64 {
        self.bin_m
    }

    pub fn bin_count(&self) -> usize {
        self.counts[0].len()
    }

    pub fn record(&mut self, pos_m: f64, speed_mps: f64, class: VehicleClass) {
        if pos_m < 0.0 {
            return;
        }
        let idx = (pos_m / self.bin_m) as usize;
        if idx >= self.bin_count() {
            return;
        }
        for (f, filter) in ClassFilter::ALL_FILTERS.iter().enumerate() {
            if filter.accepts(class) {
                self.sums[f][idx] += speed_mps;
                self.counts[f][idx] += 1;
            }
        }
    }

    /// Mean observed speed in a bin, or `None` when nothing drove there.
    pub fn mean_speed(&self, bin: usize, filter: ClassFilter) -> Option<f64> {
        let f = ClassFilter::ALL_FILTERS.iter().position(|x| *x == filter).unwrap();
        let n = self.counts[f][bin];
        if n == 0 {
            None
        } else {
            Some(self.sums[f][bin] / n as f64)
        }
    }

    pub fn bin_start_m(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_m
    }
}

/// Counts onsets of a per-pair condition: a pair entering the violating state
/// counts one event and cannot count again until it has left it (or the pair
/// stops being observed, e.g. the vehicles are no longer adjacent).
#[derive(Debug, Default)]
pub struct OnsetCounter {
    active: HashSet<(u32, u32)>,
    seen: HashSet<(u32, u32)>,
    events: u64,
}

impl OnsetCounter {
    pub fn new() -> Self {
        OnsetCounter::default()
    }

    /// Call once per step before observing pairs.
    pub fn begin_step(&mut self) {
        self.seen.clear();
    }

    /// Reports one observed pair. Returns true when this observation is a
    /// fresh onset.
    pub fn observe(&mut self, key: (u32, u32), violating: bool) -> bool {
        self.seen.insert(key);
        if violating {
            if self.active.insert(key) {
                self.events += 1;
                return true;
            }
            false
        } else {
            self.active.remove(&key);
            false
        }
    }

    /// Call once per step after observing pairs: pairs that vanished from
    /// observation are closed out so a later recurrence counts again.
    pub fn end_step(&mut self) {
        let seen = &self.seen;
        self.active.retain(|k| seen.contains(k));
    }

    pub fn events(&self) -> u64 {
        self.events
    }
}

/// Severe tailgating predicate: spacing below half the safety headway.
pub fn severe_rear_end(spacing_m: f64, follower_speed_mps: f64, headway: &HeadwayParams) -> bool {
    spacing_m < 0.5 * headway.gap(follower_speed_mps)
}

// ---------------------------------------------------------------------------
// Small statistics.
// ---------------------------------------------------------------------------

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation (n − 1 denominator); `None` below two samples.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Percentage change of `value` relative to `base`.
pub fn percent_change(value: f64, base: f64) -> f64 {
    (value - base) / base * 100.0
}

/// Distance per fuel: m/mL over whatever population the sums cover.
pub fn fuel_economy(total_distance_m: f64, total_fuel_ml: f64) -> Option<f64> {
    if total_fuel_ml > 0.0 {
        Some(total_distance_m / total_fuel_ml)
    } else {
        None
    }
}

fn ranks_with_ties(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Average rank over the tie group, 1-based.
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or lengths differ / are too short.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks_with_ties(xs);
    let ry = ranks_with_ties(ys);
    let mx = mean(&rx)?;
    let my = mean(&ry)?;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_bins_and_filters() {
        let mut p = SpeedProfile::new(1200.0, 10.0);
        assert_eq!(p.bin_count(), 120);
        p.record(105.0, 20.0, VehicleClass::Cav);
        p.record(108.0, 10.0, VehicleClass::Hdv);
        p.record(108.0, 14.0, VehicleClass::Hdv);
        assert_eq!(p.mean_speed(10, ClassFilter::All), Some(44.0 / 3.0));
        assert_eq!(p.mean_speed(10, ClassFilter::CavOnly), Some(20.0));
        assert_eq!(p.mean_speed(10, ClassFilter::HdvOnly), Some(12.0));
        assert_eq!(p.mean_speed(11, ClassFilter::All), None);
        assert_eq!(p.bin_start_m(10), 100.0);
    }

    #[test]
    fn profile_ignores_positions_off_the_lane() {
        let mut p = SpeedProfile::new(100.0, 10.0);
        p.record(-1.0, 5.0, VehicleClass::Hdv);
        p.record(150.0, 5.0, VehicleClass::Hdv);
        assert!((0..p.bin_count()).all(|b| p.mean_speed(b, ClassFilter::All).is_none()));
    }

    #[test]
    fn onset_counts_once_per_excursion() {
        let mut c = OnsetCounter::new();
        let key = (1, 2);
        for violating in [false, true, true, true, false, true] {
            c.begin_step();
            c.observe(key, violating);
            c.end_step();
        }
        assert_eq!(c.events(), 2);
    }

    #[test]
    fn onset_closes_pairs_that_stop_being_observed() {
        let mut c = OnsetCounter::new();
        c.begin_step();
        c.observe((1, 2), true);
        c.end_step();
        // The pair separates for a step (not observed at all)…
        c.begin_step();
        c.end_step();
        // …then violates again: that is a new event.
        c.begin_step();
        c.observe((1, 2), true);
        c.end_step();
        assert_eq!(c.events(), 2);
    }

    #[test]
    fn distinct_pairs_count_independently() {
        let mut c = OnsetCounter::new();
        c.begin_step();
        c.observe((1, 2), true);
        c.observe((3, 4), true);
        c.observe((5, 6), false);
        c.end_step();
        assert_eq!(c.events(), 2);
    }

    #[test]
    fn severe_rear_end_threshold() {
        let h = HeadwayParams::default();
        // Half headway at 10 m/s is (2 + 12)/2 = 7 m.
        assert!(severe_rear_end(6.9, 10.0, &h));
        assert!(!severe_rear_end(7.0, 10.0, &h));
        assert!(!severe_rear_end(1.0, 0.0, &h)); // half of 2 m standstill
        assert!(severe_rear_end(0.9, 0.0, &h));
    }

    #[test]
    fn mean_and_sd() {
        assert_eq!(mean(&[]), None);
        assert_eq!(mean(&[2.0, 4.0]), Some(3.0));
        assert_eq!(sample_sd(&[1.0]), None);
        // Known: sd of {2, 4, 4, 4, 5, 5, 7, 9} is ~2.138 (sample).
        let sd = sample_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((sd - 2.13809).abs() < 1e-4);
    }

    #[test]
    fn percent_change_signs() {
        assert!((percent_change(110.0, 100.0) - 10.0).abs() < 1e-12);
        assert!((percent_change(90.0, 100.0) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn fuel_economy_guards_zero_fuel() {
        assert_eq!(fuel_economy(100.0, 0.0), None);
        assert_eq!(fuel_economy(1200.0, 400.0), Some(3.0));
    }

    #[test]
    fn spearman_known_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&xs, &[10.0, 20.0, 30.0, 40.0]), Some(1.0));
        assert_eq!(spearman(&xs, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        // One swap: ranks x [1,2,3,4] vs y [2,1,3,4] → ρ = 0.8.
        let r = spearman(&xs, &[10.0, 9.0, 12.0, 15.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_and_degenerate_input() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[5.0, 5.0, 6.0, 7.0]).unwrap();
        assert!(r > 0.9 && r <= 1.0);
        assert_eq!(spearman(&[1.0, 2.0], &[3.0, 3.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn rank_ties_are_averaged() {
        let r = ranks_with_ties(&[10.0, 20.0, 20.0, 30.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
    }
}
