//! The penetration-rate study: every (volume, penetration, seed) cell is an
//! independent run, compared against the all-human baseline that shares its
//! volume and seed so the comparison rides on common random numbers.
//!
//! Cells may execute on as many threads as rayon provides; results are
//! assembled in a canonical (volume, penetration, seed) order, so everything
//! downstream — aggregation, CSV bytes, plots — is independent of the
//! parallelism.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::SimConfig;
use crate::demand::VolumePreset;
use crate::engine::{run_case, EngineError, RunResult, RunSpec};
use crate::metrics::{mean, percent_change, sample_sd, spearman};
use crate::VehicleClass;

/// Which cells a sweep visits.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    penetrations_pct: Vec<f64>,
    volumes: Vec<VolumePreset>,
    seeds: u32,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one penetration rate")]
    NoPenetrations,
    #[error("penetration {0}% is outside 0..=100")]
    PenetrationRange(f64),
    #[error("sweep needs the 0% baseline to define improvements")]
    MissingBaseline,
    #[error("sweep needs at least one volume preset")]
    NoVolumes,
    #[error("sweep needs at least one seed")]
    NoSeeds,
    #[error("cell {run_id} failed: {source}")]
    Cell {
        run_id: String,
        #[source]
        source: EngineError,
    },
}

impl SweepPlan {
    pub fn new(
        penetrations_pct: Vec<f64>,
        volumes: Vec<VolumePreset>,
        seeds: u32,
    ) -> Result<Self, SweepError> {
        if penetrations_pct.is_empty() {
            return Err(SweepError::NoPenetrations);
        }
        if let Some(&p) = penetrations_pct.iter().find(|p| !(0.0..=100.0).contains(*p)) {
            return Err(SweepError::PenetrationRange(p));
        }
        if !penetrations_pct.iter().any(|&p| p == 0.0) {
            return Err(SweepError::MissingBaseline);
        }
        if volumes.is_empty() {
            return Err(SweepError::NoVolumes);
        }
        if seeds == 0 {
            return Err(SweepError::NoSeeds);
        }
        let mut penetrations_pct = penetrations_pct;
        penetrations_pct.sort_by(|a, b| a.total_cmp(b));
        penetrations_pct.dedup();
        let mut volumes = volumes;
        volumes.sort_by_key(|v| v.index());
        volumes.dedup();
        Ok(SweepPlan { penetrations_pct, volumes, seeds })
    }

    /// The study grid: 0–100% in 10% steps, all volumes, `seeds` replicates.
    pub fn study(seeds: u32) -> Self {
        let pens = (0..=10).map(|k| 10.0 * k as f64).collect();
        SweepPlan::new(pens, VolumePreset::ALL.to_vec(), seeds)
            .expect("study grid is a valid plan")
    }

    pub fn penetrations_pct(&self) -> &[f64] {
        &self.penetrations_pct
    }

    pub fn volumes(&self) -> &[VolumePreset] {
        &self.volumes
    }

    pub fn seeds(&self) -> u32 {
        self.seeds
    }

    /// Cells in canonical (volume, penetration, seed) order.
    pub fn cells(&self) -> Vec<RunSpec> {
        let mut out = Vec::with_capacity(
            self.volumes.len() * self.penetrations_pct.len() * self.seeds as usize,
        );
        for &volume in &self.volumes {
            for &penetration_pct in &self.penetrations_pct {
                for seed_index in 0..self.seeds {
                    out.push(RunSpec { volume, penetration_pct, seed_index });
                }
            }
        }
        out
    }
}

/// One row of the run summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: String,
    pub volume: VolumePreset,
    pub penetration_pct: f64,
    pub seed: u32,
    pub fuel_economy_m_per_ml: Option<f64>,
    /// Percent change of fuel economy against the same-volume, same-seed
    /// baseline; positive is better. Zero for the baseline itself.
    pub fe_improvement_pct: Option<f64>,
    pub mean_travel_time_s: Option<f64>,
    /// Percent change of mean travel time against the baseline; negative
    /// means trips got faster.
    pub tt_variation_pct: Option<f64>,
    pub mean_speed_mps: Option<f64>,
    pub rear_end_events: u64,
    pub lateral_events: u64,
}

/// Mean ± sd of fuel-economy improvement across seeds for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PenetrationStat {
    pub volume: VolumePreset,
    pub penetration_pct: f64,
    pub fe_improvement_mean_pct: Option<f64>,
    pub fe_improvement_sd: Option<f64>,
}

/// Same aggregation restricted to one vehicle class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStat {
    pub volume: VolumePreset,
    pub penetration_pct: f64,
    pub class: VehicleClass,
    pub fe_improvement_mean_pct: Option<f64>,
    pub fe_improvement_sd: Option<f64>,
}

/// Rank correlation between penetration and mean fuel-economy improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeTrend {
    pub volume: VolumePreset,
    pub spearman_fe: Option<f64>,
}

/// Everything a sweep produces, in canonical order.
pub struct SweepOutcome {
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub penetration_stats: Vec<PenetrationStat>,
    pub class_stats: Vec<ClassStat>,
    pub trends: Vec<VolumeTrend>,
}

/// Distance per fuel over the completed trips of one class only.
fn class_economy(res: &RunResult, class: VehicleClass) -> Option<f64> {
    let (mut dist, mut fuel) = (0.0, 0.0);
    for r in res.vehicles.iter().filter(|r| !r.censored && r.class == class) {
        dist += r.distance_m;
        fuel += r.fuel_ml;
    }
    crate::metrics::fuel_economy(dist, fuel)
}

pub fn run_sweep(cfg: &SimConfig, plan: &SweepPlan) -> Result<SweepOutcome, SweepError> {
    let cells = plan.cells();
    let runs: Vec<RunResult> = cells
        .par_iter()
        .map(|&spec| {
            run_case(cfg, spec)
                .map_err(|source| SweepError::Cell { run_id: spec.run_id(), source })
        })
        .collect::<Result<_, _>>()?;

    // Baseline lookup by (volume, seed); the plan guarantees the 0% rows.
    let mut baseline: HashMap<(u64, u32), &RunResult> = HashMap::new();
    for r in runs.iter().filter(|r| r.spec.penetration_pct == 0.0) {
        baseline.insert((r.spec.volume.index(), r.spec.seed_index), r);
    }

    let mut summary = Vec::with_capacity(runs.len());
    for r in &runs {
        let base = baseline
            .get(&(r.spec.volume.index(), r.spec.seed_index))
            .ok_or(SweepError::MissingBaseline)?;
        let fe = r.fuel_economy();
        let fe_improvement_pct = match (fe, base.fuel_economy()) {
            (Some(c), Some(b)) => Some(percent_change(c, b)),
            _ => None,
        };
        let tt = r.mean_travel_time();
        let tt_variation_pct = match (tt, base.mean_travel_time()) {
            (Some(c), Some(b)) => Some(percent_change(c, b)),
            _ => None,
        };
        summary.push(SummaryRow {
            run_id: r.spec.run_id(),
            volume: r.spec.volume,
            penetration_pct: r.spec.penetration_pct,
            seed: r.spec.seed_index,
            fuel_economy_m_per_ml: fe,
            fe_improvement_pct,
            mean_travel_time_s: tt,
            tt_variation_pct,
            mean_speed_mps: r.mean_speed(),
            rear_end_events: r.rear_end_events,
            lateral_events: r.lateral_events,
        });
    }

    let mut penetration_stats = Vec::new();
    let mut class_stats = Vec::new();
    let mut trends = Vec::new();
    for &volume in plan.volumes() {
        let mut pens_with_means: Vec<(f64, f64)> = Vec::new();
        for &pen in plan.penetrations_pct() {
            let imps: Vec<f64> = summary
                .iter()
                .filter(|s| s.volume == volume && s.penetration_pct == pen)
                .filter_map(|s| s.fe_improvement_pct)
                .collect();
            let m = mean(&imps);
            penetration_stats.push(PenetrationStat {
                volume,
                penetration_pct: pen,
                fe_improvement_mean_pct: m,
                fe_improvement_sd: sample_sd(&imps),
            });
            if let Some(m) = m {
                pens_with_means.push((pen, m));
            }
            for class in [VehicleClass::Cav, VehicleClass::Hdv] {
                let imps: Vec<f64> = runs
                    .iter()
                    .filter(|r| {
                        r.spec.volume == volume && r.spec.penetration_pct == pen
                    })
                    .filter_map(|r| {
                        let base = baseline[&(volume.index(), r.spec.seed_index)];
                        match (class_economy(r, class), base.fuel_economy()) {
                            (Some(c), Some(b)) => Some(percent_change(c, b)),
                            _ => None,
                        }
                    })
                    .collect();
                if imps.is_empty() {
                    continue;
                }
                class_stats.push(ClassStat {
                    volume,
                    penetration_pct: pen,
                    class,
                    fe_improvement_mean_pct: mean(&imps),
                    fe_improvement_sd: sample_sd(&imps),
                });
            }
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pens_with_means.into_iter().unzip();
        trends.push(VolumeTrend { volume, spearman_fe: spearman(&xs, &ys) });
    }

    Ok(SweepOutcome { runs, summary, penetration_stats, class_stats, trends })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.run.horizon_s = 60.0;
        cfg.run.drain_factor = 3.0;
        cfg
    }

    #[test]
    fn plan_rejects_degenerate_grids() {
        assert!(matches!(
            SweepPlan::new(vec![], vec![VolumePreset::High], 1),
            Err(SweepError::NoPenetrations)
        ));
        assert!(matches!(
            SweepPlan::new(vec![0.0, 120.0], vec![VolumePreset::High], 1),
            Err(SweepError::PenetrationRange(_))
        ));
        assert!(matches!(
            SweepPlan::new(vec![50.0, 100.0], vec![VolumePreset::High], 1),
            Err(SweepError::MissingBaseline)
        ));
        assert!(matches!(
            SweepPlan::new(vec![0.0], vec![], 1),
            Err(SweepError::NoVolumes)
        ));
        assert!(matches!(
            SweepPlan::new(vec![0.0], vec![VolumePreset::High], 0),
            Err(SweepError::NoSeeds)
        ));
    }

    #[test]
    fn cells_enumerate_in_canonical_order() {
        let plan = SweepPlan::new(
            vec![50.0, 0.0, 50.0],
            vec![VolumePreset::Low, VolumePreset::High],
            2,
        )
        .unwrap();
        let ids: Vec<String> = plan.cells().iter().map(|c| c.run_id()).collect();
        // volumes reordered high-first, penetrations sorted and deduped
        assert_eq!(
            ids,
            vec![
                "high-p000-s00",
                "high-p000-s01",
                "high-p050-s00",
                "high-p050-s01",
                "low-p000-s00",
                "low-p000-s01",
                "low-p050-s00",
                "low-p050-s01",
            ]
        );
        assert_eq!(SweepPlan::study(5).cells().len(), 165); // 11 × 3 × 5
    }

    #[test]
    fn minimal_sweep_defines_improvement_for_the_automated_row() {
        let cfg = tiny_cfg();
        let plan =
            SweepPlan::new(vec![0.0, 100.0], vec![VolumePreset::Low], 1).unwrap();
        let out = run_sweep(&cfg, &plan).unwrap();
        assert_eq!(out.summary.len(), 2);
        let base = &out.summary[0];
        let opt = &out.summary[1];
        assert_eq!(base.penetration_pct, 0.0);
        assert_eq!(base.fe_improvement_pct, Some(0.0)); // self-comparison
        assert_eq!(base.tt_variation_pct, Some(0.0));
        assert_eq!(opt.penetration_pct, 100.0);
        assert!(opt.fe_improvement_pct.is_some());
        // Stats exist for each grid point, classes only where present.
        assert_eq!(out.penetration_stats.len(), 2);
        assert!(out
            .class_stats
            .iter()
            .all(|c| !(c.penetration_pct == 0.0 && c.class == VehicleClass::Cav)));
        assert!(out
            .class_stats
            .iter()
            .all(|c| !(c.penetration_pct == 100.0 && c.class == VehicleClass::Hdv)));
        assert_eq!(out.trends.len(), 1);
    }

    #[test]
    fn parallel_execution_is_reproducible() {
        let cfg = tiny_cfg();
        let plan = SweepPlan::new(
            vec![0.0, 50.0, 100.0],
            vec![VolumePreset::Low, VolumePreset::Medium],
            2,
        )
        .unwrap();
        let a = run_sweep(&cfg, &plan).unwrap();
        let b = run_sweep(&cfg, &plan).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.penetration_stats, b.penetration_stats);
        assert_eq!(a.class_stats, b.class_stats);
        assert_eq!(a.trends, b.trends);
    }

    #[test]
    fn improvements_are_keyed_to_the_matching_baseline_seed() {
        let cfg = tiny_cfg();
        let plan =
            SweepPlan::new(vec![0.0, 100.0], vec![VolumePreset::Low], 2).unwrap();
        let out = run_sweep(&cfg, &plan).unwrap();
        // Recompute one improvement by hand from the stored runs.
        let opt = out
            .runs
            .iter()
            .find(|r| r.spec.penetration_pct == 100.0 && r.spec.seed_index == 1)
            .unwrap();
        let base = out
            .runs
            .iter()
            .find(|r| r.spec.penetration_pct == 0.0 && r.spec.seed_index == 1)
            .unwrap();
        let expect =
            percent_change(opt.fuel_economy().unwrap(), base.fuel_economy().unwrap());
        let row = out
            .summary
            .iter()
            .find(|s| s.penetration_pct == 100.0 && s.seed == 1)
            .unwrap();
        assert_eq!(row.fe_improvement_pct, Some(expect));
    }
}
