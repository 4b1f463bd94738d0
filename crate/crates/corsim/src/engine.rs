//! The simulation engine: spawning, per-step control decisions, exact
//! integration, zone bookkeeping, and safety audits for one run.
//!
//! Each 0.1 s step proceeds in fixed phases: release due arrivals, rebuild
//! spatial caches, audit and sample the current state, compute every
//! vehicle's control from an immutable snapshot, integrate, then process the
//! line crossings the movement produced (control-zone entries, merge entries
//! and exits, network exits). Because controls are computed from the
//! snapshot, vehicle iteration order cannot influence the outcome, and runs
//! are bit-for-bit reproducible.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::coordination::{
    control_feasible_window, earliest_arrival_with_ceiling, effective_pred_speed,
    free_flow_merge_time, merge_entry_guard, merge_time_conflict_lane, merge_time_same_lane,
    solve_trajectory, PlanningZone, TmBand, TrajectoryCoeffs,
};
use crate::corridor::{
    classify_predecessor, ApproachId, CorridorNetwork, LaneId, PredecessorClass, PriorityRule,
    QueuePeer, RouteId, ZoneId, MAIN_ROUTE,
};
use crate::demand::{generate_schedule, DemandError, SpawnRequest, VolumePreset};
use crate::driver::{
    priority_gate, stop_line_decel, wiedemann_accel, ConflictObservation, DriverProfile,
    GateVerdict, LeaderObservation,
};
use crate::dynamics::{clamp_control, step_state, VehicleState};
use crate::fuel::FuelMeter;
use crate::metrics::{severe_rear_end, OnsetCounter, SpeedProfile};
use crate::{VehicleClass, VehicleId};

/// Entry speeds below this fraction of the local cruise pace mark a vehicle
/// impeded by the queue ahead; its schedule floor then assumes recovery
/// toward that pace rather than holding the depressed speed forever.
const IMPEDED_ENTRY_FRACTION: f64 = 0.85;

/// Claim drift tolerated before a coordinated vehicle re-solves its
/// trajectory toward what the live queue currently demands. Small enough to
/// keep queues honest, large enough that settled chains do not churn on the
/// per-step ripple of their neighbours' speed estimates.
const ALIGN_DEADBAND_S: f64 = 0.25;

/// Slack kept between an assigned arrival and the latest one the actuators
/// could deliver. Predecessors slip (entry interlocks shave their crossings,
/// re-plans push them later); a slot butting against the physical limit has
/// no room left to absorb any of it, so such a follower is scheduled ahead
/// of flexible predecessors instead.
const SLOT_DRIFT_SLACK_S: f64 = 0.5;

/// Which sweep cell a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub volume: VolumePreset,
    pub penetration_pct: f64,
    pub seed_index: u32,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!(
            "{}-p{:03}-s{:02}",
            self.volume.label(),
            self.penetration_pct.round() as u32,
            self.seed_index
        )
    }

    /// Fleet-composition label: all-human, mixed, or all-automated.
    pub fn case_label(&self) -> &'static str {
        if self.penetration_pct <= 0.0 {
            "baseline"
        } else if self.penetration_pct >= 100.0 {
            "optimal"
        } else {
            "partial"
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveMode {
    /// Car-following / free driving; the only mode human drivers use.
    Cruise,
    /// Tracking a planned merge-arrival trajectory.
    Coordinated,
    /// Plan suspended for safety; car-following until re-engagement.
    Fallback,
}

/// An automated vehicle's active arrival plan for one zone.
#[derive(Debug, Clone, Copy)]
pub struct MergePlan {
    pub zone: ZoneId,
    /// Control-zone entry time (band reference), s.
    pub t0: f64,
    /// Assigned merge-entry arrival time, s.
    pub tm: f64,
    /// Reachable-arrival band fixed at control-zone entry.
    pub band: TmBand,
    pub coeffs: TrajectoryCoeffs,
    /// Arrival position in route coordinates, m.
    pub merge_entry_m: f64,
}

#[derive(Debug)]
struct Vehicle {
    id: VehicleId,
    class: VehicleClass,
    route: RouteId,
    profile: DriverProfile,
    state: VehicleState,
    prev_p: f64,
    spawn_s: f64,
    fuel: FuelMeter,
    min_gap_m: f64,
    mode: DriveMode,
    plan: Option<MergePlan>,
    reengage_s: f64,
    /// Index into the route's crossings: the first zone not yet fully passed.
    next_crossing: usize,
    /// Member of the coordination queue for `next_crossing`.
    queued: bool,
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    vehicle: VehicleId,
    approach: ApproachId,
    class: VehicleClass,
    #[allow(dead_code)]
    t0: f64,
    tm_planned: f64,
    v_at_tm: f64,
}

/// A vehicle as seen from a zone it has not yet fully passed.
#[derive(Debug, Clone, Copy)]
struct ZoneActor {
    vehicle: VehicleId,
    class: VehicleClass,
    approach: ApproachId,
    dist_to_merge_m: f64,
    dist_to_exit_m: f64,
    speed_mps: f64,
    inside: bool,
    planned_tm: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct QueueUpdate {
    zone: ZoneId,
    tm: f64,
    v_at_tm: f64,
    in_band: bool,
    new_assignment: bool,
    /// Remove this vehicle's queue entry instead of re-timing it: the
    /// vehicle has abandoned coordination for the zone.
    withdraw: bool,
}

/// What a re-plan attempt decided.
enum ReplanOutcome {
    /// Track this plan (fresh trajectory, possibly a fresh arrival).
    Plan(MergePlan, QueueUpdate),
    /// No slot the actuators can deliver honours the queue separation:
    /// abandon coordination for this zone and approach on car-following
    /// with the entry interlock.
    Withdraw(ZoneId),
    /// Keep the current state (no usable queue information).
    Unchanged,
}

#[derive(Debug, Clone, Copy)]
struct Decision {
    u: f64,
    mode: DriveMode,
    plan: Option<MergePlan>,
    reengage_s: f64,
    anomaly: bool,
    queue_update: Option<QueueUpdate>,
}

/// Per-vehicle outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub route_name: String,
    pub spawn_s: f64,
    pub exit_s: Option<f64>,
    pub distance_m: f64,
    pub fuel_ml: f64,
    /// Smallest same-lane spacing ever observed; infinite if never following.
    pub min_gap_m: f64,
    pub censored: bool,
}

impl VehicleRecord {
    pub fn travel_time_s(&self) -> Option<f64> {
        self.exit_s.map(|e| e - self.spawn_s)
    }

    pub fn mean_speed_mps(&self) -> Option<f64> {
        self.travel_time_s().and_then(|tt| if tt > 0.0 { Some(self.distance_m / tt) } else { None })
    }
}

/// Everything one run produces.
#[derive(Debug)]
pub struct RunResult {
    pub spec: RunSpec,
    pub vehicles: Vec<VehicleRecord>,
    /// Main-line speed-by-position profile.
    pub profile: SpeedProfile,
    pub rear_end_events: u64,
    pub lateral_events: u64,
    /// Merge arrival times assigned to automated vehicles (incl. re-plans).
    pub tm_assignments: u64,
    pub tm_assignments_in_band: u64,
    pub anomalies: u64,
    /// Scheduled arrivals that never got on the road before the run ended.
    pub unspawned: u64,
    pub end_time_s: f64,
}

impl RunResult {
    fn completed(&self) -> impl Iterator<Item = &VehicleRecord> {
        self.vehicles.iter().filter(|r| !r.censored)
    }

    /// Fleet fuel economy over completed trips, m/mL.
    pub fn fuel_economy(&self) -> Option<f64> {
        let (mut dist, mut fuel) = (0.0, 0.0);
        for r in self.completed() {
            dist += r.distance_m;
            fuel += r.fuel_ml;
        }
        crate::metrics::fuel_economy(dist, fuel)
    }

    pub fn mean_travel_time(&self) -> Option<f64> {
        let tts: Vec<f64> = self.completed().filter_map(|r| r.travel_time_s()).collect();
        crate::metrics::mean(&tts)
    }

    pub fn mean_speed(&self) -> Option<f64> {
        let vs: Vec<f64> = self.completed().filter_map(|r| r.mean_speed_mps()).collect();
        crate::metrics::mean(&vs)
    }

    pub fn completed_count(&self) -> usize {
        self.completed().count()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

pub struct Engine {
    cfg: SimConfig,
    net: CorridorNetwork,
    spec: RunSpec,
    dt: f64,
    schedule: Vec<SpawnRequest>,
    next_schedule_idx: usize,
    backlogs: Vec<VecDeque<u32>>,
    vehicles: Vec<Vehicle>,
    queues: Vec<Vec<QueueEntry>>,
    /// Current merge-zone occupants per zone, sorted by vehicle id.
    occupants: Vec<Vec<(VehicleId, ApproachId)>>,
    step_index: u64,
    spawned: u64,
    records: Vec<VehicleRecord>,
    profile: SpeedProfile,
    rear_end: OnsetCounter,
    lateral: OnsetCounter,
    tm_assignments: u64,
    tm_assignments_in_band: u64,
    anomalies: u64,
    /// Compute control decisions in reverse vehicle order. Results must not
    /// change (decisions read only the step-start snapshot); integration
    /// tests flip this to prove it.
    pub iterate_reversed: bool,
    // per-step caches
    lane_of: Vec<(LaneId, f64)>,
    lane_index: Vec<Vec<(f64, u32)>>,
    actors: Vec<Vec<ZoneActor>>,
    id_to_idx: HashMap<u32, u32>,
}

impl Engine {
    pub fn new(cfg: &SimConfig, spec: RunSpec) -> Result<Self, EngineError> {
        let schedule = generate_schedule(
            &cfg.demand,
            &cfg.network()?,
            spec.volume,
            spec.penetration_pct,
            cfg.run.master_seed,
            spec.seed_index,
            cfg.run.horizon_s,
        )?;
        Self::with_schedule(cfg, spec, schedule)
    }

    /// Runs a hand-built spawn schedule instead of generated demand; the
    /// vehicle ids are the schedule indices.
    pub fn with_schedule(
        cfg: &SimConfig,
        spec: RunSpec,
        mut schedule: Vec<SpawnRequest>,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        // Arrivals are released in schedule order; ids are schedule indices.
        schedule.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        let net = cfg.network()?;
        let zones = net.zones.len();
        let lanes = net.routes.iter().flat_map(|r| &r.elements).map(|e| e.lane.0).max().unwrap_or(0) + 1;
        let main_len = net.route(MAIN_ROUTE).length_m;
        Ok(Engine {
            cfg: cfg.clone(),
            spec,
            dt: cfg.run.dt_s,
            backlogs: vec![VecDeque::new(); net.routes.len()],
            vehicles: Vec::new(),
            queues: vec![Vec::new(); zones],
            occupants: vec![Vec::new(); zones],
            step_index: 0,
            spawned: 0,
            records: Vec::new(),
            profile: SpeedProfile::new(main_len, 10.0),
            rear_end: OnsetCounter::new(),
            lateral: OnsetCounter::new(),
            tm_assignments: 0,
            tm_assignments_in_band: 0,
            anomalies: 0,
            iterate_reversed: false,
            lane_of: Vec::new(),
            lane_index: vec![Vec::new(); lanes],
            actors: vec![Vec::new(); zones],
            id_to_idx: HashMap::new(),
            schedule,
            next_schedule_idx: 0,
            net,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn is_done(&self) -> bool {
        self.next_schedule_idx >= self.schedule.len()
            && self.backlogs.iter().all(VecDeque::is_empty)
            && self.vehicles.is_empty()
    }

    fn hard_stop_s(&self) -> f64 {
        self.cfg.run.horizon_s * self.cfg.run.drain_factor
    }

    /// Runs to completion (all traffic drained, or the drain cut-off).
    pub fn run(mut self) -> RunResult {
        while !self.is_done() && self.time() < self.hard_stop_s() {
            self.step();
        }
        self.finalize()
    }

    /// Advances the simulation by one step.
    pub fn step(&mut self) {
        self.spawn_due();
        self.rebuild_caches();
        self.audit_and_sample();
        let decisions = self.decide_all();
        self.apply(&decisions);
        self.bookkeeping();
        self.step_index += 1;
    }

    // -- test/diagnostic views -------------------------------------------

    pub fn active_vehicles(&self) -> Vec<(VehicleId, VehicleClass, RouteId, f64, f64, DriveMode)> {
        self.vehicles
            .iter()
            .map(|v| (v.id, v.class, v.route, v.state.p, v.state.v, v.mode))
            .collect()
    }

    /// (vehicle, assigned/estimated merge time) per queue position.
    pub fn zone_queue(&self, zone: ZoneId) -> Vec<(VehicleId, f64)> {
        self.queues[zone.0].iter().map(|e| (e.vehicle, e.tm_planned)).collect()
    }

    // -- phases ------------------------------------------------------------

    fn spawn_due(&mut self) {
        let t = self.time();
        while self.next_schedule_idx < self.schedule.len()
            && self.schedule[self.next_schedule_idx].time_s <= t
        {
            let req = &self.schedule[self.next_schedule_idx];
            self.backlogs[req.route.0].push_back(self.next_schedule_idx as u32);
            self.next_schedule_idx += 1;
        }
        let headway = self.cfg.cav.headway.clone();
        for route_idx in 0..self.backlogs.len() {
            let Some(&req_idx) = self.backlogs[route_idx].front() else { continue };
            let req = self.schedule[req_idx as usize];
            let route = self.net.route(req.route);
            let entry_lane = route.elements[0].lane;
            // Nearest traffic ahead of the spawn point on the entry lane.
            let mut gap = f64::INFINITY;
            let mut lead_v = 0.0;
            for v in &self.vehicles {
                let (lane, lpos) = self.net.lane_position(v.route, v.state.p);
                if lane == entry_lane && lpos >= 0.0 && lpos < gap {
                    gap = lpos;
                    lead_v = v.state.v;
                }
            }
            // Never inject faster than could brake behind the lead vehicle.
            let margin = self.cfg.cav.fallback_brake_margin_mps2;
            let v_safe = (lead_v * lead_v
                + 2.0 * margin * (gap - headway.standstill_m).max(0.0))
            .sqrt();
            // ... nor faster than can comfortably slow to the first control
            // zone's planning ceiling — otherwise it is hot from birth and
            // no schedule can place it.
            let v_entry = req
                .entry_speed_mps
                .min(v_safe)
                .min(route.spawn_speed_limit_mps)
                .min(self.downstream_entry_cap(req.route, 0.0, 0));
            if gap < headway.gap(v_entry) {
                continue; // entry blocked; retry next step, order preserved
            }
            self.backlogs[route_idx].pop_front();
            self.vehicles.push(Vehicle {
                id: VehicleId(req_idx),
                class: req.class,
                route: req.route,
                profile: req.profile,
                state: VehicleState::new(0.0, v_entry, t),
                prev_p: 0.0,
                spawn_s: t,
                fuel: FuelMeter::new(),
                min_gap_m: f64::INFINITY,
                mode: DriveMode::Cruise,
                plan: None,
                reengage_s: 0.0,
                next_crossing: 0,
                queued: false,
            });
            self.spawned += 1;
        }
    }

    fn rebuild_caches(&mut self) {
        let net = &self.net;
        self.lane_of.clear();
        for list in &mut self.lane_index {
            list.clear();
        }
        self.id_to_idx.clear();
        for (i, v) in self.vehicles.iter().enumerate() {
            let (lane, lpos) = net.lane_position(v.route, v.state.p);
            self.lane_of.push((lane, lpos));
            self.lane_index[lane.0].push((lpos, i as u32));
            self.id_to_idx.insert(v.id.0, i as u32);
        }
        for list in &mut self.lane_index {
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        for list in &mut self.actors {
            list.clear();
        }
        for v in &self.vehicles {
            let route = net.route(v.route);
            // From one crossing back: a vehicle whose entry was just logged
            // still occupies the merge zone until its exit line, and must
            // keep blocking the traffic behind it.
            let from = v.next_crossing.saturating_sub(1).min(route.crossings.len());
            for c in &route.crossings[from..] {
                if v.state.p >= c.merge_exit_m {
                    continue;
                }
                let planned_tm = self.queues[c.zone.0]
                    .iter()
                    .find(|e| e.vehicle == v.id)
                    .map(|e| e.tm_planned);
                self.actors[c.zone.0].push(ZoneActor {
                    vehicle: v.id,
                    class: v.class,
                    approach: c.approach,
                    dist_to_merge_m: c.merge_entry_m - v.state.p,
                    dist_to_exit_m: c.merge_exit_m - v.state.p,
                    speed_mps: v.state.v,
                    inside: v.state.p >= c.merge_entry_m,
                    planned_tm,
                });
            }
        }
    }

    fn audit_and_sample(&mut self) {
        let headway = &self.cfg.cav.headway;
        self.rear_end.begin_step();
        self.lateral.begin_step();
        for list in &self.lane_index {
            for w in list.windows(2) {
                let (pos_a, ia) = w[0];
                let (pos_b, ib) = w[1];
                let spacing = pos_b - pos_a;
                let follower = &self.vehicles[ia as usize];
                let key = (follower.id.0, self.vehicles[ib as usize].id.0);
                let severe = severe_rear_end(spacing, follower.state.v, headway);
                if severe && std::env::var_os("CORSIM_DEBUG_RE").is_some() {
                    let leader = &self.vehicles[ib as usize];
                    eprintln!(
                        "RE t={:.1} | v{} r{} p={:.1} v={:.1} {:?} | v{} r{} p={:.1} v={:.1} {:?} | gap={:.2}",
                        self.time(),
                        follower.id.0, follower.route.0, follower.state.p, follower.state.v,
                        follower.mode,
                        leader.id.0, leader.route.0, leader.state.p, leader.state.v, leader.mode,
                        spacing,
                    );
                }
                self.rear_end.observe(key, severe);
            }
        }
        // min-gap bookkeeping (separate pass: needs &mut vehicles)
        for li in 0..self.lane_index.len() {
            for wi in 1..self.lane_index[li].len() {
                let (pos_a, ia) = self.lane_index[li][wi - 1];
                let (pos_b, _) = self.lane_index[li][wi];
                let spacing = pos_b - pos_a;
                let f = &mut self.vehicles[ia as usize];
                if spacing < f.min_gap_m {
                    f.min_gap_m = spacing;
                }
            }
        }
        for z in 0..self.occupants.len() {
            let occ = &self.occupants[z];
            for i in 0..occ.len() {
                for j in (i + 1)..occ.len() {
                    if self.net.conflicting(occ[i].1, occ[j].1) {
                        if std::env::var_os("CORSIM_DEBUG_LAT").is_some() {
                            let a = self.id_to_idx.get(&occ[i].0 .0).copied();
                            let b = self.id_to_idx.get(&occ[j].0 .0).copied();
                            if let (Some(a), Some(b)) = (a, b) {
                                let va = &self.vehicles[a as usize];
                                let vb = &self.vehicles[b as usize];
                                eprintln!(
                                    "LAT t={:.1} z={} | v{} r{} p={:.1} v={:.1} {:?} tm={:?} | v{} r{} p={:.1} v={:.1} {:?} tm={:?}",
                                    self.time(), z,
                                    va.id.0, va.route.0, va.state.p, va.state.v, va.mode,
                                    va.plan.map(|p| p.tm),
                                    vb.id.0, vb.route.0, vb.state.p, vb.state.v, vb.mode,
                                    vb.plan.map(|p| p.tm),
                                );
                            }
                        }
                        self.lateral.observe((occ[i].0 .0, occ[j].0 .0), true);
                    }
                }
            }
        }
        self.rear_end.end_step();
        self.lateral.end_step();
        for v in &self.vehicles {
            if v.route == MAIN_ROUTE {
                self.profile.record(v.state.p, v.state.v, v.class);
            }
        }
    }

    fn decide_all(&self) -> Vec<Decision> {
        let n = self.vehicles.len();
        let order: Vec<usize> =
            if self.iterate_reversed { (0..n).rev().collect() } else { (0..n).collect() };
        let mut decisions: Vec<Option<Decision>> = vec![None; n];
        for i in order {
            decisions[i] = Some(self.decide(i));
        }
        decisions.into_iter().map(|d| d.expect("decision for every vehicle")).collect()
    }

    fn apply(&mut self, decisions: &[Decision]) {
        let t_next = (self.step_index + 1) as f64 * self.dt;
        let mut retimed = vec![false; self.queues.len()];
        for (i, d) in decisions.iter().enumerate() {
            if d.anomaly {
                self.anomalies += 1;
            }
            if let Some(qu) = d.queue_update {
                if qu.withdraw {
                    self.queues[qu.zone.0].retain(|e| e.vehicle != self.vehicles[i].id);
                } else if let Some(e) =
                    self.queues[qu.zone.0].iter_mut().find(|e| e.vehicle == self.vehicles[i].id)
                {
                    if e.tm_planned != qu.tm {
                        retimed[qu.zone.0] = true;
                    }
                    e.tm_planned = qu.tm;
                    e.v_at_tm = qu.v_at_tm;
                }
                if qu.new_assignment {
                    self.tm_assignments += 1;
                    if qu.in_band {
                        self.tm_assignments_in_band += 1;
                    }
                }
            }
            let (lane, lpos) = self.lane_of[i];
            let limit = self.net.lane_speed_limit(lane, lpos);
            let bounds = self.cfg.bounds.with_speed_range(0.0, limit);
            let v = &mut self.vehicles[i];
            v.mode = d.mode;
            v.plan = d.plan;
            v.reengage_s = d.reengage_s;
            let u = clamp_control(d.u, &v.state, &bounds, self.dt);
            v.fuel.accumulate(&self.cfg.fuel, v.state.v, u, self.dt);
            v.prev_p = v.state.p;
            v.state = step_state(&v.state, u, self.dt, &bounds);
            v.state.t = t_next;
        }
        // Re-plans can reorder arrivals; everyone prices gaps off the entry
        // in front of them, so the queues must stay sorted by arrival.
        for (z, q) in self.queues.iter_mut().enumerate() {
            if retimed[z] {
                q.sort_by(|a, b| a.tm_planned.total_cmp(&b.tm_planned));
            }
        }
    }

    // -- control decisions ---------------------------------------------------

    fn leader_of(&self, i: usize) -> Option<LeaderObservation> {
        let v = &self.vehicles[i];
        let route = self.net.route(v.route);
        let (_, my_lpos) = self.lane_of[i];
        let mut first = true;
        for e in &route.elements {
            let e_end_route = e.route_start_m + e.length_m;
            if e_end_route < v.state.p {
                continue;
            }
            let list = &self.lane_index[e.lane.0];
            // Lane-position threshold: strictly ahead of me in my element,
            // anywhere within later elements.
            let lb = if first { my_lpos } else { e.lane_start_m - 1e-9 };
            let start = list.partition_point(|&(pos, _)| pos <= lb);
            for &(pos, idx) in &list[start..] {
                if pos > e.lane_start_m + e.length_m + 1e-9 {
                    break;
                }
                if idx as usize == i {
                    continue;
                }
                let other = &self.vehicles[idx as usize];
                let route_pos = e.route_start_m + (pos - e.lane_start_m);
                let spacing = route_pos - v.state.p;
                if spacing <= 0.0 {
                    continue;
                }
                return Some(LeaderObservation { spacing_m: spacing, speed_mps: other.state.v });
            }
            first = false;
        }
        None
    }

    /// The speed an unimpeded vehicle would hold at route position `pos`:
    /// the forward-looking desired speed, capped so every control zone from
    /// `from_crossing` on is entered inside its envelope, clamped into the
    /// current zone's own envelope.
    fn cruise_pace(&self, route: RouteId, pos: f64, from_crossing: usize, pz: &PlanningZone) -> f64 {
        self.net
            .desired_speed(route, pos, self.cfg.hdv.following.comfort_decel_mps2)
            .min(self.downstream_entry_cap(route, pos, from_crossing))
            .clamp(pz.v_min_mps, pz.v_max_mps)
    }

    /// Soonest this vehicle could cover `dist` of approach, in seconds. Near
    /// the local pace the entry speed is taken at face value (the classic
    /// cruise floor); well below it the vehicle is impeded by traffic ahead
    /// and will accelerate back toward the pace as the queue moves, so the
    /// floor assumes that recovery — pricing a whole zone at a crawl speed
    /// would hand every successor an equally hopeless slot and freeze the
    /// queue in place.
    fn arrival_floor_s(&self, dist: f64, v0: f64, pace: f64, pz: &PlanningZone) -> f64 {
        if v0 >= IMPEDED_ENTRY_FRACTION * pace {
            dist / v0.clamp(pz.v_min_mps, pz.v_max_mps)
        } else {
            earliest_arrival_with_ceiling(dist, v0, pace, &self.cfg.bounds).0
        }
    }

    /// Speed a predecessor effectively averages over the merge zone. Once its
    /// arrival falls due the plan is finished and nothing pins it to a
    /// depressed arrival speed, so a slow arrival accelerates back toward the
    /// zone ceiling while crossing; gap terms priced at the raw arrival speed
    /// would stretch toward S/v_min and stall the whole queue behind it.
    fn pred_crossing_speed(&self, v_at_tm: f64, pz: &PlanningZone) -> f64 {
        let (t, _) = earliest_arrival_with_ceiling(
            pz.merge_length_m,
            v_at_tm.max(0.0),
            pz.v_max_mps,
            &self.cfg.bounds,
        );
        pz.merge_length_m / t
    }

    /// Speed ceiling at route position `pos` so that every control zone from
    /// `from_crossing` on can be entered inside its planning envelope using
    /// comfortable braking.
    fn downstream_entry_cap(&self, route: RouteId, pos: f64, from_crossing: usize) -> f64 {
        let d = self.cfg.hdv.following.comfort_decel_mps2;
        let route = self.net.route(route);
        let mut cap = f64::INFINITY;
        for c in &route.crossings[from_crossing.min(route.crossings.len())..] {
            let ceiling = self.net.zone(c.zone).v_max_mps;
            let runway = (c.control_entry_m - pos).max(0.0);
            cap = cap.min((ceiling * ceiling + 2.0 * d * runway).sqrt());
        }
        cap
    }

    /// Braking needed to meet every downstream planning ceiling, or `None`
    /// while comfortable braking still suffices. The cruise target already
    /// tracks the comfort envelope, but tracks it with lag; this is the hard
    /// bound that keeps the lag from compounding into an entry speed no
    /// schedule can place.
    fn envelope_brake(&self, route: RouteId, pos: f64, from_crossing: usize, v: f64) -> Option<f64> {
        let d = self.cfg.hdv.following.comfort_decel_mps2;
        let r = self.net.route(route);
        let mut u: Option<f64> = None;
        for c in &r.crossings[from_crossing.min(r.crossings.len())..] {
            let ceiling = self.net.zone(c.zone).v_max_mps;
            let runway = (c.control_entry_m - pos).max(0.0);
            if v * v > ceiling * ceiling + 2.0 * d * runway {
                let req = if runway > 1e-9 {
                    (ceiling * ceiling - v * v) / (2.0 * runway)
                } else {
                    self.cfg.bounds.u_min
                };
                u = Some(u.map_or(req, |x: f64| x.min(req)));
            }
        }
        u
    }

    fn disengage_threshold(&self, v: f64, leader_v: f64) -> f64 {
        let h = &self.cfg.cav.headway;
        let mut thr = h.gap(v);
        if v > leader_v {
            let closing = (v * v - leader_v * leader_v)
                / (2.0 * self.cfg.cav.fallback_brake_margin_mps2);
            thr = thr.max(h.standstill_m + closing);
        }
        thr
    }

    fn conflict_observations(
        &self,
        zone: ZoneId,
        my_approach: ApproachId,
        me: VehicleId,
    ) -> Vec<ConflictObservation> {
        self.actors[zone.0]
            .iter()
            .filter(|a| a.vehicle != me && self.net.conflicting(my_approach, a.approach))
            .map(|a| ConflictObservation {
                dist_to_merge_m: a.dist_to_merge_m,
                speed_mps: a.speed_mps,
                inside_merge: a.inside,
            })
            .collect()
    }

    /// Interlock braking for an automated vehicle approaching a contested
    /// merge entry, if interference is predicted.
    fn guard_command(&self, i: usize) -> Option<f64> {
        let v = &self.vehicles[i];
        let route = self.net.route(v.route);
        let c = route.crossings.get(v.next_crossing)?;
        let zone = self.net.zone(c.zone);
        let gp = &self.cfg.cav.guard;
        let dist = c.merge_entry_m - v.state.p;
        if dist <= 0.0 || dist > gp.range_m {
            return None;
        }
        let crawl = gp.crawl_mps;
        let now = self.time();
        // My entry estimate errs early: a tracked plan lands at tm, but a
        // momentarily faster vehicle could beat it there.
        let kin_entry = dist / v.state.v.max(crawl);
        let plan_tm = v.plan.filter(|p| p.zone == c.zone).map(|p| p.tm);
        let my_entry = match plan_tm {
            Some(tm) => kin_entry.min((tm - now).max(0.0)),
            None => kin_entry,
        };
        let my_tm = plan_tm.unwrap_or(now + kin_entry);
        // Ordering key, computed identically for me and for every blocker so
        // the "who goes first" relation stays a strict order (no pair can
        // ever wait on each other, or enter together).
        let my_ord = now + (dist / v.state.v.max(crawl)).max(my_tm - now);
        let s_z = zone.merge_zone_length_m;
        let my_pace = v.state.v.max(crawl);
        let my_clear = dist / my_pace + s_z / my_pace;
        let mut clears: Vec<f64> = Vec::new();
        for a in &self.actors[c.zone.0] {
            if a.vehicle == v.id || !self.net.conflicting(c.approach, a.approach) {
                continue;
            }
            if a.inside {
                clears.push(a.dist_to_exit_m / a.speed_mps.max(crawl));
                continue;
            }
            if a.dist_to_merge_m < 0.0 {
                continue;
            }
            // Blockers' estimates err late for the same reason mine errs
            // early: a lagging vehicle clears later than its assignment.
            let kin_arrival = a.dist_to_merge_m / a.speed_mps.max(crawl);
            let (ahead_of_me, arrival) = match a.class {
                // Another automated vehicle yields to the schedule: it is in
                // front of me when its arrival is earlier — judged by its
                // assignment or by the road, whichever is later. A vehicle
                // stuck far from the line holding a long-expired slot has
                // forfeited it; deferring to it anyway can deadlock both
                // approaches.
                VehicleClass::Cav => {
                    let eff =
                        now + a.planned_tm.map_or(kin_arrival, |tm| kin_arrival.max(tm - now));
                    (eff < my_ord || (eff == my_ord && a.vehicle.0 < v.id.0), eff - now)
                }
                // A human driver blocks me only on the priority approach
                // (anywhere else they will yield), and only if our occupancy
                // windows would actually overlap.
                VehicleClass::Hdv => (
                    zone.priority_approach == Some(a.approach)
                        && kin_arrival < my_clear + gp.margin_s,
                    kin_arrival,
                ),
            };
            if ahead_of_me {
                clears.push(arrival + s_z / a.speed_mps.max(crawl));
            }
        }
        merge_entry_guard(dist, v.state.v, my_entry, &clears, gp, &self.cfg.bounds)
    }

    fn fresh_pred_info(&self, zone: ZoneId, e: &QueueEntry) -> (f64, f64) {
        match e.class {
            VehicleClass::Cav => (e.tm_planned, e.v_at_tm),
            VehicleClass::Hdv => {
                // Human arrival estimates go stale (they yield, they queue);
                // re-estimate from the live state when scheduling against one.
                let pz = PlanningZone::from(self.net.zone(zone));
                if let Some(&idx) = self.id_to_idx.get(&e.vehicle.0) {
                    let p = &self.vehicles[idx as usize];
                    if let Some(c) = self.net.crossing(p.route, zone) {
                        let d = (c.merge_entry_m - p.state.p).max(0.0);
                        let pace = (p.profile.desired_speed_factor
                            * self.net.desired_speed(
                                p.route,
                                p.state.p,
                                self.cfg.hdv.following.comfort_decel_mps2,
                            ))
                        .clamp(pz.v_min_mps, pz.v_max_mps);
                        if p.state.v >= IMPEDED_ENTRY_FRACTION * pace {
                            let vp = effective_pred_speed(p.state.v, &pz);
                            return (self.time() + d / vp, vp);
                        }
                        // Caught in a queue: the driver speeds back up as it
                        // discharges, so project the recovery, not the crawl.
                        let (dt, v_arr) =
                            earliest_arrival_with_ceiling(d, p.state.v, pace, &self.cfg.bounds);
                        return (self.time() + dt, effective_pred_speed(v_arr, &pz));
                    }
                }
                (e.tm_planned, e.v_at_tm)
            }
        }
    }

    /// The arrival the live queue demands of this vehicle right now: the
    /// predecessor separation, floored by what the road ahead allows, inside
    /// the window the actuators can deliver. `None` when no such arrival
    /// exists — the slot the queue demands has physically passed this vehicle
    /// by, and squeezing in ahead of it would put two vehicles in the merge
    /// zone at once.
    fn reschedule_tm(&self, i: usize, plan: &MergePlan) -> Option<f64> {
        let v = &self.vehicles[i];
        let pz = PlanningZone::from(self.net.zone(plan.zone));
        let now = self.time();
        let dist = plan.merge_entry_m - v.state.p;
        let q = &self.queues[plan.zone.0];
        let pos = q.iter().position(|e| e.vehicle == v.id)?;
        let pace = self.cruise_pace(v.route, v.state.p, v.next_crossing, &pz);
        let mut cand = now + self.arrival_floor_s(dist, v.state.v, pace, &pz);
        if pos > 0 {
            let pred = &q[pos - 1];
            let (ptm, pv) = self.fresh_pred_info(plan.zone, pred);
            let vp = effective_pred_speed(self.pred_crossing_speed(pv, &pz), &pz);
            let gap_term = if self.net.conflicting(q[pos].approach, pred.approach) {
                pz.merge_length_m / vp
            } else {
                self.cfg.cav.headway.gap(v.state.v.max(0.0)) / vp
            };
            cand = cand.max(ptm + gap_term);
        }
        // Keep the exit speed compatible with the zones further down.
        let exit_cap =
            self.downstream_entry_cap(v.route, plan.merge_entry_m, v.next_crossing + 1);
        if exit_cap.is_finite() {
            cand = cand.max(now + 1.5 * dist / (exit_cap + 0.5 * v.state.v));
        }
        let (earliest, latest) = control_feasible_window(dist, v.state.v, &pz, &self.cfg.bounds);
        if cand > now + latest + 1e-9 {
            return None;
        }
        // Arriving later than demanded is always safe; earlier is not.
        Some(cand.max(now + earliest))
    }

    /// Brings a vehicle's claim back in line with what the live queue
    /// demands, in either direction: later when the slot ahead has slipped
    /// (holding the old arrival would put two vehicles in the merge zone at
    /// once), earlier when the queue drained faster than it was priced
    /// (holding the old arrival would make the whole stream behind inherit
    /// a crawl that no longer exists). `deadband` is the drift tolerated
    /// before re-solving; pass negative infinity to force a fresh trajectory.
    fn align_plan(&self, i: usize, plan: &MergePlan, deadband: f64) -> ReplanOutcome {
        let v = &self.vehicles[i];
        let pz = PlanningZone::from(self.net.zone(plan.zone));
        let now = self.time();
        let dist = plan.merge_entry_m - v.state.p;
        if dist <= 0.0 {
            // Crossing the entry this step; bookkeeping retires the plan.
            return ReplanOutcome::Unchanged;
        }
        let Some(tm) = self.reschedule_tm(i, plan) else {
            return ReplanOutcome::Withdraw(plan.zone);
        };
        if (tm - plan.tm).abs() <= deadband {
            return ReplanOutcome::Unchanged;
        }
        match solve_trajectory(now, tm, v.state.p, v.state.v, plan.merge_entry_m) {
            Ok(coeffs) => {
                if std::env::var_os("CORSIM_DEBUG_PLAN").is_some() {
                    eprintln!(
                        "ALIGN t={:.2} z={} v{} old_tm={:.3} new_tm={:.3}",
                        now, plan.zone.0, v.id.0, plan.tm, tm
                    );
                }
                // The feasibility interval for a mid-zone reassignment is the
                // window the actuators can still deliver from the live state,
                // not the entry-time speed envelope.
                let (fe, fl) =
                    control_feasible_window(dist, v.state.v, &pz, &self.cfg.bounds);
                let qu = QueueUpdate {
                    zone: plan.zone,
                    tm,
                    v_at_tm: coeffs.terminal_speed(),
                    in_band: tm >= now + fe - 1e-9 && tm <= now + fl + 1e-9,
                    new_assignment: (tm - plan.tm).abs() > 1e-9,
                    withdraw: false,
                };
                ReplanOutcome::Plan(MergePlan { tm, coeffs, ..*plan }, qu)
            }
            Err(_) => ReplanOutcome::Withdraw(plan.zone),
        }
    }

    fn decide(&self, i: usize) -> Decision {
        let v = &self.vehicles[i];
        let t = self.time();
        let (lane, lpos) = self.lane_of[i];
        let limit = self.net.lane_speed_limit(lane, lpos);
        let bounds = self.cfg.bounds.with_speed_range(0.0, limit);
        let leader = self.leader_of(i);
        let mut anomaly = false;

        match v.class {
            VehicleClass::Hdv => {
                let w = &self.cfg.hdv.following;
                let desired = v.profile.desired_speed_factor
                    * self.net.desired_speed(v.route, v.state.p, w.comfort_decel_mps2);
                let mut u =
                    match wiedemann_accel(&v.state, leader, desired, &v.profile, w, &bounds) {
                        Ok((u, _)) => u,
                        Err(_) => {
                            anomaly = true;
                            bounds.u_min
                        }
                    };
                // Yield-line behaviour at priority-controlled merges.
                if let Some(c) = self.net.route(v.route).crossings.get(v.next_crossing) {
                    let zone = self.net.zone(c.zone);
                    let gap = &self.cfg.hdv.gap;
                    let dist = c.merge_entry_m - v.state.p;
                    if zone.priority_rule == PriorityRule::YieldStop
                        && zone.priority_approach != Some(c.approach)
                        && dist > 0.0
                        && dist <= gap.decision_range_m
                    {
                        let obs = self.conflict_observations(c.zone, c.approach, v.id);
                        if priority_gate(&obs, gap) == GateVerdict::Yield {
                            u = u.min(stop_line_decel(
                                v.state.v,
                                dist - gap.stop_line_offset_m,
                                &bounds,
                            ));
                        }
                    }
                }
                Decision {
                    u,
                    mode: DriveMode::Cruise,
                    plan: None,
                    reengage_s: 0.0,
                    anomaly,
                    queue_update: None,
                }
            }
            VehicleClass::Cav => {
                let w = &self.cfg.hdv.following;
                let neutral = DriverProfile::neutral();
                // Arrive at each upcoming control zone already inside its
                // planning envelope: an entry above the ceiling cannot be
                // scheduled without demanding more braking than the actuators
                // have.
                let desired = self
                    .net
                    .desired_speed(v.route, v.state.p, w.comfort_decel_mps2)
                    .min(self.downstream_entry_cap(v.route, v.state.p, v.next_crossing));
                let u_cf = match wiedemann_accel(&v.state, leader, desired, &neutral, w, &bounds) {
                    Ok((u, _)) => u,
                    Err(_) => {
                        anomaly = true;
                        bounds.u_min
                    }
                };
                let u_cf = match self.envelope_brake(v.route, v.state.p, v.next_crossing, v.state.v)
                {
                    Some(b) => u_cf.min(b),
                    None => u_cf,
                };
                let guard_u = self.guard_command(i);
                let with_guard = |u: f64| match guard_u {
                    Some(g) => u.min(g),
                    None => u,
                };
                let unsafe_now = leader
                    .is_some_and(|l| l.spacing_m <= self.disengage_threshold(v.state.v, l.speed_mps));

                let mut mode = v.mode;
                let mut plan = v.plan;
                let mut timer = v.reengage_s;
                let mut queue_update = None;
                if plan.is_none() && mode != DriveMode::Cruise {
                    mode = DriveMode::Cruise;
                }

                let u = match (mode, plan) {
                    (DriveMode::Coordinated, Some(pl)) => {
                        if unsafe_now || t > pl.tm {
                            // Forced off the plan (tailgating a leader), or
                            // the assigned arrival already passed while still
                            // outside the zone: re-plan from live state.
                            mode = DriveMode::Fallback;
                            timer = 0.0;
                            with_guard(u_cf)
                        } else {
                            // The slot ahead keeps moving after assignment:
                            // interlocks shave entries, re-plans push them
                            // later, queues drain faster than they were
                            // priced. A frozen claim poisons the queue in
                            // both directions — too early co-occupies the
                            // merge zone, too late makes every follower
                            // inherit a crawl that no longer exists — so the
                            // claim tracks what the live queue demands.
                            match self.align_plan(i, &pl, ALIGN_DEADBAND_S) {
                                ReplanOutcome::Plan(new_plan, qu) => {
                                    plan = Some(new_plan);
                                    queue_update = Some(qu);
                                }
                                ReplanOutcome::Withdraw(zone) => {
                                    if std::env::var_os("CORSIM_DEBUG_PLAN").is_some() {
                                        eprintln!(
                                            "WDRW t={:.2} z={} v{} old_tm={:.3} coord",
                                            t, zone.0, v.id.0, pl.tm
                                        );
                                    }
                                    mode = DriveMode::Cruise;
                                    plan = None;
                                    queue_update = Some(QueueUpdate {
                                        zone,
                                        tm: 0.0,
                                        v_at_tm: 0.0,
                                        in_band: false,
                                        new_assignment: false,
                                        withdraw: true,
                                    });
                                }
                                ReplanOutcome::Unchanged => {}
                            }
                            match plan {
                                Some(p2) => with_guard(p2.coeffs.control_at(t)),
                                None => with_guard(u_cf),
                            }
                        }
                    }
                    (DriveMode::Fallback, Some(pl)) => {
                        let roomy = leader.is_none_or(|l| {
                            l.spacing_m
                                >= self.cfg.cav.reengage_gap_factor
                                    * self.disengage_threshold(v.state.v, l.speed_mps)
                        });
                        if guard_u.is_none() && roomy {
                            timer += self.dt;
                        } else {
                            timer = 0.0;
                        }
                        let mut u = with_guard(u_cf);
                        // A plan whose arrival already passed re-plans at once:
                        // the stale claim misleads everyone scheduling or
                        // yielding around this vehicle for as long as it lives.
                        let stale = pl.tm < t;
                        if timer >= self.cfg.cav.reengage_hold_s || stale {
                            timer = 0.0;
                            match self.align_plan(i, &pl, f64::NEG_INFINITY) {
                                ReplanOutcome::Plan(new_plan, qu) => {
                                    mode = DriveMode::Coordinated;
                                    u = with_guard(new_plan.coeffs.control_at(t));
                                    plan = Some(new_plan);
                                    queue_update = Some(qu);
                                }
                                // No deliverable slot from here: hand the claim
                                // back so successors price the truth, and cross
                                // on the entry guard alone like an unequipped
                                // vehicle. Squeezing into the demanded slot
                                // would put two vehicles in the merge at once.
                                ReplanOutcome::Withdraw(zone) => {
                                    if std::env::var_os("CORSIM_DEBUG_PLAN").is_some() {
                                        eprintln!(
                                            "WDRW t={:.2} z={} v{} old_tm={:.3}",
                                            t, zone.0, v.id.0, pl.tm
                                        );
                                    }
                                    mode = DriveMode::Cruise;
                                    plan = None;
                                    queue_update = Some(QueueUpdate {
                                        zone,
                                        tm: 0.0,
                                        v_at_tm: 0.0,
                                        in_band: false,
                                        new_assignment: false,
                                        withdraw: true,
                                    });
                                }
                                ReplanOutcome::Unchanged => {}
                            }
                        }
                        u
                    }
                    _ => with_guard(u_cf),
                };
                Decision { u, mode, plan, reengage_s: timer, anomaly, queue_update }
            }
        }
    }

    // -- crossings and exits ---------------------------------------------

    fn bookkeeping(&mut self) {
        let t_step = self.time();
        let dt = self.dt;
        // (zone, vehicle index, depth past the entry line, entry time)
        let mut entrants: Vec<(ZoneId, usize, f64, f64)> = Vec::new();
        let mut exits: Vec<(usize, f64)> = Vec::new();

        for i in 0..self.vehicles.len() {
            let v = &mut self.vehicles[i];
            let route = self.net.route(v.route);
            let prev = v.prev_p;
            let p = v.state.p;
            while let Some(c) = route.crossings.get(v.next_crossing) {
                let mut advanced = false;
                if !v.queued
                    && prev < c.control_entry_m
                    && p >= c.control_entry_m
                    && p < c.merge_entry_m
                {
                    let frac = (c.control_entry_m - prev) / (p - prev);
                    entrants.push((c.zone, i, p - c.control_entry_m, t_step + dt * frac));
                    v.queued = true;
                }
                if prev < c.merge_entry_m && p >= c.merge_entry_m {
                    if v.queued {
                        self.queues[c.zone.0].retain(|e| e.vehicle != v.id);
                        v.queued = false;
                    }
                    let occ = &mut self.occupants[c.zone.0];
                    let at = occ.partition_point(|(id, _)| *id < v.id);
                    occ.insert(at, (v.id, c.approach));
                    if std::env::var_os("CORSIM_DEBUG_LAT").is_some() {
                        eprintln!(
                            "ENTER t={:.2} z={} v{} r{} v={:.2} {:?} tm={:?}",
                            t_step,
                            c.zone.0,
                            v.id.0,
                            v.route.0,
                            v.state.v,
                            v.mode,
                            v.plan.map(|pl| pl.tm),
                        );
                    }
                    if v.plan.is_some_and(|pl| pl.zone == c.zone) {
                        v.plan = None;
                        v.mode = DriveMode::Cruise;
                        v.reengage_s = 0.0;
                    }
                }
                if prev < c.merge_exit_m && p >= c.merge_exit_m {
                    self.occupants[c.zone.0].retain(|(id, _)| *id != v.id);
                    v.next_crossing += 1;
                    advanced = true;
                }
                if !advanced {
                    break;
                }
            }
            if p >= route.length_m {
                let exit_t = if p > prev {
                    t_step + dt * (route.length_m - prev) / (p - prev)
                } else {
                    t_step + dt
                };
                exits.push((i, exit_t));
            }
        }

        // Same-step control-zone entrants join the queue deepest-first (they
        // crossed the line earliest); ids break exact ties.
        entrants.sort_by(|a, b| {
            a.0 .0
                .cmp(&b.0 .0)
                .then(b.2.total_cmp(&a.2))
                .then(self.vehicles[a.1].id.cmp(&self.vehicles[b.1].id))
        });
        for (zone_id, i, _, t0) in entrants {
            self.register_control_entry(zone_id, i, t0);
        }

        for &(i, exit_t) in &exits {
            let v = &self.vehicles[i];
            // Clean up any zone state a short route might leave behind.
            if v.queued {
                for q in &mut self.queues {
                    q.retain(|e| e.vehicle != v.id);
                }
            }
            for occ in &mut self.occupants {
                occ.retain(|(id, _)| *id != v.id);
            }
            self.records.push(VehicleRecord {
                id: v.id,
                class: v.class,
                route_name: self.net.route(v.route).name.clone(),
                spawn_s: v.spawn_s,
                exit_s: Some(exit_t),
                distance_m: self.net.route(v.route).length_m,
                fuel_ml: v.fuel.total_ml(),
                min_gap_m: v.min_gap_m,
                censored: false,
            });
        }
        if !exits.is_empty() {
            let exiting: Vec<usize> = exits.iter().map(|e| e.0).collect();
            let mut keep = (0..self.vehicles.len()).map(|i| !exiting.contains(&i));
            self.vehicles.retain(|_| keep.next().unwrap());
        }
    }

    fn register_control_entry(&mut self, zone_id: ZoneId, i: usize, t0: f64) {
        let zone = self.net.zone(zone_id);
        let pz = PlanningZone::from(zone);
        let band = TmBand::from_entry(t0, &pz);
        let (id, class, route, v0) = {
            let v = &self.vehicles[i];
            (v.id, v.class, v.route, v.state.v)
        };
        let c = *self
            .net
            .crossing(route, zone_id)
            .expect("entrant's route crosses the zone");

        // Slot inversions re-time queue members behind this entrant:
        // (queue position, vehicle index, new arrival, new trajectory).
        let mut moves: Vec<(usize, usize, f64, TrajectoryCoeffs)> = Vec::new();
        let mut anchor = self.queues[zone_id.0].len();
        let (tm, v_at_tm, plan) = match class {
            VehicleClass::Hdv => {
                let pace = (self.vehicles[i].profile.desired_speed_factor
                    * self.net.desired_speed(
                        route,
                        c.control_entry_m,
                        self.cfg.hdv.following.comfort_decel_mps2,
                    ))
                .clamp(pz.v_min_mps, pz.v_max_mps);
                if v0 >= IMPEDED_ENTRY_FRACTION * pace {
                    let tm = free_flow_merge_time(t0, v0, &pz);
                    (tm, v0.clamp(pz.v_min_mps, pz.v_max_mps), None)
                } else {
                    // Entering at queue speed: the driver will accelerate as
                    // the queue moves, so seed the estimate from that.
                    let (dt, v_arr) = earliest_arrival_with_ceiling(
                        pz.control_length_m,
                        v0,
                        pace,
                        &self.cfg.bounds,
                    );
                    (t0 + dt, v_arr.clamp(pz.v_min_mps, pz.v_max_mps), None)
                }
            }
            VehicleClass::Cav => {
                let headway = self.cfg.cav.headway.clone();
                // Exiting a zone too hot would make the next zone's entry
                // unschedulable: bound the arrival so the trajectory's
                // terminal speed (1.5·L/T − 0.5·v0) respects the approach
                // ceiling for everything downstream.
                let exit_cap = self.downstream_entry_cap(
                    route,
                    c.merge_entry_m,
                    self.vehicles[i].next_crossing + 1,
                );
                let floor_tm = if exit_cap.is_finite() {
                    t0 + 1.5 * pz.control_length_m / (exit_cap + 0.5 * v0)
                } else {
                    t0
                };
                // The band assumes speed can change instantly; the actuators
                // cannot, so only arrivals inside this window are deliverable
                // from the entry speed.
                let (earliest, latest) =
                    control_feasible_window(pz.control_length_m, v0, &pz, &self.cfg.bounds);
                let (lo, hi) = (t0 + earliest, t0 + latest);
                let pace =
                    self.cruise_pace(route, c.control_entry_m, self.vehicles[i].next_crossing, &pz);
                let base_tm = t0 + self.arrival_floor_s(pz.control_length_m, v0, pace, &pz);
                let q = &self.queues[zone_id.0];
                // Arrival demanded when scheduled directly behind queue[..n].
                let demanded_behind = |prefix: &[QueueEntry]| -> f64 {
                    let peers: Vec<QueuePeer> = prefix
                        .iter()
                        .map(|e| QueuePeer { vehicle: e.vehicle, approach: e.approach })
                        .chain(std::iter::once(QueuePeer {
                            vehicle: id,
                            approach: c.approach,
                        }))
                        .collect();
                    let kind = classify_predecessor(id, &peers, &self.net)
                        .expect("entrant is in the peer list");
                    let tm = match kind {
                        PredecessorClass::NoPredecessor => base_tm,
                        PredecessorClass::SameLane | PredecessorClass::ConflictLane => {
                            let pred = prefix.last().expect("predecessor exists");
                            let (ptm, pv) = self.fresh_pred_info(zone_id, pred);
                            let pv = self.pred_crossing_speed(pv, &pz);
                            if kind == PredecessorClass::SameLane {
                                merge_time_same_lane(ptm, pv, t0, v0, base_tm, &pz, &headway)
                            } else {
                                merge_time_conflict_lane(ptm, pv, t0, base_tm, &pz)
                            }
                        }
                    };
                    tm.max(floor_tm)
                };
                // A vehicle that entered too fast to wait for its turn cannot
                // be asked to yield — no control input delivers the delay,
                // and one whose slot would butt against the physical limit
                // has no room to absorb its predecessor slipping. Walk it
                // forward past every conflicting automated predecessor whose
                // slot it cannot honour with slack; those get re-timed behind
                // it instead (they still have room to give).
                while anchor > 0 {
                    let q = &self.queues[zone_id.0];
                    if demanded_behind(&q[..anchor]) <= hi - SLOT_DRIFT_SLACK_S + 1e-9 {
                        break;
                    }
                    let pred = &q[anchor - 1];
                    if pred.class != VehicleClass::Cav
                        || !self.net.conflicting(c.approach, pred.approach)
                    {
                        break;
                    }
                    anchor -= 1;
                }
                let assign = |n: usize| {
                    let tm = demanded_behind(&self.queues[zone_id.0][..n]).clamp(lo, hi);
                    let solved =
                        solve_trajectory(t0, tm, c.control_entry_m, v0, c.merge_entry_m);
                    (tm, solved)
                };
                let (mut tm, mut solved) = assign(anchor);
                if anchor < q.len() {
                    // Re-time everyone displaced, chaining the separation each
                    // needs behind the one before. If any of them cannot
                    // deliver the later slot from where it is now, give up the
                    // inversion and let the entry interlocks absorb the
                    // shortfall.
                    let ok = match &solved {
                        Err(_) => false,
                        Ok(coeffs) => {
                            let now = self.time();
                            let mut prev_tm = tm;
                            let mut prev_v = coeffs.terminal_speed();
                            let mut prev_approach = c.approach;
                            let mut all_ok = true;
                            for (pos, e) in q.iter().enumerate().skip(anchor) {
                                let vp =
                                    effective_pred_speed(self.pred_crossing_speed(prev_v, &pz), &pz);
                                let conflict = self.net.conflicting(e.approach, prev_approach);
                                let need = if conflict {
                                    prev_tm + pz.merge_length_m / vp
                                } else {
                                    let fol_v = self
                                        .id_to_idx
                                        .get(&e.vehicle.0)
                                        .map(|&fi| self.vehicles[fi as usize].state.v)
                                        .unwrap_or(e.v_at_tm);
                                    prev_tm + headway.gap(fol_v.max(0.0)) / vp
                                };
                                if need <= e.tm_planned + 1e-9 {
                                    // Already clear of the inserted slot.
                                    prev_tm = e.tm_planned;
                                    prev_v = e.v_at_tm;
                                    prev_approach = e.approach;
                                    continue;
                                }
                                let Some(&fi) = self.id_to_idx.get(&e.vehicle.0) else {
                                    all_ok = false;
                                    break;
                                };
                                let fv = &self.vehicles[fi as usize];
                                let Some(fp) = fv.plan.filter(|p| p.zone == zone_id) else {
                                    all_ok = false;
                                    break;
                                };
                                let fdist = fp.merge_entry_m - fv.state.p;
                                if need > fp.band.latest_s + 1e-9 || fdist <= 0.0 {
                                    all_ok = false;
                                    break;
                                }
                                let (fe, fl) = control_feasible_window(
                                    fdist,
                                    fv.state.v,
                                    &pz,
                                    &self.cfg.bounds,
                                );
                                if need - now < fe - 1e-9 || need - now > fl + 1e-9 {
                                    all_ok = false;
                                    break;
                                }
                                let Ok(fc) = solve_trajectory(
                                    now,
                                    need,
                                    fv.state.p,
                                    fv.state.v,
                                    fp.merge_entry_m,
                                ) else {
                                    all_ok = false;
                                    break;
                                };
                                prev_tm = need;
                                prev_v = fc.terminal_speed();
                                prev_approach = e.approach;
                                moves.push((pos, fi as usize, need, fc));
                            }
                            all_ok
                        }
                    };
                    if !ok {
                        moves.clear();
                        anchor = q.len();
                        (tm, solved) = assign(anchor);
                    }
                }
                match solved {
                    Ok(coeffs) => {
                        let plan = MergePlan {
                            zone: zone_id,
                            t0,
                            tm,
                            band,
                            coeffs,
                            merge_entry_m: c.merge_entry_m,
                        };
                        (tm, coeffs.terminal_speed(), Some(plan))
                    }
                    Err(_) => {
                        self.anomalies += 1;
                        moves.clear();
                        anchor = self.queues[zone_id.0].len();
                        (tm, v0.clamp(pz.v_min_mps, pz.v_max_mps), None)
                    }
                }
            }
        };
        if class == VehicleClass::Cav {
            self.tm_assignments += 1;
            if band.contains(tm) {
                self.tm_assignments_in_band += 1;
            }
        }
        self.queues[zone_id.0].insert(
            anchor,
            QueueEntry {
                vehicle: id,
                approach: c.approach,
                class,
                t0,
                tm_planned: tm,
                v_at_tm,
            },
        );
        if std::env::var_os("CORSIM_DEBUG_PLAN").is_some() {
            eprintln!(
                "REG t={:.2} z={} v{} {:?} t0={:.2} tm={:.3} anchor={} displaced={}",
                self.time(), zone_id.0, id.0, class, t0, tm, anchor,
                moves.len()
            );
        }
        let now = self.time();
        for (pos, fi, new_tm, fc) in moves {
            let e = &mut self.queues[zone_id.0][pos + 1];
            if std::env::var_os("CORSIM_DEBUG_PLAN").is_some() {
                eprintln!(
                    "DISP t={:.2} z={} v{} old_tm={:.3} new_tm={:.3}",
                    now, zone_id.0, e.vehicle.0, e.tm_planned, new_tm
                );
            }
            e.tm_planned = new_tm;
            e.v_at_tm = fc.terminal_speed();
            if let Some(pl) = self.vehicles[fi].plan.as_mut() {
                pl.tm = new_tm;
                pl.coeffs = fc;
            }
        }
        // Later entries may have been re-timed past their successors; the
        // queue stays ordered by planned arrival.
        self.queues[zone_id.0]
            .sort_by(|a, b| a.tm_planned.total_cmp(&b.tm_planned));
        let v = &mut self.vehicles[i];
        if let Some(p) = plan {
            v.plan = Some(p);
            v.mode = DriveMode::Coordinated;
        }
    }

    fn finalize(mut self) -> RunResult {
        for v in &self.vehicles {
            self.records.push(VehicleRecord {
                id: v.id,
                class: v.class,
                route_name: self.net.route(v.route).name.clone(),
                spawn_s: v.spawn_s,
                exit_s: None,
                distance_m: v.state.p,
                fuel_ml: v.fuel.total_ml(),
                min_gap_m: v.min_gap_m,
                censored: true,
            });
        }
        self.records.sort_by_key(|r| r.id);
        let end_time_s = self.time();
        RunResult {
            spec: self.spec,
            vehicles: self.records,
            profile: self.profile,
            rear_end_events: self.rear_end.events(),
            lateral_events: self.lateral.events(),
            tm_assignments: self.tm_assignments,
            tm_assignments_in_band: self.tm_assignments_in_band,
            anomalies: self.anomalies,
            unspawned: self.schedule.len() as u64 - self.spawned,
            end_time_s,
        }
    }
}

/// Builds and runs one sweep cell.
pub fn run_case(cfg: &SimConfig, spec: RunSpec) -> Result<RunResult, EngineError> {
    Ok(Engine::new(cfg, spec)?.run())
}
