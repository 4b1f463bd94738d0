//! Corridor geometry: routes, scenario zones, conflict topology, speed limits.
//!
//! The network is a 1200 m single-lane main line crossed by two adjacent
//! streams. Each bottleneck ("zone") consists of a control zone of length L
//! immediately upstream of a merge zone of length S. Vehicles approaching a
//! zone on different approaches may conflict inside its merge zone; the
//! conflict map records which approach pairs do.
//!
//! Positions are route-local arc lengths. A route is a chain of physical lane
//! elements, so two routes that share pavement (a ramp joining the main line)
//! map onto the same lane coordinates there.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZoneId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RouteId(pub usize);

/// A physical stretch of pavement. Routes reference lanes; vehicles on the
/// same lane interact longitudinally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApproachId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZoneKind {
    OnRampMerge,
    SpeedReduction,
    Roundabout,
}

/// How uncoordinated traffic resolves the conflict at a zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorityRule {
    /// Non-priority approaches yield (stop if necessary) at the merge entry.
    YieldStop,
    /// No crossing traffic; nobody yields.
    None,
}

#[derive(Debug, Clone)]
pub struct Approach {
    pub id: ApproachId,
    pub zone: ZoneId,
    pub label: String,
}

/// One coordination bottleneck.
#[derive(Debug, Clone)]
pub struct ScenarioZone {
    pub id: ZoneId,
    pub kind: ZoneKind,
    /// Control zone length L, m. CAVs plan their merge-entry arrival in here.
    pub control_zone_length_m: f64,
    /// Merge (conflict) zone length S, m.
    pub merge_zone_length_m: f64,
    /// Merge-zone entry position on the main lane, m.
    pub merge_entry_main_m: f64,
    /// Planning speed floor inside the zone, m/s. Not a physical floor.
    pub v_min_mps: f64,
    /// Zone speed limit, m/s.
    pub v_max_mps: f64,
    pub priority_rule: PriorityRule,
    /// Approach that never yields under `PriorityRule::YieldStop`.
    pub priority_approach: Option<ApproachId>,
}

/// Maps a route-local interval onto a lane.
#[derive(Debug, Clone, Copy)]
pub struct RouteElement {
    pub lane: LaneId,
    pub route_start_m: f64,
    pub lane_start_m: f64,
    pub length_m: f64,
}

/// Where a route passes through a zone, in route-local coordinates.
/// `control_entry_m + L = merge_entry_m` by construction.
#[derive(Debug, Clone, Copy)]
pub struct ZoneCrossing {
    pub zone: ZoneId,
    pub approach: ApproachId,
    pub control_entry_m: f64,
    pub merge_entry_m: f64,
    pub merge_exit_m: f64,
}

#[derive(Debug, Clone)]
pub struct Route {
    pub id: RouteId,
    pub name: String,
    pub length_m: f64,
    pub elements: Vec<RouteElement>,
    pub crossings: Vec<ZoneCrossing>,
    /// Speed limit at the spawn point; entry-speed draws are scaled from it.
    pub spawn_speed_limit_mps: f64,
}

/// Zone membership of a route position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneContext {
    Outside,
    ControlZone(ZoneId),
    MergeZone(ZoneId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredecessorClass {
    NoPredecessor,
    SameLane,
    ConflictLane,
}

/// A queue member as seen by predecessor classification: who it is and which
/// approach it entered the zone's control zone on.
#[derive(Debug, Clone, Copy)]
pub struct QueuePeer {
    pub vehicle: VehicleId,
    pub approach: ApproachId,
}

#[derive(Debug, Error)]
pub enum CorridorError {
    #[error("position {s:.2} m is outside route '{route}' (length {length:.2} m)")]
    OutOfNetwork { route: String, s: f64, length: f64 },
    #[error("invalid corridor geometry: {0}")]
    InvalidGeometry(String),
    #[error("vehicle {0} is not a member of the queue")]
    NotInQueue(VehicleId),
}

#[derive(Debug, Clone, Copy)]
struct LimitSegment {
    start_m: f64,
    limit_mps: f64,
}

#[derive(Debug, Clone)]
pub struct CorridorNetwork {
    pub total_length_m: f64,
    pub zones: Vec<ScenarioZone>,
    pub routes: Vec<Route>,
    pub approaches: Vec<Approach>,
    conflict: Vec<Vec<bool>>,
    /// Speed-limit profile per lane, segments sorted by start position.
    lane_limits: Vec<Vec<LimitSegment>>,
}

impl CorridorNetwork {
    pub fn route(&self, id: RouteId) -> &Route {
        &self.routes[id.0]
    }

    pub fn zone(&self, id: ZoneId) -> &ScenarioZone {
        &self.zones[id.0]
    }

    /// True when the two approaches feed the same merge zone and cross there.
    pub fn conflicting(&self, a: ApproachId, b: ApproachId) -> bool {
        self.conflict[a.0][b.0]
    }

    /// Zone membership of a route position. Control zones are `[entry, merge
    /// entry)` and merge zones `[merge entry, merge exit)`, both half-open.
    pub fn locate(&self, route: RouteId, s: f64) -> Result<ZoneContext, CorridorError> {
        let r = self.route(route);
        if !(0.0..=r.length_m).contains(&s) {
            return Err(CorridorError::OutOfNetwork { route: r.name.clone(), s, length: r.length_m });
        }
        for c in &r.crossings {
            if s >= c.control_entry_m && s < c.merge_entry_m {
                return Ok(ZoneContext::ControlZone(c.zone));
            }
            if s >= c.merge_entry_m && s < c.merge_exit_m {
                return Ok(ZoneContext::MergeZone(c.zone));
            }
        }
        Ok(ZoneContext::Outside)
    }

    /// Physical lane and lane-local position for a route position.
    pub fn lane_position(&self, route: RouteId, s: f64) -> (LaneId, f64) {
        let r = self.route(route);
        for e in &r.elements {
            if s >= e.route_start_m && s <= e.route_start_m + e.length_m {
                return (e.lane, e.lane_start_m + (s - e.route_start_m));
            }
        }
        // Callers keep s within the route; fall back to the last element.
        let e = r.elements.last().expect("route has elements");
        (e.lane, e.lane_start_m + (s - e.route_start_m))
    }

    /// Posted limit at a lane position.
    pub fn lane_speed_limit(&self, lane: LaneId, pos: f64) -> f64 {
        let segs = &self.lane_limits[lane.0];
        let mut limit = segs[0].limit_mps;
        for seg in segs {
            if pos >= seg.start_m {
                limit = seg.limit_mps;
            } else {
                break;
            }
        }
        limit
    }

    pub fn speed_limit(&self, route: RouteId, s: f64) -> f64 {
        let (lane, pos) = self.lane_position(route, s);
        self.lane_speed_limit(lane, pos)
    }

    /// Target speed at a route position, lowered in advance of posted drops so
    /// a driver decelerating at `anticipation_decel` meets each one.
    pub fn desired_speed(&self, route: RouteId, s: f64, anticipation_decel: f64) -> f64 {
        const LOOKAHEAD_M: f64 = 450.0;
        let mut v = self.speed_limit(route, s);
        let r = self.route(route);
        for e in &r.elements {
            let e_end = e.route_start_m + e.length_m;
            if e_end <= s || e.route_start_m > s + LOOKAHEAD_M {
                continue;
            }
            let from = s.max(e.route_start_m);
            let to = e_end.min(s + LOOKAHEAD_M);
            for seg in &self.lane_limits[e.lane.0] {
                let seg_route = e.route_start_m + (seg.start_m - e.lane_start_m);
                if seg_route <= from || seg_route > to {
                    continue;
                }
                let dist = seg_route - s;
                if seg.limit_mps < v {
                    let reachable = (seg.limit_mps * seg.limit_mps
                        + 2.0 * anticipation_decel * dist)
                        .sqrt();
                    v = v.min(reachable);
                }
            }
        }
        v
    }

    /// The crossing record for a route through a zone, if the route passes it.
    pub fn crossing(&self, route: RouteId, zone: ZoneId) -> Option<&ZoneCrossing> {
        self.route(route).crossings.iter().find(|c| c.zone == zone)
    }

    pub fn validate(&self) -> Result<(), CorridorError> {
        let err = |m: String| Err(CorridorError::InvalidGeometry(m));
        if self.zones.is_empty() {
            return err("no zones defined".into());
        }
        // Merge zones must sit inside the main line and must not overlap.
        let mut spans: Vec<(f64, f64)> = self
            .zones
            .iter()
            .map(|z| (z.merge_entry_main_m, z.merge_entry_main_m + z.merge_zone_length_m))
            .collect();
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in spans.windows(2) {
            if w[0].1 > w[1].0 {
                return err(format!("merge zones overlap: {:?} and {:?}", w[0], w[1]));
            }
        }
        if spans.last().unwrap().1 > self.total_length_m {
            return err("merge zone extends past the corridor end".into());
        }
        for z in &self.zones {
            if !(z.v_min_mps > 0.0 && z.v_min_mps < z.v_max_mps) {
                return err(format!("zone {:?}: need 0 < v_min < v_max", z.id));
            }
            if z.control_zone_length_m <= 0.0 || z.merge_zone_length_m <= 0.0 {
                return err(format!("zone {:?}: non-positive length", z.id));
            }
            if z.priority_rule == PriorityRule::YieldStop && z.priority_approach.is_none() {
                return err(format!("zone {:?}: yield rule without a priority approach", z.id));
            }
        }
        for r in &self.routes {
            // Elements must tile the route exactly.
            let mut cursor = 0.0;
            for e in &r.elements {
                if (e.route_start_m - cursor).abs() > 1e-9 {
                    return err(format!("route '{}': elements leave a gap at {cursor} m", r.name));
                }
                cursor += e.length_m;
            }
            if (cursor - r.length_m).abs() > 1e-9 {
                return err(format!("route '{}': elements cover {cursor} of {} m", r.name, r.length_m));
            }
            for c in &r.crossings {
                let zone = self.zone(c.zone);
                let l = zone.control_zone_length_m;
                if (c.control_entry_m + l - c.merge_entry_m).abs() > 1e-9 {
                    return err(format!(
                        "route '{}': control entry {} + L {} != merge entry {}",
                        r.name, c.control_entry_m, l, c.merge_entry_m
                    ));
                }
                if (c.merge_entry_m + zone.merge_zone_length_m - c.merge_exit_m).abs() > 1e-9 {
                    return err(format!("route '{}': merge exit inconsistent for zone {:?}", r.name, c.zone));
                }
                if c.control_entry_m < 0.0 || c.merge_exit_m > r.length_m {
                    return err(format!("route '{}': zone {:?} crossing leaves the route", r.name, c.zone));
                }
            }
            // Crossings must not overlap one another along the route.
            for w in r.crossings.windows(2) {
                if w[0].merge_exit_m > w[1].control_entry_m {
                    return err(format!("route '{}': zone crossings overlap", r.name));
                }
            }
        }
        // Every adjacent approach must terminate at exactly one merge zone.
        for a in &self.approaches {
            if !self.zones.iter().any(|z| z.id == a.zone) {
                return err(format!("approach '{}' references a missing zone", a.label));
            }
        }
        Ok(())
    }
}

/// Classifies the queue member immediately ahead of `vehicle` in a zone's
/// coordination queue (ordered by control-zone entry time).
pub fn classify_predecessor(
    vehicle: VehicleId,
    queue: &[QueuePeer],
    net: &CorridorNetwork,
) -> Result<PredecessorClass, CorridorError> {
    let idx = queue
        .iter()
        .position(|p| p.vehicle == vehicle)
        .ok_or(CorridorError::NotInQueue(vehicle))?;
    if idx == 0 {
        return Ok(PredecessorClass::NoPredecessor);
    }
    let me = queue[idx].approach;
    let ahead = queue[idx - 1].approach;
    if me == ahead || !net.conflicting(me, ahead) {
        // A non-conflicting distinct approach is treated as the same stream;
        // it only arises in custom layouts where two feeds share a merge zone
        // without crossing.
        Ok(PredecessorClass::SameLane)
    } else {
        Ok(PredecessorClass::ConflictLane)
    }
}

// ---------------------------------------------------------------------------
// Layout: the serializable description the network is built from.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnRampSection {
    pub control_length_m: f64,
    pub merge_entry_m: f64,
    pub merge_length_m: f64,
    pub v_max_mps: f64,
    pub v_min_mps: f64,
    pub approach_length_m: f64,
    pub approach_v_max_mps: f64,
    /// Merged ramp traffic leaves the main line this far past the merge zone.
    pub offramp_after_m: f64,
}

impl Default for OnRampSection {
    fn default() -> Self {
        OnRampSection {
            control_length_m: 150.0,
            merge_entry_m: 300.0,
            merge_length_m: 30.0,
            v_max_mps: 40.0,
            v_min_mps: 2.0,
            approach_length_m: 300.0,
            approach_v_max_mps: 25.0,
            offramp_after_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedReductionSection {
    pub control_length_m: f64,
    pub start_m: f64,
    pub end_m: f64,
    /// Length of the entry strip treated as the zone's "merge zone".
    pub entry_strip_m: f64,
    pub v_max_mps: f64,
    pub v_min_mps: f64,
}

impl Default for SpeedReductionSection {
    fn default() -> Self {
        SpeedReductionSection {
            control_length_m: 150.0,
            start_m: 550.0,
            end_m: 750.0,
            entry_strip_m: 10.0,
            v_max_mps: 18.6,
            v_min_mps: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundaboutSection {
    pub control_length_m: f64,
    pub merge_entry_m: f64,
    pub merge_length_m: f64,
    pub v_max_mps: f64,
    pub v_min_mps: f64,
    pub approach_length_m: f64,
    pub approach_v_max_mps: f64,
    /// Crossing traffic leaves the network this far past the merge zone.
    pub exit_tail_m: f64,
    /// Which stream holds priority at the roundabout: "side" or "main".
    pub priority: String,
}

impl Default for RoundaboutSection {
    fn default() -> Self {
        RoundaboutSection {
            control_length_m: 150.0,
            merge_entry_m: 995.0,
            merge_length_m: 25.0,
            v_max_mps: 25.0,
            v_min_mps: 2.0,
            approach_length_m: 300.0,
            approach_v_max_mps: 25.0,
            exit_tail_m: 50.0,
            priority: "side".to_string(),
        }
    }
}

/// Complete corridor description; `build` turns it into a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorLayout {
    pub total_length_m: f64,
    pub onramp: OnRampSection,
    pub speed_reduction: SpeedReductionSection,
    pub roundabout: RoundaboutSection,
}

impl Default for CorridorLayout {
    fn default() -> Self {
        CorridorLayout {
            total_length_m: 1200.0,
            onramp: OnRampSection::default(),
            speed_reduction: SpeedReductionSection::default(),
            roundabout: RoundaboutSection::default(),
        }
    }
}

pub const MAIN_ROUTE: RouteId = RouteId(0);
pub const RAMP_ROUTE: RouteId = RouteId(1);
pub const SIDE_ROUTE: RouteId = RouteId(2);

pub const MAIN_LANE: LaneId = LaneId(0);

impl CorridorLayout {
    pub fn build(&self) -> Result<CorridorNetwork, CorridorError> {
        let on = &self.onramp;
        let sr = &self.speed_reduction;
        let rb = &self.roundabout;

        let z_ramp = ZoneId(0);
        let z_slow = ZoneId(1);
        let z_round = ZoneId(2);

        let a_ramp_main = ApproachId(0);
        let a_ramp_ramp = ApproachId(1);
        let a_slow_main = ApproachId(2);
        let a_round_main = ApproachId(3);
        let a_round_side = ApproachId(4);

        let approaches = vec![
            Approach { id: a_ramp_main, zone: z_ramp, label: "onramp-main".into() },
            Approach { id: a_ramp_ramp, zone: z_ramp, label: "onramp-ramp".into() },
            Approach { id: a_slow_main, zone: z_slow, label: "slowzone-main".into() },
            Approach { id: a_round_main, zone: z_round, label: "roundabout-main".into() },
            Approach { id: a_round_side, zone: z_round, label: "roundabout-side".into() },
        ];

        let round_priority = match rb.priority.as_str() {
            "side" => a_round_side,
            "main" => a_round_main,
            other => {
                return Err(CorridorError::InvalidGeometry(format!(
                    "roundabout priority must be \"side\" or \"main\", got \"{other}\""
                )))
            }
        };

        let zones = vec![
            ScenarioZone {
                id: z_ramp,
                kind: ZoneKind::OnRampMerge,
                control_zone_length_m: on.control_length_m,
                merge_zone_length_m: on.merge_length_m,
                merge_entry_main_m: on.merge_entry_m,
                v_min_mps: on.v_min_mps,
                v_max_mps: on.v_max_mps,
                priority_rule: PriorityRule::YieldStop,
                priority_approach: Some(a_ramp_main),
            },
            ScenarioZone {
                id: z_slow,
                kind: ZoneKind::SpeedReduction,
                control_zone_length_m: sr.control_length_m,
                merge_zone_length_m: sr.entry_strip_m,
                merge_entry_main_m: sr.start_m,
                v_min_mps: sr.v_min_mps,
                v_max_mps: sr.v_max_mps,
                priority_rule: PriorityRule::None,
                priority_approach: None,
            },
            ScenarioZone {
                id: z_round,
                kind: ZoneKind::Roundabout,
                control_zone_length_m: rb.control_length_m,
                merge_zone_length_m: rb.merge_length_m,
                merge_entry_main_m: rb.merge_entry_m,
                v_min_mps: rb.v_min_mps,
                v_max_mps: rb.v_max_mps,
                priority_rule: PriorityRule::YieldStop,
                priority_approach: Some(round_priority),
            },
        ];

        let main_lane = MAIN_LANE;
        let ramp_lane = LaneId(1);
        let side_lane = LaneId(2);
        let tail_lane = LaneId(3);

        let main_route = Route {
            id: MAIN_ROUTE,
            name: "main".into(),
            length_m: self.total_length_m,
            elements: vec![RouteElement {
                lane: main_lane,
                route_start_m: 0.0,
                lane_start_m: 0.0,
                length_m: self.total_length_m,
            }],
            crossings: vec![
                ZoneCrossing {
                    zone: z_ramp,
                    approach: a_ramp_main,
                    control_entry_m: on.merge_entry_m - on.control_length_m,
                    merge_entry_m: on.merge_entry_m,
                    merge_exit_m: on.merge_entry_m + on.merge_length_m,
                },
                ZoneCrossing {
                    zone: z_slow,
                    approach: a_slow_main,
                    control_entry_m: sr.start_m - sr.control_length_m,
                    merge_entry_m: sr.start_m,
                    merge_exit_m: sr.start_m + sr.entry_strip_m,
                },
                ZoneCrossing {
                    zone: z_round,
                    approach: a_round_main,
                    control_entry_m: rb.merge_entry_m - rb.control_length_m,
                    merge_entry_m: rb.merge_entry_m,
                    merge_exit_m: rb.merge_entry_m + rb.merge_length_m,
                },
            ],
            spawn_speed_limit_mps: on.v_max_mps,
        };

        // Ramp traffic joins the main lane at the merge entry and leaves it
        // again shortly after; beyond the off-ramp it is out of the network.
        let ramp_on_main = on.merge_length_m + on.offramp_after_m;
        let ramp_route = Route {
            id: RAMP_ROUTE,
            name: "ramp".into(),
            length_m: on.approach_length_m + ramp_on_main,
            elements: vec![
                RouteElement {
                    lane: ramp_lane,
                    route_start_m: 0.0,
                    lane_start_m: 0.0,
                    length_m: on.approach_length_m,
                },
                RouteElement {
                    lane: main_lane,
                    route_start_m: on.approach_length_m,
                    lane_start_m: on.merge_entry_m,
                    length_m: ramp_on_main,
                },
            ],
            crossings: vec![ZoneCrossing {
                zone: z_ramp,
                approach: a_ramp_ramp,
                control_entry_m: on.approach_length_m - on.control_length_m,
                merge_entry_m: on.approach_length_m,
                merge_exit_m: on.approach_length_m + on.merge_length_m,
            }],
            spawn_speed_limit_mps: on.approach_v_max_mps,
        };

        // The crossing stream traverses the roundabout's conflict area and
        // exits on its own tail.
        let side_route = Route {
            id: SIDE_ROUTE,
            name: "side".into(),
            length_m: rb.approach_length_m + rb.merge_length_m + rb.exit_tail_m,
            elements: vec![
                RouteElement {
                    lane: side_lane,
                    route_start_m: 0.0,
                    lane_start_m: 0.0,
                    length_m: rb.approach_length_m,
                },
                RouteElement {
                    lane: main_lane,
                    route_start_m: rb.approach_length_m,
                    lane_start_m: rb.merge_entry_m,
                    length_m: rb.merge_length_m,
                },
                RouteElement {
                    lane: tail_lane,
                    route_start_m: rb.approach_length_m + rb.merge_length_m,
                    lane_start_m: 0.0,
                    length_m: rb.exit_tail_m,
                },
            ],
            crossings: vec![ZoneCrossing {
                zone: z_round,
                approach: a_round_side,
                control_entry_m: rb.approach_length_m - rb.control_length_m,
                merge_entry_m: rb.approach_length_m,
                merge_exit_m: rb.approach_length_m + rb.merge_length_m,
            }],
            spawn_speed_limit_mps: rb.approach_v_max_mps,
        };

        let mut conflict = vec![vec![false; approaches.len()]; approaches.len()];
        let mut mark = |a: ApproachId, b: ApproachId| {
            conflict[a.0][b.0] = true;
            conflict[b.0][a.0] = true;
        };
        mark(a_ramp_main, a_ramp_ramp);
        mark(a_round_main, a_round_side);

        let lane_limits = vec![
            // Main lane: on-ramp zone limit up to the reduced segment, the
            // reduced limit through it, the roundabout limit beyond.
            vec![
                LimitSegment { start_m: 0.0, limit_mps: on.v_max_mps },
                LimitSegment { start_m: sr.start_m, limit_mps: sr.v_max_mps },
                LimitSegment { start_m: sr.end_m, limit_mps: rb.v_max_mps },
            ],
            vec![LimitSegment { start_m: 0.0, limit_mps: on.approach_v_max_mps }],
            vec![LimitSegment { start_m: 0.0, limit_mps: rb.approach_v_max_mps }],
            vec![LimitSegment { start_m: 0.0, limit_mps: rb.v_max_mps }],
        ];

        let net = CorridorNetwork {
            total_length_m: self.total_length_m,
            zones,
            routes: vec![main_route, ramp_route, side_route],
            approaches,
            conflict,
            lane_limits,
        };
        net.validate()?;
        Ok(net)
    }
}
