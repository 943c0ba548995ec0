//! The day-long event loop: arrivals, matching ticks, strategic boundaries,
//! movement completions, abandonment, and driver exit.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use crate::core::{travel_time_s, HorizonConfig, Request, RequestState, SimMetrics, Vehicle, VehicleState, ZoneGraph};
use crate::exec::{Assignment, AssignmentRecord, MatchPool, PoolCustomer, PoolVehicle};
use crate::forecast::{Forecasts, History};
use crate::policy::{DispatchPolicy, RelocationOrder, WorldView};
use crate::slm::{build_instance, WorldCarryover};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    perturb_forecasts, DayStreams, ForecastPrep, RunOptions, ScenarioConfig, SimError, SECONDS_PER_DAY,
};

/// One line of events.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    Assignment(AssignmentRecord),
    Relocation { time_s: f64, vehicle: u64, from_zone: usize, to_zone: usize },
    Abandonment { time_s: f64, request: u64, zone: usize },
}

#[derive(Debug)]
pub struct DayOutcome {
    pub metrics: SimMetrics,
    pub events: Vec<LogEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    VehicleEntry { veh: usize },
    Arrival { req: usize },
    PickupArrive { veh: usize, req: usize },
    DropOff { veh: usize, req: usize },
    RelocateArrive { veh: usize },
    Abandon { req: usize },
    Offline { veh: usize, epoch: u64 },
    MatchTick,
    Boundary { k: usize },
}

impl EventKind {
    /// Tie-break rank at equal timestamps: state updates land before the
    /// matching tick, and the strategic boundary runs last.
    fn rank(&self) -> u8 {
        match self {
            EventKind::VehicleEntry { .. } => 0,
            EventKind::Arrival { .. } => 1,
            EventKind::PickupArrive { .. } => 2,
            EventKind::DropOff { .. } => 3,
            EventKind::RelocateArrive { .. } => 4,
            EventKind::Abandon { .. } => 5,
            EventKind::Offline { .. } => 6,
            EventKind::MatchTick => 7,
            EventKind::Boundary { .. } => 8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.seq.cmp(&other.seq))
    }
}

const CONSERVATION_CHECK_STRIDE: u64 = 4096;

struct World<'a> {
    cfg: &'a ScenarioConfig,
    horizon: HorizonConfig,
    zones: ZoneGraph,
    requests: Vec<Request>,
    vehicles: Vec<Vehicle>,
    /// Whether the arrival/entry event has been processed yet; needed to
    /// exclude same-timestamp agents still sitting in the event queue.
    req_arrived: Vec<bool>,
    veh_entered: Vec<bool>,
    veh_epoch: Vec<u64>,
    /// Waiting request ids / vacant vehicle ids per zone.
    waiting: Vec<BTreeSet<u64>>,
    vacant: Vec<BTreeSet<u64>>,
    req_index: HashMap<u64, usize>,
    veh_index: HashMap<u64, usize>,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    clock: f64,
    processed: u64,
    entered_vehicles: u64,
    // Metric accumulators.
    completed: u64,
    abandoned: u64,
    matched: u64,
    pickup_km_sum: f64,
    relocations: u64,
    completed_od: Vec<Vec<u64>>,
    waiting_by_interval: Vec<Vec<u64>>,
    vacant_by_interval: Vec<Vec<u64>>,
    // Live per-interval observations for the forecaster.
    today_demand: Vec<Vec<f64>>,
    today_supply: Vec<Vec<f64>>,
    live_demand: Option<History>,
    live_supply: Option<History>,
    events: Vec<LogEvent>,
    collect_events: bool,
}

impl<'a> World<'a> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Reverse(Event { time, seq: self.seq, kind }));
    }

    fn schedule_offline(&mut self, vi: usize) {
        let v = &self.vehicles[vi];
        let epoch = self.veh_epoch[vi];
        self.push(v.idle_since_s + v.patience_s, EventKind::Offline { veh: vi, epoch });
    }

    fn make_vacant(&mut self, vi: usize, zone: usize, xy: [f64; 2], now: f64) {
        let v = &mut self.vehicles[vi];
        v.state = VehicleState::Vacant;
        v.zone = zone;
        v.xy = xy;
        v.idle_since_s = now;
        v.target_zone = None;
        v.busy_until_s = now;
        self.veh_epoch[vi] += 1;
        let id = self.vehicles[vi].id;
        self.vacant[zone].insert(id);
        self.schedule_offline(vi);
    }

    fn leave_vacant(&mut self, vi: usize) {
        let zone = self.vehicles[vi].zone;
        let id = self.vehicles[vi].id;
        self.vacant[zone].remove(&id);
        self.veh_epoch[vi] += 1;
    }

    fn zone_pool(&self, zone: usize) -> MatchPool {
        let mut customers: Vec<&Request> =
            self.waiting[zone].iter().map(|id| &self.requests[self.req_index[id]]).collect();
        customers.sort_by(|a, b| a.gen_time_s.total_cmp(&b.gen_time_s).then(a.id.cmp(&b.id)));
        MatchPool {
            customers: customers
                .iter()
                .enumerate()
                .map(|(i, r)| PoolCustomer {
                    id: r.id,
                    dest_zone: r.dest_zone,
                    arrival_seq: i as u64 + 1,
                    xy: r.origin_xy,
                })
                .collect(),
            vehicles: self.vacant[zone]
                .iter()
                .map(|id| {
                    let v = &self.vehicles[self.veh_index[id]];
                    PoolVehicle { id: v.id, xy: v.xy }
                })
                .collect(),
        }
    }

    fn build_pools(&self) -> (Vec<MatchPool>, MatchPool) {
        let z = self.cfg.regions.len();
        let pools: Vec<MatchPool> = (0..z).map(|r| self.zone_pool(r)).collect();
        let mut all_customers: Vec<PoolCustomer> =
            pools.iter().flat_map(|p| p.customers.iter().cloned()).collect();
        all_customers.sort_by(|a, b| {
            let ra = &self.requests[self.req_index[&a.id]];
            let rb = &self.requests[self.req_index[&b.id]];
            ra.gen_time_s.total_cmp(&rb.gen_time_s).then(a.id.cmp(&b.id))
        });
        for (i, c) in all_customers.iter_mut().enumerate() {
            c.arrival_seq = i as u64 + 1;
        }
        let global = MatchPool {
            customers: all_customers,
            vehicles: pools.iter().flat_map(|p| p.vehicles.iter().cloned()).collect(),
        };
        (pools, global)
    }

    fn apply_assignments(&mut self, assignments: &[Assignment], now: f64) -> Result<(), SimError> {
        for a in assignments {
            let ri = self.req_index[&a.customer];
            let vi = self.veh_index[&a.vehicle];
            debug_assert_eq!(self.requests[ri].state, RequestState::Waiting);
            debug_assert_eq!(self.vehicles[vi].state, VehicleState::Vacant);
            let origin_zone = self.requests[ri].origin_zone;
            self.waiting[origin_zone].remove(&a.customer);
            self.leave_vacant(vi);
            let (origin_xy, dest_xy, dest_zone) = {
                let r = &self.requests[ri];
                (r.origin_xy, r.dest_xy, r.dest_zone)
            };
            let tp = travel_time_s(self.vehicles[vi].xy, origin_xy, self.cfg.speed_kmh, self.cfg.detour)?;
            let td = travel_time_s(origin_xy, dest_xy, self.cfg.speed_kmh, self.cfg.detour)?;
            self.requests[ri].state = RequestState::Matched;
            let v = &mut self.vehicles[vi];
            v.state = VehicleState::PickingUp;
            v.busy_until_s = now + tp + td;
            v.target_zone = Some(dest_zone);
            self.push(now + tp, EventKind::PickupArrive { veh: vi, req: ri });
            self.push(now + tp + td, EventKind::DropOff { veh: vi, req: ri });
            self.matched += 1;
            self.pickup_km_sum += a.pickup_km;
            if self.collect_events {
                self.events.push(LogEvent::Assignment(AssignmentRecord {
                    time_s: now,
                    zone: origin_zone,
                    vehicle: a.vehicle,
                    request: a.customer,
                    pickup_km: a.pickup_km,
                }));
            }
        }
        Ok(())
    }

    fn apply_relocations(&mut self, orders: &[RelocationOrder], now: f64) -> Result<(), SimError> {
        for order in orders {
            if order.to_zone >= self.cfg.regions.len() {
                return Err(SimError::InvalidInput(format!("relocation to unknown zone {}", order.to_zone)));
            }
            // Longest-idle vehicles go first.
            let mut candidates: Vec<(f64, u64)> = self.vacant[order.from_zone]
                .iter()
                .map(|id| (self.vehicles[self.veh_index[id]].idle_since_s, *id))
                .collect();
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, id) in candidates.iter().take(order.count as usize) {
                let vi = self.veh_index[&id];
                self.leave_vacant(vi);
                let target_center = self.cfg.regions[order.to_zone].center;
                let tt = travel_time_s(self.vehicles[vi].xy, target_center, self.cfg.speed_kmh, self.cfg.detour)?;
                let v = &mut self.vehicles[vi];
                v.state = VehicleState::Relocating;
                v.target_zone = Some(order.to_zone);
                v.busy_until_s = now + tt;
                self.push(now + tt, EventKind::RelocateArrive { veh: vi });
                self.relocations += 1;
                if self.collect_events {
                    self.events.push(LogEvent::Relocation {
                        time_s: now,
                        vehicle: id,
                        from_zone: order.from_zone,
                        to_zone: order.to_zone,
                    });
                }
            }
        }
        Ok(())
    }

    fn carryover(&self, k: usize) -> WorldCarryover {
        let z = self.cfg.regions.len();
        let p = self.horizon.planning_intervals;
        let mut carry_demand = vec![vec![0.0; z]; z];
        for zone in 0..z {
            for id in &self.waiting[zone] {
                let r = &self.requests[self.req_index[id]];
                carry_demand[zone][r.dest_zone] += 1.0;
            }
        }
        let carry_supply: Vec<f64> = (0..z).map(|zone| self.vacant[zone].len() as f64).collect();
        let mut inflight_relocating = vec![vec![0.0; z]; p];
        let mut inflight_occupied = vec![vec![0.0; z]; p];
        for v in &self.vehicles {
            let grid = match v.state {
                VehicleState::Relocating => &mut inflight_relocating,
                VehicleState::PickingUp | VehicleState::Occupied => &mut inflight_occupied,
                _ => continue,
            };
            let Some(target) = v.target_zone else { continue };
            let arrive_k = self.horizon.interval_of(v.busy_until_s);
            let t = arrive_k.saturating_sub(k);
            if t < p {
                grid[t][target] += 1.0;
            }
        }
        WorldCarryover { carry_demand, carry_supply, inflight_relocating, inflight_occupied }
    }

    fn check_conservation(&self) {
        let mut counts = [0u64; 5];
        for (vi, v) in self.vehicles.iter().enumerate() {
            if !self.veh_entered[vi] {
                continue;
            }
            counts[match v.state {
                VehicleState::Vacant => 0,
                VehicleState::PickingUp => 1,
                VehicleState::Occupied => 2,
                VehicleState::Relocating => 3,
                VehicleState::Offline => 4,
            }] += 1;
        }
        assert_eq!(
            counts.iter().sum::<u64>(),
            self.entered_vehicles,
            "vehicle state counts must cover every entered vehicle"
        );
        let waiting_total: usize = self.waiting.iter().map(|s| s.len()).sum();
        let waiting_states = self
            .requests
            .iter()
            .enumerate()
            .filter(|(ri, r)| r.state == RequestState::Waiting && self.req_arrived[*ri])
            .count();
        assert_eq!(waiting_total, waiting_states, "waiting pools must mirror request states");
        let vacant_total: usize = self.vacant.iter().map(|s| s.len()).sum();
        assert_eq!(vacant_total as u64, counts[0], "vacant pools must mirror vehicle states");
    }
}

fn run_match(
    world: &mut World,
    policy: &mut dyn DispatchPolicy,
    rng: &mut ChaCha8Rng,
    now: f64,
) -> Result<(), SimError> {
    let (zone_pools, global_pool) = world.build_pools();
    if global_pool.vehicles.is_empty() || global_pool.customers.is_empty() {
        return Ok(());
    }
    let view = WorldView { time_s: now, zone_pools: &zone_pools, global_pool: &global_pool };
    let assignments = policy.on_match_tick(&view, rng)?;
    world.apply_assignments(&assignments, now)
}

fn strategic_solve(
    world: &World,
    prep: &ForecastPrep,
    opts: &RunOptions,
    k: usize,
    day_seed: u64,
) -> Result<crate::core::Guidance, SimError> {
    let live_demand = world.live_demand.as_ref().expect("live demand history");
    let live_supply = world.live_supply.as_ref().expect("live supply history");
    let p = world.horizon.planning_intervals;
    let n = world.cfg.intervals_per_day();
    let origin = live_demand.len();
    let (demand, _) =
        crate::forecast::predict_window(&prep.demand_models, live_demand, crate::forecast::FeatureKind::Demand, origin, p)?;
    let (supply, _) =
        crate::forecast::predict_window(&prep.supply_models, live_supply, crate::forecast::FeatureKind::Supply, origin, p)?;
    let transition: Vec<Vec<Vec<f64>>> = (0..p).map(|h| prep.transition[(k + h) % n].clone()).collect();
    let (drop_demand, drop_supply) = prep.drop_rates(world.cfg, k)?;
    let mut forecasts = Forecasts { demand, supply, transition, drop_demand, drop_supply };
    if opts.perturb_amplitude > 0.0 {
        forecasts = perturb_forecasts(&forecasts, opts.perturb_amplitude, day_seed ^ (k as u64).wrapping_mul(0x9e37_79b9))?;
    }
    forecasts.clamp_nonnegative();
    let carry = world.carryover(k);
    let inst = build_instance(k, world.horizon, &world.zones, &forecasts, &carry)?;
    let lr_opts = crate::lr::LrOptions {
        seed: day_seed ^ (k as u64).wrapping_mul(0x517c_c1b7_2722_0a95),
        ..opts.lr
    };
    let report = crate::lr::solve(&inst, &lr_opts)?;
    Ok(report.best_feasible.guidance(k))
}

/// Simulates one day of the given streams under a dispatch policy.
pub fn run_day(
    cfg: &ScenarioConfig,
    policy: &mut dyn DispatchPolicy,
    streams: &DayStreams,
    day_seed: u64,
    opts: &RunOptions,
    prep: Option<&ForecastPrep>,
) -> Result<DayOutcome, SimError> {
    cfg.validate()?;
    if policy.needs_guidance() && prep.is_none() {
        return Err(SimError::InvalidInput(format!(
            "policy '{}' needs fitted forecasts; provide warm-up preparation",
            policy.name()
        )));
    }
    let z = cfg.regions.len();
    let n_int = cfg.intervals_per_day();
    let horizon = cfg.horizon(opts.alpha, opts.beta);
    horizon.validate()?;
    let mut world = World {
        cfg,
        horizon,
        zones: cfg.zone_graph()?,
        requests: streams.requests.clone(),
        vehicles: streams.vehicles.clone(),
        req_arrived: vec![false; streams.requests.len()],
        veh_entered: vec![false; streams.vehicles.len()],
        veh_epoch: vec![0; streams.vehicles.len()],
        waiting: vec![BTreeSet::new(); z],
        vacant: vec![BTreeSet::new(); z],
        req_index: streams.requests.iter().enumerate().map(|(i, r)| (r.id, i)).collect(),
        veh_index: streams.vehicles.iter().enumerate().map(|(i, v)| (v.id, i)).collect(),
        heap: BinaryHeap::new(),
        seq: 0,
        clock: 0.0,
        processed: 0,
        entered_vehicles: 0,
        completed: 0,
        abandoned: 0,
        matched: 0,
        pickup_km_sum: 0.0,
        relocations: 0,
        completed_od: vec![vec![0; z]; z],
        waiting_by_interval: vec![vec![0; z]; n_int],
        vacant_by_interval: vec![vec![0; z]; n_int],
        today_demand: vec![vec![0.0; z]; n_int],
        today_supply: vec![vec![0.0; z]; n_int],
        live_demand: prep.map(|p| p.demand_history.clone()),
        live_supply: prep.map(|p| p.supply_history.clone()),
        events: Vec::new(),
        collect_events: opts.collect_events,
    };
    if world.req_index.len() != world.requests.len() || world.veh_index.len() != world.vehicles.len() {
        return Err(SimError::InvalidInput("duplicate request or vehicle ids".into()));
    }

    for (i, r) in world.requests.iter().enumerate() {
        if r.origin_zone >= z || r.dest_zone >= z {
            return Err(SimError::InvalidInput(format!("request {} references an unknown zone", r.id)));
        }
        world.heap.push(Reverse(Event { time: r.gen_time_s, seq: i as u64, kind: EventKind::Arrival { req: i } }));
    }
    world.seq = world.requests.len() as u64;
    for i in 0..world.vehicles.len() {
        let t = world.vehicles[i].entry_time_s;
        world.push(t, EventKind::VehicleEntry { veh: i });
    }
    let mut t = cfg.matching_interval_s as f64;
    while t <= SECONDS_PER_DAY {
        world.push(t, EventKind::MatchTick);
        t += cfg.matching_interval_s as f64;
    }
    for k in 0..n_int {
        world.push(k as f64 * cfg.strategic_interval_s as f64, EventKind::Boundary { k });
    }

    let mut policy_rng = ChaCha8Rng::seed_from_u64(day_seed);
    policy_rng.set_stream(6);
    let continuous = policy.continuous();

    while let Some(Reverse(ev)) = world.heap.pop() {
        debug_assert!(ev.time >= world.clock - 1e-9);
        world.clock = ev.time.max(world.clock);
        world.processed += 1;
        if world.processed % CONSERVATION_CHECK_STRIDE == 0 {
            world.check_conservation();
        }
        match ev.kind {
            EventKind::Arrival { req } => {
                let (id, zone, gen, patience) = {
                    let r = &world.requests[req];
                    (r.id, r.origin_zone, r.gen_time_s, r.patience_s)
                };
                world.req_arrived[req] = true;
                world.waiting[zone].insert(id);
                world.push(gen + patience, EventKind::Abandon { req });
                let slot = world.horizon.interval_of(gen).min(n_int - 1);
                world.today_demand[slot][zone] += 1.0;
                if continuous {
                    run_match(&mut world, policy, &mut policy_rng, ev.time)?;
                }
            }
            EventKind::VehicleEntry { veh } => {
                let zone = world.vehicles[veh].zone;
                let xy = world.vehicles[veh].xy;
                world.entered_vehicles += 1;
                world.veh_entered[veh] = true;
                let slot = world.horizon.interval_of(ev.time).min(n_int - 1);
                world.today_supply[slot][zone] += 1.0;
                // make_vacant bumps the epoch; entry starts at epoch 1.
                world.make_vacant(veh, zone, xy, ev.time);
                if continuous {
                    run_match(&mut world, policy, &mut policy_rng, ev.time)?;
                }
            }
            EventKind::PickupArrive { veh, req } => {
                let origin = world.requests[req].origin_xy;
                world.vehicles[veh].state = VehicleState::Occupied;
                world.vehicles[veh].xy = origin;
                world.requests[req].state = RequestState::InVehicle;
            }
            EventKind::DropOff { veh, req } => {
                let (dest_xy, origin_zone, dest_zone) = {
                    let r = &world.requests[req];
                    (r.dest_xy, r.origin_zone, r.dest_zone)
                };
                world.requests[req].state = RequestState::Completed;
                world.completed += 1;
                world.completed_od[origin_zone][dest_zone] += 1;
                world.make_vacant(veh, dest_zone, dest_xy, ev.time);
                if continuous {
                    run_match(&mut world, policy, &mut policy_rng, ev.time)?;
                }
            }
            EventKind::RelocateArrive { veh } => {
                let zone = world.vehicles[veh].target_zone.expect("relocating vehicle has a target");
                let center = cfg.regions[zone].center;
                world.make_vacant(veh, zone, center, ev.time);
                if continuous {
                    run_match(&mut world, policy, &mut policy_rng, ev.time)?;
                }
            }
            EventKind::Abandon { req } => {
                if world.requests[req].state == RequestState::Waiting {
                    let (id, zone) = (world.requests[req].id, world.requests[req].origin_zone);
                    world.requests[req].state = RequestState::Abandoned;
                    world.waiting[zone].remove(&id);
                    world.abandoned += 1;
                    if world.collect_events {
                        world.events.push(LogEvent::Abandonment { time_s: ev.time, request: id, zone });
                    }
                }
            }
            EventKind::Offline { veh, epoch } => {
                if world.veh_epoch[veh] == epoch && world.vehicles[veh].state == VehicleState::Vacant {
                    world.leave_vacant(veh);
                    world.vehicles[veh].state = VehicleState::Offline;
                }
            }
            EventKind::MatchTick => {
                if !continuous {
                    run_match(&mut world, policy, &mut policy_rng, ev.time)?;
                }
            }
            EventKind::Boundary { k } => {
                if k >= 1 {
                    if let Some(h) = world.live_demand.as_mut() {
                        h.series.push(world.today_demand[k - 1].clone());
                    }
                    if let Some(h) = world.live_supply.as_mut() {
                        h.series.push(world.today_supply[k - 1].clone());
                    }
                }
                // Relocation from the outgoing interval's guidance first.
                let (zone_pools, global_pool) = world.build_pools();
                let view = WorldView { time_s: ev.time, zone_pools: &zone_pools, global_pool: &global_pool };
                let orders = policy.on_strategic_boundary(&view, &mut policy_rng)?;
                drop(zone_pools);
                world.apply_relocations(&orders, ev.time)?;
                for zone in 0..z {
                    world.waiting_by_interval[k][zone] = world.waiting[zone].len() as u64;
                    world.vacant_by_interval[k][zone] = world.vacant[zone].len() as u64;
                }
                if policy.needs_guidance() {
                    let guidance = strategic_solve(&world, prep.unwrap(), opts, k, day_seed)?;
                    policy.begin_strategic_interval(Some(&guidance));
                }
            }
        }
    }
    world.check_conservation();

    let generated = world.requests.len() as u64;
    let metrics = SimMetrics {
        generated_requests: generated,
        completed_requests: world.completed,
        abandoned_requests: world.abandoned,
        completion_rate: if generated > 0 { world.completed as f64 / generated as f64 } else { 0.0 },
        mean_pickup_distance_km: if world.matched > 0 { world.pickup_km_sum / world.matched as f64 } else { 0.0 },
        relocation_count: world.relocations,
        waiting_by_interval: world.waiting_by_interval,
        vacant_by_interval: world.vacant_by_interval,
        completed_od: world.completed_od,
    };
    Ok(DayOutcome { metrics, events: world.events })
}
