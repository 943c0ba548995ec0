//! Execution layer: turns strategic guidance into concrete per-zone vehicle
//! assignments each matching interval, and integer relocation orders at
//! strategic boundaries.

use crate::core::euclid;
use crate::linsolve::{solve_mcf, McfArc, McfError, McfProblem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("allocation to destination {destination} exceeds its waiting customers")]
    InfeasibleAllocation { destination: usize },
    #[error("flow solver failure: {0}")]
    Flow(String),
}

impl From<McfError> for ExecError {
    fn from(e: McfError) -> Self {
        ExecError::Flow(e.to_string())
    }
}

/// Customer priority by arrival rank; identity keeps earlier arrivals
/// strictly cheaper to serve.
pub type PriorityFn = fn(u64) -> f64;

pub fn identity_priority(rank: u64) -> f64 {
    rank as f64
}

/// Tracks per-OD guidance targets against completions within one strategic
/// interval.
#[derive(Debug, Clone)]
pub struct MatchLedger {
    /// Fractional targets straight from the strategic solution.
    pub targets: Vec<Vec<f64>>,
    pub completed: Vec<Vec<u64>>,
}

impl MatchLedger {
    pub fn new(targets: Vec<Vec<f64>>) -> Self {
        let z = targets.len();
        Self { targets, completed: vec![vec![0; z]; z] }
    }

    /// Uncompleted target row for origin zone r.
    pub fn remaining(&self, r: usize) -> Vec<f64> {
        self.targets[r]
            .iter()
            .zip(&self.completed[r])
            .map(|(&m, &u)| (m - u as f64).max(0.0))
            .collect()
    }

    pub fn record(&mut self, r: usize, j: usize, count: u64) {
        self.completed[r][j] += count;
    }
}

#[derive(Debug, Clone)]
pub struct PoolCustomer {
    pub id: u64,
    pub dest_zone: usize,
    /// Strictly increasing with generation time within the pool.
    pub arrival_seq: u64,
    pub xy: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct PoolVehicle {
    pub id: u64,
    pub xy: [f64; 2],
}

#[derive(Debug, Clone, Default)]
pub struct MatchPool {
    pub customers: Vec<PoolCustomer>,
    pub vehicles: Vec<PoolVehicle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub vehicle: u64,
    pub customer: u64,
    pub pickup_km: f64,
}

/// One line of the assignment event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub time_s: f64,
    pub zone: usize,
    pub vehicle: u64,
    pub request: u64,
    pub pickup_km: f64,
}

#[derive(Debug, Clone)]
pub struct MvaResult {
    pub x: Vec<u64>,
    /// Set when the guidance row was exhausted and allocation fell back to
    /// waiting-demand proportions.
    pub used_waiting_fallback: bool,
}

/// Splits a zone's vacant vehicles across destinations proportionally to the
/// uncompleted guidance, never exceeding waiting demand per destination.
pub fn mva_allocate(
    n_s: u64,
    n_d: &[u64],
    d: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<MvaResult, ExecError> {
    let z = n_d.len();
    if d.len() != z {
        return Err(ExecError::InvalidInput("target/demand length mismatch".into()));
    }
    if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(ExecError::InvalidInput("targets must be finite and non-negative".into()));
    }
    let total_demand: u64 = n_d.iter().sum();
    let n_s = n_s.min(total_demand);
    if n_s == 0 {
        return Ok(MvaResult { x: vec![0; z], used_waiting_fallback: false });
    }

    let mut d_sum: f64 = d.iter().sum();
    let mut weights: Vec<f64> = d.to_vec();
    let mut used_waiting_fallback = false;
    if d_sum <= 0.0 {
        weights = n_d.iter().map(|&v| v as f64).collect();
        d_sum = weights.iter().sum();
        used_waiting_fallback = true;
    }

    let share = |j: usize, weights: &[f64]| weights[j] / d_sum * n_s as f64;
    let mut x: Vec<u64> = (0..z).map(|j| (share(j, &weights).floor() as u64).min(n_d[j])).collect();
    let mut m = n_s - x.iter().sum::<u64>();

    // Zones whose waiting demand can absorb one more than the floor.
    let open: Vec<usize> = (0..z).filter(|&j| n_d[j] > share(j, &weights).floor() as u64).collect();
    if (open.len() as u64) > m {
        let mut theta: Vec<(f64, usize)> =
            open.iter().map(|&j| (share(j, &weights) - share(j, &weights).floor(), j)).collect();
        theta.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in theta.iter().take(m as usize) {
            x[j] += 1;
        }
        m = 0;
    } else {
        for &j in &open {
            x[j] += 1;
        }
        m -= open.len() as u64;
    }

    while m > 0 {
        // Zones with both unmatched demand and uncompleted targets.
        let delta: Vec<f64> = (0..z)
            .map(|j| if n_d[j] > x[j] { (weights[j] - x[j] as f64).max(0.0) } else { 0.0 })
            .collect();
        let hot: Vec<usize> = (0..z).filter(|&j| delta[j] > 0.0).collect();
        if m > hot.len() as u64 && !hot.is_empty() {
            for &j in &hot {
                x[j] += 1;
            }
            m -= hot.len() as u64;
        } else if hot.is_empty() {
            let open: Vec<usize> = (0..z).filter(|&j| n_d[j] > x[j]).collect();
            debug_assert!(!open.is_empty());
            let j = open[rng.gen_range(0..open.len())];
            x[j] += 1;
            m -= 1;
        } else {
            let mut ranked: Vec<(f64, usize)> = hot.iter().map(|&j| (delta[j], j)).collect();
            ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, j) in ranked.iter().take(m as usize) {
                x[j] += 1;
            }
            m = 0;
        }
    }

    Ok(MvaResult { x, used_waiting_fallback })
}

fn arrival_ranks(pool: &MatchPool) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pool.customers.len()).collect();
    order.sort_by_key(|&i| pool.customers[i].arrival_seq);
    let mut rank = vec![0u64; pool.customers.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos as u64 + 1;
    }
    rank
}

/// Min-cost assignment of vehicles to customers weighted by pick-up distance
/// and arrival priority. With per-destination counts `x` given, exactly
/// x[j] customers headed to j are served; without it the smaller pool side
/// is fully matched.
pub fn vom_match(
    pool: &MatchPool,
    x: Option<&[u64]>,
    priority: PriorityFn,
) -> Result<Vec<Assignment>, ExecError> {
    let nv = pool.vehicles.len();
    let nc = pool.customers.len();
    if nv == 0 || (nc == 0 && x.map_or(true, |x| x.iter().all(|&v| v == 0))) {
        if let Some(x) = x {
            if x.iter().any(|&v| v > 0) {
                return Err(ExecError::InvalidInput("allocation given for an empty pool".into()));
            }
        }
        return Ok(Vec::new());
    }
    let ranks = arrival_ranks(pool);

    // Node layout: vehicles | customers | zone-or-sink tail.
    let veh = |q: usize| q;
    let cust = |p: usize| nv + p;

    let mut arcs: Vec<McfArc> = Vec::new();
    let mut supplies;
    let pair_arc_start;

    match x {
        Some(x) => {
            let z = x.len();
            let total: u64 = x.iter().sum();
            if total != nv as u64 {
                return Err(ExecError::InvalidInput(format!(
                    "allocation assigns {total} vehicles but the pool has {nv}"
                )));
            }
            for (j, &need) in x.iter().enumerate() {
                let have = pool.customers.iter().filter(|c| c.dest_zone == j).count() as u64;
                if need > have {
                    return Err(ExecError::InfeasibleAllocation { destination: j });
                }
            }
            supplies = vec![0i64; nv + nc + z];
            for q in 0..nv {
                supplies[veh(q)] = 1;
            }
            for (j, &need) in x.iter().enumerate() {
                supplies[nv + nc + j] = -(need as i64);
            }
            pair_arc_start = arcs.len();
            for q in 0..nv {
                for p in 0..nc {
                    arcs.push(McfArc {
                        tail: veh(q),
                        head: cust(p),
                        capacity: 1,
                        cost: euclid(pool.vehicles[q].xy, pool.customers[p].xy)
                            * priority(ranks[p]),
                    });
                }
            }
            for (p, c) in pool.customers.iter().enumerate() {
                if c.dest_zone >= z {
                    return Err(ExecError::InvalidInput(format!(
                        "customer destination {} outside allocation range",
                        c.dest_zone
                    )));
                }
                arcs.push(McfArc { tail: cust(p), head: nv + nc + c.dest_zone, capacity: 1, cost: 0.0 });
            }
            // Vehicles can exceed the allocation total only via the earlier
            // check; supplies already balance (sum x = nv).
        }
        None => {
            let flow = nv.min(nc) as i64;
            let source = nv + nc;
            let sink = nv + nc + 1;
            supplies = vec![0i64; nv + nc + 2];
            supplies[source] = flow;
            supplies[sink] = -flow;
            for q in 0..nv {
                arcs.push(McfArc { tail: source, head: veh(q), capacity: 1, cost: 0.0 });
            }
            pair_arc_start = arcs.len();
            for q in 0..nv {
                for p in 0..nc {
                    arcs.push(McfArc {
                        tail: veh(q),
                        head: cust(p),
                        capacity: 1,
                        cost: euclid(pool.vehicles[q].xy, pool.customers[p].xy)
                            * priority(ranks[p]),
                    });
                }
            }
            for p in 0..nc {
                arcs.push(McfArc { tail: cust(p), head: sink, capacity: 1, cost: 0.0 });
            }
        }
    }

    let flow = solve_mcf(&McfProblem { supplies, arcs })?;
    let mut out = Vec::new();
    for (idx, &f) in flow.flows.iter().enumerate().skip(pair_arc_start).take(nv * nc) {
        if f > 0 {
            let k = idx - pair_arc_start;
            let (q, p) = (k / nc, k % nc);
            out.push(Assignment {
                vehicle: pool.vehicles[q].id,
                customer: pool.customers[p].id,
                pickup_km: euclid(pool.vehicles[q].xy, pool.customers[p].xy),
            });
        }
    }
    Ok(out)
}

/// Integer relocation orders from fractional guidance: round up when the
/// idle pool covers it, otherwise distribute the whole pool proportionally
/// with leftovers favoring the largest guidance entries.
pub fn relocate_greedy(e: &[f64], l: u64) -> Vec<u64> {
    let z = e.len();
    let total: f64 = e.iter().sum();
    if total <= 0.0 {
        return vec![0; z];
    }
    let ceil_sum: u64 = e.iter().map(|&v| v.ceil() as u64).sum();
    if l > ceil_sum {
        return e.iter().map(|&v| v.ceil() as u64).collect();
    }
    let share = |j: usize| e[j] / total * l as f64;
    let mut zvec: Vec<u64> = (0..z).map(|j| share(j).floor() as u64).collect();
    let mut leftover = l - zvec.iter().sum::<u64>();
    // Only fractional shares have headroom below their ceiling.
    let mut frac: Vec<usize> = (0..z).filter(|&j| share(j).fract() > 1e-12).collect();
    frac.sort_by(|&a, &b| e[b].partial_cmp(&e[a]).unwrap().then(a.cmp(&b)));
    for &j in &frac {
        if leftover == 0 {
            break;
        }
        zvec[j] += 1;
        leftover -= 1;
    }
    debug_assert_eq!(leftover, 0);
    zvec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchCase {
    FullMatchOpenTargets,
    AllocationBound,
    TargetsMet,
}

#[derive(Debug)]
pub struct IntervalOutcome {
    pub assignments: Vec<Assignment>,
    pub case: MatchCase,
    pub used_waiting_fallback: bool,
}

/// One matching tick for origin zone r: pick the case from the ledger and
/// pool counts, run the matcher, and record completions.
pub fn run_matching_interval(
    ledger: &mut MatchLedger,
    r: usize,
    pool: &MatchPool,
    priority: PriorityFn,
    rng: &mut ChaCha8Rng,
) -> Result<IntervalOutcome, ExecError> {
    let z = ledger.targets.len();
    if pool.vehicles.is_empty() || pool.customers.is_empty() {
        return Ok(IntervalOutcome {
            assignments: Vec::new(),
            case: MatchCase::TargetsMet,
            used_waiting_fallback: false,
        });
    }
    let d = ledger.remaining(r);
    let mut n_d = vec![0u64; z];
    for c in &pool.customers {
        if c.dest_zone >= z {
            return Err(ExecError::InvalidInput(format!("customer destination {} out of range", c.dest_zone)));
        }
        n_d[c.dest_zone] += 1;
    }
    let n_s = pool.vehicles.len() as u64;
    let waiting: u64 = n_d.iter().sum();
    let targets_open = d.iter().any(|&v| v > 1e-9);

    let (case, x, fallback) = if !targets_open {
        (MatchCase::TargetsMet, None, false)
    } else if n_s >= waiting {
        (MatchCase::FullMatchOpenTargets, None, false)
    } else {
        let mva = mva_allocate(n_s, &n_d, &d, rng)?;
        (MatchCase::AllocationBound, Some(mva.x), mva.used_waiting_fallback)
    };

    let assignments = vom_match(pool, x.as_deref(), priority)?;
    for a in &assignments {
        let dest = pool
            .customers
            .iter()
            .find(|c| c.id == a.customer)
            .map(|c| c.dest_zone)
            .expect("assignment references a pooled customer");
        ledger.record(r, dest, 1);
    }
    Ok(IntervalOutcome { assignments, case, used_waiting_fallback: fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn allocation_worked_example() {
        let res = mva_allocate(5, &[30, 20, 20], &[9.0, 3.0, 3.0], &mut rng()).unwrap();
        assert_eq!(res.x, vec![3, 1, 1]);
        assert!(!res.used_waiting_fallback);
    }

    #[test]
    fn allocation_zero_vehicles() {
        let res = mva_allocate(0, &[5, 5], &[1.0, 1.0], &mut rng()).unwrap();
        assert_eq!(res.x, vec![0, 0]);
    }

    #[test]
    fn allocation_exhausted_targets_fall_back() {
        let res = mva_allocate(3, &[4, 2], &[0.0, 0.0], &mut rng()).unwrap();
        assert!(res.used_waiting_fallback);
        assert_eq!(res.x.iter().sum::<u64>(), 3);
        assert!(res.x[0] <= 4 && res.x[1] <= 2);
    }

    #[test]
    fn allocation_caps_at_total_demand() {
        let res = mva_allocate(10, &[2, 1], &[5.0, 5.0], &mut rng()).unwrap();
        assert_eq!(res.x.iter().sum::<u64>(), 3);
        assert_eq!(res.x, vec![2, 1]);
    }

    fn customer(id: u64, dest: usize, seq: u64, x: f64, y: f64) -> PoolCustomer {
        PoolCustomer { id, dest_zone: dest, arrival_seq: seq, xy: [x, y] }
    }

    fn vehicle(id: u64, x: f64, y: f64) -> PoolVehicle {
        PoolVehicle { id, xy: [x, y] }
    }

    #[test]
    fn single_pair_matches() {
        let pool = MatchPool {
            customers: vec![customer(1, 0, 1, 3.0, 4.0)],
            vehicles: vec![vehicle(7, 0.0, 0.0)],
        };
        let a = vom_match(&pool, None, identity_priority).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].vehicle, a[0].customer), (7, 1));
        assert!((a[0].pickup_km - 5.0).abs() < 1e-12);
    }

    #[test]
    fn allocation_forces_farther_customer() {
        // Nearer customer heads to zone 0, but the allocation demands zone 1.
        let pool = MatchPool {
            customers: vec![customer(1, 0, 1, 1.0, 0.0), customer(2, 1, 2, 5.0, 0.0)],
            vehicles: vec![vehicle(7, 0.0, 0.0)],
        };
        let a = vom_match(&pool, Some(&[0, 1]), identity_priority).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].customer, 2);
    }

    #[test]
    fn infeasible_allocation_names_destination() {
        let pool = MatchPool {
            customers: vec![customer(1, 0, 1, 1.0, 0.0)],
            vehicles: vec![vehicle(7, 0.0, 0.0)],
        };
        match vom_match(&pool, Some(&[0, 1]), identity_priority) {
            Err(ExecError::InfeasibleAllocation { destination }) => assert_eq!(destination, 1),
            other => panic!("expected infeasible allocation, got {other:?}"),
        }
    }

    #[test]
    fn earlier_arrival_wins_equal_distances() {
        let pool = MatchPool {
            customers: vec![customer(1, 0, 2, 1.0, 0.0), customer(2, 0, 1, -1.0, 0.0)],
            vehicles: vec![vehicle(7, 0.0, 0.0)],
        };
        let a = vom_match(&pool, None, identity_priority).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].customer, 2);
    }

    #[test]
    fn relocation_examples() {
        assert_eq!(relocate_greedy(&[2.0, 3.0], 5), vec![2, 3]);
        assert_eq!(relocate_greedy(&[1.4, 0.9, 0.7], 4), vec![2, 2, 0]);
        assert_eq!(relocate_greedy(&[5.2], 3), vec![3]);
        assert_eq!(relocate_greedy(&[0.0, 0.0], 4), vec![0, 0]);
        // Ample idle pool: round the guidance up.
        assert_eq!(relocate_greedy(&[1.4, 0.9, 0.7], 10), vec![2, 1, 1]);
    }

    #[test]
    fn relocation_stays_within_rounding_box() {
        let e = [3.3, 0.2, 1.5, 0.0];
        for l in 0..5u64 {
            let zv = relocate_greedy(&e, l);
            assert_eq!(zv.iter().sum::<u64>(), l.min(e.iter().map(|v| v.ceil() as u64).sum()));
            let total: f64 = e.iter().sum();
            for (j, &z) in zv.iter().enumerate() {
                let share = e[j] / total * l as f64;
                assert!(z as f64 >= share.floor() - 1e-9);
                assert!(z as f64 <= share.ceil() + 1e-9);
            }
        }
    }

    #[test]
    fn interval_follows_remaining_targets() {
        // Targets 10/4/6 with 1/1/3 already done, five vehicles, plenty of
        // waiting demand: three go to the first zone, one each to the rest.
        let mut ledger = MatchLedger::new(vec![
            vec![10.0, 4.0, 6.0],
            vec![0.0; 3],
            vec![0.0; 3],
        ]);
        ledger.completed[0] = vec![1, 1, 3];
        let mut pool = MatchPool::default();
        let mut seq = 0;
        for (dest, count) in [(0usize, 30), (1, 20), (2, 20)] {
            for _ in 0..count {
                seq += 1;
                pool.customers.push(customer(seq, dest, seq, (seq % 7) as f64 * 0.1, 0.0));
            }
        }
        for v in 0..5 {
            pool.vehicles.push(vehicle(1000 + v, v as f64 * 0.1, 1.0));
        }
        let out = run_matching_interval(&mut ledger, 0, &pool, identity_priority, &mut rng()).unwrap();
        assert_eq!(out.case, MatchCase::AllocationBound);
        assert_eq!(out.assignments.len(), 5);
        assert_eq!(ledger.completed[0], vec![4, 2, 4]);
    }

    #[test]
    fn met_targets_switch_to_full_matching() {
        let mut ledger = MatchLedger::new(vec![vec![1.0, 0.0], vec![0.0; 2]]);
        ledger.completed[0] = vec![1, 0];
        let pool = MatchPool {
            customers: (0..5).map(|i| customer(i, 0, i + 1, i as f64, 0.0)).collect(),
            vehicles: vec![vehicle(100, 0.0, 0.0), vehicle(101, 1.0, 0.0)],
        };
        let mut ledger2 = ledger.clone();
        let out = run_matching_interval(&mut ledger2, 0, &pool, identity_priority, &mut rng()).unwrap();
        assert_eq!(out.case, MatchCase::TargetsMet);
        assert_eq!(out.assignments.len(), 2);
    }

    #[test]
    fn empty_pool_is_a_no_op() {
        let mut ledger = MatchLedger::new(vec![vec![5.0]]);
        let out =
            run_matching_interval(&mut ledger, 0, &MatchPool::default(), identity_priority, &mut rng())
                .unwrap();
        assert!(out.assignments.is_empty());
    }
}
