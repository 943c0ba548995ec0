//! Reference dispatch policies: first-come-first-served greedy matching and
//! optimal batch matching over a shared pool.

use crate::core::euclid;
use crate::exec::{vom_match, Assignment, ExecError, MatchPool, PriorityFn};

/// Queue-order greedy: each customer, earliest arrival first, takes the
/// nearest still-unassigned vehicle. Ties go to the lower vehicle id.
pub fn fcfs_match(pool: &MatchPool) -> Vec<Assignment> {
    let mut order: Vec<usize> = (0..pool.customers.len()).collect();
    order.sort_by_key(|&i| pool.customers[i].arrival_seq);
    let mut taken = vec![false; pool.vehicles.len()];
    let mut out = Vec::new();
    for &ci in &order {
        let c = &pool.customers[ci];
        let mut best: Option<(f64, u64, usize)> = None;
        for (vi, v) in pool.vehicles.iter().enumerate() {
            if taken[vi] {
                continue;
            }
            let dist = euclid(v.xy, c.xy);
            let key = (dist, v.id, vi);
            if best.map_or(true, |(bd, bid, _)| dist < bd || (dist == bd && v.id < bid)) {
                best = Some(key);
            }
        }
        let Some((dist, vid, vi)) = best else { break };
        taken[vi] = true;
        out.push(Assignment { vehicle: vid, customer: c.id, pickup_km: dist });
    }
    out
}

/// Optimal batch matching: min-cost assignment of the smaller pool side,
/// with waiting time folded into the edge cost through the priority weight.
pub fn batch_match(pool: &MatchPool, priority: PriorityFn) -> Result<Vec<Assignment>, ExecError> {
    vom_match(pool, None, priority)
}
