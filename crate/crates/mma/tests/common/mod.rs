//! Independent oracles shared by the integration suites: a textbook dense
//! tableau simplex, brute-force enumerations for the execution-layer
//! problems, and random strategic-instance generators.
//!
//! Each suite uses a subset of these helpers.
#![allow(dead_code)]

use mma::core::{euclid, HorizonConfig, ZoneGraph};
use mma::exec::{MatchPool, PoolCustomer, PoolVehicle};
use mma::forecast::Forecasts;
use mma::slm::{build_instance, SlmInstance, WorldCarryover};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Dense tableau simplex (test-only oracle).

/// Maximizes `c.x` subject to `a.x <= b`, `x >= 0` with `b >= 0`, using the
/// classic full-tableau method with the slack basis as the start. Returns
/// None when unbounded.
pub fn tableau_simplex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    assert!(b.iter().all(|&v| v >= 0.0), "oracle requires b >= 0");
    let width = n + m + 1;
    // Rows 0..m are constraints with slacks; row m is the objective (-c).
    let mut t = vec![vec![0.0; width]; m + 1];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][width - 1] = b[i];
    }
    for j in 0..n {
        t[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    for _ in 0..10_000 {
        // Entering column: most negative objective coefficient.
        let mut enter = None;
        let mut best = -1e-9;
        for j in 0..width - 1 {
            if t[m][j] < best {
                best = t[m][j];
                enter = Some(j);
            }
        }
        let Some(col) = enter else {
            return Some(t[m][width - 1]);
        };
        // Ratio test.
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            if t[i][col] > 1e-9 {
                let ratio = t[i][width - 1] / t[i][col];
                if ratio < best_ratio - 1e-12 {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return None;
        };
        let pivot = t[row][col];
        for v in t[row].iter_mut() {
            *v /= pivot;
        }
        for i in 0..=m {
            if i != row && t[i][col].abs() > 1e-12 {
                let factor = t[i][col];
                for j in 0..width {
                    t[i][j] -= factor * t[row][j];
                }
            }
        }
        basis[row] = col;
    }
    panic!("tableau oracle failed to converge");
}

// ---------------------------------------------------------------------------
// Brute-force oracles for the execution layer.

/// Minimum of sum_j max(0, n_s * d_j / sum(d) - x_j) over integer x with
/// 0 <= x_j <= n_d_j and sum(x) = min(n_s, sum(n_d)).
pub fn mva_bruteforce(n_s: u64, n_d: &[u64], d: &[f64]) -> f64 {
    let d_sum: f64 = d.iter().sum();
    assert!(d_sum > 0.0);
    let total: u64 = n_d.iter().sum();
    let n_s = n_s.min(total);
    let mut best = f64::INFINITY;
    fn rec(j: usize, left: u64, n_d: &[u64], share: &[f64], acc: f64, best: &mut f64) {
        if j == n_d.len() {
            if left == 0 && acc < *best {
                *best = acc;
            }
            return;
        }
        let remaining_cap: u64 = n_d[j + 1..].iter().sum();
        for x in 0..=n_d[j].min(left) {
            if left - x > remaining_cap {
                continue;
            }
            rec(j + 1, left - x, n_d, share, acc + (share[j] - x as f64).max(0.0), best);
        }
    }
    let share: Vec<f64> = d.iter().map(|&v| v / d_sum * n_s as f64).collect();
    rec(0, n_s, n_d, &share, 0.0, &mut best);
    best
}

/// Objective value of an allocation under the MVA criterion.
pub fn mva_objective(n_s: u64, n_d: &[u64], d: &[f64], x: &[u64]) -> f64 {
    let d_sum: f64 = d.iter().sum();
    let total: u64 = n_d.iter().sum();
    let n_s = n_s.min(total);
    (0..n_d.len()).map(|j| (n_s as f64 * d[j] / d_sum - x[j] as f64).max(0.0)).sum()
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

/// Minimum total cost over all matchings of exactly `target` pairs, with
/// per-destination matched counts equal to `x` when given. Cost of a pair is
/// pickup distance times arrival rank. Returns None when infeasible.
pub fn vom_bruteforce(pool: &MatchPool, x: Option<&[u64]>) -> Option<f64> {
    let nv = pool.vehicles.len();
    let nc = pool.customers.len();
    let target = match x {
        Some(x) => x.iter().sum::<u64>() as usize,
        None => nv.min(nc),
    };
    let ranks = arrival_ranks(pool);
    let mut best: Option<f64> = None;
    let mut used = vec![false; nc];
    let mut dest_counts = vec![0u64; x.map_or(0, |x| x.len())];
    fn rec(
        q: usize,
        matched: usize,
        target: usize,
        pool: &MatchPool,
        ranks: &[u64],
        x: Option<&[u64]>,
        used: &mut [bool],
        dest_counts: &mut [u64],
        acc: f64,
        best: &mut Option<f64>,
    ) {
        let nv = pool.vehicles.len();
        if matched + (nv - q) < target {
            return;
        }
        if q == nv {
            if matched == target && x.map_or(true, |x| dest_counts == x) {
                if best.map_or(true, |b| acc < b - 1e-12) {
                    *best = Some(acc);
                }
            }
            return;
        }
        // Option: vehicle q stays unmatched.
        rec(q + 1, matched, target, pool, ranks, x, used, dest_counts, acc, best);
        for p in 0..pool.customers.len() {
            if used[p] {
                continue;
            }
            let dest = pool.customers[p].dest_zone;
            if let Some(x) = x {
                if dest_counts[dest] >= x[dest] {
                    continue;
                }
            }
            used[p] = true;
            if !dest_counts.is_empty() {
                dest_counts[dest] += 1;
            }
            let cost = euclid(pool.vehicles[q].xy, pool.customers[p].xy) * ranks[p] as f64;
            rec(q + 1, matched + 1, target, pool, ranks, x, used, dest_counts, acc + cost, best);
            used[p] = false;
            if !dest_counts.is_empty() {
                dest_counts[dest] -= 1;
            }
        }
    }
    rec(0, 0, target, pool, &ranks, x, &mut used, &mut dest_counts, 0.0, &mut best);
    best
}

/// Maximum of sum_j e_j * (z_j - floor(share_j)) over integer z in the
/// rounding box with sum(z) = l. Returns None when the box is infeasible.
pub fn relocate_bruteforce(e: &[f64], l: u64) -> Option<(f64, Vec<u64>)> {
    let total: f64 = e.iter().sum();
    if total <= 0.0 {
        return Some((0.0, vec![0; e.len()]));
    }
    let shares: Vec<f64> = e.iter().map(|&v| v / total * l as f64).collect();
    let lo: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let hi: Vec<u64> = shares.iter().map(|s| s.ceil() as u64).collect();
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut z = lo.clone();
    fn rec(
        j: usize,
        left: i64,
        lo: &[u64],
        hi: &[u64],
        e: &[f64],
        z: &mut Vec<u64>,
        best: &mut Option<(f64, Vec<u64>)>,
    ) {
        if j == lo.len() {
            if left == 0 {
                let val: f64 = (0..z.len()).map(|i| e[i] * (z[i] - lo[i]) as f64).sum();
                if best.as_ref().map_or(true, |(b, _)| val > *b + 1e-12) {
                    *best = Some((val, z.clone()));
                }
            }
            return;
        }
        let tail_max: i64 = hi[j + 1..].iter().map(|&x| x as i64).sum();
        for v in lo[j]..=hi[j] {
            let rest = left - v as i64;
            if rest < 0 || rest > tail_max {
                continue;
            }
            z[j] = v;
            rec(j + 1, rest, lo, hi, e, z, best);
        }
        z[j] = lo[j];
    }
    rec(0, l as i64, &lo, &hi, e, &mut z, &mut best);
    best
}

// ---------------------------------------------------------------------------
// Random generators.

pub fn random_pool(rng: &mut ChaCha8Rng, nv: usize, nc: usize, zones: usize) -> MatchPool {
    MatchPool {
        customers: (0..nc)
            .map(|i| PoolCustomer {
                id: i as u64,
                dest_zone: rng.gen_range(0..zones),
                arrival_seq: i as u64 + 1,
                xy: [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)],
            })
            .collect(),
        vehicles: (0..nv)
            .map(|i| PoolVehicle {
                id: 100 + i as u64,
                xy: [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)],
            })
            .collect(),
    }
}

fn random_transition(rng: &mut ChaCha8Rng, z: usize) -> Vec<Vec<f64>> {
    (0..z)
        .map(|_| {
            let raw: Vec<f64> = (0..z).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let head: f64 = row[..z - 1].iter().sum();
            row[z - 1] = 1.0 - head;
            row
        })
        .collect()
}

/// Random well-formed strategic instance with the given window and zone
/// counts.
pub fn random_instance(rng: &mut ChaCha8Rng, p: usize, z: usize) -> SlmInstance {
    let mut a = vec![vec![0u32; z]; z];
    let mut dist = vec![vec![0.0; z]; z];
    for i in 0..z {
        for j in (i + 1)..z {
            let steps = rng.gen_range(1..=2u32);
            let d = rng.gen_range(1.0..10.0);
            a[i][j] = steps;
            a[j][i] = steps;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let zones = ZoneGraph::new(a, dist).unwrap();
    let horizon = HorizonConfig {
        strategic_interval_s: 600,
        matching_interval_s: 10,
        planning_intervals: p,
        alpha: rng.gen_range(0.0..0.6),
        beta: rng.gen_range(0.0..0.3),
    };
    let forecasts = Forecasts {
        demand: (0..p).map(|_| (0..z).map(|_| rng.gen_range(0.0..6.0)).collect()).collect(),
        supply: (0..p).map(|_| (0..z).map(|_| rng.gen_range(0.0..4.0)).collect()).collect(),
        transition: (0..p).map(|_| random_transition(rng, z)).collect(),
        drop_demand: (0..p).map(|_| rng.gen_range(0.0..0.5)).collect(),
        drop_supply: (0..p).map(|_| rng.gen_range(0.0..0.5)).collect(),
    };
    let carry = WorldCarryover {
        carry_demand: (0..z).map(|_| (0..z).map(|_| rng.gen_range(0.0..3.0)).collect()).collect(),
        carry_supply: (0..z).map(|_| rng.gen_range(0.0..3.0)).collect(),
        inflight_relocating: (0..p).map(|_| (0..z).map(|_| rng.gen_range(0.0..2.0)).collect()).collect(),
        inflight_occupied: (0..p).map(|_| (0..z).map(|_| rng.gen_range(0.0..2.0)).collect()).collect(),
    };
    build_instance(0, horizon, &zones, &forecasts, &carry).unwrap()
}

/// Stylized instance: no relocation/imbalance weights, full demand attrition
/// each interval, unit travel counts, and a fixed fleet (no fresh supply).
pub fn stylized_instance(rng: &mut ChaCha8Rng, p: usize) -> SlmInstance {
    let z = 3;
    let mut a = vec![vec![0u32; z]; z];
    let mut dist = vec![vec![0.0; z]; z];
    for i in 0..z {
        for j in 0..z {
            if i != j {
                a[i][j] = 1;
                dist[i][j] = 1.0;
            }
        }
    }
    let zones = ZoneGraph::new(a, dist).unwrap();
    let horizon = HorizonConfig {
        strategic_interval_s: 600,
        matching_interval_s: 10,
        planning_intervals: p,
        alpha: 0.0,
        beta: 0.0,
    };
    let forecasts = Forecasts {
        demand: (0..p).map(|_| (0..z).map(|_| rng.gen_range(0.0..6.0)).collect()).collect(),
        supply: vec![vec![0.0; z]; p],
        transition: (0..p).map(|_| random_transition(rng, z)).collect(),
        drop_demand: vec![1.0; p],
        drop_supply: vec![0.0; p],
    };
    let carry = WorldCarryover {
        carry_demand: (0..z).map(|_| (0..z).map(|_| rng.gen_range(0.0..2.0)).collect()).collect(),
        carry_supply: (0..z).map(|_| rng.gen_range(1.0..6.0)).collect(),
        inflight_relocating: vec![vec![0.0; z]; p],
        inflight_occupied: vec![vec![0.0; z]; p],
    };
    build_instance(0, horizon, &zones, &forecasts, &carry).unwrap()
}
