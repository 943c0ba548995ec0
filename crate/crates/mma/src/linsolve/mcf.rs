//! Min-cost-flow via successive shortest augmenting paths with potentials.
//!
//! Supplies and capacities are integers, so every augmentation is integral
//! and the returned flow is integral. Costs are reals; potentials keep
//! reduced costs non-negative so Dijkstra drives each augmentation, with a
//! Bellman-Ford warm start when the input has negative arc costs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

const COST_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum McfError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("infeasible: supplies cannot be routed")]
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct McfArc {
    pub tail: usize,
    pub head: usize,
    pub capacity: i64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct McfProblem {
    /// b(i): positive = supply, negative = demand. Must sum to zero.
    pub supplies: Vec<i64>,
    pub arcs: Vec<McfArc>,
}

#[derive(Debug, Clone)]
pub struct McfFlow {
    /// Flow on each input arc, same order as `McfProblem::arcs`.
    pub flows: Vec<i64>,
    pub cost: f64,
}

struct Residual {
    // Per node: indices into edge arrays.
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<f64>,
}

impl Residual {
    fn new(n: usize, arcs: &[McfArc]) -> Self {
        let mut r = Residual { adj: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new(), cost: Vec::new() };
        for a in arcs {
            r.adj[a.tail].push(r.to.len());
            r.to.push(a.head);
            r.cap.push(a.capacity);
            r.cost.push(a.cost);
            r.adj[a.head].push(r.to.len());
            r.to.push(a.tail);
            r.cap.push(0);
            r.cost.push(-a.cost);
        }
        r
    }
}

pub fn solve_mcf(p: &McfProblem) -> Result<McfFlow, McfError> {
    let n = p.supplies.len();
    for (i, a) in p.arcs.iter().enumerate() {
        if a.tail >= n || a.head >= n {
            return Err(McfError::InvalidProblem(format!("arc {i}: node out of range")));
        }
        if a.capacity < 0 {
            return Err(McfError::InvalidProblem(format!("arc {i}: negative capacity")));
        }
        if !a.cost.is_finite() {
            return Err(McfError::InvalidProblem(format!("arc {i}: non-finite cost")));
        }
    }
    if p.supplies.iter().sum::<i64>() != 0 {
        return Err(McfError::InvalidProblem("supplies must sum to zero".into()));
    }

    let mut res = Residual::new(n, &p.arcs);
    let mut excess: Vec<i64> = p.supplies.clone();
    let mut pi = vec![0.0; n];

    // Bellman-Ford potentials when negative costs are present.
    if p.arcs.iter().any(|a| a.cost < 0.0) {
        for _ in 0..n {
            let mut changed = false;
            for a in &p.arcs {
                if a.capacity > 0 && pi[a.tail] + a.cost < pi[a.head] - COST_EPS {
                    pi[a.head] = pi[a.tail] + a.cost;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    loop {
        let Some(source) = (0..n).find(|&i| excess[i] > 0) else { break };

        // Dijkstra over reduced costs from the current surplus node.
        let mut dist = vec![f64::INFINITY; n];
        let mut prev_edge = vec![usize::MAX; n];
        dist[source] = 0.0;
        let mut heap: BinaryHeap<Reverse<(OrdF64, usize)>> = BinaryHeap::new();
        heap.push(Reverse((OrdF64(0.0), source)));
        while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
            if d > dist[u] + COST_EPS {
                continue;
            }
            for &e in &res.adj[u] {
                if res.cap[e] <= 0 {
                    continue;
                }
                let v = res.to[e];
                let nd = d + res.cost[e] + pi[u] - pi[v];
                if nd < dist[v] - COST_EPS {
                    dist[v] = nd;
                    prev_edge[v] = e;
                    heap.push(Reverse((OrdF64(nd), v)));
                }
            }
        }

        // Nearest reachable deficit node.
        let mut sink = usize::MAX;
        for i in 0..n {
            if excess[i] < 0 && dist[i].is_finite() && (sink == usize::MAX || dist[i] < dist[sink]) {
                sink = i;
            }
        }
        if sink == usize::MAX {
            return Err(McfError::Infeasible);
        }

        for i in 0..n {
            if dist[i].is_finite() {
                pi[i] += dist[i];
            }
        }

        // Bottleneck along the path.
        let mut push = excess[source].min(-excess[sink]);
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            push = push.min(res.cap[e]);
            v = res.to[e ^ 1];
        }
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            res.cap[e] -= push;
            res.cap[e ^ 1] += push;
            v = res.to[e ^ 1];
        }
        excess[source] -= push;
        excess[sink] += push;
    }

    let mut flows = Vec::with_capacity(p.arcs.len());
    let mut cost = 0.0;
    for (i, a) in p.arcs.iter().enumerate() {
        let f = res.cap[2 * i + 1]; // backward residual = flow pushed
        flows.push(f);
        cost += a.cost * f as f64;
    }
    Ok(McfFlow { flows, cost })
}

#[derive(PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
