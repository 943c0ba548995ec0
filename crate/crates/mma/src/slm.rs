//! Strategic-layer model: window-wide match/relocation flow planning.
//!
//! The model is linear once the per-cell match-mode binaries are fixed, and
//! every derived state (waiting demand, vacant supply, matches, leftovers)
//! is an affine function of the flow variables M and E. The builder exploits
//! that: it substitutes the balance recursions symbolically and hands the LP
//! solver only M, E, and the imbalance slacks D, which keeps instances an
//! order of magnitude smaller than the naive formulation.

use crate::core::{CoreError, Guidance, HorizonConfig, ZoneGraph};
use crate::forecast::Forecasts;
use crate::linsolve::{solve_lp, LpOutcome, LpProblem, RowOp, Sense, FEAS_TOL};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SlmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("instance has {cells} match-mode cells, exceeding the enumeration limit {limit}")]
    CellLimitExceeded { cells: usize, limit: usize },
    #[error("solver failure: {0}")]
    Solver(String),
}

impl From<CoreError> for SlmError {
    fn from(e: CoreError) -> Self {
        SlmError::InvalidInput(e.to_string())
    }
}

/// Everything one strategic solve needs: forecasts over the window plus the
/// carry-over state observed at the end of interval k-1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlmInstance {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub horizon: HorizonConfig,
    pub current_interval: usize,
    pub zones: ZoneGraph,
    pub forecasts: Forecasts,
    /// carry_demand[r][j]: waiting requests in r headed to j at window start.
    pub carry_demand: Vec<Vec<f64>>,
    /// carry_supply[r]: vacant vehicles left in r at window start.
    pub carry_supply: Vec<f64>,
    /// inflight_relocating[t][r]: vehicles relocated before the window that
    /// arrive in window interval t.
    pub inflight_relocating: Vec<Vec<f64>>,
    /// inflight_occupied[t][r]: occupied vehicles from pre-window matches
    /// that finish in window interval t.
    pub inflight_occupied: Vec<Vec<f64>>,
    pub big_m: f64,
}

fn default_schema_version() -> u32 {
    INSTANCE_SCHEMA_VERSION
}

impl SlmInstance {
    pub fn p(&self) -> usize {
        self.horizon.planning_intervals
    }

    pub fn n_zones(&self) -> usize {
        self.zones.n_zones()
    }

    pub fn cells(&self) -> usize {
        self.p() * self.n_zones()
    }

    /// A bound that dominates every N^d and N^s the window can produce.
    pub fn big_m_lower_bound(&self) -> f64 {
        let demand: f64 = self.forecasts.demand.iter().flatten().sum::<f64>()
            + self.carry_demand.iter().flatten().sum::<f64>();
        let supply: f64 = self.forecasts.supply.iter().flatten().sum::<f64>()
            + self.carry_supply.iter().sum::<f64>()
            + self.inflight_relocating.iter().flatten().sum::<f64>()
            + self.inflight_occupied.iter().flatten().sum::<f64>();
        // Same-interval returns can recycle supply within the window, so the
        // safe bound counts the whole pool once per interval.
        (demand + supply) * self.p() as f64 + 1.0
    }

    pub fn validate(&self) -> Result<(), SlmError> {
        self.horizon.validate()?;
        let p = self.p();
        let z = self.n_zones();
        if z == 0 {
            return Err(SlmError::InvalidInput("no zones".into()));
        }
        self.forecasts
            .validate(p, z)
            .map_err(|e| SlmError::InvalidInput(e.to_string()))?;
        let grid_ok = |g: &Vec<Vec<f64>>, rows: usize, cols: usize| {
            g.len() == rows && g.iter().all(|r| r.len() == cols && r.iter().all(|&v| v >= 0.0 && v.is_finite()))
        };
        if !grid_ok(&self.carry_demand, z, z) {
            return Err(SlmError::InvalidInput("carry_demand must be a non-negative RxR grid".into()));
        }
        if self.carry_supply.len() != z || self.carry_supply.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(SlmError::InvalidInput("carry_supply must be non-negative per zone".into()));
        }
        if !grid_ok(&self.inflight_relocating, p, z) || !grid_ok(&self.inflight_occupied, p, z) {
            return Err(SlmError::InvalidInput("inflight grids must be non-negative p x R".into()));
        }
        if self.big_m < self.big_m_lower_bound() {
            return Err(SlmError::InvalidInput(format!(
                "big_m {} below required bound {}",
                self.big_m,
                self.big_m_lower_bound()
            )));
        }
        Ok(())
    }
}

/// Carry-over state the simulator snapshots at a strategic boundary.
#[derive(Debug, Clone, Default)]
pub struct WorldCarryover {
    pub carry_demand: Vec<Vec<f64>>,
    pub carry_supply: Vec<f64>,
    pub inflight_relocating: Vec<Vec<f64>>,
    pub inflight_occupied: Vec<Vec<f64>>,
}

pub fn build_instance(
    k: usize,
    horizon: HorizonConfig,
    zones: &ZoneGraph,
    forecasts: &Forecasts,
    carryover: &WorldCarryover,
) -> Result<SlmInstance, SlmError> {
    let mut inst = SlmInstance {
        schema_version: INSTANCE_SCHEMA_VERSION,
        horizon,
        current_interval: k,
        zones: zones.clone(),
        forecasts: forecasts.clone(),
        carry_demand: carryover.carry_demand.clone(),
        carry_supply: carryover.carry_supply.clone(),
        inflight_relocating: carryover.inflight_relocating.clone(),
        inflight_occupied: carryover.inflight_occupied.clone(),
        big_m: 0.0,
    };
    inst.big_m = inst.big_m_lower_bound();
    inst.validate()?;
    Ok(inst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlmSolution {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// m[t][i][j]: vehicles matched to demand from i to j in window slot t.
    pub m: Vec<Vec<Vec<f64>>>,
    pub e: Vec<Vec<Vec<f64>>>,
    pub l_s: Vec<Vec<f64>>,
    pub l_d: Vec<Vec<Vec<f64>>>,
    pub n_d: Vec<Vec<f64>>,
    pub n_s: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub a_d: Vec<Vec<u8>>,
    pub a_s: Vec<Vec<u8>>,
    pub objective: f64,
}

impl SlmSolution {
    /// Current-interval slice consumed by the execution layer.
    pub fn guidance(&self, interval: usize) -> Guidance {
        Guidance { interval, match_target: self.m[0].clone(), relocate_target: self.e[0].clone() }
    }
}

// ---------------------------------------------------------------------------
// Symbolic affine expressions over the LP variables.

#[derive(Debug, Clone, Default)]
pub struct AffExpr {
    pub constant: f64,
    pub terms: BTreeMap<usize, f64>,
}

impl AffExpr {
    fn constant(c: f64) -> Self {
        Self { constant: c, terms: BTreeMap::new() }
    }

    fn var(idx: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(idx, 1.0);
        Self { constant: 0.0, terms }
    }

    fn add_scaled(&mut self, other: &AffExpr, scale: f64) {
        self.constant += scale * other.constant;
        for (&i, &c) in &other.terms {
            *self.terms.entry(i).or_insert(0.0) += scale * c;
        }
    }

    fn add_var(&mut self, idx: usize, coeff: f64) {
        *self.terms.entry(idx).or_insert(0.0) += coeff;
    }

    fn coeffs(&self) -> Vec<(usize, f64)> {
        self.terms.iter().filter(|(_, &c)| c != 0.0).map(|(&i, &c)| (i, c)).collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&i, &c)| c * x[i]).sum::<f64>()
    }
}

/// Variable layout of the reduced LP.
#[derive(Debug, Clone, Copy)]
pub struct VarLayout {
    pub p: usize,
    pub zones: usize,
}

impl VarLayout {
    pub fn n_vars(&self) -> usize {
        2 * self.p * self.zones * self.zones + self.p * self.zones
    }

    pub fn m(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.zones + i) * self.zones + j
    }

    pub fn e(&self, t: usize, i: usize, j: usize) -> usize {
        self.p * self.zones * self.zones + (t * self.zones + i) * self.zones + j
    }

    pub fn d(&self, t: usize, r: usize) -> usize {
        2 * self.p * self.zones * self.zones + t * self.zones + r
    }
}

/// Derived affine states over the window, indexed by window slot (0 = k).
pub struct DerivedExprs {
    pub layout: VarLayout,
    /// waiting[t][r][j]: demand from r to j available for matching in t.
    pub waiting: Vec<Vec<Vec<AffExpr>>>,
    pub n_d: Vec<Vec<AffExpr>>,
    pub n_s: Vec<Vec<AffExpr>>,
    pub f: Vec<Vec<AffExpr>>,
    pub l_s: Vec<Vec<AffExpr>>,
}

pub fn derive_exprs(inst: &SlmInstance) -> DerivedExprs {
    let p = inst.p();
    let z = inst.n_zones();
    let layout = VarLayout { p, zones: z };
    let fc = &inst.forecasts;

    let mut waiting = vec![vec![vec![AffExpr::default(); z]; z]; p];
    let mut n_d = vec![vec![AffExpr::default(); z]; p];
    let mut n_s = vec![vec![AffExpr::default(); z]; p];
    let mut f = vec![vec![AffExpr::default(); z]; p];
    let mut l_s = vec![vec![AffExpr::default(); z]; p];

    for t in 0..p {
        for r in 0..z {
            // Waiting demand per destination: remaining (after attrition)
            // plus the newly-forecast share.
            for j in 0..z {
                let fresh = fc.demand[t][r] * fc.transition[t][r][j];
                let mut w = AffExpr::constant(fresh);
                if t == 0 {
                    w.constant += inst.carry_demand[r][j];
                } else {
                    let keep = 1.0 - fc.drop_demand[t - 1];
                    // previous leftover = waiting[t-1] - M[t-1]
                    w.add_scaled(&waiting[t - 1][r][j], keep);
                    w.add_var(layout.m(t - 1, r, j), -keep);
                }
                waiting[t][r][j] = w;
            }
            let mut nd = AffExpr::default();
            for j in 0..z {
                nd.add_scaled(&waiting[t][r][j], 1.0);
            }
            n_d[t][r] = nd;

            // Vacant supply: forecasts, carried-over idle vehicles (minus
            // departures, after attrition), pre-window arrivals, and
            // in-window relocation/trip completions.
            let mut ns = AffExpr::constant(
                fc.supply[t][r] + inst.inflight_relocating[t][r] + inst.inflight_occupied[t][r],
            );
            if t == 0 {
                ns.constant += inst.carry_supply[r];
            } else {
                let keep = 1.0 - fc.drop_supply[t - 1];
                ns.add_scaled(&l_s[t - 1][r], keep);
                for j in 0..z {
                    ns.add_var(layout.e(t - 1, r, j), -keep);
                }
            }
            for j in 0..z {
                let a = inst.zones.travel_intervals[j][r] as usize;
                if t >= a {
                    ns.add_var(layout.e(t - a, j, r), 1.0);
                    ns.add_var(layout.m(t - a, j, r), 1.0);
                }
            }
            n_s[t][r] = ns;

            let mut fr = AffExpr::default();
            for j in 0..z {
                fr.add_var(layout.m(t, r, j), 1.0);
            }
            f[t][r] = fr;

            let mut ls = n_s[t][r].clone();
            ls.add_scaled(&f[t][r], -1.0);
            l_s[t][r] = ls;
        }
    }

    DerivedExprs { layout, waiting, n_d, n_s, f, l_s }
}

/// Per-family row counts, reported by the builder for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilyCounts {
    /// M bounded by waiting demand, per (t, r, j).
    pub demand_caps: usize,
    /// Leftover supply non-negative, per (t, r).
    pub supply_nonneg: usize,
    /// Relocations bounded by leftover supply, per (t, r).
    pub relocation_caps: usize,
    /// Two-sided imbalance-deviation rows, per (t, r).
    pub imbalance: usize,
    /// Match-mode rows added when the binaries are fixed.
    pub mode_rows: usize,
}

impl FamilyCounts {
    pub fn total(&self) -> usize {
        self.demand_caps + self.supply_nonneg + self.relocation_caps + self.imbalance + self.mode_rows
    }

    pub fn expected(p: usize, zones: usize, fixed_modes: bool) -> Self {
        Self {
            demand_caps: p * zones * zones,
            supply_nonneg: p * zones,
            relocation_caps: p * zones,
            imbalance: 2 * p * zones,
            mode_rows: if fixed_modes { p * zones } else { 0 },
        }
    }
}

/// Objective/constraint regime of one LP build.
pub enum BuildMode<'a> {
    /// Match-mode binaries fixed: a_d[t][r] = 1 forces full demand matching,
    /// otherwise full supply matching. Plain SLM objective.
    Fixed { a_d: &'a [Vec<u8>] },
    /// Mode rows relaxed into the objective with the given prices.
    Relaxed { lambda_d: &'a [Vec<f64>], lambda_s: &'a [Vec<f64>] },
}

pub struct BuiltLp {
    pub lp: LpProblem,
    pub layout: VarLayout,
    /// Constant the symbolic substitution moved out of the LP objective.
    pub obj_constant: f64,
    pub counts: FamilyCounts,
}

/// Encodes `expr op 0` as an LP row.
fn push_expr_row(lp: &mut LpProblem, expr: &AffExpr, op: RowOp) {
    lp.add_row(expr.coeffs(), op, -expr.constant);
}

pub fn build_lp(inst: &SlmInstance, derived: &DerivedExprs, mode: &BuildMode) -> BuiltLp {
    let p = inst.p();
    let z = inst.n_zones();
    let layout = derived.layout;
    let mut lp = LpProblem::new(Sense::Maximize, layout.n_vars());

    // Self-relocation would re-enter the supply balance in its departure
    // interval and mint vehicles from nothing; staying put is free anyway.
    for t in 0..p {
        for r in 0..z {
            lp.upper[layout.e(t, r, r)] = 0.0;
        }
    }

    let mut counts = FamilyCounts { demand_caps: 0, supply_nonneg: 0, relocation_caps: 0, imbalance: 0, mode_rows: 0 };

    for t in 0..p {
        for r in 0..z {
            // M[t][r][j] <= waiting[t][r][j]
            for j in 0..z {
                let mut row = AffExpr::var(layout.m(t, r, j));
                row.add_scaled(&derived.waiting[t][r][j], -1.0);
                push_expr_row(&mut lp, &row, RowOp::Le);
                counts.demand_caps += 1;
            }
            // L^s >= 0 (equivalently F <= N^s)
            push_expr_row(&mut lp, &derived.l_s[t][r], RowOp::Ge);
            counts.supply_nonneg += 1;
            // sum_j E <= L^s
            let mut row = AffExpr::default();
            for j in 0..z {
                row.add_var(layout.e(t, r, j), 1.0);
            }
            row.add_scaled(&derived.l_s[t][r], -1.0);
            push_expr_row(&mut lp, &row, RowOp::Le);
            counts.relocation_caps += 1;
        }
        // Imbalance deviations: D >= +/-(gap_r - mean gap).
        let mut mean_gap = AffExpr::default();
        for i in 0..z {
            mean_gap.add_scaled(&derived.n_s[t][i], 1.0 / z as f64);
            mean_gap.add_scaled(&derived.n_d[t][i], -1.0 / z as f64);
        }
        for r in 0..z {
            let mut dev = derived.n_s[t][r].clone();
            dev.add_scaled(&derived.n_d[t][r], -1.0);
            dev.add_scaled(&mean_gap, -1.0);
            let mut row = AffExpr::var(layout.d(t, r));
            row.add_scaled(&dev, -1.0);
            push_expr_row(&mut lp, &row, RowOp::Ge);
            let mut row = AffExpr::var(layout.d(t, r));
            row.add_scaled(&dev, 1.0);
            push_expr_row(&mut lp, &row, RowOp::Ge);
            counts.imbalance += 2;
        }
    }

    if let BuildMode::Fixed { a_d } = mode {
        for t in 0..p {
            for r in 0..z {
                let mut row = derived.f[t][r].clone();
                if a_d[t][r] == 1 {
                    row.add_scaled(&derived.n_d[t][r], -1.0);
                } else {
                    row.add_scaled(&derived.n_s[t][r], -1.0);
                }
                push_expr_row(&mut lp, &row, RowOp::Ge);
                counts.mode_rows += 1;
            }
        }
    }

    // Objective.
    let (alpha, beta) = (inst.horizon.alpha, inst.horizon.beta);
    let mut obj = AffExpr::default();
    for t in 0..p {
        for r in 0..z {
            let f_coeff = match mode {
                BuildMode::Fixed { .. } => 1.0,
                BuildMode::Relaxed { lambda_d, lambda_s } => 1.0 + lambda_d[t][r] + lambda_s[t][r],
            };
            obj.add_scaled(&derived.f[t][r], f_coeff);
            obj.add_var(layout.d(t, r), -beta);
            for j in 0..z {
                obj.add_var(layout.e(t, r, j), -alpha);
            }
            if let BuildMode::Relaxed { lambda_d, lambda_s } = mode {
                obj.add_scaled(&derived.n_d[t][r], -lambda_d[t][r]);
                obj.add_scaled(&derived.n_s[t][r], -lambda_s[t][r]);
            }
        }
    }
    for (idx, c) in obj.terms.iter() {
        lp.objective[*idx] = *c;
    }

    BuiltLp { lp, layout, obj_constant: obj.constant, counts }
}

/// Reconstructs the full state vector from an LP point over (M, E, D).
pub fn expand_solution(
    inst: &SlmInstance,
    derived: &DerivedExprs,
    x: &[f64],
    a_d: &[Vec<u8>],
) -> SlmSolution {
    let p = inst.p();
    let z = inst.n_zones();
    let layout = derived.layout;
    let clamp = |v: f64| if v < 0.0 && v > -1e-6 { 0.0 } else { v };

    let mut m = vec![vec![vec![0.0; z]; z]; p];
    let mut e = vec![vec![vec![0.0; z]; z]; p];
    let mut l_d = vec![vec![vec![0.0; z]; z]; p];
    let mut n_d = vec![vec![0.0; z]; p];
    let mut n_s = vec![vec![0.0; z]; p];
    let mut f = vec![vec![0.0; z]; p];
    let mut l_s = vec![vec![0.0; z]; p];
    let mut d = vec![vec![0.0; z]; p];
    let mut a_s = vec![vec![0u8; z]; p];

    for t in 0..p {
        for r in 0..z {
            for j in 0..z {
                m[t][r][j] = clamp(x[layout.m(t, r, j)]);
                e[t][r][j] = clamp(x[layout.e(t, r, j)]);
                l_d[t][r][j] = clamp(derived.waiting[t][r][j].eval(x) - x[layout.m(t, r, j)]);
            }
            n_d[t][r] = clamp(derived.n_d[t][r].eval(x));
            n_s[t][r] = clamp(derived.n_s[t][r].eval(x));
            f[t][r] = clamp(derived.f[t][r].eval(x));
            l_s[t][r] = clamp(derived.l_s[t][r].eval(x));
            a_s[t][r] = 1 - a_d[t][r];
        }
        let mean_gap: f64 = (0..z).map(|i| n_s[t][i] - n_d[t][i]).sum::<f64>() / z as f64;
        for r in 0..z {
            d[t][r] = ((n_s[t][r] - n_d[t][r]) - mean_gap).abs();
        }
    }

    let objective = objective_value(&f, &e, &d, inst.horizon.alpha, inst.horizon.beta);
    SlmSolution {
        schema_version: INSTANCE_SCHEMA_VERSION,
        m,
        e,
        l_s,
        l_d,
        n_d,
        n_s,
        f,
        d,
        a_d: a_d.to_vec(),
        a_s,
        objective,
    }
}

pub fn objective_value(f: &[Vec<f64>], e: &[Vec<Vec<f64>>], d: &[Vec<f64>], alpha: f64, beta: f64) -> f64 {
    let total_f: f64 = f.iter().flatten().sum();
    let total_e: f64 = e.iter().flatten().flatten().sum();
    let total_d: f64 = d.iter().flatten().sum();
    total_f - alpha * total_e - beta * total_d
}

/// Solves the LP with the match-mode binaries fixed; None when that mode
/// pattern admits no feasible flow.
pub fn solve_conditional(
    inst: &SlmInstance,
    derived: &DerivedExprs,
    a_d: &[Vec<u8>],
) -> Result<Option<SlmSolution>, SlmError> {
    let built = build_lp(inst, derived, &BuildMode::Fixed { a_d });
    match solve_lp(&built.lp, FEAS_TOL).map_err(|e| SlmError::Solver(e.to_string()))? {
        LpOutcome::Optimal { x, .. } => Ok(Some(expand_solution(inst, derived, &x, a_d))),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(SlmError::Solver("conditional LP unbounded".into())),
    }
}

pub const DEFAULT_CELL_LIMIT: usize = 16;

/// Global optimum by enumerating every match-mode pattern and solving the
/// induced LP. Ties resolve to the lexicographically smallest bit pattern.
pub fn exact_solve(inst: &SlmInstance, cell_limit: usize) -> Result<SlmSolution, SlmError> {
    inst.validate()?;
    let cells = inst.cells();
    if cells > cell_limit {
        return Err(SlmError::CellLimitExceeded { cells, limit: cell_limit });
    }
    let p = inst.p();
    let z = inst.n_zones();
    let derived = derive_exprs(inst);

    let mut best: Option<SlmSolution> = None;
    for pattern in 0u64..(1u64 << cells) {
        let mut a_d = vec![vec![0u8; z]; p];
        for c in 0..cells {
            if pattern >> c & 1 == 1 {
                a_d[c / z][c % z] = 1;
            }
        }
        if let Some(sol) = solve_conditional(inst, &derived, &a_d)? {
            let better = match &best {
                None => true,
                Some(b) => sol.objective > b.objective + 1e-9,
            };
            if better {
                best = Some(sol);
            }
        }
    }
    best.ok_or_else(|| SlmError::Solver("no feasible match-mode pattern".into()))
}

/// Checks every model constraint on a candidate solution; the returned list
/// names each violated family with its cell.
pub fn check_solution(inst: &SlmInstance, sol: &SlmSolution, tol: f64) -> Vec<String> {
    let p = inst.p();
    let z = inst.n_zones();
    let fc = &inst.forecasts;
    let mut bad = Vec::new();
    let mut push = |name: &str, t: usize, r: usize, lhs: f64, rhs: f64| {
        bad.push(format!("{name} (t={t}, r={r}): {lhs} vs {rhs}"));
    };

    for t in 0..p {
        for r in 0..z {
            // Supply balance.
            let mut expected_ns =
                fc.supply[t][r] + inst.inflight_relocating[t][r] + inst.inflight_occupied[t][r];
            if t == 0 {
                expected_ns += inst.carry_supply[r];
            } else {
                let keep = 1.0 - fc.drop_supply[t - 1];
                let departed: f64 = (0..z).map(|j| sol.e[t - 1][r][j]).sum();
                expected_ns += (sol.l_s[t - 1][r] - departed) * keep;
            }
            for j in 0..z {
                let a = inst.zones.travel_intervals[j][r] as usize;
                if t >= a {
                    expected_ns += sol.e[t - a][j][r] + sol.m[t - a][j][r];
                }
            }
            if (sol.n_s[t][r] - expected_ns).abs() > tol {
                push("supply-balance", t, r, sol.n_s[t][r], expected_ns);
            }
            // Vacant split into matched and leftover.
            if (sol.n_s[t][r] - (sol.l_s[t][r] + sol.f[t][r])).abs() > tol {
                push("supply-split", t, r, sol.n_s[t][r], sol.l_s[t][r] + sol.f[t][r]);
            }

            // Demand balance per destination and in aggregate.
            let mut expected_nd = 0.0;
            for j in 0..z {
                let fresh = fc.demand[t][r] * fc.transition[t][r][j];
                let prior = if t == 0 {
                    inst.carry_demand[r][j]
                } else {
                    sol.l_d[t - 1][r][j] * (1.0 - fc.drop_demand[t - 1])
                };
                let avail = prior + fresh;
                expected_nd += avail;
                if sol.m[t][r][j] > avail + tol {
                    push("match-exceeds-waiting", t, r, sol.m[t][r][j], avail);
                }
                if (sol.l_d[t][r][j] - (avail - sol.m[t][r][j])).abs() > tol {
                    push("demand-leftover", t, r, sol.l_d[t][r][j], avail - sol.m[t][r][j]);
                }
                if sol.m[t][r][j] < -tol || sol.e[t][r][j] < -tol || sol.l_d[t][r][j] < -tol {
                    push("negative-flow", t, r, sol.m[t][r][j].min(sol.e[t][r][j]), 0.0);
                }
            }
            if (sol.n_d[t][r] - expected_nd).abs() > tol {
                push("demand-balance", t, r, sol.n_d[t][r], expected_nd);
            }
            let leftover_sum: f64 = (0..z).map(|j| sol.l_d[t][r][j]).sum();
            if (sol.n_d[t][r] - (leftover_sum + sol.f[t][r])).abs() > tol {
                push("demand-split", t, r, sol.n_d[t][r], leftover_sum + sol.f[t][r]);
            }

            // Matched total per zone.
            let m_sum: f64 = (0..z).map(|j| sol.m[t][r][j]).sum();
            if (sol.f[t][r] - m_sum).abs() > tol {
                push("match-total", t, r, sol.f[t][r], m_sum);
            }
            // Relocation capacity.
            let e_sum: f64 = (0..z).map(|j| sol.e[t][r][j]).sum();
            if e_sum > sol.l_s[t][r] + tol {
                push("relocation-cap", t, r, e_sum, sol.l_s[t][r]);
            }
            if sol.l_s[t][r] < -tol {
                push("negative-leftover-supply", t, r, sol.l_s[t][r], 0.0);
            }

            // Matching caps and the mode-linked floors.
            if sol.f[t][r] > sol.n_d[t][r] + tol {
                push("match-exceeds-demand", t, r, sol.f[t][r], sol.n_d[t][r]);
            }
            if sol.f[t][r] > sol.n_s[t][r] + tol {
                push("match-exceeds-supply", t, r, sol.f[t][r], sol.n_s[t][r]);
            }
            let ad = sol.a_d[t][r] as f64;
            let asup = sol.a_s[t][r] as f64;
            if sol.f[t][r] < sol.n_d[t][r] - inst.big_m * (1.0 - ad) - tol {
                push("mode-demand-floor", t, r, sol.f[t][r], sol.n_d[t][r] - inst.big_m * (1.0 - ad));
            }
            if sol.f[t][r] < sol.n_s[t][r] - inst.big_m * (1.0 - asup) - tol {
                push("mode-supply-floor", t, r, sol.f[t][r], sol.n_s[t][r] - inst.big_m * (1.0 - asup));
            }
            if sol.a_d[t][r] > 1 || sol.a_s[t][r] > 1 || sol.a_d[t][r] + sol.a_s[t][r] != 1 {
                push("mode-binaries", t, r, ad, asup);
            }
            if sol.d[t][r] < -tol {
                push("negative-imbalance", t, r, sol.d[t][r], 0.0);
            }
        }
        // Imbalance deviations.
        let mean_gap: f64 = (0..z).map(|i| sol.n_s[t][i] - sol.n_d[t][i]).sum::<f64>() / z as f64;
        for r in 0..z {
            let dev = (sol.n_s[t][r] - sol.n_d[t][r]) - mean_gap;
            if sol.d[t][r] < dev.abs() - tol {
                push("imbalance-deviation", t, r, sol.d[t][r], dev.abs());
            }
        }
    }

    let recomputed = objective_value(&sol.f, &sol.e, &sol.d, inst.horizon.alpha, inst.horizon.beta);
    if (recomputed - sol.objective).abs() > 1e-6 + tol {
        bad.push(format!("objective-identity: reported {} vs recomputed {}", sol.objective, recomputed));
    }
    bad
}

pub fn save_instance(inst: &SlmInstance, path: &std::path::Path) -> Result<(), SlmError> {
    let json = serde_json::to_string_pretty(inst).map_err(|e| SlmError::InvalidInput(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| SlmError::InvalidInput(e.to_string()))?;
    Ok(())
}

pub fn load_instance(path: &std::path::Path) -> Result<SlmInstance, SlmError> {
    let text = std::fs::read_to_string(path).map_err(|e| SlmError::InvalidInput(e.to_string()))?;
    let inst: SlmInstance =
        serde_json::from_str(&text).map_err(|e| SlmError::InvalidInput(e.to_string()))?;
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ZoneGraph;

    pub fn small_instance(p: usize, z: usize, demand: f64, supply: f64) -> SlmInstance {
        let horizon = HorizonConfig {
            strategic_interval_s: 600,
            matching_interval_s: 10,
            planning_intervals: p,
            alpha: 0.5,
            beta: 0.2,
        };
        let mut a = vec![vec![1u32; z]; z];
        let mut dist = vec![vec![1.0; z]; z];
        for i in 0..z {
            a[i][i] = 0;
            dist[i][i] = 0.0;
        }
        let zones = ZoneGraph::new(a, dist).unwrap();
        let forecasts = Forecasts {
            demand: vec![vec![demand; z]; p],
            supply: vec![vec![supply; z]; p],
            transition: vec![vec![vec![1.0 / z as f64; z]; z]; p],
            drop_demand: vec![0.5; p],
            drop_supply: vec![0.3; p],
        };
        let carry = WorldCarryover {
            carry_demand: vec![vec![0.0; z]; z],
            carry_supply: vec![0.0; z],
            inflight_relocating: vec![vec![0.0; z]; p],
            inflight_occupied: vec![vec![0.0; z]; p],
        };
        build_instance(0, horizon, &zones, &forecasts, &carry).unwrap()
    }

    #[test]
    fn zero_instance_is_trivially_optimal() {
        let inst = small_instance(2, 2, 0.0, 0.0);
        let sol = exact_solve(&inst, DEFAULT_CELL_LIMIT).unwrap();
        assert!(sol.objective.abs() < 1e-7);
        assert!(check_solution(&inst, &sol, 1e-6).is_empty());
    }

    #[test]
    fn single_cell_balanced_market() {
        let mut inst = small_instance(1, 1, 5.0, 5.0);
        inst.horizon.alpha = 0.0;
        inst.horizon.beta = 0.0;
        let sol = exact_solve(&inst, DEFAULT_CELL_LIMIT).unwrap();
        assert!((sol.f[0][0] - 5.0).abs() < 1e-6, "f = {}", sol.f[0][0]);
        assert!((sol.objective - 5.0).abs() < 1e-6);
        assert!(check_solution(&inst, &sol, 1e-6).is_empty());
    }

    #[test]
    fn single_cell_takes_min_side() {
        let mut inst = small_instance(1, 1, 3.0, 5.0);
        inst.horizon.beta = 0.0;
        let sol = exact_solve(&inst, DEFAULT_CELL_LIMIT).unwrap();
        assert!((sol.f[0][0] - 3.0).abs() < 1e-6);
        assert!(check_solution(&inst, &sol, 1e-6).is_empty());
    }

    #[test]
    fn family_counts_match_closed_form() {
        let inst = small_instance(3, 3, 2.0, 2.0);
        let derived = derive_exprs(&inst);
        let a_d = vec![vec![1u8; 3]; 3];
        let built = build_lp(&inst, &derived, &BuildMode::Fixed { a_d: &a_d });
        assert_eq!(built.counts, FamilyCounts::expected(3, 3, true));
        let lam = vec![vec![0.0; 3]; 3];
        let built = build_lp(&inst, &derived, &BuildMode::Relaxed { lambda_d: &lam, lambda_s: &lam });
        assert_eq!(built.counts, FamilyCounts::expected(3, 3, false));
        assert_eq!(built.lp.rows.len(), built.counts.total());
    }

    #[test]
    fn checker_flags_inflated_matches() {
        let inst = small_instance(2, 2, 4.0, 4.0);
        let mut sol = exact_solve(&inst, DEFAULT_CELL_LIMIT).unwrap();
        assert!(check_solution(&inst, &sol, 1e-6).is_empty());
        sol.f[0][0] += 1.0;
        let bad = check_solution(&inst, &sol, 1e-6);
        assert!(bad.iter().any(|s| s.contains("match-exceeds-demand") || s.contains("match-total")));
    }

    #[test]
    fn oversize_enumeration_refused() {
        let inst = small_instance(9, 3, 1.0, 1.0);
        assert!(matches!(
            exact_solve(&inst, DEFAULT_CELL_LIMIT),
            Err(SlmError::CellLimitExceeded { cells: 27, limit: 16 })
        ));
    }

    #[test]
    fn instance_round_trips_through_json() {
        let inst = small_instance(2, 2, 3.0, 4.0);
        let dir = std::env::temp_dir().join("mma_slm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("instance.json");
        save_instance(&inst, &path).unwrap();
        let loaded = load_instance(&path).unwrap();
        assert_eq!(loaded.current_interval, inst.current_interval);
        assert_eq!(loaded.forecasts.demand, inst.forecasts.demand);
        let a = serde_json::to_string(&inst).unwrap();
        let b = serde_json::to_string(&loaded).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relocation_pays_off_when_free_supply_sits_next_door() {
        // One zone floods with supply, the other with demand; with cheap
        // relocation the optimizer ships vehicles over for the next slot.
        let mut inst = small_instance(2, 2, 0.0, 0.0);
        inst.horizon.alpha = 0.1;
        inst.horizon.beta = 0.0;
        inst.forecasts.supply[0][0] = 6.0;
        inst.forecasts.demand[1][1] = 4.0;
        inst.big_m = inst.big_m_lower_bound();
        let sol = exact_solve(&inst, DEFAULT_CELL_LIMIT).unwrap();
        // Two imports suffice: the intra-zone match returns to the pool in
        // its own interval (zero same-zone travel intervals) and serves the
        // second half of the demand.
        assert!((sol.e[0][0][1] - 2.0).abs() < 1e-6, "e = {:?}", sol.e[0][0]);
        assert!((sol.f[1][1] - 4.0).abs() < 1e-6);
        assert!((sol.objective - 3.8).abs() < 1e-6);
        assert!(check_solution(&inst, &sol, 1e-6).is_empty());
    }
}
