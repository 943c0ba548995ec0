//! Revised-simplex LP solver.
//!
//! Two-phase method over a standard-form conversion. Variables with finite
//! lower bounds are shifted, upper-bounded-only variables are mirrored, free
//! variables are split; finite upper bounds that remain become explicit rows.
//! The basis inverse is kept as a dense row-major matrix with periodic
//! reinversion. Pricing is Dantzig, switching to Bland's rule after a run of
//! degenerate pivots to break cycles.

use thiserror::Error;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Reduced-cost (dual feasibility) tolerance.
pub const REDUCED_COST_TOL: f64 = 1e-9;

const REINVERT_EVERY: usize = 100;
const BLAND_AFTER_DEGENERATE: usize = 50;
const MAX_ITERS: usize = 50_000;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Le,
    Ge,
    Eq,
}

/// One constraint row in sparse form.
#[derive(Debug, Clone)]
pub struct SparseRow {
    pub coeffs: Vec<(usize, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<SparseRow>,
}

impl LpProblem {
    /// All variables non-negative, no upper bounds.
    pub fn new(sense: Sense, n_vars: usize) -> Self {
        Self {
            sense,
            objective: vec![0.0; n_vars],
            lower: vec![0.0; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, op: RowOp, rhs: f64) {
        self.rows.push(SparseRow { coeffs, op, rhs });
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::InvalidProblem("bound vectors must match variable count".into()));
        }
        for (i, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::InvalidProblem(format!("objective[{i}] not finite")));
            }
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] + FEAS_TOL {
                return Err(LpError::InvalidProblem(format!("variable {i}: lower > upper")));
            }
            if self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(LpError::InvalidProblem(format!("variable {i}: NaN bound")));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::InvalidProblem(format!("row {r}: rhs not finite")));
            }
            for &(j, v) in &row.coeffs {
                if j >= n {
                    return Err(LpError::InvalidProblem(format!("row {r}: variable index {j} out of range")));
                }
                if !v.is_finite() {
                    return Err(LpError::InvalidProblem(format!("row {r}: coefficient not finite")));
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump (CPLEX-LP style) for external cross-checking.
    pub fn dump_lp_format(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "{}", if self.sense == Sense::Maximize { "Maximize" } else { "Minimize" });
        let mut obj = String::from(" obj:");
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(obj, " {}{} x{}", if c < 0.0 { "- " } else { "+ " }, c.abs(), j);
            }
        }
        let _ = writeln!(s, "{obj}");
        let _ = writeln!(s, "Subject To");
        for (r, row) in self.rows.iter().enumerate() {
            let mut line = format!(" c{r}:");
            for &(j, v) in &row.coeffs {
                let _ = write!(line, " {}{} x{}", if v < 0.0 { "- " } else { "+ " }, v.abs(), j);
            }
            let op = match row.op {
                RowOp::Le => "<=",
                RowOp::Ge => ">=",
                RowOp::Eq => "=",
            };
            let _ = writeln!(s, "{line} {op} {}", row.rhs);
        }
        let _ = writeln!(s, "Bounds");
        for j in 0..self.n_vars() {
            let _ = writeln!(s, " {} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        let _ = writeln!(s, "End");
        s
    }
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

/// How each original variable maps into the standard-form variable list.
enum VarMap {
    /// x = std[k] + shift
    Shifted { k: usize, shift: f64 },
    /// x = mirror - std[k]  (upper bound only)
    Mirrored { k: usize, mirror: f64 },
    /// x = std[k] - std[k2]  (free)
    Split { k: usize, k2: usize },
    /// lower == upper
    Fixed { value: f64 },
}

struct Standard {
    m: usize,
    /// Sparse columns over all variables (structural, slack, artificial).
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    /// Phase-2 costs (minimization).
    cost: Vec<f64>,
    n_real: usize,
    art_start: usize,
    maps: Vec<VarMap>,
    obj_const: f64,
    negate_obj: bool,
}

fn to_standard(p: &LpProblem) -> Standard {
    let n = p.n_vars();
    let mut maps = Vec::with_capacity(n);
    let mut n_std = 0usize;
    let mut obj_const = 0.0;
    // Rows in standard form: original rows plus residual upper-bound rows.
    let mut rows: Vec<(Vec<(usize, f64)>, RowOp, f64)> = Vec::new();

    let negate_obj = p.sense == Sense::Maximize;
    let sign = if negate_obj { -1.0 } else { 1.0 };
    let mut cost: Vec<f64> = Vec::new();

    for j in 0..n {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        let c = sign * p.objective[j];
        if (hi - lo).abs() <= 1e-12 && lo.is_finite() {
            maps.push(VarMap::Fixed { value: lo });
            obj_const += c * lo;
        } else if lo.is_finite() {
            let k = n_std;
            n_std += 1;
            cost.push(c);
            obj_const += c * lo;
            if hi.is_finite() {
                rows.push((vec![(k, 1.0)], RowOp::Le, hi - lo));
            }
            maps.push(VarMap::Shifted { k, shift: lo });
        } else if hi.is_finite() {
            let k = n_std;
            n_std += 1;
            cost.push(-c);
            obj_const += c * hi;
            maps.push(VarMap::Mirrored { k, mirror: hi });
        } else {
            let k = n_std;
            let k2 = n_std + 1;
            n_std += 2;
            cost.push(c);
            cost.push(-c);
            maps.push(VarMap::Split { k, k2 });
        }
    }

    // Substitute original rows through the variable maps.
    for row in &p.rows {
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
        let mut rhs = row.rhs;
        for &(j, v) in &row.coeffs {
            match &maps[j] {
                VarMap::Fixed { value } => rhs -= v * value,
                VarMap::Shifted { k, shift } => {
                    coeffs.push((*k, v));
                    rhs -= v * shift;
                }
                VarMap::Mirrored { k, mirror } => {
                    coeffs.push((*k, -v));
                    rhs -= v * mirror;
                }
                VarMap::Split { k, k2 } => {
                    coeffs.push((*k, v));
                    coeffs.push((*k2, -v));
                }
            }
        }
        rows.push((coeffs, row.op, rhs));
    }

    let m = rows.len();
    // Layout: structural | one slack/surplus per inequality | artificials.
    let n_slack = rows.iter().filter(|(_, op, _)| *op != RowOp::Eq).count();
    let n_real = n_std + n_slack;
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_real];
    let mut b = vec![0.0; m];
    cost.resize(n_real, 0.0);

    let mut slack_at = n_std;
    let mut row_needs_art: Vec<bool> = vec![false; m];
    let mut slack_of_row: Vec<Option<usize>> = vec![None; m];

    for (i, (coeffs, op, rhs)) in rows.iter().enumerate() {
        let flip = *rhs < 0.0;
        let s = if flip { -1.0 } else { 1.0 };
        b[i] = s * rhs;
        // Merge duplicate indices while scattering into columns.
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for &(k, v) in coeffs {
            *acc.entry(k).or_insert(0.0) += s * v;
        }
        for (k, v) in acc {
            if v != 0.0 {
                cols[k].push((i, v));
            }
        }
        let eff_op = match (op, flip) {
            (RowOp::Eq, _) => RowOp::Eq,
            (RowOp::Le, false) | (RowOp::Ge, true) => RowOp::Le,
            (RowOp::Le, true) | (RowOp::Ge, false) => RowOp::Ge,
        };
        match eff_op {
            RowOp::Le => {
                cols[slack_at].push((i, 1.0));
                slack_of_row[i] = Some(slack_at);
                slack_at += 1;
            }
            RowOp::Ge => {
                cols[slack_at].push((i, -1.0));
                slack_at += 1;
                row_needs_art[i] = true;
            }
            RowOp::Eq => row_needs_art[i] = true,
        }
    }

    // Artificials for rows without a natural basic slack.
    let art_start = n_real;
    let mut all_cols = cols;
    for (i, need) in row_needs_art.iter().enumerate() {
        if *need {
            all_cols.push(vec![(i, 1.0)]);
        } else {
            // Slack starts basic; nothing to add.
            debug_assert!(slack_of_row[i].is_some());
        }
    }

    Standard { m, cols: all_cols, b, cost, n_real, art_start, maps, obj_const, negate_obj }
}

struct Tableau<'a> {
    std: &'a Standard,
    basis: Vec<usize>,
    binv: Vec<f64>, // m x m row-major
    xb: Vec<f64>,
}

impl<'a> Tableau<'a> {
    fn new(std: &'a Standard) -> Result<Self, LpError> {
        let m = std.m;
        let mut basis = Vec::with_capacity(m);
        // Initial basis: slack where available, otherwise artificial.
        let mut chosen = vec![usize::MAX; m];
        for j in std.art_start..std.cols.len() {
            let i = std.cols[j][0].0;
            chosen[i] = j;
        }
        for i in 0..m {
            if chosen[i] == usize::MAX {
                // Find the slack column with +1 in row i.
                let mut found = usize::MAX;
                for j in 0..std.n_real {
                    if std.cols[j].len() == 1 && std.cols[j][0] == (i, 1.0) && j >= std_first_slack(std) {
                        found = j;
                        break;
                    }
                }
                if found == usize::MAX {
                    return Err(LpError::Numerical("missing basic column for row".into()));
                }
                chosen[i] = found;
            }
        }
        for i in 0..m {
            basis.push(chosen[i]);
        }
        let mut t = Self { std, basis, binv: identity(m), xb: std.b.clone() };
        t.reinvert()?;
        Ok(t)
    }

    fn reinvert(&mut self) -> Result<(), LpError> {
        let m = self.std.m;
        // Dense basis matrix, column per basic variable.
        let mut bmat = vec![0.0; m * m];
        for (col, &j) in self.basis.iter().enumerate() {
            for &(i, v) in &self.std.cols[j] {
                bmat[i * m + col] = v;
            }
        }
        self.binv = invert(&bmat, m).ok_or_else(|| LpError::Numerical("singular basis".into()))?;
        self.xb = mat_vec(&self.binv, &self.std.b, m);
        Ok(())
    }

    fn col_in_binv(&self, j: usize) -> Vec<f64> {
        let m = self.std.m;
        let mut u = vec![0.0; m];
        for &(i, v) in &self.std.cols[j] {
            for r in 0..m {
                u[r] += self.binv[r * m + i] * v;
            }
        }
        u
    }

    /// Runs simplex to optimality for the given cost vector.
    /// `allow` filters which columns may enter.
    fn optimize(&mut self, cost: &[f64], allow: &dyn Fn(usize) -> bool) -> Result<bool, LpError> {
        let m = self.std.m;
        let mut degenerate_run = 0usize;
        for iter in 0..MAX_ITERS {
            if iter > 0 && iter % REINVERT_EVERY == 0 {
                self.reinvert()?;
            }
            // y = c_B' B^{-1}
            let mut y = vec![0.0; m];
            for (r, &j) in self.basis.iter().enumerate() {
                let cb = cost[j];
                if cb != 0.0 {
                    for i in 0..m {
                        y[i] += cb * self.binv[r * m + i];
                    }
                }
            }
            // Pricing.
            let bland = degenerate_run >= BLAND_AFTER_DEGENERATE;
            let mut enter = usize::MAX;
            let mut best = -REDUCED_COST_TOL;
            let mut in_basis = vec![false; self.std.cols.len()];
            for &j in &self.basis {
                in_basis[j] = true;
            }
            for j in 0..self.std.cols.len() {
                if in_basis[j] || !allow(j) {
                    continue;
                }
                let mut d = cost[j];
                for &(i, v) in &self.std.cols[j] {
                    d -= y[i] * v;
                }
                if d < best {
                    if bland {
                        enter = j;
                        break;
                    }
                    best = d;
                    enter = j;
                }
            }
            if enter == usize::MAX {
                return Ok(true); // optimal
            }
            // Ratio test.
            let u = self.col_in_binv(enter);
            let mut leave = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            for r in 0..m {
                if u[r] > FEAS_TOL {
                    let ratio = self.xb[r].max(0.0) / u[r];
                    if ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12
                            && (leave == usize::MAX || self.basis[r] < self.basis[leave]))
                    {
                        best_ratio = ratio;
                        leave = r;
                    }
                }
            }
            if leave == usize::MAX {
                return Ok(false); // unbounded direction
            }
            if best_ratio < 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            // Pivot: update binv and xb by elementary row operations.
            let piv = u[leave];
            for i in 0..m {
                self.binv[leave * m + i] /= piv;
            }
            self.xb[leave] /= piv;
            for r in 0..m {
                if r != leave && u[r].abs() > 1e-14 {
                    let f = u[r];
                    for i in 0..m {
                        self.binv[r * m + i] -= f * self.binv[leave * m + i];
                    }
                    self.xb[r] -= f * self.xb[leave];
                }
            }
            self.basis[leave] = enter;
        }
        Err(LpError::Numerical("iteration limit reached".into()))
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis.iter().enumerate().map(|(r, &j)| cost[j] * self.xb[r]).sum()
    }
}

fn std_first_slack(std: &Standard) -> usize {
    // Slacks occupy [n_struct, n_real); n_struct is recoverable from maps.
    let mut n_struct = 0usize;
    for m in &std.maps {
        n_struct += match m {
            VarMap::Fixed { .. } => 0,
            VarMap::Split { .. } => 2,
            _ => 1,
        };
    }
    n_struct
}

pub fn solve_lp(p: &LpProblem, _tol: f64) -> Result<LpOutcome, LpError> {
    p.validate()?;
    // Fast infeasibility check on fixed-variable bound crossings happens in
    // validate; degenerate empty problem:
    let std = to_standard(p);
    if std.m == 0 {
        // Unconstrained: optimal iff no improving cost direction.
        for (k, &c) in std.cost.iter().enumerate() {
            let _ = k;
            if c < -REDUCED_COST_TOL {
                return Ok(LpOutcome::Unbounded);
            }
        }
        let x = reconstruct(p, &std, &[]);
        let objective = std.obj_const * if std.negate_obj { -1.0 } else { 1.0 };
        return Ok(LpOutcome::Optimal { x, objective });
    }

    let mut t = Tableau::new(&std)?;
    let n_all = std.cols.len();

    // Phase 1: minimize artificial sum.
    if std.art_start < n_all {
        let mut c1 = vec![0.0; n_all];
        for c in c1.iter_mut().skip(std.art_start) {
            *c = 1.0;
        }
        let ok = t.optimize(&c1, &|_| true)?;
        if !ok {
            return Err(LpError::Numerical("phase 1 reported unbounded".into()));
        }
        if t.objective(&c1) > 1e-6 {
            return Ok(LpOutcome::Infeasible);
        }
        // Pivot basic artificials out where possible.
        t.reinvert()?;
        let m = std.m;
        for r in 0..m {
            if t.basis[r] >= std.art_start && t.xb[r].abs() <= FEAS_TOL {
                let mut replaced = false;
                for j in 0..std.n_real {
                    if t.basis.contains(&j) {
                        continue;
                    }
                    let u = t.col_in_binv(j);
                    if u[r].abs() > 1e-7 {
                        let piv = u[r];
                        for i in 0..m {
                            t.binv[r * m + i] /= piv;
                        }
                        t.xb[r] /= piv;
                        for rr in 0..m {
                            if rr != r && u[rr].abs() > 1e-14 {
                                let f = u[rr];
                                for i in 0..m {
                                    t.binv[rr * m + i] -= f * t.binv[r * m + i];
                                }
                                t.xb[rr] -= f * t.xb[r];
                            }
                        }
                        t.basis[r] = j;
                        replaced = true;
                        break;
                    }
                }
                // Redundant row: artificial stays basic at zero.
                let _ = replaced;
            }
        }
    }

    // Phase 2: artificials may not re-enter.
    let mut c2 = vec![0.0; n_all];
    c2[..std.n_real].copy_from_slice(&std.cost);
    let art_start = std.art_start;
    let ok = t.optimize(&c2, &|j| j < art_start)?;
    if !ok {
        return Ok(LpOutcome::Unbounded);
    }

    // Extract standard-form solution.
    let mut xs = vec![0.0; std.n_real];
    for (r, &j) in t.basis.iter().enumerate() {
        if j < std.n_real {
            xs[j] = t.xb[r].max(0.0);
        }
    }
    let x = reconstruct(p, &std, &xs);
    let raw = t.objective(&c2) + std.obj_const;
    let objective = if std.negate_obj { -raw } else { raw };
    Ok(LpOutcome::Optimal { x, objective })
}

fn reconstruct(p: &LpProblem, std: &Standard, xs: &[f64]) -> Vec<f64> {
    let get = |k: usize| xs.get(k).copied().unwrap_or(0.0);
    let mut x = vec![0.0; p.n_vars()];
    for (j, map) in std.maps.iter().enumerate() {
        x[j] = match map {
            VarMap::Fixed { value } => *value,
            VarMap::Shifted { k, shift } => get(*k) + shift,
            VarMap::Mirrored { k, mirror } => mirror - get(*k),
            VarMap::Split { k, k2 } => get(*k) - get(*k2),
        };
    }
    x
}

fn identity(m: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        a[i * m + i] = 1.0;
    }
    a
}

fn mat_vec(a: &[f64], v: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for r in 0..m {
        let mut s = 0.0;
        for i in 0..m {
            s += a[r * m + i] * v[i];
        }
        out[r] = s;
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting; None when singular.
fn invert(a: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut w = a.to_vec();
    let mut inv = identity(m);
    for col in 0..m {
        let mut piv = col;
        let mut best = w[col * m + col].abs();
        for r in (col + 1)..m {
            let v = w[r * m + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-12 {
            return None;
        }
        if piv != col {
            for i in 0..m {
                w.swap(piv * m + i, col * m + i);
                inv.swap(piv * m + i, col * m + i);
            }
        }
        let d = w[col * m + col];
        for i in 0..m {
            w[col * m + i] /= d;
            inv[col * m + i] /= d;
        }
        for r in 0..m {
            if r != col {
                let f = w[r * m + col];
                if f.abs() > 1e-14 {
                    for i in 0..m {
                        w[r * m + i] -= f * w[col * m + i];
                        inv[r * m + i] -= f * inv[col * m + i];
                    }
                }
            }
        }
    }
    Some(inv)
}
