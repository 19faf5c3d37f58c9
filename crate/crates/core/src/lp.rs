//! Dense bounded-variable primal simplex.
//!
//! Every row `a_i x (<=|=|>=) b_i` gets a logical variable `r_i = b_i - a_i x`
//! whose bounds encode the relation, so the logicals form the initial basis
//! and `B^-1` is always readable from their tableau columns. Phase one
//! minimises the sum of bound violations of the basic variables; phase two
//! minimises the cost. The solver reports primal values, row duals and, when
//! the objective is unbounded, an improving extreme ray.
//!
//! [`Simplex`] keeps its basis between calls, so callers that only tighten or
//! relax variable bounds (branch-and-bound) resume from the previous basis.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_INTERVAL: usize = 500;
/// Smallest pivot accepted by the dual ratio test.
const DUAL_PIVOT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min c^T x  s.t.  rows, lower <= x <= upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpModel {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Constraint>,
}

impl LpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        self.rows.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cost.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Model(format!(
                "{} costs, {} lower bounds, {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if !self.cost[j].is_finite()
                || l.is_nan()
                || u.is_nan()
                || l > u
                || l == f64::INFINITY
                || u == f64::NEG_INFINITY
            {
                return Err(Error::Model(format!(
                    "variable {j}: cost {}, bounds [{l}, {u}]",
                    self.cost[j]
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Model(format!("row {i}: non-finite right-hand side")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(Error::Model(format!("row {i}: bad coefficient ({j}, {a})")));
                }
            }
        }
        Ok(())
    }

    /// Row activities `a_i x`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// One multiplier per row: `<= 0` on `<=` rows, `>= 0` on `>=` rows.
    pub duals: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    /// Value of the Lagrangian dual at [`Self::duals`]:
    /// `b^T pi + sum_j min over [l_j, u_j] of (c_j - pi^T A_j) x_j`.
    pub fn dual_objective(&self, model: &LpModel) -> f64 {
        let mut reduced = model.cost.clone();
        let mut value = 0.0;
        for (row, &pi) in model.rows.iter().zip(&self.duals) {
            value += pi * row.rhs;
            for &(j, a) in &row.coeffs {
                reduced[j] -= pi * a;
            }
        }
        for (j, d) in reduced.into_iter().enumerate() {
            // Reduced costs within tolerance of zero contribute nothing, even
            // against an infinite bound.
            if d > OPT_TOL {
                value += d * model.lower[j];
            } else if d < -OPT_TOL {
                value += d * model.upper[j];
            }
        }
        value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// `ray` keeps every row and bound feasible along `x + t * ray`, `t >= 0`,
    /// and strictly decreases the objective.
    Unbounded {
        ray: Vec<f64>,
    },
    Infeasible,
}

pub fn solve_lp(model: &LpModel) -> Result<LpOutcome> {
    Simplex::new(model)?.solve()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Free nonbasic variable parked at zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DualEnd {
    Feasible,
    Infeasible,
    CutOff,
    GaveUp,
}

#[derive(Debug, Clone, Copy)]
enum Leave {
    /// Entering variable reaches its opposite bound.
    Flip,
    Row {
        row: usize,
        to_upper: bool,
    },
}

#[derive(Debug, Clone)]
pub struct Simplex {
    m: usize,
    n: usize,
    /// Structural columns of `A`, sparse.
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// `B^-1 [A I]`, row-major, `m x (n + m)`.
    tab: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    since_refactor: usize,
    pub iterations: usize,
    /// Pivot row buffers, reused across pivots.
    pivot_dense: Vec<f64>,
    pivot_nz: Vec<(usize, f64)>,
    /// Dual ratio test candidates: column, ratio, |pivot|, direction.
    ratio_buf: Vec<(usize, f64, f64, f64)>,
}

impl Simplex {
    pub fn new(model: &LpModel) -> Result<Self> {
        model.validate()?;
        let (m, n) = (model.num_rows(), model.num_vars());
        let w = n + m;
        let mut cols = vec![Vec::new(); n];
        let mut tab = vec![0.0; m * w];
        for (i, row) in model.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                tab[i * w + j] += a;
            }
            tab[i * w + n + i] = 1.0;
        }
        for i in 0..m {
            for j in 0..n {
                let a = tab[i * w + j];
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
        }
        let mut lo = model.lower.clone();
        let mut hi = model.upper.clone();
        for row in &model.rows {
            let (l, u) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(l);
            hi.push(u);
        }
        let mut cost = model.cost.clone();
        cost.resize(w, 0.0);
        let mut s = Self {
            m,
            n,
            cols,
            rhs: model.rows.iter().map(|r| r.rhs).collect(),
            cost,
            lo,
            hi,
            tab,
            basis: (n..w).collect(),
            status: vec![Status::AtLower; w],
            x: vec![0.0; w],
            since_refactor: 0,
            iterations: 0,
            pivot_dense: Vec::with_capacity(w),
            pivot_nz: Vec::with_capacity(w),
            ratio_buf: Vec::new(),
        };
        for j in 0..n {
            s.park(j);
        }
        for i in 0..m {
            s.status[n + i] = Status::Basic;
        }
        s.recompute_basics();
        Ok(s)
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.hi[j])
    }

    /// Changes the bounds of structural variable `j`, keeping the basis.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        debug_assert!(j < self.n && lower <= upper);
        self.lo[j] = lower;
        self.hi[j] = upper;
        if self.status[j] != Status::Basic {
            let old = self.x[j];
            self.park(j);
            let delta = self.x[j] - old;
            if delta != 0.0 {
                let w = self.width();
                for i in 0..self.m {
                    let a = self.tab[i * w + j];
                    if a != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= a * delta;
                    }
                }
            }
        }
    }

    /// Places nonbasic `j` on a finite bound (lower preferred) or at zero.
    fn park(&mut self, j: usize) {
        let (l, u) = (self.lo[j], self.hi[j]);
        if l.is_finite() {
            self.status[j] = Status::AtLower;
            self.x[j] = l;
        } else if u.is_finite() {
            self.status[j] = Status::AtUpper;
            self.x[j] = u;
        } else {
            self.status[j] = Status::Zero;
            self.x[j] = 0.0;
        }
    }

    fn width(&self) -> usize {
        self.n + self.m
    }

    fn recompute_basics(&mut self) {
        let w = self.width();
        // x_B = B^-1 (b - N x_N); the logical block of the tableau holds B^-1.
        let mut resid = self.rhs.clone();
        for j in 0..self.n {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    resid[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..self.m {
            let lj = self.n + i;
            if self.status[lj] != Status::Basic && self.x[lj] != 0.0 {
                resid[i] -= self.x[lj];
            }
        }
        for r in 0..self.m {
            let row = &self.tab[r * w + self.n..(r + 1) * w];
            let v: f64 = row.iter().zip(&resid).map(|(a, b)| a * b).sum();
            self.x[self.basis[r]] = v;
        }
    }

    /// Rebuilds the tableau from the original columns for the current basis.
    fn refactor(&mut self) -> Result<()> {
        let (m, n, w) = (self.m, self.n, self.width());
        let mut bmat = vec![0.0; m * m];
        for (r, &j) in self.basis.iter().enumerate() {
            if j < n {
                for &(i, a) in &self.cols[j] {
                    bmat[i * m + r] = a;
                }
            } else {
                bmat[(j - n) * m + r] = 1.0;
            }
        }
        let Some(inv) = invert(&mut bmat, m) else {
            self.reset_to_slack_basis();
            return Ok(());
        };
        for r in 0..m {
            let inv_row = &inv[r * m..(r + 1) * m];
            let row = &mut self.tab[r * w..(r + 1) * w];
            for j in 0..n {
                row[j] = self.cols[j].iter().map(|&(i, a)| inv_row[i] * a).sum();
            }
            row[n..].copy_from_slice(inv_row);
        }
        // B^-1 B is the identity; drop the round-off so pivots stay sparse.
        for (r, &j) in self.basis.iter().enumerate() {
            for i in 0..m {
                self.tab[i * w + j] = if i == r { 1.0 } else { 0.0 };
            }
        }
        self.since_refactor = 0;
        self.recompute_basics();
        Ok(())
    }

    /// Falls back to the all-logical basis, which is always nonsingular.
    fn reset_to_slack_basis(&mut self) {
        let (m, n, w) = (self.m, self.n, self.width());
        self.tab.fill(0.0);
        for j in 0..n {
            for &(i, a) in &self.cols[j] {
                self.tab[i * w + j] = a;
            }
        }
        for i in 0..m {
            self.tab[i * w + n + i] = 1.0;
        }
        self.basis = (n..w).collect();
        for j in 0..w {
            self.park(j);
        }
        for i in 0..m {
            self.status[n + i] = Status::Basic;
        }
        self.since_refactor = 0;
        self.recompute_basics();
    }

    /// Largest violation of `A x + r = b` for the current values.
    fn residual(&self) -> f64 {
        let mut resid: Vec<f64> = self
            .rhs
            .iter()
            .zip(&self.x[self.n..])
            .map(|(b, r)| b - r)
            .collect();
        for j in 0..self.n {
            for &(i, a) in &self.cols[j] {
                resid[i] -= a * self.x[j];
            }
        }
        resid.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn phase_one_costs(&self) -> Vec<f64> {
        let w = self.width();
        let mut d = vec![0.0; w];
        for (r, &j) in self.basis.iter().enumerate() {
            let s = if self.x[j] < self.lo[j] - FEAS_TOL {
                1.0
            } else if self.x[j] > self.hi[j] + FEAS_TOL {
                -1.0
            } else {
                continue;
            };
            let row = &self.tab[r * w..(r + 1) * w];
            for (dj, a) in d.iter_mut().zip(row) {
                *dj += s * a;
            }
        }
        d
    }

    fn phase_two_costs(&self) -> Vec<f64> {
        let w = self.width();
        let mut d = self.cost.clone();
        for (r, &j) in self.basis.iter().enumerate() {
            let c = self.cost[j];
            if c == 0.0 {
                continue;
            }
            let row = &self.tab[r * w..(r + 1) * w];
            for (dj, a) in d.iter_mut().zip(row) {
                *dj -= c * a;
            }
        }
        for &j in &self.basis {
            d[j] = 0.0;
        }
        d
    }

    /// Entering variable and direction (+1 increase, -1 decrease).
    fn price(&self, d: &[f64], tol: f64, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for (j, &dj) in d.iter().enumerate() {
            let dir = match self.status[j] {
                Status::Basic => continue,
                _ if self.lo[j] == self.hi[j] => continue,
                Status::AtLower if dj < -tol => 1.0,
                Status::AtUpper if dj > tol => -1.0,
                Status::Zero if dj.abs() > tol => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn ratio_test(&self, q: usize, dir: f64, phase_one: bool, bland: bool) -> (f64, Option<Leave>) {
        let w = self.width();
        let mut best_t = self.hi[q] - self.lo[q];
        let mut leave = if best_t.is_finite() {
            Some(Leave::Flip)
        } else {
            None
        };
        let mut best_a = 0.0;
        let mut best_var = usize::MAX;
        for r in 0..self.m {
            let a = self.tab[r * w + q];
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let rate = -dir * a;
            let j = self.basis[r];
            let (v, l, u) = (self.x[j], self.lo[j], self.hi[j]);
            let (limit, to_upper) = if rate < 0.0 {
                if phase_one && v > u + FEAS_TOL {
                    ((v - u) / -rate, true)
                } else if phase_one && v < l - FEAS_TOL {
                    continue;
                } else if l.is_finite() {
                    ((v - l).max(0.0) / -rate, false)
                } else {
                    continue;
                }
            } else if phase_one && v < l - FEAS_TOL {
                ((l - v) / rate, false)
            } else if phase_one && v > u + FEAS_TOL {
                continue;
            } else if u.is_finite() {
                ((u - v).max(0.0) / rate, true)
            } else {
                continue;
            };
            let tie = (limit - best_t).abs() <= 1e-12 * (1.0 + best_t.abs());
            let better = if limit < best_t && !tie {
                true
            } else if tie {
                if bland {
                    j < best_var
                } else {
                    a.abs() > best_a
                }
            } else {
                false
            };
            if better || leave.is_none() {
                best_t = limit;
                best_a = a.abs();
                best_var = j;
                leave = Some(Leave::Row { row: r, to_upper });
            }
        }
        (best_t, leave)
    }

    /// Moves `q` by `t` in direction `dir`, updating basic values.
    fn step(&mut self, q: usize, dir: f64, t: f64) {
        if t == 0.0 {
            return;
        }
        let w = self.width();
        self.x[q] += dir * t;
        for r in 0..self.m {
            let a = self.tab[r * w + q];
            if a != 0.0 {
                let j = self.basis[r];
                self.x[j] -= dir * a * t;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize, to_upper: bool, d: Option<&mut Vec<f64>>) {
        let w = self.width();
        let leaving = self.basis[r];
        let p = self.tab[r * w + q];
        let mut pivot_row = std::mem::take(&mut self.pivot_dense);
        let mut nz = std::mem::take(&mut self.pivot_nz);
        pivot_row.clear();
        nz.clear();
        // Basic columns are unit vectors, so the pivot row is zero on all of
        // them but `q`: at most n + 1 entries need updating.
        for (j, &a) in self.tab[r * w..(r + 1) * w].iter().enumerate() {
            let b = a / p;
            pivot_row.push(b);
            if b != 0.0 {
                nz.push((j, b));
            }
        }
        let sparse = 2 * nz.len() < w;
        for (i, row) in self.tab.chunks_exact_mut(w).enumerate() {
            let f = row[q];
            if i == r || f == 0.0 {
                continue;
            }
            if sparse {
                for &(j, b) in &nz {
                    // SAFETY: `j` enumerates the pivot row, which has the row's width.
                    unsafe { *row.get_unchecked_mut(j) -= f * b };
                }
            } else {
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
            }
            row[q] = 0.0;
        }
        self.tab[r * w..(r + 1) * w].copy_from_slice(&pivot_row);
        if let Some(d) = d {
            let f = d[q];
            if f != 0.0 {
                for &(j, b) in &nz {
                    d[j] -= f * b;
                }
            }
            d[q] = 0.0;
        }
        self.pivot_dense = pivot_row;
        self.pivot_nz = nz;
        self.basis[r] = q;
        self.status[q] = Status::Basic;
        if to_upper {
            self.status[leaving] = Status::AtUpper;
            self.x[leaving] = self.hi[leaving];
        } else {
            self.status[leaving] = Status::AtLower;
            self.x[leaving] = self.lo[leaving];
        }
        self.since_refactor += 1;
    }

    fn iteration_limit(&self) -> usize {
        100 * (self.m + self.n) + 10_000
    }

    fn degenerate_limit(&self) -> usize {
        2 * (self.m + self.n)
    }

    /// Runs phase one from the current basis. Returns `false` when infeasible.
    fn phase_one(&mut self) -> Result<bool> {
        let mut degenerate = 0;
        loop {
            if self.since_refactor >= REFACTOR_INTERVAL {
                self.refactor()?;
            }
            let feasible = self
                .basis
                .iter()
                .all(|&j| self.x[j] >= self.lo[j] - FEAS_TOL && self.x[j] <= self.hi[j] + FEAS_TOL);
            if feasible {
                return Ok(true);
            }
            self.bump()?;
            let d = self.phase_one_costs();
            let bland = degenerate >= self.degenerate_limit();
            let Some((q, dir)) = self.price(&d, OPT_TOL, bland) else {
                return Ok(false);
            };
            let (t, leave) = self.ratio_test(q, dir, true, bland);
            let Some(leave) = leave else {
                return Err(Error::Solver(
                    "phase one ray without blocking variable".into(),
                ));
            };
            degenerate = if t <= 1e-12 { degenerate + 1 } else { 0 };
            self.step(q, dir, t);
            match leave {
                Leave::Flip => self.flip(q, dir),
                Leave::Row { row, to_upper } => self.pivot(row, q, to_upper, None),
            }
        }
    }

    fn flip(&mut self, q: usize, dir: f64) {
        if dir > 0.0 {
            self.status[q] = Status::AtUpper;
            self.x[q] = self.hi[q];
        } else {
            self.status[q] = Status::AtLower;
            self.x[q] = self.lo[q];
        }
    }

    fn bump(&mut self) -> Result<()> {
        self.iterations += 1;
        if self.iterations > self.iteration_limit() {
            return Err(Error::Solver(format!(
                "simplex iteration limit {} exceeded",
                self.iteration_limit()
            )));
        }
        Ok(())
    }

    /// Moves boxed nonbasic variables to the bound their reduced cost favours
    /// and reports whether the basis is then dual feasible.
    fn make_dual_feasible(&mut self, d: &[f64]) -> bool {
        let w = self.width();
        let mut flips = Vec::new();
        for j in 0..w {
            if self.status[j] == Status::Basic || self.lo[j] == self.hi[j] {
                continue;
            }
            let boxed = self.lo[j].is_finite() && self.hi[j].is_finite();
            let ok = match self.status[j] {
                Status::AtLower => d[j] >= -OPT_TOL,
                Status::AtUpper => d[j] <= OPT_TOL,
                Status::Zero => d[j].abs() <= OPT_TOL,
                Status::Basic => true,
            };
            if !ok {
                if !boxed {
                    return false;
                }
                flips.push(j);
            }
        }
        for j in flips {
            let old = self.x[j];
            let (status, value) = if d[j] < 0.0 {
                (Status::AtUpper, self.hi[j])
            } else {
                (Status::AtLower, self.lo[j])
            };
            self.status[j] = status;
            self.x[j] = value;
            let delta = value - old;
            for r in 0..self.m {
                let a = self.tab[r * w + j];
                if a != 0.0 {
                    let b = self.basis[r];
                    self.x[b] -= a * delta;
                }
            }
        }
        true
    }

    /// Dual simplex from a dual feasible basis, abandoned once its objective,
    /// a lower bound on the optimum, exceeds `cutoff`.
    fn dual_simplex(&mut self, d: &mut Vec<f64>, cutoff: f64) -> Result<DualEnd> {
        let w = self.width();
        let budget = 10 * (self.m + self.n) + 100;
        for _ in 0..budget {
            if self.since_refactor >= REFACTOR_INTERVAL {
                self.refactor()?;
                *d = self.phase_two_costs();
                if !self.make_dual_feasible(d) {
                    return Ok(DualEnd::GaveUp);
                }
            }
            if cutoff.is_finite() {
                let bound: f64 = self.cost[..self.n]
                    .iter()
                    .zip(&self.x)
                    .map(|(c, v)| c * v)
                    .sum();
                if bound > cutoff + 1e-9 * (1.0 + cutoff.abs()) {
                    return Ok(DualEnd::CutOff);
                }
            }
            // Leaving row: largest bound violation.
            let mut leave: Option<(usize, f64)> = None;
            let mut worst = FEAS_TOL;
            for (r, &j) in self.basis.iter().enumerate() {
                let v = self.x[j];
                let viol = if v < self.lo[j] {
                    self.lo[j] - v
                } else if v > self.hi[j] {
                    v - self.hi[j]
                } else {
                    0.0
                };
                if viol > worst {
                    worst = viol;
                    leave = Some((
                        r,
                        if v < self.lo[j] {
                            self.lo[j]
                        } else {
                            self.hi[j]
                        },
                    ));
                }
            }
            let Some((r, target)) = leave else {
                return Ok(DualEnd::Feasible);
            };
            self.bump()?;
            let basic = self.basis[r];
            // The basic value must rise (to its lower bound) or fall.
            let rise = target > self.x[basic];
            let mut candidates = std::mem::take(&mut self.ratio_buf);
            candidates.clear();
            let mut tiny = false;
            for j in 0..w {
                if self.status[j] == Status::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let a = self.tab[r * w + j];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                // x_basic changes by -a * dir per unit move of j.
                let dir = if rise { -a.signum() } else { a.signum() };
                let allowed = match self.status[j] {
                    Status::AtLower => dir > 0.0,
                    Status::AtUpper => dir < 0.0,
                    Status::Zero => true,
                    Status::Basic => false,
                };
                if !allowed {
                    continue;
                }
                if a.abs() < DUAL_PIVOT_TOL {
                    tiny = true;
                    continue;
                }
                candidates.push((j, d[j].abs() / a.abs(), a.abs(), dir));
            }
            // Smallest ratio first; within a run of near-equal ratios the
            // larger pivot goes first.
            candidates.sort_by(|x, y| x.1.total_cmp(&y.1));
            let mut start = 0;
            while start < candidates.len() {
                let base = candidates[start].1;
                let end = start
                    + candidates[start..]
                        .iter()
                        .take_while(|c| c.1 - base <= 1e-12 * (1.0 + base))
                        .count();
                candidates[start..end].sort_by(|x, y| y.2.total_cmp(&x.2));
                start = end;
            }
            // Bound flipping: a boxed candidate whose full range cannot absorb
            // the remaining infeasibility is moved to its other bound and the
            // ratio test continues past it.
            let mut slope = (target - self.x[basic]).abs();
            let mut entering: Option<(usize, f64)> = None;
            let mut flips = Vec::new();
            for &(j, _, a, dir) in &candidates {
                let range = self.hi[j] - self.lo[j];
                if range.is_finite() && slope - a * range > FEAS_TOL {
                    slope -= a * range;
                    flips.push((j, dir * range));
                } else {
                    entering = Some((j, dir));
                    break;
                }
            }
            self.ratio_buf = candidates;
            let Some((q, dir)) = entering else {
                // Only numerically tiny pivots could repair this row: let the
                // primal method decide.
                return Ok(if tiny {
                    DualEnd::GaveUp
                } else {
                    DualEnd::Infeasible
                });
            };
            for (j, delta) in flips {
                self.step(j, delta.signum(), delta.abs());
                let (status, v) = if delta > 0.0 {
                    (Status::AtUpper, self.hi[j])
                } else {
                    (Status::AtLower, self.lo[j])
                };
                self.status[j] = status;
                self.x[j] = v;
            }
            let a = self.tab[r * w + q];
            let t = (target - self.x[basic]) / (-a * dir);
            self.step(q, dir, t.max(0.0));
            self.x[basic] = target;
            self.pivot(r, q, target == self.hi[basic], Some(d));
        }
        Ok(DualEnd::GaveUp)
    }

    /// Solves from the current basis.
    pub fn solve(&mut self) -> Result<LpOutcome> {
        Ok(self.solve_with_cutoff(f64::INFINITY)?.expect("no cutoff"))
    }

    /// Like [`Self::solve`], but may stop early with `None` once the optimum
    /// is known to exceed `cutoff`.
    pub fn solve_with_cutoff(&mut self, cutoff: f64) -> Result<Option<LpOutcome>> {
        self.iterations = 0;
        let mut d = self.phase_two_costs();
        let dual_result = if self.make_dual_feasible(&d) {
            self.dual_simplex(&mut d, cutoff)?
        } else {
            DualEnd::GaveUp
        };
        match dual_result {
            DualEnd::Infeasible => return Ok(Some(LpOutcome::Infeasible)),
            DualEnd::CutOff => return Ok(None),
            DualEnd::Feasible => {}
            DualEnd::GaveUp => {
                if !self.phase_one()? {
                    return Ok(Some(LpOutcome::Infeasible));
                }
            }
        }
        self.primal_phase_two().map(Some)
    }

    fn primal_phase_two(&mut self) -> Result<LpOutcome> {
        let mut d = self.phase_two_costs();
        let mut degenerate = 0;
        loop {
            if self.since_refactor >= REFACTOR_INTERVAL {
                self.refactor()?;
                if !self.phase_one()? {
                    return Ok(LpOutcome::Infeasible);
                }
                d = self.phase_two_costs();
            }
            self.bump()?;
            let bland = degenerate >= self.degenerate_limit();
            let Some((q, dir)) = self.price(&d, OPT_TOL, bland) else {
                break;
            };
            let (t, leave) = self.ratio_test(q, dir, false, bland);
            let Some(leave) = leave else {
                return Ok(LpOutcome::Unbounded {
                    ray: self.ray(q, dir),
                });
            };
            if !t.is_finite() {
                return Ok(LpOutcome::Unbounded {
                    ray: self.ray(q, dir),
                });
            }
            degenerate = if t <= 1e-12 { degenerate + 1 } else { 0 };
            self.step(q, dir, t);
            match leave {
                Leave::Flip => self.flip(q, dir),
                Leave::Row { row, to_upper } => self.pivot(row, q, to_upper, Some(&mut d)),
            }
        }
        if self.since_refactor > 0 && self.residual() > 1e-9 {
            // Accumulated drift: rebuild the tableau and continue from it.
            self.refactor()?;
            if !self.phase_one()? {
                return Ok(LpOutcome::Infeasible);
            }
            return self.primal_phase_two();
        }
        let d = self.phase_two_costs();
        let x = self.x[..self.n].to_vec();
        let duals = (0..self.m).map(|i| -d[self.n + i]).collect();
        let objective = self.cost[..self.n].iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal(LpSolution {
            x,
            duals,
            objective,
        }))
    }

    fn ray(&self, q: usize, dir: f64) -> Vec<f64> {
        let w = self.width();
        let mut ray = vec![0.0; self.n];
        if q < self.n {
            ray[q] = dir;
        }
        for r in 0..self.m {
            let j = self.basis[r];
            if j < self.n {
                ray[j] = -dir * self.tab[r * w + q];
            }
        }
        ray
    }
}

/// Gauss-Jordan inverse with partial pivoting; `a` is destroyed.
fn invert(a: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for c in 0..m {
        let p = (c..m).max_by(|&x, &y| a[x * m + c].abs().total_cmp(&a[y * m + c].abs()))?;
        if a[p * m + c].abs() < 1e-12 {
            return None;
        }
        if p != c {
            for k in 0..m {
                a.swap(p * m + k, c * m + k);
                inv.swap(p * m + k, c * m + k);
            }
        }
        let piv = a[c * m + c];
        for k in 0..m {
            a[c * m + k] /= piv;
            inv[c * m + k] /= piv;
        }
        for r in 0..m {
            if r == c {
                continue;
            }
            let f = a[r * m + c];
            if f == 0.0 {
                continue;
            }
            for k in 0..m {
                a[r * m + k] -= f * a[c * m + k];
                inv[r * m + k] -= f * inv[c * m + k];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn optimal(o: LpOutcome) -> LpSolution {
        match o {
            LpOutcome::Optimal(s) => s,
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn textbook_vertex() {
        let mut m = LpModel::new();
        let x1 = m.add_var(-1.0, 0.0, INF);
        let x2 = m.add_var(-1.0, 0.0, INF);
        m.add_row(vec![(x1, 1.0), (x2, 1.0)], Relation::Le, 1.0);
        let s = optimal(solve_lp(&m).unwrap());
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert!((s.duals[0] + 1.0).abs() < 1e-12);
        assert!((s.dual_objective(&m) - s.objective).abs() < 1e-12);
    }

    #[test]
    fn unbounded_ray() {
        let mut m = LpModel::new();
        m.add_var(-1.0, 0.0, INF);
        match solve_lp(&m).unwrap() {
            LpOutcome::Unbounded { ray } => assert_eq!(ray, vec![1.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_bounds_against_row() {
        let mut m = LpModel::new();
        let x = m.add_var(0.0, 0.0, INF);
        m.add_row(vec![(x, 1.0)], Relation::Le, -1.0);
        assert_eq!(solve_lp(&m).unwrap(), LpOutcome::Infeasible);

        let mut m = LpModel::new();
        let x = m.add_var(0.0, f64::NEG_INFINITY, INF);
        m.add_row(vec![(x, 1.0)], Relation::Le, -1.0);
        m.add_row(vec![(x, 1.0)], Relation::Ge, 0.0);
        assert_eq!(solve_lp(&m).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn rejects_malformed_models() {
        let mut m = LpModel::new();
        m.add_var(1.0, 1.0, 0.0);
        assert!(matches!(solve_lp(&m), Err(Error::Model(_))));
        let mut m = LpModel::new();
        m.add_var(1.0, 0.0, 1.0);
        m.add_row(vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&m), Err(Error::Model(_))));
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + y, x - y = 1, x + y >= 3, x, y free -> (2, 1).
        let mut m = LpModel::new();
        let x = m.add_var(1.0, f64::NEG_INFINITY, INF);
        let y = m.add_var(1.0, f64::NEG_INFINITY, INF);
        m.add_row(vec![(x, 1.0), (y, -1.0)], Relation::Eq, 1.0);
        m.add_row(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 3.0);
        let s = optimal(solve_lp(&m).unwrap());
        assert!((s.objective - 3.0).abs() < 1e-9);
        assert!(s.duals[1] >= 0.0);
        assert!((s.dual_objective(&m) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_ray_respects_rows() {
        // min -x - 2y, x - y <= 1, y >= 0, x >= 0 free direction along (1,1).
        let mut m = LpModel::new();
        let x = m.add_var(-1.0, 0.0, INF);
        let y = m.add_var(-2.0, 0.0, INF);
        m.add_row(vec![(x, 1.0), (y, -1.0)], Relation::Le, 1.0);
        m.add_row(vec![(x, -2.0), (y, 1.0)], Relation::Le, 4.0);
        match solve_lp(&m).unwrap() {
            LpOutcome::Unbounded { ray } => check_ray(&m, &ray),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn warm_start_after_bound_change() {
        let mut m = LpModel::new();
        let x = m.add_var(-1.0, 0.0, 1.0);
        let y = m.add_var(-1.0, 0.0, 1.0);
        m.add_row(vec![(x, 2.0), (y, 2.0)], Relation::Le, 3.0);
        let mut s = Simplex::new(&m).unwrap();
        assert!((optimal(s.solve().unwrap()).objective + 1.5).abs() < 1e-12);
        s.set_bounds(x, 1.0, 1.0);
        let sol = optimal(s.solve().unwrap());
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 0.5).abs() < 1e-12);
        s.set_bounds(y, 1.0, 1.0);
        assert_eq!(s.solve().unwrap(), LpOutcome::Infeasible);
        s.set_bounds(x, 0.0, 0.0);
        assert!((optimal(s.solve().unwrap()).objective + 1.0).abs() < 1e-12);
    }

    pub(crate) fn check_ray(m: &LpModel, ray: &[f64]) {
        assert!(m.objective(ray) < -1e-12, "ray does not improve");
        for (row, act) in m.rows.iter().zip(m.activities(ray)) {
            match row.relation {
                Relation::Le => assert!(act <= 1e-9),
                Relation::Ge => assert!(act >= -1e-9),
                Relation::Eq => assert!(act.abs() <= 1e-9),
            }
        }
        for j in 0..ray.len() {
            if m.lower[j].is_finite() {
                assert!(ray[j] >= -1e-9);
            }
            if m.upper[j].is_finite() {
                assert!(ray[j] <= 1e-9);
            }
        }
    }

    fn check_optimal(m: &LpModel, s: &LpSolution) {
        for (j, &v) in s.x.iter().enumerate() {
            assert!(v >= m.lower[j] - FEAS_TOL && v <= m.upper[j] + FEAS_TOL);
        }
        for ((row, act), &pi) in m.rows.iter().zip(m.activities(&s.x)).zip(&s.duals) {
            let slack = row.rhs - act;
            match row.relation {
                Relation::Le => assert!(slack >= -FEAS_TOL && pi <= 1e-9),
                Relation::Ge => assert!(slack <= FEAS_TOL && pi >= -1e-9),
                Relation::Eq => assert!(slack.abs() <= FEAS_TOL),
            }
            assert!((pi * slack).abs() <= 1e-6, "complementary slackness");
        }
        assert!((s.dual_objective(m) - s.objective).abs() <= 1e-6);
    }

    /// Exhaustive vertex enumeration for a box-bounded LP with at most three
    /// variables: every choice of `n` active constraints among rows and bounds.
    fn brute_force(m: &LpModel) -> Option<f64> {
        let n = m.num_vars();
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for row in &m.rows {
            let mut a = vec![0.0; n];
            for &(j, v) in &row.coeffs {
                a[j] += v;
            }
            planes.push((a, row.rhs));
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), m.lower[j]));
            planes.push((e, m.upper[j]));
        }
        let feasible = |x: &[f64]| {
            (0..n).all(|j| x[j] >= m.lower[j] - 1e-9 && x[j] <= m.upper[j] + 1e-9)
                && m.rows
                    .iter()
                    .zip(m.activities(x))
                    .all(|(r, a)| match r.relation {
                        Relation::Le => a <= r.rhs + 1e-9,
                        Relation::Ge => a >= r.rhs - 1e-9,
                        Relation::Eq => (a - r.rhs).abs() <= 1e-9,
                    })
        };
        let mut best: Option<f64> = None;
        let p = planes.len();
        let mut idx = vec![0usize; n];
        fn rec(
            depth: usize,
            start: usize,
            idx: &mut Vec<usize>,
            p: usize,
            visit: &mut dyn FnMut(&[usize]),
        ) {
            if depth == idx.len() {
                visit(idx);
                return;
            }
            for i in start..p {
                idx[depth] = i;
                rec(depth + 1, i + 1, idx, p, visit);
            }
        }
        rec(0, 0, &mut idx, p, &mut |sel: &[usize]| {
            let mut a: Vec<f64> = sel.iter().flat_map(|&i| planes[i].0.clone()).collect();
            let b: Vec<f64> = sel.iter().map(|&i| planes[i].1).collect();
            if let Some(inv) = invert(&mut a, n) {
                let x: Vec<f64> = (0..n)
                    .map(|r| (0..n).map(|c| inv[r * n + c] * b[c]).sum())
                    .collect();
                if feasible(&x) {
                    let v = m.objective(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        });
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_lps_are_classified_consistently(
            m in 1usize..7,
            n in 1usize..7,
            seed in proptest::collection::vec(-5i32..6, 120),
        ) {
            let mut it = seed.into_iter().cycle();
            let mut model = LpModel::new();
            for _ in 0..n {
                let c = it.next().unwrap() as f64;
                let ub = if it.next().unwrap() > 0 { 4.0 } else { INF };
                model.add_var(c, 0.0, ub);
            }
            for _ in 0..m {
                let coeffs = (0..n).map(|j| (j, it.next().unwrap() as f64)).collect();
                let rel = match it.next().unwrap().rem_euclid(3) {
                    0 => Relation::Le,
                    1 => Relation::Ge,
                    _ => Relation::Eq,
                };
                model.add_row(coeffs, rel, it.next().unwrap() as f64);
            }
            match solve_lp(&model).unwrap() {
                LpOutcome::Optimal(s) => check_optimal(&model, &s),
                LpOutcome::Unbounded { ray } => check_ray(&model, &ray),
                LpOutcome::Infeasible => {}
            }
        }

        #[test]
        fn box_bounded_lps_match_vertex_enumeration(
            m in 1usize..5,
            n in 1usize..4,
            seed in proptest::collection::vec(-5i32..6, 60),
        ) {
            let mut it = seed.into_iter().cycle();
            let mut model = LpModel::new();
            for _ in 0..n {
                model.add_var(it.next().unwrap() as f64, 0.0, 3.0);
            }
            for _ in 0..m {
                let coeffs = (0..n).map(|j| (j, it.next().unwrap() as f64)).collect();
                let rel = match it.next().unwrap().rem_euclid(3) {
                    0 => Relation::Le,
                    1 => Relation::Ge,
                    _ => Relation::Eq,
                };
                model.add_row(coeffs, rel, it.next().unwrap() as f64);
            }
            match (solve_lp(&model).unwrap(), brute_force(&model)) {
                (LpOutcome::Optimal(s), Some(v)) => {
                    check_optimal(&model, &s);
                    prop_assert!((s.objective - v).abs() < 1e-7, "{} vs {}", s.objective, v);
                }
                (LpOutcome::Infeasible, None) => {}
                (got, want) => prop_assert!(false, "simplex {:?} vs enumeration {:?}", got, want),
            }
        }
    }
}
