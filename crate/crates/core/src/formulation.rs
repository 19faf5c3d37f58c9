//! The single-commodity flow model of multi-return tours, its weighted-sum
//! scalarisation, the normalisation extremes and the lambda sweep.
//!
//! Binary `x_ij` marks the arcs flown; continuous `y_ij` counts the sensors
//! served since the last depot departure when arc `(i, j)` is flown. The flow
//! balance `sum_j y_ij - sum_j y_ji = 1` at every sensor forbids cycles that
//! miss the depot, and `sum T_ij y_ij / K` is exactly the average AoI of the
//! decoded tour.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benders::{benders_solve, BendersOptions, BendersTrace};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpModel, LpOutcome, Relation};
use crate::milp::{solve_milp, MilpModel};
use crate::model::WeightMatrix;
use crate::tours::{decode_arcs, evaluate, MultiTour, TourMetrics};

/// Largest K accepted by the Held-Karp solver.
pub const TSP_MAX_K: usize = 20;
/// Tolerance used when checking solver output against tour evaluation.
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// All ordered pairs `(i, j)`, `i != j`, over depot and sensors, sorted by
/// `i` then `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcIndex {
    k: usize,
    arcs: Vec<(usize, usize)>,
}

impl ArcIndex {
    pub fn new(k: usize) -> Self {
        let n = k + 1;
        let arcs = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self { k, arcs }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn get(&self, a: usize) -> (usize, usize) {
        self.arcs[a]
    }

    /// Position of arc `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i <= self.k && j <= self.k);
        i * self.k + if j < i { j } else { j - 1 }
    }

    /// Arcs whose 0/1 value rounds to one.
    pub fn selected(&self, x: &[f64]) -> Vec<(usize, usize)> {
        self.arcs
            .iter()
            .zip(x)
            .filter(|(_, &v)| v > 0.5)
            .map(|(&a, _)| a)
            .collect()
    }
}

/// Normalisation anchors: the star tour minimises average AoI and maximises
/// energy, the energy-optimal single cycle does the opposite.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremes {
    pub aoi_min: f64,
    pub aoi_max: f64,
    pub energy_min: f64,
    pub energy_max: f64,
    pub tsp_tour: MultiTour,
    pub star_tour: MultiTour,
}

impl Extremes {
    fn span(lo: f64, hi: f64) -> Option<f64> {
        let d = hi - lo;
        (d > 1e-12 * hi.abs().max(1.0)).then_some(d)
    }

    pub fn aoi_span(&self) -> Option<f64> {
        Self::span(self.aoi_min, self.aoi_max)
    }

    pub fn energy_span(&self) -> Option<f64> {
        Self::span(self.energy_min, self.energy_max)
    }

    /// Weight per second of average AoI and per joule in the solved
    /// objective. A degenerate span drops its term.
    pub fn weights(&self, lambda: f64) -> (f64, f64) {
        let a = self.aoi_span().map_or(0.0, |s| lambda / s);
        let e = self.energy_span().map_or(0.0, |s| (1.0 - lambda) / s);
        (a, e)
    }

    /// Objective of the flow model for a tour with these metrics; the
    /// normalisation offsets are not included.
    pub fn objective(&self, lambda: f64, avg_aoi: f64, energy: f64) -> f64 {
        let (a, e) = self.weights(lambda);
        a * avg_aoi + e * energy
    }

    /// Fully normalised weighted sum, in `[0, 1]` for tours between the
    /// anchors.
    pub fn normalized(&self, lambda: f64, avg_aoi: f64, energy: f64) -> f64 {
        let (a, e) = self.weights(lambda);
        a * (avg_aoi - self.aoi_min) + e * (energy - self.energy_min)
    }

    /// Constant dropped from the normalised objective.
    pub fn offset(&self, lambda: f64) -> f64 {
        let (a, e) = self.weights(lambda);
        a * self.aoi_min + e * self.energy_min
    }
}

fn close(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Lexicographic (energy, AoI) comparison with a relative tie tolerance.
fn lex_less(a: (f64, f64), b: (f64, f64)) -> bool {
    if close(a.0, b.0) {
        a.1 < b.1 && !close(a.1, b.1)
    } else {
        a.0 < b.0
    }
}

/// Minimum-energy single cycle by dynamic programming over subsets.
///
/// Among equal-energy cycles the lower average AoI wins, then the
/// lexicographically smallest visiting order.
pub fn held_karp(w: &WeightMatrix) -> Result<MultiTour> {
    let k = w.k();
    if k > TSP_MAX_K {
        return Err(Error::SizeBound {
            what: "Held-Karp",
            k,
            max: TSP_MAX_K,
        });
    }
    let full = (1usize << k) - 1;
    // best[set][last]: cheapest (energy, sum of position-weighted times) to
    // finish the cycle after visiting `set`, standing at sensor `last + 1`.
    let mut best = vec![(f64::INFINITY, f64::INFINITY); (full + 1) * k];
    for last in 0..k {
        best[full * k + last] = (w.energy(last + 1, 0), k as f64 * w.time(last + 1, 0));
    }
    for set in (1..full).rev() {
        let visited = set.count_ones() as f64;
        for last in (0..k).filter(|&l| set & (1 << l) != 0) {
            let mut b = (f64::INFINITY, f64::INFINITY);
            for next in (0..k).filter(|&n| set & (1 << n) == 0) {
                let tail = best[(set | 1 << next) * k + next];
                let cand = (
                    w.energy(last + 1, next + 1) + tail.0,
                    visited * w.time(last + 1, next + 1) + tail.1,
                );
                if lex_less(cand, b) {
                    b = cand;
                }
            }
            best[set * k + last] = b;
        }
    }
    let start = |next: usize| {
        let tail = best[(1 << next) * k + next];
        (w.energy(0, next + 1) + tail.0, tail.1)
    };
    let mut target = (0..k)
        .map(start)
        .fold((f64::INFINITY, f64::INFINITY), |b, c| {
            if lex_less(c, b) {
                c
            } else {
                b
            }
        });
    let mut order = Vec::with_capacity(k);
    let mut set = 0usize;
    let mut at: Option<usize> = None;
    while set != full {
        let visited = set.count_ones() as f64;
        let mut chosen = None;
        for next in (0..k).filter(|&n| set & (1 << n) == 0) {
            let tail = best[(set | 1 << next) * k + next];
            let step = match at {
                None => (w.energy(0, next + 1), 0.0),
                Some(l) => (w.energy(l + 1, next + 1), visited * w.time(l + 1, next + 1)),
            };
            let cand = (step.0 + tail.0, step.1 + tail.1);
            if !lex_less(target, cand) {
                chosen = Some((next, tail));
                break;
            }
        }
        let (next, tail) = chosen.expect("some successor attains the optimum");
        order.push(next + 1);
        set |= 1 << next;
        at = Some(next);
        target = tail;
    }
    Ok(MultiTour::single(order))
}

pub fn compute_extremes(w: &WeightMatrix) -> Result<Extremes> {
    let k = w.k();
    let star_tour = MultiTour::star(k);
    let star = evaluate(&star_tour, w)?;
    let tsp_tour = held_karp(w)?;
    let tsp = evaluate(&tsp_tour, w)?;
    Ok(Extremes {
        aoi_min: star.avg_aoi,
        aoi_max: tsp.avg_aoi,
        energy_min: tsp.energy,
        energy_max: star.energy,
        tsp_tour,
        star_tour,
    })
}

/// Row counts per constraint family of the flow model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowFamilies {
    pub depot_degree: usize,
    pub in_degree: usize,
    pub out_degree: usize,
    pub flow_balance: usize,
    pub depot_flow: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TourMode {
    /// Any number of depot returns.
    MultiReturn,
    /// Exactly one departure from and one return to the depot.
    Hamiltonian,
}

/// The flow MILP with its per-arc objective coefficients.
#[derive(Debug, Clone)]
pub struct ScalarizedModel {
    pub milp: MilpModel,
    pub arcs: ArcIndex,
    pub lambda: f64,
    pub mode: TourMode,
    /// Coefficient of `y_ij`, per arc.
    pub cost_time: Vec<f64>,
    /// Coefficient of `x_ij`, per arc.
    pub cost_energy: Vec<f64>,
    pub rows: RowFamilies,
}

impl ScalarizedModel {
    /// Column of `x` for arc index `a`.
    pub fn x_var(&self, a: usize) -> usize {
        a
    }

    /// Column of `y` for arc index `a`.
    pub fn y_var(&self, a: usize) -> usize {
        self.arcs.len() + a
    }
}

/// Adds the degree constraints over `x` (columns `0..arcs.len()`) to `lp`.
/// Shared with the decomposition master.
pub(crate) fn add_degree_rows(
    lp: &mut LpModel,
    arcs: &ArcIndex,
    mode: TourMode,
) -> (usize, usize, usize) {
    let k = arcs.k();
    let depot_out: Vec<(usize, f64)> = (1..=k).map(|i| (arcs.index(0, i), 1.0)).collect();
    let depot_in: Vec<(usize, f64)> = (1..=k).map(|i| (arcs.index(i, 0), 1.0)).collect();
    let depot_rows = match mode {
        TourMode::MultiReturn => {
            let mut row = depot_out;
            row.extend(depot_in.iter().map(|&(a, _)| (a, -1.0)));
            lp.add_row(row, Relation::Eq, 0.0);
            1
        }
        TourMode::Hamiltonian => {
            lp.add_row(depot_out, Relation::Eq, 1.0);
            lp.add_row(depot_in, Relation::Eq, 1.0);
            2
        }
    };
    for j in 1..=k {
        let row = (0..=k)
            .filter(|&i| i != j)
            .map(|i| (arcs.index(i, j), 1.0))
            .collect();
        lp.add_row(row, Relation::Eq, 1.0);
    }
    for j in 1..=k {
        let row = (0..=k)
            .filter(|&i| i != j)
            .map(|i| (arcs.index(j, i), 1.0))
            .collect();
        lp.add_row(row, Relation::Eq, 1.0);
    }
    (depot_rows, k, k)
}

fn build(
    w: &WeightMatrix,
    lambda: f64,
    mode: TourMode,
    cost_time: Vec<f64>,
    cost_energy: Vec<f64>,
) -> ScalarizedModel {
    let k = w.k();
    let arcs = ArcIndex::new(k);
    let n_arcs = arcs.len();
    let mut lp = LpModel::new();
    for &c in &cost_energy {
        lp.add_var(c, 0.0, 1.0);
    }
    for &c in &cost_time {
        lp.add_var(c, 0.0, f64::INFINITY);
    }
    let (depot_degree, in_degree, out_degree) = add_degree_rows(&mut lp, &arcs, mode);
    let y = |a: usize| n_arcs + a;
    for i in 1..=k {
        let mut row = Vec::with_capacity(2 * k);
        for j in (0..=k).filter(|&j| j != i) {
            row.push((y(arcs.index(i, j)), 1.0));
            row.push((y(arcs.index(j, i)), -1.0));
        }
        lp.add_row(row, Relation::Eq, 1.0);
    }
    for i in 1..=k {
        lp.add_row(vec![(y(arcs.index(0, i)), 1.0)], Relation::Eq, 0.0);
    }
    for a in 0..n_arcs {
        lp.add_row(vec![(y(a), 1.0), (a, -(k as f64))], Relation::Le, 0.0);
    }
    let rows = RowFamilies {
        depot_degree,
        in_degree,
        out_degree,
        flow_balance: k,
        depot_flow: k,
        capacity: n_arcs,
    };
    ScalarizedModel {
        milp: MilpModel {
            lp,
            integers: (0..n_arcs).collect(),
        },
        arcs,
        lambda,
        mode,
        cost_time,
        cost_energy,
        rows,
    }
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Per-arc objective coefficients `(C^T, C^E)` of the scalarised model.
pub fn coefficients(w: &WeightMatrix, lambda: f64, ext: &Extremes) -> (Vec<f64>, Vec<f64>) {
    let k = w.k() as f64;
    let (a, e) = ext.weights(lambda);
    let arcs = ArcIndex::new(w.k());
    let ct = arcs
        .arcs()
        .iter()
        .map(|&(i, j)| a * w.time(i, j) / k)
        .collect();
    let ce = arcs
        .arcs()
        .iter()
        .map(|&(i, j)| e * w.energy(i, j))
        .collect();
    (ct, ce)
}

/// Multi-return model minimising the normalised weighted sum of average AoI
/// and energy, constant offsets dropped.
pub fn build_flow_milp(w: &WeightMatrix, lambda: f64, ext: &Extremes) -> Result<ScalarizedModel> {
    check_lambda(lambda)?;
    let (ct, ce) = coefficients(w, lambda, ext);
    Ok(build(w, lambda, TourMode::MultiReturn, ct, ce))
}

/// Single-cycle model minimising average AoI (in seconds) only.
pub fn hamiltonian_aoi_milp(w: &WeightMatrix) -> ScalarizedModel {
    let k = w.k() as f64;
    let arcs = ArcIndex::new(w.k());
    let ct = arcs.arcs().iter().map(|&(i, j)| w.time(i, j) / k).collect();
    let ce = vec![0.0; arcs.len()];
    build(w, 1.0, TourMode::Hamiltonian, ct, ce)
}

/// A decoded, consistency-checked solution of a flow model.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub tour: MultiTour,
    pub metrics: TourMetrics,
    pub objective: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub nodes: usize,
}

/// Rounds of root cut separation before branching.
const CUT_ROUNDS: usize = 50;

/// Sensor sets (bit `i - 1` for sensor `i`) whose outgoing arc weight under
/// `x` is below one. Every cycle through such a set must leave it, so
/// `sum_{i in S, j not in S} x_ij >= 1` is valid for every multi-tour.
pub fn violated_depot_cuts(arcs: &ArcIndex, x: &[f64]) -> Vec<u64> {
    let k = arcs.k();
    let n = k + 1;
    let mut found = Vec::new();
    for t in 1..=k {
        // Max flow from sensor t to the depot, augmenting along BFS paths.
        let mut res = vec![0.0; n * n];
        for (a, &(i, j)) in arcs.arcs().iter().enumerate() {
            res[i * n + j] = x[a].max(0.0);
        }
        let mut flow = 0.0;
        let reach = loop {
            let mut prev = vec![usize::MAX; n];
            prev[t] = t;
            let mut queue = std::collections::VecDeque::from([t]);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if prev[v] == usize::MAX && res[u * n + v] > 1e-9 {
                        prev[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            if prev[0] == usize::MAX || flow >= 1.0 {
                break prev;
            }
            let mut push = f64::INFINITY;
            let mut v = 0;
            while v != t {
                push = push.min(res[prev[v] * n + v]);
                v = prev[v];
            }
            let mut v = 0;
            while v != t {
                res[prev[v] * n + v] -= push;
                res[v * n + prev[v]] += push;
                v = prev[v];
            }
            flow += push;
        };
        if flow < 1.0 - 1e-6 && reach[0] == usize::MAX {
            let set = (1..=k)
                .filter(|&v| reach[v] != usize::MAX)
                .fold(0u64, |m, v| m | 1 << (v - 1));
            if !found.contains(&set) {
                found.push(set);
            }
        }
    }
    found
}

fn depot_cut_row(arcs: &ArcIndex, set: u64) -> Vec<(usize, f64)> {
    let inside = |v: usize| v != 0 && set & (1 << (v - 1)) != 0;
    arcs.arcs()
        .iter()
        .enumerate()
        .filter(|&(_, &(i, j))| inside(i) && !inside(j))
        .map(|(a, _)| (a, 1.0))
        .collect()
}

impl ScalarizedModel {
    /// Working copy of the model with valid inequalities appended: flow
    /// bounds implied by integrality, and depot-connectivity cuts separated
    /// at the root. Every feasible multi-tour (single cycle in Hamiltonian
    /// mode) with its induced flows satisfies them.
    pub fn strengthened(&self) -> Result<MilpModel> {
        let k = self.arcs.k();
        let kf = k as f64;
        let mut milp = self.milp.clone();
        let lp = &mut milp.lp;
        for (a, &(i, j)) in self.arcs.arcs().iter().enumerate() {
            if i == 0 {
                continue;
            }
            let (x, y) = (self.x_var(a), self.y_var(a));
            let first = self.x_var(self.arcs.index(0, i));
            // Leaving a sensor carries at least one unit, two unless the
            // sensor opened its cycle.
            lp.add_row(vec![(y, -1.0), (x, 1.0)], Relation::Le, 0.0);
            lp.add_row(vec![(y, -1.0), (x, 2.0), (first, -1.0)], Relation::Le, 0.0);
            if j != 0 {
                lp.add_row(vec![(y, 1.0), (x, 1.0 - kf)], Relation::Le, 0.0);
            } else if self.mode == TourMode::Hamiltonian {
                lp.add_row(vec![(y, -1.0), (x, kf)], Relation::Le, 0.0);
            }
        }
        if self.mode == TourMode::Hamiltonian {
            // Positions in a single cycle are a permutation of 1..=K.
            let all: Vec<usize> = (1..=k).collect();
            lp.add_row(self.position_row(&all), Relation::Eq, kf * (kf + 1.0) / 2.0);
        }
        for _ in 0..CUT_ROUNDS {
            let sol = match solve_lp(lp)? {
                LpOutcome::Optimal(sol) => sol,
                LpOutcome::Infeasible => return Ok(milp),
                LpOutcome::Unbounded { .. } => {
                    return Err(Error::Solver("flow relaxation is unbounded".into()))
                }
            };
            let sets = violated_depot_cuts(&self.arcs, &sol.x[..self.arcs.len()]);
            let orders = match self.mode {
                TourMode::Hamiltonian => self.violated_position_cuts(&sol.x),
                TourMode::MultiReturn => Vec::new(),
            };
            if sets.is_empty() && orders.is_empty() {
                break;
            }
            for set in sets {
                lp.add_row(depot_cut_row(&self.arcs, set), Relation::Ge, 1.0);
            }
            for set in orders {
                let t = set.len() as f64;
                lp.add_row(self.position_row(&set), Relation::Ge, t * (t + 1.0) / 2.0);
            }
        }
        Ok(milp)
    }

    /// `sum_j y_ij` over the sensors in `set`: their positions in a single
    /// cycle.
    fn position_row(&self, set: &[usize]) -> Vec<(usize, f64)> {
        let k = self.arcs.k();
        set.iter()
            .flat_map(|&i| (0..=k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| (self.y_var(self.arcs.index(i, j)), 1.0))
            .collect()
    }

    /// Prefixes of the sensors sorted by fractional position whose positions
    /// sum to less than `1 + 2 + ... + t`.
    fn violated_position_cuts(&self, sol: &[f64]) -> Vec<Vec<usize>> {
        let k = self.arcs.k();
        let mut pos: Vec<(f64, usize)> = (1..=k)
            .map(|i| {
                let p = (0..=k)
                    .filter(|&j| j != i)
                    .map(|j| sol[self.y_var(self.arcs.index(i, j))])
                    .sum();
                (p, i)
            })
            .collect();
        pos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = Vec::new();
        let mut sum = 0.0;
        for t in 1..k {
            sum += pos[t - 1].0;
            let need = (t * (t + 1) / 2) as f64;
            if sum < need - 1e-6 {
                out.push(pos[..t].iter().map(|&(_, i)| i).collect());
            }
        }
        out
    }

    pub fn solve(&self, w: &WeightMatrix) -> Result<FlowSolution> {
        let sol = solve_milp(&self.strengthened()?)?.optimal()?;
        let violated = self
            .milp
            .lp
            .activities(&sol.x)
            .iter()
            .zip(&self.milp.lp.rows)
            .any(|(&act, row)| match row.relation {
                Relation::Le => act > row.rhs + CONSISTENCY_TOL,
                Relation::Ge => act < row.rhs - CONSISTENCY_TOL,
                Relation::Eq => (act - row.rhs).abs() > CONSISTENCY_TOL,
            });
        if violated {
            return Err(Error::Solver("solution violates the flow model".into()));
        }
        let n = self.arcs.len();
        let x = sol.x[..n].to_vec();
        let y = sol.x[n..].to_vec();
        let tour = decode_arcs(&self.arcs.selected(&x), self.arcs.k())?;
        let metrics = evaluate(&tour, w)?;
        check_flow_values(&self.arcs, &x, &y, &metrics)?;
        let k = self.arcs.k() as f64;
        let reported_aoi: f64 = self
            .arcs
            .arcs()
            .iter()
            .zip(&y)
            .map(|(&(i, j), v)| w.time(i, j) * v)
            .sum::<f64>()
            / k;
        let reported_energy: f64 = self
            .arcs
            .arcs()
            .iter()
            .zip(&x)
            .map(|(&(i, j), v)| w.energy(i, j) * v)
            .sum();
        check_metrics(reported_aoi, reported_energy, &metrics)?;
        Ok(FlowSolution {
            tour,
            metrics,
            objective: sol.objective,
            x,
            y,
            nodes: sol.nodes,
        })
    }
}

/// Solver flows must equal the served-sensor counts on flown arcs and vanish
/// elsewhere.
pub fn check_flow_values(
    arcs: &ArcIndex,
    x: &[f64],
    y: &[f64],
    metrics: &TourMetrics,
) -> Result<()> {
    for (a, &(i, j)) in arcs.arcs().iter().enumerate() {
        let expected = if x[a] > 0.5 {
            metrics.flow_on(i, j) as f64
        } else {
            0.0
        };
        if (y[a] - expected).abs() > CONSISTENCY_TOL {
            return Err(Error::Solver(format!(
                "flow on ({i},{j}) is {} but the tour implies {expected}",
                y[a]
            )));
        }
    }
    Ok(())
}

pub fn check_metrics(avg_aoi: f64, energy: f64, metrics: &TourMetrics) -> Result<()> {
    let rel = |a: f64, b: f64| (a - b).abs() <= CONSISTENCY_TOL * a.abs().max(b.abs()).max(1.0);
    if !rel(avg_aoi, metrics.avg_aoi) || !rel(energy, metrics.energy) {
        return Err(Error::Solver(format!(
            "solver reports (aoi {avg_aoi}, energy {energy}) but the tour evaluates to ({}, {})",
            metrics.avg_aoi, metrics.energy
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Monolithic,
    Benders,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Monolithic => "monolithic",
            SolverKind::Benders => "benders",
        })
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolithic" => Ok(SolverKind::Monolithic),
            "benders" => Ok(SolverKind::Benders),
            other => Err(Error::InvalidInput(format!("unknown solver '{other}'"))),
        }
    }
}

/// One frontier sample.
#[derive(Debug, Clone)]
pub struct ParetoPoint {
    pub lambda: f64,
    pub avg_aoi: f64,
    pub energy: f64,
    pub tour: MultiTour,
    /// Solved objective, offsets dropped.
    pub objective: f64,
    pub solver: SolverKind,
    /// Branch-and-bound nodes (monolithic) or decomposition iterations.
    pub iterations: usize,
    pub runtime: Duration,
    /// Bound history of the decomposition solver.
    pub trace: Option<BendersTrace>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub solver: SolverKind,
    pub tol: f64,
    pub jobs: usize,
    pub keep_duplicates: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            solver: SolverKind::Monolithic,
            tol: 1e-6,
            jobs: 1,
            keep_duplicates: false,
        }
    }
}

/// `0, step, 2 step, ..., 1` with the endpoints exact.
pub fn lambda_grid(start: f64, step: f64, end: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || start > end {
        return Err(Error::InvalidInput(format!(
            "bad lambda range {start}:{step}:{end}"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    for &l in &grid {
        check_lambda(l)?;
    }
    Ok(grid)
}

/// Solves the weighted-sum model at one lambda.
pub fn solve_point(
    w: &WeightMatrix,
    ext: &Extremes,
    lambda: f64,
    solver: SolverKind,
    tol: f64,
) -> Result<ParetoPoint> {
    check_lambda(lambda)?;
    let started = Instant::now();
    if w.k() == 1 {
        let tour = MultiTour::star(1);
        let m = evaluate(&tour, w)?;
        return Ok(ParetoPoint {
            lambda,
            avg_aoi: m.avg_aoi,
            energy: m.energy,
            objective: ext.objective(lambda, m.avg_aoi, m.energy),
            tour,
            solver,
            iterations: 0,
            runtime: started.elapsed(),
            trace: None,
        });
    }
    let (tour, metrics, objective, iterations, trace) = match solver {
        SolverKind::Monolithic => {
            let s = build_flow_milp(w, lambda, ext)?.solve(w)?;
            (s.tour, s.metrics, s.objective, s.nodes, None)
        }
        SolverKind::Benders => {
            let opts = BendersOptions {
                tol,
                ..BendersOptions::default()
            };
            let r = benders_solve(w, ext, lambda, &opts)?;
            let iters = r.trace.records.len();
            (r.tour, r.metrics, r.objective, iters, Some(r.trace))
        }
    };
    check_metrics(metrics.avg_aoi, metrics.energy, &evaluate(&tour, w)?)?;
    let (tour, metrics, objective) = break_endpoint_tie(w, ext, lambda, tour, metrics, objective)?;
    Ok(ParetoPoint {
        lambda,
        avg_aoi: metrics.avg_aoi,
        energy: metrics.energy,
        tour,
        objective,
        solver,
        iterations,
        runtime: started.elapsed(),
        trace,
    })
}

/// At `lambda` 0 or 1 one metric carries no weight, so an optimum may be
/// beaten in that metric by a tie. The extreme tours are lexicographic optima
/// and replace such a solution.
fn break_endpoint_tie(
    w: &WeightMatrix,
    ext: &Extremes,
    lambda: f64,
    tour: MultiTour,
    metrics: TourMetrics,
    objective: f64,
) -> Result<(MultiTour, TourMetrics, f64)> {
    let anchor = if lambda == 0.0 {
        &ext.tsp_tour
    } else if lambda == 1.0 {
        &ext.star_tour
    } else {
        return Ok((tour, metrics, objective));
    };
    let am = evaluate(anchor, w)?;
    let anchor_obj = ext.objective(lambda, am.avg_aoi, am.energy);
    let tied = (anchor_obj - objective).abs() <= CONSISTENCY_TOL * (1.0 + objective.abs());
    let dominates = am.avg_aoi <= metrics.avg_aoi
        && am.energy <= metrics.energy
        && (am.avg_aoi < metrics.avg_aoi || am.energy < metrics.energy);
    Ok(if tied && dominates {
        (anchor.clone(), am, anchor_obj)
    } else {
        (tour, metrics, objective)
    })
}

/// One solve per lambda, in grid order. Unless `keep_duplicates` is set,
/// later samples that land on an already-seen tour are dropped.
pub fn pareto_sweep(
    w: &WeightMatrix,
    ext: &Extremes,
    grid: &[f64],
    opts: &SweepOptions,
) -> Result<Vec<ParetoPoint>> {
    for &l in grid {
        check_lambda(l)?;
    }
    let solve = |&lambda: &f64| {
        solve_point(w, ext, lambda, opts.solver, opts.tol).map_err(|e| Error::AtLambda {
            lambda,
            source: Box::new(e),
        })
    };
    let points: Vec<ParetoPoint> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Solver(e.to_string()))?;
        pool.install(|| grid.par_iter().map(solve).collect::<Result<Vec<_>>>())?
    } else {
        grid.iter().map(solve).collect::<Result<Vec<_>>>()?
    };
    if opts.keep_duplicates {
        return Ok(points);
    }
    let mut seen = std::collections::HashSet::new();
    Ok(points
        .into_iter()
        .filter(|p| seen.insert(p.tour.canonical()))
        .collect())
}
