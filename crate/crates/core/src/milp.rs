//! Branch-and-bound over [`LpModel`]s with integer marks: depth-first plunges
//! into the up branch, best-bound selection between plunges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::lp::{Constraint, LpModel, LpOutcome, LpSolution, Relation, Simplex, FEAS_TOL};

pub const INT_TOL: f64 = 1e-6;
/// Objective values closer than this are treated as ties.
pub const TIE_TOL: f64 = 1e-9;
/// Floor on a branch's estimated gain in the product score.
const SCORE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    pub lp: LpModel,
    /// Indices of integer-constrained variables.
    pub integers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MilpOutcome {
    Optimal(MilpSolution),
    Infeasible,
}

impl MilpOutcome {
    pub fn optimal(self) -> Result<MilpSolution> {
        match self {
            MilpOutcome::Optimal(s) => Ok(s),
            MilpOutcome::Infeasible => Err(Error::Infeasible),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MilpOptions {
    pub node_limit: usize,
    /// Candidate starting solution; used as the first incumbent when it is
    /// integral and feasible.
    pub start: Option<Vec<f64>>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            node_limit: 2_000_000,
            start: None,
        }
    }
}

fn feasible_start(model: &MilpModel, ints: &[usize], x: &[f64]) -> bool {
    if x.len() != model.lp.num_vars() {
        return false;
    }
    let in_bounds = x
        .iter()
        .zip(model.lp.lower.iter().zip(&model.lp.upper))
        .all(|(&v, (&l, &u))| v >= l - FEAS_TOL && v <= u + FEAS_TOL);
    let integral = ints.iter().all(|&j| (x[j] - x[j].round()).abs() <= INT_TOL);
    in_bounds && integral && model.lp.rows.iter().all(|row| satisfies(row, x))
}

fn satisfies(row: &Constraint, x: &[f64]) -> bool {
    let a: f64 = row.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
    match row.relation {
        Relation::Le => a <= row.rhs + FEAS_TOL,
        Relation::Ge => a >= row.rhs - FEAS_TOL,
        Relation::Eq => (a - row.rhs).abs() <= FEAS_TOL,
    }
}

pub fn solve_milp(model: &MilpModel) -> Result<MilpOutcome> {
    solve_milp_with(model, &MilpOptions::default())
}

#[derive(Debug, Clone)]
struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    /// Bounds of the integer variables, in `MilpModel::integers` order.
    bounds: Vec<(f64, f64)>,
    /// Relaxation optimum of a kept leaf and the row count it was solved with.
    solved: Option<(usize, Vec<f64>)>,
    /// How the node was created: integer position, up branch, distance the
    /// variable was moved and the parent's objective.
    origin: Option<(usize, bool, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: lowest bound first, then deepest, then most recent.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Incumbent {
    objective: f64,
    x: Vec<f64>,
}

impl Incumbent {
    /// Lower objective wins; near-ties go to the lexicographically smaller
    /// integer assignment.
    fn improved_by(&self, objective: f64, x: &[f64], ints: &[usize]) -> bool {
        if objective < self.objective - TIE_TOL {
            return true;
        }
        if objective > self.objective + TIE_TOL {
            return false;
        }
        for &j in ints {
            match x[j].total_cmp(&self.x[j]) {
                Ordering::Less => return true,
                Ordering::Greater => return false,
                Ordering::Equal => {}
            }
        }
        false
    }
}

/// Tightens bounds of integer variables whose reduced cost shows that moving
/// them off their current bound would push the objective past `gap`.
fn fix_by_reduced_cost(
    model: &MilpModel,
    ints: &[usize],
    sol: &LpSolution,
    gap: f64,
    bounds: &mut [(f64, f64)],
) {
    let mut reduced = model.lp.cost.clone();
    for (row, &pi) in model.lp.rows.iter().zip(&sol.duals) {
        if pi != 0.0 {
            for &(j, a) in &row.coeffs {
                reduced[j] -= pi * a;
            }
        }
    }
    for (k, &j) in ints.iter().enumerate() {
        let (l, u) = bounds[k];
        let v = sol.x[j];
        if l == u {
            continue;
        }
        // Every unit of movement costs at least |d_j|.
        let d = reduced[j];
        if (v - l).abs() <= INT_TOL && d > 0.0 {
            let reach = (gap / d).floor();
            if reach < u - l {
                bounds[k].1 = l + reach.max(0.0);
            }
        } else if (u - v).abs() <= INT_TOL && d < 0.0 {
            let reach = (gap / -d).floor();
            if reach < u - l {
                bounds[k].0 = u - reach.max(0.0);
            }
        }
    }
}

/// Leaves left behind by a search. A model that differs from the searched one
/// only by added rows keeps every leaf bound valid, so the next search can
/// start from the leaves instead of the root.
#[derive(Debug, Clone, Default)]
pub struct SearchTree {
    /// Variable and row counts of the model the leaves belong to.
    shape: Option<(usize, usize)>,
    leaves: Vec<Node>,
    costs: Option<Pseudocosts>,
}

/// Average objective gain per unit of movement, for each integer variable
/// and branch direction.
#[derive(Debug, Clone)]
struct Pseudocosts {
    sum: Vec<[f64; 2]>,
    count: Vec<[u32; 2]>,
}

impl Pseudocosts {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![[0.0; 2]; n],
            count: vec![[0; 2]; n],
        }
    }

    fn record(&mut self, k: usize, up: bool, moved: f64, gain: f64) {
        if moved > INT_TOL {
            let d = usize::from(up);
            self.sum[k][d] += gain.max(0.0) / moved;
            self.count[k][d] += 1;
        }
    }

    /// Mean gain per direction over the variables that have one, or one.
    fn defaults(&self) -> [f64; 2] {
        let mut out = [1.0; 2];
        for (d, slot) in out.iter_mut().enumerate() {
            let (mut s, mut c) = (0.0, 0u32);
            for (sum, count) in self.sum.iter().zip(&self.count) {
                if count[d] > 0 {
                    s += sum[d] / f64::from(count[d]);
                    c += 1;
                }
            }
            if c > 0 {
                *slot = s / f64::from(c);
            }
        }
        out
    }

    fn estimate(&self, k: usize, up: bool, fallback: &[f64; 2]) -> f64 {
        let d = usize::from(up);
        if self.count[k][d] > 0 {
            self.sum[k][d] / f64::from(self.count[k][d])
        } else {
            fallback[d]
        }
    }
}

impl SearchTree {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

pub fn solve_milp_with(model: &MilpModel, options: &MilpOptions) -> Result<MilpOutcome> {
    search(model, options, None)
}

/// Like [`solve_milp_with`], but starts from the leaves in `tree` and leaves
/// the new ones there. The caller must only ever add rows between calls;
/// any other change resets the tree to the root. Reduced-cost fixing is off
/// in this mode since it drops regions a later row may make optimal.
pub fn solve_milp_resume(
    model: &MilpModel,
    options: &MilpOptions,
    tree: &mut SearchTree,
) -> Result<MilpOutcome> {
    search(model, options, Some(tree))
}

fn search(
    model: &MilpModel,
    options: &MilpOptions,
    mut tree: Option<&mut SearchTree>,
) -> Result<MilpOutcome> {
    let mut ints = model.integers.clone();
    ints.sort_unstable();
    ints.dedup();
    if let Some(&j) = ints.iter().find(|&&j| j >= model.lp.num_vars()) {
        return Err(Error::Model(format!(
            "integer mark on missing variable {j}"
        )));
    }
    let mut simplex = Simplex::new(&model.lp)?;
    let root_bounds: Vec<(f64, f64)> = ints
        .iter()
        .map(|&j| (model.lp.lower[j].ceil(), model.lp.upper[j].floor()))
        .collect();
    if root_bounds.iter().any(|(l, u)| l > u) {
        return Ok(MilpOutcome::Infeasible);
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let keep = tree.is_some();
    let shape = (model.lp.num_vars(), model.lp.num_rows());
    match tree.as_deref_mut() {
        Some(t) if t.shape.is_some_and(|(n, m)| n == shape.0 && m <= shape.1) => {
            for mut leaf in t.leaves.drain(..) {
                seq += 1;
                leaf.seq = seq;
                heap.push(leaf);
            }
        }
        _ => heap.push(Node {
            bound: f64::NEG_INFINITY,
            depth: 0,
            seq,
            bounds: root_bounds,
            solved: None,
            origin: None,
        }),
    }
    let mut leaves = Vec::new();
    let mut costs = match tree.as_deref_mut().and_then(|t| t.costs.take()) {
        Some(c) if c.sum.len() == ints.len() => c,
        _ => Pseudocosts::new(ints.len()),
    };
    let mut incumbent: Option<Incumbent> = options
        .start
        .as_ref()
        .filter(|x| feasible_start(model, &ints, x))
        .map(|x| Incumbent {
            objective: model.lp.objective(x),
            x: x.clone(),
        });
    let mut nodes = 0;

    // After branching, the up child is solved next (a plunge); the heap is
    // consulted once a plunge ends.
    let mut plunge: Option<Node> = None;
    while let Some(node) = plunge.take().or_else(|| heap.pop()) {
        if let Some(inc) = &incumbent {
            if node.bound > inc.objective + TIE_TOL {
                if keep {
                    leaves.push(node);
                    continue;
                }
                break;
            }
        }
        nodes += 1;
        if nodes > options.node_limit {
            return Err(Error::Solver(format!(
                "branch-and-bound node limit {} reached",
                options.node_limit
            )));
        }
        // A leaf from an earlier search keeps its relaxation optimum when the
        // rows added since then do not cut it off.
        let cached = match &node.solved {
            Some((rows, x)) if model.lp.rows[*rows..].iter().all(|row| satisfies(row, x)) => {
                Some(x.clone())
            }
            _ => None,
        };
        let (x, objective, lp) = match cached {
            Some(x) => (x, node.bound, None),
            None => {
                for (k, &j) in ints.iter().enumerate() {
                    let (l, u) = node.bounds[k];
                    if simplex.bounds(j) != (l, u) {
                        simplex.set_bounds(j, l, u);
                    }
                }
                let cutoff = incumbent
                    .as_ref()
                    .map_or(f64::INFINITY, |inc| inc.objective + TIE_TOL);
                match simplex.solve_with_cutoff(cutoff)? {
                    None => {
                        if keep {
                            leaves.push(Node {
                                bound: cutoff,
                                solved: None,
                                ..node
                            });
                        }
                        continue;
                    }
                    Some(LpOutcome::Infeasible) => continue,
                    Some(LpOutcome::Unbounded { .. }) => {
                        return Err(Error::Solver("relaxation is unbounded".into()));
                    }
                    Some(LpOutcome::Optimal(sol)) => {
                        if let Some((k, up, moved, parent)) = node.origin {
                            costs.record(k, up, moved, sol.objective - parent);
                        }
                        (sol.x.clone(), sol.objective, Some(sol))
                    }
                }
            }
        };
        let solved = keep.then(|| (shape.1, x.clone()));
        if let Some(inc) = &incumbent {
            if objective > inc.objective + TIE_TOL {
                if keep {
                    leaves.push(Node {
                        bound: objective,
                        solved,
                        ..node
                    });
                }
                continue;
            }
        }

        // Pseudocost product score; the smallest index wins ties.
        let fallback = costs.defaults();
        let mut branch: Option<(usize, f64)> = None;
        let mut best_score = f64::NEG_INFINITY;
        for (k, &j) in ints.iter().enumerate() {
            let v = x[j];
            let frac = v - v.floor();
            if frac <= INT_TOL || frac >= 1.0 - INT_TOL {
                continue;
            }
            let down = (frac * costs.estimate(k, false, &fallback)).max(SCORE_EPS);
            let up = ((1.0 - frac) * costs.estimate(k, true, &fallback)).max(SCORE_EPS);
            let score = down * up;
            if score > best_score * (1.0 + 1e-12) {
                best_score = score;
                branch = Some((k, v));
            }
        }

        if keep && branch.is_none() {
            leaves.push(Node {
                bound: objective,
                solved,
                bounds: node.bounds.clone(),
                ..node
            });
        }
        let mut bounds = node.bounds;
        if let (Some(sol), Some(inc), Some(_)) = (&lp, &incumbent, branch) {
            if !keep {
                fix_by_reduced_cost(
                    model,
                    &ints,
                    sol,
                    inc.objective + TIE_TOL - objective,
                    &mut bounds,
                );
            }
        }
        match branch {
            None => {
                let mut x = x;
                for &j in &ints {
                    x[j] = x[j].round();
                }
                let better = incumbent
                    .as_ref()
                    .is_none_or(|inc| inc.improved_by(objective, &x, &ints));
                if better {
                    incumbent = Some(Incumbent { objective, x });
                }
            }
            Some((k, v)) => {
                let (l, u) = bounds[k];
                let mut down = bounds.clone();
                down[k] = (l, v.floor());
                let mut up = bounds;
                up[k] = (v.ceil(), u);
                seq += 1;
                let frac = v - v.floor();
                heap.push(Node {
                    bound: objective,
                    depth: node.depth + 1,
                    seq,
                    bounds: down,
                    solved: None,
                    origin: Some((k, false, frac, objective)),
                });
                seq += 1;
                plunge = Some(Node {
                    bound: objective,
                    depth: node.depth + 1,
                    seq,
                    bounds: up,
                    solved: None,
                    origin: Some((k, true, 1.0 - frac, objective)),
                });
            }
        }
    }

    if let Some(t) = tree {
        t.shape = Some(shape);
        t.leaves = leaves;
        t.costs = Some(costs);
    }
    Ok(match incumbent {
        Some(inc) => MilpOutcome::Optimal(MilpSolution {
            x: inc.x,
            objective: inc.objective,
            nodes,
        }),
        None => MilpOutcome::Infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, Relation};
    use proptest::prelude::*;

    #[test]
    fn continuous_model_matches_lp() {
        let mut lp = LpModel::new();
        let x1 = lp.add_var(-1.0, 0.0, f64::INFINITY);
        let x2 = lp.add_var(-2.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(x1, 1.0), (x2, 1.0)], Relation::Le, 1.5);
        let lp_obj = match solve_lp(&lp).unwrap() {
            LpOutcome::Optimal(s) => s.objective,
            o => panic!("{o:?}"),
        };
        let sol = solve_milp(&MilpModel {
            lp,
            integers: vec![],
        })
        .unwrap()
        .optimal()
        .unwrap();
        assert_eq!(sol.objective, lp_obj);
        assert_eq!(sol.nodes, 1);
    }

    #[test]
    fn forced_branch() {
        let mut lp = LpModel::new();
        let x = lp.add_var(-1.0, 0.0, 1.0);
        lp.add_row(vec![(x, 1.0)], Relation::Le, 0.5);
        let sol = solve_milp(&MilpModel {
            lp,
            integers: vec![x],
        })
        .unwrap()
        .optimal()
        .unwrap();
        assert_eq!(sol.x, vec![0.0]);
        assert_eq!(sol.objective, 0.0);
        assert!(sol.nodes >= 2);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut lp = LpModel::new();
        let x = lp.add_var(0.0, 0.0, 1.0);
        lp.add_row(vec![(x, 1.0)], Relation::Ge, 0.3);
        lp.add_row(vec![(x, 1.0)], Relation::Le, 0.7);
        assert_eq!(
            solve_milp(&MilpModel {
                lp,
                integers: vec![x]
            })
            .unwrap(),
            MilpOutcome::Infeasible
        );
    }

    #[test]
    fn ties_between_incumbents_go_to_lexicographically_smallest() {
        // min a + b, 2a + 2b >= 1: the root is fractional and both (1, 0) and
        // (0, 1) are reached as integral leaves with objective 1.
        let mut lp = LpModel::new();
        let a = lp.add_var(1.0, 0.0, 1.0);
        let b = lp.add_var(1.0, 0.0, 1.0);
        lp.add_row(vec![(a, 2.0), (b, 2.0)], Relation::Ge, 1.0);
        let sol = solve_milp(&MilpModel {
            lp,
            integers: vec![a, b],
        })
        .unwrap()
        .optimal()
        .unwrap();
        assert_eq!(sol.objective, 1.0);
        assert_eq!(sol.x, vec![0.0, 1.0]);
    }

    fn brute_force_knapsack(values: &[i32], weights: &[i32], cap: i32) -> i32 {
        let n = values.len();
        (0..1u32 << n)
            .filter(|m| {
                (0..n)
                    .filter(|i| m & (1 << i) != 0)
                    .map(|i| weights[i])
                    .sum::<i32>()
                    <= cap
            })
            .map(|m| {
                (0..n)
                    .filter(|i| m & (1 << i) != 0)
                    .map(|i| values[i])
                    .sum::<i32>()
            })
            .max()
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn binary_knapsacks_match_enumeration(
            items in proptest::collection::vec((1i32..20, 1i32..15), 1..9),
            cap in 5i32..40,
        ) {
            let (values, weights): (Vec<i32>, Vec<i32>) = items.into_iter().unzip();
            let mut lp = LpModel::new();
            let vars: Vec<usize> = values.iter().map(|&v| lp.add_var(-(v as f64), 0.0, 1.0)).collect();
            lp.add_row(vars.iter().zip(&weights).map(|(&j, &w)| (j, w as f64)).collect(), Relation::Le, cap as f64);
            let sol = solve_milp(&MilpModel { lp, integers: vars }).unwrap().optimal().unwrap();
            let best = brute_force_knapsack(&values, &weights, cap);
            prop_assert!((sol.objective + best as f64).abs() < 1e-6);
        }
    }
}
