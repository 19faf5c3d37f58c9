//! Benders decomposition of the flow model.
//!
//! The master keeps the arc variables `x` and a variable `theta` that
//! underestimates the flow cost; the subproblem prices the flows for a fixed
//! `x` through its dual, whose extreme points and rays become optimality and
//! feasibility cuts.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formulation::{
    add_degree_rows, check_flow_values, check_lambda, coefficients, ArcIndex, Extremes, TourMode,
};
use crate::lp::{LpModel, LpOutcome, Relation};
use crate::milp::{solve_milp_resume, MilpModel, MilpOptions, SearchTree};
use crate::model::WeightMatrix;
use crate::tours::{decode_arcs, evaluate, MultiTour, TourMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CutKind {
    Optimality,
    Feasibility,
}

impl fmt::Display for CutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CutKind::Optimality => "optimality",
            CutKind::Feasibility => "feasibility",
        })
    }
}

/// An extreme point (with its value) or an extreme ray of the dual
/// subproblem. Indices: `alpha[i - 1]` and `beta[i - 1]` for sensor `i`,
/// `gamma[a]` for arc `a` of [`ArcIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `Some(g)` for an extreme point, `None` for a ray.
    pub value: Option<f64>,
    /// Primal flows recovered from the multipliers, for an extreme point.
    pub flows: Option<Vec<f64>>,
}

impl DualSolution {
    pub fn kind(&self) -> CutKind {
        if self.value.is_some() {
            CutKind::Optimality
        } else {
            CutKind::Feasibility
        }
    }

    /// `sum alpha - sum K gamma_ij x_ij`.
    pub fn objective_at(&self, x: &[f64], k: usize) -> f64 {
        let k = k as f64;
        self.alpha.iter().sum::<f64>()
            - self
                .gamma
                .iter()
                .zip(x)
                .map(|(g, v)| k * g * v)
                .sum::<f64>()
    }
}

/// `sum alpha - sum K gamma_ij x_ij <= theta` (optimality) or `<= 0`
/// (feasibility).
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub kind: CutKind,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Cut {
    fn from_dual(d: &DualSolution) -> Self {
        Self {
            kind: d.kind(),
            alpha: d.alpha.clone(),
            gamma: d.gamma.clone(),
        }
    }

    /// Left-hand side at arc assignment `x`.
    pub fn lhs(&self, x: &[f64]) -> f64 {
        let k = self.alpha.len() as f64;
        self.alpha.iter().sum::<f64>()
            - self
                .gamma
                .iter()
                .zip(x)
                .map(|(g, v)| k * g * v)
                .sum::<f64>()
    }

    /// Whether `(x, theta)` satisfies the cut up to `tol`.
    pub fn holds(&self, x: &[f64], theta: f64, tol: f64) -> bool {
        let rhs = match self.kind {
            CutKind::Optimality => theta,
            CutKind::Feasibility => 0.0,
        };
        self.lhs(x) <= rhs + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Best lower bound so far.
    pub lb: f64,
    /// Upper bound from this iteration's assignment; infinite when the
    /// assignment admits no flow.
    pub ub: f64,
    /// `None` on the final iteration, where the gap closed and no cut was
    /// added.
    pub cut_kind: Option<CutKind>,
    pub master_obj: f64,
    /// Infinite for a ray.
    pub subproblem_obj: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BendersTrace {
    pub records: Vec<TraceRecord>,
    pub cuts: Vec<Cut>,
}

impl BendersTrace {
    pub fn final_gap(&self) -> f64 {
        let best_ub = self
            .records
            .iter()
            .map(|r| r.ub)
            .fold(f64::INFINITY, f64::min);
        self.records
            .last()
            .map_or(f64::INFINITY, |r| best_ub - r.lb)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lb,ub,cut_kind,master_obj,subproblem_obj\n");
        for r in &self.records {
            let kind = r.cut_kind.map_or("none".to_string(), |k| k.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter, r.lb, r.ub, kind, r.master_obj, r.subproblem_obj
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BendersOptions {
    pub tol: f64,
    /// Defaults to `10 K^2`.
    pub max_iter: Option<usize>,
}

impl Default for BendersOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BendersResult {
    pub tour: MultiTour,
    pub metrics: TourMetrics,
    /// Best upper bound, offsets dropped.
    pub objective: f64,
    pub lower_bound: f64,
    pub x: Vec<f64>,
    /// Subproblem flows at `x`, one per arc.
    pub flows: Vec<f64>,
    pub trace: BendersTrace,
}

/// Solves the dual of the flow subproblem at a fixed arc assignment `x`
/// (one 0/1 value per arc of [`ArcIndex`]).
pub fn dual_subproblem(
    x: &[f64],
    w: &WeightMatrix,
    lambda: f64,
    ext: &Extremes,
) -> Result<DualSolution> {
    check_lambda(lambda)?;
    let (ct, _) = coefficients(w, lambda, ext);
    dual_with_costs(x, w.k(), &ct)
}

fn dual_with_costs(x: &[f64], k: usize, ct: &[f64]) -> Result<DualSolution> {
    let arcs = ArcIndex::new(k);
    if x.len() != arcs.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} arc values, got {}",
            arcs.len(),
            x.len()
        )));
    }
    let kf = k as f64;
    let mut lp = LpModel::new();
    // Maximisation written as minimisation of the negated objective.
    let alpha: Vec<usize> = (0..k)
        .map(|_| lp.add_var(-1.0, f64::NEG_INFINITY, f64::INFINITY))
        .collect();
    let beta: Vec<usize> = (0..k)
        .map(|_| lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY))
        .collect();
    let gamma: Vec<usize> = x
        .iter()
        .map(|&v| lp.add_var(kf * v, 0.0, f64::INFINITY))
        .collect();
    for (a, &(i, j)) in arcs.arcs().iter().enumerate() {
        let mut row = vec![(gamma[a], -1.0)];
        if i == 0 {
            row.push((alpha[j - 1], -1.0));
            row.push((beta[j - 1], 1.0));
        } else if j == 0 {
            row.push((alpha[i - 1], 1.0));
        } else {
            row.push((alpha[i - 1], 1.0));
            row.push((alpha[j - 1], -1.0));
        }
        lp.add_row(row, Relation::Le, ct[a]);
    }
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&j| v[j]).collect::<Vec<_>>();
    match crate::lp::solve_lp(&lp)? {
        LpOutcome::Optimal(sol) => {
            let alpha = pick(&sol.x, &alpha);
            let (beta, gamma) = tightest_completion(&arcs, &alpha, Some(ct));
            let value = alpha.iter().sum::<f64>()
                - gamma.iter().zip(x).map(|(g, v)| kf * g * v).sum::<f64>();
            Ok(DualSolution {
                alpha,
                beta,
                gamma,
                value: Some(value),
                flows: Some(sol.duals.iter().map(|p| -p).collect()),
            })
        }
        LpOutcome::Unbounded { ray } => {
            let alpha = pick(&ray, &alpha);
            let (beta, gamma) = tightest_completion(&arcs, &alpha, None);
            let scale = alpha
                .iter()
                .chain(&beta)
                .chain(&gamma)
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let norm = |v: Vec<f64>| v.into_iter().map(|a| a / scale).collect::<Vec<_>>();
            Ok(DualSolution {
                alpha: norm(alpha),
                beta: norm(beta),
                gamma: norm(gamma),
                value: None,
                flows: None,
            })
        }
        LpOutcome::Infeasible => Err(Error::Solver("dual subproblem reported infeasible".into())),
    }
}

/// Smallest `gamma` (and a matching `beta`) that keeps `alpha` dual
/// feasible; with `costs = None` the homogeneous system of a ray. Arcs
/// outside the assignment carry no objective weight, so this leaves the
/// subproblem value unchanged and gives the strongest cut for `alpha`.
fn tightest_completion(
    arcs: &ArcIndex,
    alpha: &[f64],
    costs: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let c = |a: usize| costs.map_or(0.0, |ct| ct[a]);
    let beta = (1..=arcs.k())
        .map(|i| alpha[i - 1] + c(arcs.index(0, i)))
        .collect();
    let gamma = arcs
        .arcs()
        .iter()
        .enumerate()
        .map(|(a, &(i, j))| {
            let lhs = match (i, j) {
                (0, _) => 0.0,
                (_, 0) => alpha[i - 1] - c(a),
                _ => alpha[i - 1] - alpha[j - 1] - c(a),
            };
            lhs.max(0.0)
        })
        .collect();
    (beta, gamma)
}

/// Runs the cutting-plane loop until the best upper bound is within `tol` of
/// the master bound.
pub fn benders_solve(
    w: &WeightMatrix,
    ext: &Extremes,
    lambda: f64,
    opts: &BendersOptions,
) -> Result<BendersResult> {
    check_lambda(lambda)?;
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let k = w.k();
    let cap = opts.max_iter.unwrap_or(10 * k * k);
    let arcs = ArcIndex::new(k);
    let n = arcs.len();
    let (ct, ce) = coefficients(w, lambda, ext);

    let mut master = LpModel::new();
    for &c in &ce {
        master.add_var(c, 0.0, 1.0);
    }
    let theta = master.add_var(1.0, 0.0, f64::INFINITY);
    add_degree_rows(&mut master, &arcs, TourMode::MultiReturn);
    // Any arc leaving a sensor carries at least one unit of flow.
    let mut floor: Vec<(usize, f64)> = (0..n)
        .filter(|&a| arcs.get(a).0 != 0 && ct[a] != 0.0)
        .map(|a| (a, ct[a]))
        .collect();
    if !floor.is_empty() {
        floor.push((theta, -1.0));
        master.add_row(floor, Relation::Le, 0.0);
    }
    let mut master = MilpModel {
        lp: master,
        integers: (0..n).collect(),
    };

    let mut trace = BendersTrace::default();
    let mut lb = f64::NEG_INFINITY;
    let mut best: Option<(f64, Vec<f64>, DualSolution)> = None;
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut tree = SearchTree::default();
    for iter in 1..=cap {
        let start = master_start(&master, &seen, theta);
        let sol = solve_milp_resume(
            &master,
            &MilpOptions {
                start,
                ..MilpOptions::default()
            },
            &mut tree,
        )?
        .optimal()?;
        let x: Vec<f64> = sol.x[..n].to_vec();
        lb = lb.max(sol.objective);
        let dual = dual_with_costs(&x, k, &ct)?;
        if dual.value.is_some() {
            seen.push(x.clone());
        }
        let energy_part: f64 = ce.iter().zip(&x).map(|(c, v)| c * v).sum();
        let (ub, sub_obj) = match dual.value {
            Some(g) => (energy_part + g, g),
            None => (f64::INFINITY, f64::INFINITY),
        };
        if best.as_ref().map_or(ub.is_finite(), |(b, _, _)| ub < *b) {
            best = Some((ub, x.clone(), dual.clone()));
        }
        let best_ub = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let converged = best_ub - lb <= opts.tol;
        let cut_kind = (!converged).then(|| dual.kind());
        trace.records.push(TraceRecord {
            iter,
            lb,
            ub,
            cut_kind,
            master_obj: sol.objective,
            subproblem_obj: sub_obj,
        });
        if converged {
            let (objective, x, dual) = best.expect("finite upper bound");
            return finish(w, &arcs, x, &dual, objective, lb, trace);
        }
        let cut = Cut::from_dual(&dual);
        let kf = k as f64;
        let mut row: Vec<(usize, f64)> = cut
            .gamma
            .iter()
            .enumerate()
            .filter(|(_, &g)| g != 0.0)
            .map(|(a, &g)| (a, -kf * g))
            .collect();
        if cut.kind == CutKind::Optimality {
            row.push((theta, -1.0));
        }
        master
            .lp
            .add_row(row, Relation::Le, -cut.alpha.iter().sum::<f64>());
        trace.cuts.push(cut);
    }
    let gap = trace.final_gap();
    Err(Error::IterationCap { cap, gap, trace })
}

/// Cheapest earlier assignment with a finite subproblem value, completed
/// with the smallest `theta` the current cuts allow.
fn master_start(master: &MilpModel, seen: &[Vec<f64>], theta: usize) -> Option<Vec<f64>> {
    let cut_rows = &master.lp.rows;
    seen.iter()
        .map(|x| {
            let mut v = x.clone();
            v.push(0.0);
            let need = cut_rows
                .iter()
                .filter(|r| r.coeffs.iter().any(|&(j, _)| j == theta))
                .map(|r| {
                    r.coeffs
                        .iter()
                        .filter(|&&(j, _)| j != theta)
                        .map(|&(j, a)| a * v[j])
                        .sum::<f64>()
                        - r.rhs
                })
                .fold(0.0f64, f64::max);
            v[theta] = need;
            (master.lp.objective(&v), v)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| v)
}

fn finish(
    w: &WeightMatrix,
    arcs: &ArcIndex,
    x: Vec<f64>,
    dual: &DualSolution,
    objective: f64,
    lower_bound: f64,
    trace: BendersTrace,
) -> Result<BendersResult> {
    let tour = decode_arcs(&arcs.selected(&x), arcs.k())?;
    let metrics = evaluate(&tour, w)?;
    let flows = dual.flows.clone().expect("optimality point carries flows");
    check_flow_values(arcs, &x, &flows, &metrics)?;
    Ok(BendersResult {
        tour,
        metrics,
        objective,
        lower_bound,
        x,
        flows,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{build_flow_milp, compute_extremes};
    use crate::model::{build_edge_weights, Instance, Point};
    use crate::tours::Oracle;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(k: usize, seed: u64) -> WeightMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sensors = (0..k)
            .map(|_| Point::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)))
            .collect();
        build_edge_weights(&Instance::with_defaults(Point::new(500.0, 500.0), sensors).unwrap())
    }

    fn assignment(arcs: &ArcIndex, tour: &[(usize, usize)]) -> Vec<f64> {
        let mut x = vec![0.0; arcs.len()];
        for &(i, j) in tour {
            x[arcs.index(i, j)] = 1.0;
        }
        x
    }

    #[test]
    fn star_assignment_value() {
        let w = weights(4, 1);
        let ext = compute_extremes(&w).unwrap();
        let arcs = ArcIndex::new(4);
        let x = assignment(&arcs, &MultiTour::star(4).arcs());
        let d = dual_subproblem(&x, &w, 0.5, &ext).unwrap();
        let (ct, _) = coefficients(&w, 0.5, &ext);
        let expected: f64 = (1..=4).map(|i| ct[arcs.index(i, 0)]).sum();
        assert_relative_eq!(d.value.unwrap(), expected, max_relative = 1e-9);
        assert_relative_eq!(d.objective_at(&x, 4), expected, max_relative = 1e-9);
    }

    #[test]
    fn single_cycle_value_is_position_weighted() {
        let w = weights(5, 2);
        let ext = compute_extremes(&w).unwrap();
        let arcs = ArcIndex::new(5);
        let order = [3, 1, 5, 2, 4];
        let tour = MultiTour::single(order.to_vec());
        let x = assignment(&arcs, &tour.arcs());
        let (ct, _) = coefficients(&w, 0.7, &ext);
        let mut expected = 0.0;
        let mut path = vec![0];
        path.extend(order);
        path.push(0);
        for (pos, win) in path.windows(2).enumerate() {
            expected += pos as f64 * ct[arcs.index(win[0], win[1])];
        }
        let d = dual_subproblem(&x, &w, 0.7, &ext).unwrap();
        assert_relative_eq!(d.value.unwrap(), expected, max_relative = 1e-9);
        let flows = d.flows.unwrap();
        for (pos, win) in path.windows(2).enumerate() {
            assert!((flows[arcs.index(win[0], win[1])] - pos as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn depot_free_subtour_yields_separating_ray() {
        let w = weights(4, 3);
        let ext = compute_extremes(&w).unwrap();
        let arcs = ArcIndex::new(4);
        let bad = [(0, 1), (1, 4), (4, 0), (2, 3), (3, 2)];
        let x = assignment(&arcs, &bad);
        let d = dual_subproblem(&x, &w, 0.5, &ext).unwrap();
        assert_eq!(d.kind(), CutKind::Feasibility);
        // Homogeneous dual constraints.
        for (a, &(i, j)) in arcs.arcs().iter().enumerate() {
            let lhs = if i == 0 {
                -d.alpha[j - 1] + d.beta[j - 1] - d.gamma[a]
            } else if j == 0 {
                d.alpha[i - 1] - d.gamma[a]
            } else {
                d.alpha[i - 1] - d.alpha[j - 1] - d.gamma[a]
            };
            assert!(lhs <= 1e-9);
            assert!(d.gamma[a] >= -1e-12);
        }
        let max = d
            .alpha
            .iter()
            .chain(&d.beta)
            .chain(&d.gamma)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert_relative_eq!(max, 1.0, max_relative = 1e-12);
        let cut = Cut::from_dual(&d);
        assert!(!cut.holds(&x, 0.0, 1e-9));
        for tour in [
            MultiTour::star(4),
            MultiTour::single(vec![1, 2, 3, 4]),
            MultiTour::new(vec![vec![2, 3], vec![1, 4]], 4).unwrap(),
        ] {
            assert!(cut.holds(&assignment(&arcs, &tour.arcs()), 0.0, 1e-9));
        }
    }

    #[test]
    fn single_sensor_terminates_fast() {
        let w = weights(1, 4);
        let ext = compute_extremes(&w).unwrap();
        let r = benders_solve(&w, &ext, 0.5, &BendersOptions::default()).unwrap();
        assert!(r.trace.records.len() <= 2);
        assert_eq!(r.tour, MultiTour::star(1));
    }

    fn check_trace(t: &BendersTrace) {
        let mut min_ub = f64::INFINITY;
        for (n, r) in t.records.iter().enumerate() {
            if n > 0 {
                assert!(r.lb >= t.records[n - 1].lb);
            }
            min_ub = min_ub.min(r.ub);
            for s in &t.records {
                assert!(r.lb <= s.ub + 1e-6);
            }
        }
        assert!(t.final_gap() <= 1e-6);
    }

    #[test]
    fn matches_monolithic_k5() {
        let w = weights(5, 5);
        let ext = compute_extremes(&w).unwrap();
        let mono = build_flow_milp(&w, 0.5, &ext).unwrap().solve(&w).unwrap();
        let r = benders_solve(&w, &ext, 0.5, &BendersOptions::default()).unwrap();
        assert!(
            (r.objective - mono.objective).abs() < 1e-6,
            "{} vs {}",
            r.objective,
            mono.objective
        );
        check_trace(&r.trace);
        for rec in &r.trace.records {
            assert!(rec.lb <= mono.objective + 1e-6);
            assert!(rec.ub >= mono.objective - 1e-6);
        }
    }

    #[test]
    fn matches_oracle_k7() {
        let w = weights(7, 7);
        let ext = compute_extremes(&w).unwrap();
        let oracle = Oracle::enumerate(&w).unwrap();
        for lambda in [0.0, 0.5, 1.0] {
            let r = benders_solve(&w, &ext, lambda, &BendersOptions::default()).unwrap();
            let (opt_tour, best) = oracle.minimize(|a, e| ext.objective(lambda, a, e));
            assert!(
                (r.objective - best).abs() < 1e-6,
                "lambda {lambda}: {} vs {best}",
                r.objective
            );
            check_trace(&r.trace);
            let opt_x = assignment(&ArcIndex::new(7), &opt_tour.arcs());
            let opt_flow = evaluate(&opt_tour, &w).unwrap();
            let (ct, _) = coefficients(&w, lambda, &ext);
            let theta: f64 = ArcIndex::new(7)
                .arcs()
                .iter()
                .enumerate()
                .map(|(a, &(i, j))| ct[a] * opt_flow.flow_on(i, j) as f64)
                .sum();
            for cut in &r.trace.cuts {
                assert!(cut.holds(&opt_x, theta, 1e-7));
            }
        }
    }

    #[test]
    fn optimality_cuts_are_tight_where_generated() {
        let w = weights(4, 8);
        let ext = compute_extremes(&w).unwrap();
        let arcs = ArcIndex::new(4);
        let tour = MultiTour::new(vec![vec![1, 3], vec![2], vec![4]], 4).unwrap();
        let x = assignment(&arcs, &tour.arcs());
        let d = dual_subproblem(&x, &w, 0.3, &ext).unwrap();
        let cut = Cut::from_dual(&d);
        assert_eq!(cut.kind, CutKind::Optimality);
        assert_relative_eq!(
            cut.lhs(&x),
            d.value.unwrap(),
            max_relative = 1e-9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn iteration_cap_reports_trace() {
        let w = weights(5, 9);
        let ext = compute_extremes(&w).unwrap();
        let err = benders_solve(
            &w,
            &ext,
            0.5,
            &BendersOptions {
                tol: 1e-6,
                max_iter: Some(1),
            },
        )
        .unwrap_err();
        match err {
            Error::IterationCap { cap, trace, .. } => {
                assert_eq!(cap, 1);
                assert_eq!(trace.records.len(), 1);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn trace_csv_header() {
        let w = weights(3, 10);
        let ext = compute_extremes(&w).unwrap();
        let r = benders_solve(&w, &ext, 0.5, &BendersOptions::default()).unwrap();
        let csv = r.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("iter,lb,ub,cut_kind,master_obj,subproblem_obj")
        );
        assert_eq!(lines.count(), r.trace.records.len());
    }
}
