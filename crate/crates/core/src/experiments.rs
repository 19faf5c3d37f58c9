//! Instance generation and the batch routines behind the command line.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::benders::{benders_solve, BendersOptions};
use crate::formulation::{
    build_flow_milp, compute_extremes, hamiltonian_aoi_milp, pareto_sweep, Extremes, ParetoPoint,
    SolverKind, SweepOptions,
};
use crate::model::{build_edge_weights, Instance, Point, WeightMatrix};
use crate::tours::{evaluate, MultiTour, Oracle};
use crate::trajopt::refine_tour;
use crate::{Error, Result};

/// Resampling budget for coincident sensor positions.
pub const GEN_RETRIES: usize = 1000;

/// Points closer than this (m) count as coincident.
const COLLISION_DIST: f64 = 1e-6;

/// Sensors uniform on `[0, area)^2`, depot at the centre, Table I parameters.
/// The same seed always yields the same instance.
pub fn gen_instance(k: usize, area: f64, seed: u64) -> Result<Instance> {
    if k == 0 {
        return Err(Error::InvalidInput("need at least one sensor".into()));
    }
    if !(area.is_finite() && area > 0.0) {
        return Err(Error::InvalidInput(format!(
            "area side must be positive, got {area}"
        )));
    }
    let depot = Point::new(area / 2.0, area / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensors: Vec<Point> = Vec::with_capacity(k);
    let mut retries = 0;
    while sensors.len() < k {
        let p = Point::new(rng.gen_range(0.0..area), rng.gen_range(0.0..area));
        if p.dist(depot) < COLLISION_DIST || sensors.iter().any(|s| s.dist(p) < COLLISION_DIST) {
            retries += 1;
            if retries > GEN_RETRIES {
                return Err(Error::InvalidInput(format!(
                    "could not place {k} distinct sensors in a {area} m square"
                )));
            }
            continue;
        }
        sensors.push(p);
    }
    Instance::with_defaults(depot, sensors)
}

/// Average AoI and energy of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub avg_aoi_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub avg_aoi_s: f64,
    pub energy_j: f64,
    pub n_cycles: usize,
    pub solver: SolverKind,
    pub iterations: usize,
    pub runtime_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<Metrics>,
    pub tour: MultiTour,
}

impl SweepRow {
    pub fn from_point(p: &ParetoPoint) -> Self {
        Self {
            lambda: p.lambda,
            avg_aoi_s: p.avg_aoi,
            energy_j: p.energy,
            n_cycles: p.tour.cycles.len(),
            solver: p.solver,
            iterations: p.iterations,
            runtime_ms: p.runtime.as_secs_f64() * 1e3,
            refined: None,
            tour: p.tour.clone(),
        }
    }
}

/// Frontier over `grid`; with `refine` each point also carries the metrics of
/// its refined trajectory.
pub fn sweep(
    inst: &Instance,
    grid: &[f64],
    opts: &SweepOptions,
    refine: bool,
) -> Result<Vec<SweepRow>> {
    let w = build_edge_weights(inst);
    let ext = compute_extremes(&w)?;
    let points = pareto_sweep(&w, &ext, grid, opts)?;
    points
        .iter()
        .map(|p| {
            let mut row = SweepRow::from_point(p);
            if refine {
                let r = refine_tour(&p.tour, inst, p.lambda, &ext)?;
                row.refined = Some(Metrics {
                    avg_aoi_s: r.avg_aoi,
                    energy_j: r.energy,
                });
            }
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Multi-return tour at `lambda = 0.5`.
    MultiReturn,
    /// One cycle, average AoI only.
    Hamiltonian,
    /// One cycle, energy only.
    Tsp,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::MultiReturn, Mode::Hamiltonian, Mode::Tsp];

    /// Weighting used when refining this mode's tour.
    pub fn lambda(self) -> f64 {
        match self {
            Mode::MultiReturn => 0.5,
            Mode::Hamiltonian => 1.0,
            Mode::Tsp => 0.0,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::MultiReturn => "multi_return",
            Mode::Hamiltonian => "hamiltonian",
            Mode::Tsp => "tsp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FlyHover,
    Refined,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::FlyHover => "fly_hover",
            Variant::Refined => "refined",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub k: usize,
    pub mode: Mode,
    pub variant: Variant,
    pub avg_aoi_s: f64,
    pub energy_j: f64,
    pub n_cycles: usize,
    pub tour: MultiTour,
}

/// Tour chosen by `mode` on `w`.
pub fn mode_tour(
    w: &WeightMatrix,
    ext: &Extremes,
    mode: Mode,
    solver: SolverKind,
    tol: f64,
) -> Result<MultiTour> {
    match mode {
        Mode::MultiReturn => Ok(solve_tour(w, ext, 0.5, solver, tol)?),
        Mode::Hamiltonian if w.k() == 1 => Ok(MultiTour::star(1)),
        Mode::Hamiltonian => Ok(hamiltonian_aoi_milp(w).solve(w)?.tour),
        Mode::Tsp => Ok(ext.tsp_tour.clone()),
    }
}

fn solve_tour(
    w: &WeightMatrix,
    ext: &Extremes,
    lambda: f64,
    solver: SolverKind,
    tol: f64,
) -> Result<MultiTour> {
    Ok(crate::formulation::solve_point(w, ext, lambda, solver, tol)?.tour)
}

/// Fly-hover and refined metrics of the three planning modes.
pub fn compare(inst: &Instance, solver: SolverKind, tol: f64) -> Result<Vec<CompareRow>> {
    let w = build_edge_weights(inst);
    let ext = compute_extremes(&w)?;
    let mut rows = Vec::with_capacity(6);
    for mode in Mode::ALL {
        let tour = mode_tour(&w, &ext, mode, solver, tol)?;
        let m = evaluate(&tour, &w)?;
        let r = refine_tour(&tour, inst, mode.lambda(), &ext)?;
        for (variant, avg_aoi_s, energy_j) in [
            (Variant::FlyHover, m.avg_aoi, m.energy),
            (Variant::Refined, r.avg_aoi, r.energy),
        ] {
            rows.push(CompareRow {
                k: inst.k(),
                mode,
                variant,
                avg_aoi_s,
                energy_j,
                n_cycles: tour.cycles.len(),
                tour: tour.clone(),
            });
        }
    }
    Ok(rows)
}

/// `(K, seed)` of the verification corpus: K cycles through 4..=7.
pub fn oracle_corpus(count: usize, base_seed: u64) -> Vec<(usize, u64)> {
    (0..count)
        .map(|i| (4 + i % 4, base_seed + i as u64))
        .collect()
}

/// Exhaustive, monolithic and decomposition optima of one instance at one
/// weighting. Objectives have the normalisation offsets dropped.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub k: usize,
    pub seed: Option<u64>,
    pub lambda: f64,
    pub oracle: f64,
    pub monolithic: f64,
    pub benders: f64,
    pub benders_iterations: usize,
    pub runtime_ms: f64,
}

impl OracleCheck {
    pub fn max_error(&self) -> f64 {
        (self.monolithic - self.oracle)
            .abs()
            .max((self.benders - self.oracle).abs())
    }

    pub fn matches(&self, tol: f64) -> bool {
        self.max_error() <= tol
    }
}

/// Solves `inst` at every `lambda` with both solvers and the enumeration
/// oracle.
pub fn oracle_check(
    inst: &Instance,
    seed: Option<u64>,
    lambdas: &[f64],
    tol: f64,
) -> Result<Vec<OracleCheck>> {
    let w = build_edge_weights(inst);
    let ext = compute_extremes(&w)?;
    let oracle = Oracle::enumerate(&w)?;
    lambdas
        .iter()
        .map(|&lambda| {
            check_at(&w, &ext, &oracle, seed, lambda, tol).map_err(|e| Error::AtLambda {
                lambda,
                source: Box::new(e),
            })
        })
        .collect()
}

fn check_at(
    w: &WeightMatrix,
    ext: &Extremes,
    oracle: &Oracle,
    seed: Option<u64>,
    lambda: f64,
    tol: f64,
) -> Result<OracleCheck> {
    let started = Instant::now();
    let (_, best) = oracle.minimize(|a, e| ext.objective(lambda, a, e));
    let (monolithic, benders, benders_iterations) = if w.k() == 1 {
        (best, best, 0)
    } else {
        let m = build_flow_milp(w, lambda, ext)?.solve(w)?;
        let b = benders_solve(
            w,
            ext,
            lambda,
            &BendersOptions {
                tol,
                ..BendersOptions::default()
            },
        )?;
        (m.objective, b.objective, b.trace.records.len())
    };
    Ok(OracleCheck {
        k: w.k(),
        seed,
        lambda,
        oracle: best,
        monolithic,
        benders,
        benders_iterations,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
