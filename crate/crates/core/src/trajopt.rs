//! Trajectory refinement inside the coverage discs.
//!
//! With the visiting order fixed, each sensor is served by flying through the
//! disc of radius `d_th` around it. The UAV enters where the straight leg from
//! the previous stop meets the circle and leaves toward the next stop; inside
//! the disc it may transmit while moving. Each disc is discretised into
//! [`WAYPOINTS`] points and solved by a deterministic coordinate-descent local
//! search seeded with the fly-hover traversal (fly to the centre at cruise
//! speed, hover until the data is in, fly out).
//!
//! The AoI clock of a sensor starts when the UAV enters its disc.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formulation::Extremes;
use crate::model::{build_edge_weights, Instance, Point, RadioParams, UavPowerModel};
use crate::tours::{evaluate, MultiTour};

/// Waypoints per disc, entry and exit included.
pub const WAYPOINTS: usize = 20;

/// First and last step of the local search, as fractions of the disc radius.
const STEP_START: f64 = 0.2;
const STEP_END: f64 = 1e-3;
const MAX_SWEEPS_PER_STEP: usize = 200;
/// Relative slack on the disc constraint.
const DISC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscGeometry {
    pub center: Point,
    pub radius: f64,
    pub entry: Point,
    pub exit: Point,
    /// The entry is not on the circle: the previous stop lies inside the disc
    /// or the neighbouring discs overlap.
    pub entry_inside: bool,
    pub exit_inside: bool,
}

/// Point where the straight path between `center` and `other` leaves a disc
/// of radius `r` around `center`. When the disc of radius `r_other` around
/// `other` overlaps it along the segment, the handoff is placed so that both
/// discs get a share proportional to their radii; a point-like `other`
/// (`r_other = 0`) inside the disc is returned as is.
fn boundary(center: Point, r: f64, other: Point, r_other: f64) -> (Point, bool) {
    let l = center.dist(other);
    if l >= r + r_other {
        (center.lerp(other, r / l), false)
    } else if l == 0.0 {
        (center, true)
    } else {
        (center.lerp(other, r / (r + r_other)), true)
    }
}

fn check_radius(d_th: f64) -> Result<()> {
    if d_th.is_finite() && d_th > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "disc radius must be finite and positive, got {d_th}"
        )))
    }
}

/// Entry and exit points of the disc around `center` for a UAV coming from
/// `prev` and heading to `next`. An adjacent point inside the disc becomes the
/// entry (or exit) itself and is flagged.
pub fn entry_exit(prev: Point, center: Point, next: Point, d_th: f64) -> Result<DiscGeometry> {
    check_radius(d_th)?;
    let (entry, entry_inside) = boundary(center, d_th, prev, 0.0);
    let (exit, exit_inside) = boundary(center, d_th, next, 0.0);
    Ok(DiscGeometry {
        center,
        radius: d_th,
        entry,
        exit,
        entry_inside,
        exit_inside,
    })
}

/// Weights of disc time and disc energy in the scalarised objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscObjective {
    pub time_weight: f64,
    pub energy_weight: f64,
}

impl DiscObjective {
    /// Weights for a sensor at 1-based position `position` of its cycle.
    ///
    /// Its disc time enters the age of itself and of every sensor visited
    /// before it in the cycle, so it counts `position / k` times in the
    /// average. Normalisation follows the flow model; a degenerate span is
    /// replaced by one.
    pub fn new(position: usize, k: usize, lambda: f64, ext: &Extremes) -> Self {
        let aoi_span = ext.aoi_span().unwrap_or(1.0);
        let energy_span = ext.energy_span().unwrap_or(1.0);
        Self {
            time_weight: lambda * position as f64 / (k as f64 * aoi_span),
            energy_weight: (1.0 - lambda) / energy_span,
        }
    }

    pub fn value(&self, time: f64, energy: f64) -> f64 {
        self.time_weight * time + self.energy_weight * energy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscTraversal {
    /// 1-based sensor index; zero for a stand-alone disc.
    pub sn: usize,
    pub entry: Point,
    pub exit: Point,
    pub entry_inside: bool,
    pub exit_inside: bool,
    pub waypoints: Vec<Point>,
    /// Speed on each segment; zero marks a hover.
    pub speeds: Vec<f64>,
    #[serde(skip)]
    pub durations: Vec<f64>,
    #[serde(rename = "time_s")]
    pub time: f64,
    #[serde(rename = "energy_j")]
    pub energy: f64,
    pub bits: f64,
    /// Time and energy of the fly-hover seed for the same disc.
    #[serde(skip)]
    pub seed_time: f64,
    #[serde(skip)]
    pub seed_energy: f64,
}

impl DiscTraversal {
    pub fn objective(&self, obj: &DiscObjective) -> f64 {
        obj.value(self.time, self.energy)
    }

    pub fn seed_objective(&self, obj: &DiscObjective) -> f64 {
        obj.value(self.seed_time, self.seed_energy)
    }
}

/// Piecewise-linear power curve, evaluated without reallocating the knots.
struct PowerCurve {
    knots: Vec<(f64, f64)>,
}

impl PowerCurve {
    fn new(uav: &UavPowerModel) -> Self {
        Self {
            knots: uav.power_knots(),
        }
    }

    fn at(&self, v: f64) -> f64 {
        let last = self.knots.len() - 1;
        let seg = self
            .knots
            .windows(2)
            .position(|w| v <= w[1].0)
            .unwrap_or(last - 1);
        let (v0, p0) = self.knots[seg];
        let (v1, p1) = self.knots[seg + 1];
        p0 + (p1 - p0) * (v - v0) / (v1 - v0)
    }
}

#[derive(Debug, Clone)]
struct State {
    points: Vec<Point>,
    durations: Vec<f64>,
    time: f64,
    energy: f64,
    bits: f64,
    dwell: usize,
}

struct Search<'a> {
    radio: &'a RadioParams,
    power: PowerCurve,
    v_max: f64,
    data_bits: f64,
    center: Point,
    radius: f64,
    obj: DiscObjective,
    time_budget: f64,
    energy_cap: f64,
}

impl Search<'_> {
    /// Evaluates a trajectory after repairing the dwell segment, the one with
    /// the highest mean rate, so that exactly the required bits are collected
    /// (or as few extra as the speed limit allows). Durations below the
    /// speed limit are raised to it. Without data there is nothing to repair.
    fn evaluate(&self, points: Vec<Point>, mut durations: Vec<f64>) -> State {
        let rates: Vec<f64> = points
            .iter()
            .map(|p| self.radio.rate(p.dist(self.center)))
            .collect();
        let mut dwell = 0;
        let mut best_rate = f64::NEG_INFINITY;
        for k in 0..durations.len() {
            let len = points[k].dist(points[k + 1]);
            durations[k] = durations[k].max(len / self.v_max);
            let mean = 0.5 * (rates[k] + rates[k + 1]);
            if mean > best_rate {
                best_rate = mean;
                dwell = k;
            }
        }
        let others: f64 = (0..durations.len())
            .filter(|&k| k != dwell)
            .map(|k| durations[k] * 0.5 * (rates[k] + rates[k + 1]))
            .sum();
        if self.data_bits > 0.0 {
            let min_dwell = points[dwell].dist(points[dwell + 1]) / self.v_max;
            durations[dwell] = ((self.data_bits - others) / best_rate).max(min_dwell);
        }
        let bits = others + durations[dwell] * best_rate;

        let mut time = 0.0;
        let mut energy = 0.0;
        for (k, &t) in durations.iter().enumerate() {
            if t > 0.0 {
                let v = points[k].dist(points[k + 1]) / t;
                energy += self.power.at(v) * t;
                time += t;
            }
        }
        State {
            points,
            durations,
            time,
            energy,
            bits,
            dwell,
        }
    }

    fn budget_excess(&self, s: &State) -> f64 {
        (s.time - self.time_budget).max(0.0)
    }

    /// Feasible descent order: first bring the disc time under its budget,
    /// then minimise the objective within it; energy may never exceed the
    /// seed's.
    fn better(&self, cand: &State, cur: &State) -> bool {
        if cand.energy > self.energy_cap {
            return false;
        }
        let (ec, eu) = (self.budget_excess(cand), self.budget_excess(cur));
        if ec != eu {
            return ec < eu;
        }
        let cv = self.value(cur);
        self.value(cand) < cv - 1e-12 * cv.abs().max(1e-12)
    }

    fn value(&self, s: &State) -> f64 {
        self.obj.value(s.time, s.energy)
    }

    fn inside(&self, p: Point) -> bool {
        p.dist(self.center) <= self.radius * (1.0 + DISC_TOL)
    }

    fn run(&self, seed: State) -> State {
        let mut cur = seed;
        let n = cur.points.len();
        let t_ref = self.radius / self.v_max;
        let mut step = STEP_START;
        while step >= STEP_END {
            let delta = step * self.radius;
            for _ in 0..MAX_SWEEPS_PER_STEP {
                let mut improved = false;
                for k in 1..n - 1 {
                    for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                        let p =
                            Point::new(cur.points[k].x + dx * delta, cur.points[k].y + dy * delta);
                        if !self.inside(p) {
                            continue;
                        }
                        let mut points = cur.points.clone();
                        points[k] = p;
                        let cand = self.evaluate(points, cur.durations.clone());
                        if self.better(&cand, &cur) {
                            cur = cand;
                            improved = true;
                        }
                    }
                }
                for k in 0..n - 1 {
                    if k == cur.dwell {
                        continue;
                    }
                    for sign in [-1.0, 1.0] {
                        let t = cur.durations[k];
                        let mut durations = cur.durations.clone();
                        durations[k] = (t + sign * step * t.max(t_ref)).max(0.0);
                        let cand = self.evaluate(cur.points.clone(), durations);
                        if self.better(&cand, &cur) {
                            cur = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            step *= 0.5;
        }
        cur
    }
}

fn traversal(state: State, geom: &DiscGeometry, v_max: f64, seed: (f64, f64)) -> DiscTraversal {
    let speeds = state
        .durations
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if t > 0.0 {
                (state.points[k].dist(state.points[k + 1]) / t).min(v_max)
            } else {
                0.0
            }
        })
        .collect();
    DiscTraversal {
        sn: 0,
        entry: geom.entry,
        exit: geom.exit,
        entry_inside: geom.entry_inside,
        exit_inside: geom.exit_inside,
        waypoints: state.points,
        speeds,
        durations: state.durations,
        time: state.time,
        energy: state.energy,
        bits: state.bits,
        seed_time: seed.0,
        seed_energy: seed.1,
    }
}

/// Straight chord at the speed minimising the per-metre objective. Used when
/// no data has to be collected.
fn chord(
    geom: &DiscGeometry,
    uav: &UavPowerModel,
    power: &PowerCurve,
    obj: &DiscObjective,
) -> (Vec<Point>, Vec<f64>) {
    // On each linear piece of the power curve the per-metre cost
    // (a + b P(v)) / v is monotone, so the optimum sits on a knot or at v_max.
    let mut best = (uav.max_speed, f64::INFINITY);
    let mut candidates: Vec<f64> = power
        .knots
        .iter()
        .map(|&(v, _)| v)
        .filter(|&v| v > 0.0 && v < uav.max_speed)
        .collect();
    candidates.push(uav.max_speed);
    for v in candidates.into_iter().rev() {
        let cost = (obj.time_weight + obj.energy_weight * power.at(v)) / v;
        if cost < best.1 - 1e-15 {
            best = (v, cost);
        }
    }
    let v = best.0;
    let points: Vec<Point> = (0..WAYPOINTS)
        .map(|k| {
            geom.entry
                .lerp(geom.exit, k as f64 / (WAYPOINTS - 1) as f64)
        })
        .collect();
    let durations = points.windows(2).map(|w| w[0].dist(w[1]) / v).collect();
    (points, durations)
}

/// Refines the traversal of one disc.
///
/// The result never has a larger time or energy than the fly-hover seed, and
/// its disc time is at most the seed's minus the entry-to-centre flight, so
/// that the sensor's age measured from disc entry does not exceed its
/// fly-hover age measured from the start of hovering. When that budget cannot
/// be reached the search still returns its best time under the energy cap.
pub fn refine_disc(
    geom: &DiscGeometry,
    data_bits: f64,
    radio: &RadioParams,
    uav: &UavPowerModel,
    obj: &DiscObjective,
) -> Result<DiscTraversal> {
    check_radius(geom.radius)?;
    if !(data_bits.is_finite() && data_bits >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "data size must be finite and non-negative, got {data_bits}"
        )));
    }
    let power = PowerCurve::new(uav);
    let v = uav.speed;
    let d_in = geom.entry.dist(geom.center);
    let d_out = geom.center.dist(geom.exit);
    let hover = data_bits / radio.rate(0.0);
    let seed_time = (d_in + d_out) / v + hover;
    let seed_energy = power.at(v) * (d_in + d_out) / v + power.at(0.0) * hover;
    let search = Search {
        radio,
        power,
        v_max: uav.max_speed,
        data_bits,
        center: geom.center,
        radius: geom.radius,
        obj: *obj,
        time_budget: seed_time - d_in / v,
        energy_cap: seed_energy * (1.0 + 1e-12),
    };

    if data_bits == 0.0 {
        let (points, durations) = chord(geom, uav, &search.power, obj);
        let state = search.evaluate(points, durations);
        return Ok(traversal(
            state,
            geom,
            uav.max_speed,
            (seed_time, seed_energy),
        ));
    }

    let half = WAYPOINTS / 2;
    let mut points = Vec::with_capacity(WAYPOINTS);
    for k in 0..half {
        points.push(geom.entry.lerp(geom.center, k as f64 / (half - 1) as f64));
    }
    for k in 0..WAYPOINTS - half {
        points.push(
            geom.center
                .lerp(geom.exit, k as f64 / (WAYPOINTS - half - 1) as f64),
        );
    }
    let durations: Vec<f64> = points
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            if k == half - 1 {
                hover
            } else {
                w[0].dist(w[1]) / v
            }
        })
        .collect();
    let seed = search.evaluate(points, durations);
    let state = search.run(seed);
    Ok(traversal(
        state,
        geom,
        uav.max_speed,
        (seed_time, seed_energy),
    ))
}

/// A tour with every disc refined.
#[derive(Debug, Clone, Serialize)]
pub struct RefinedTour {
    pub lambda: f64,
    pub avg_aoi: f64,
    pub energy: f64,
    /// Indexed by sensor, 0-based.
    pub aoi_per_sn: Vec<f64>,
    pub fly_hover_avg_aoi: f64,
    pub fly_hover_energy: f64,
    /// In visiting order.
    pub traversals: Vec<DiscTraversal>,
}

/// Refines every disc of `tour` and recomputes its metrics. Legs between
/// discs are flown straight at cruise speed.
pub fn refine_tour(
    tour: &MultiTour,
    inst: &Instance,
    lambda: f64,
    ext: &Extremes,
) -> Result<RefinedTour> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let k = inst.k();
    tour.validate(k)?;
    let r = inst.coverage_radius;
    check_radius(r)?;

    let mut jobs = Vec::with_capacity(k);
    for cycle in &tour.cycles {
        for (pos, &sn) in cycle.iter().enumerate() {
            let prev = if pos == 0 { 0 } else { cycle[pos - 1] };
            let next = cycle.get(pos + 1).copied().unwrap_or(0);
            let radius_of = |node: usize| if node == 0 { 0.0 } else { r };
            let center = inst.node(sn);
            let (entry, entry_inside) = boundary(center, r, inst.node(prev), radius_of(prev));
            let (exit, exit_inside) = boundary(center, r, inst.node(next), radius_of(next));
            let geom = DiscGeometry {
                center,
                radius: r,
                entry,
                exit,
                entry_inside,
                exit_inside,
            };
            jobs.push((sn, geom, DiscObjective::new(pos + 1, k, lambda, ext)));
        }
    }
    let traversals = jobs
        .par_iter()
        .map(|(sn, geom, obj)| {
            refine_disc(geom, inst.data_bits[sn - 1], &inst.radio, &inst.uav, obj).map(|mut t| {
                t.sn = *sn;
                t
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let cruise = inst.uav.speed;
    let leg_power = inst.uav.power_at(cruise);
    let mut aoi_per_sn = vec![0.0; k];
    let mut energy = 0.0;
    let mut idx = 0;
    for cycle in &tour.cycles {
        let mut clock = 0.0;
        let mut pos = inst.depot;
        let mut starts = Vec::with_capacity(cycle.len());
        for _ in cycle {
            let t = &traversals[idx];
            let leg = pos.dist(t.entry);
            clock += leg / cruise;
            energy += leg_power * leg / cruise;
            starts.push((t.sn, clock));
            clock += t.time;
            energy += t.energy;
            pos = t.exit;
            idx += 1;
        }
        let leg = pos.dist(inst.depot);
        clock += leg / cruise;
        energy += leg_power * leg / cruise;
        for (sn, start) in starts {
            aoi_per_sn[sn - 1] = clock - start;
        }
    }
    let fly_hover = evaluate(tour, &build_edge_weights(inst))?;
    Ok(RefinedTour {
        lambda,
        avg_aoi: aoi_per_sn.iter().sum::<f64>() / k as f64,
        energy,
        aoi_per_sn,
        fly_hover_avg_aoi: fly_hover.avg_aoi,
        fly_hover_energy: fly_hover.energy,
        traversals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{build_flow_milp, compute_extremes};
    use crate::model::RadioParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn unit_weights(lambda: f64) -> DiscObjective {
        DiscObjective {
            time_weight: lambda,
            energy_weight: 1.0 - lambda,
        }
    }

    fn check_invariants(
        t: &DiscTraversal,
        geom: &DiscGeometry,
        data_bits: f64,
        uav: &UavPowerModel,
    ) {
        assert_eq!(t.waypoints.len(), WAYPOINTS);
        assert_eq!(t.waypoints[0], geom.entry);
        assert_eq!(*t.waypoints.last().unwrap(), geom.exit);
        for w in &t.waypoints {
            assert!(
                w.dist(geom.center) <= geom.radius * (1.0 + 1e-9),
                "waypoint {w:?} outside disc"
            );
        }
        for &v in &t.speeds {
            assert!((0.0..=uav.max_speed).contains(&v), "speed {v}");
        }
        assert!(
            t.bits >= data_bits * (1.0 - 1e-9),
            "bits {} < {}",
            t.bits,
            data_bits
        );
        let time: f64 = t.durations.iter().sum();
        assert_relative_eq!(time, t.time, max_relative = 1e-12);
    }

    #[test]
    fn entry_exit_collinear() {
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(200.0, 0.0), 50.0).unwrap();
        assert_eq!((g.entry, g.exit), (p(50.0, 0.0), p(150.0, 0.0)));
        assert!(!g.entry_inside && !g.exit_inside);
    }

    #[test]
    fn entry_exit_axis_aligned() {
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(100.0, 200.0), 50.0).unwrap();
        assert_eq!((g.entry, g.exit), (p(50.0, 0.0), p(100.0, 50.0)));
    }

    #[test]
    fn entry_exit_mirror() {
        let g = entry_exit(p(10.0, 20.0), p(300.0, -40.0), p(10.0, 20.0), 50.0).unwrap();
        assert_eq!(g.entry, g.exit);
        assert_relative_eq!(g.entry.dist(g.center), 50.0, max_relative = 1e-12);
    }

    #[test]
    fn adjacent_point_inside_disc_is_flagged() {
        let g = entry_exit(p(80.0, 0.0), p(100.0, 0.0), p(400.0, 0.0), 50.0).unwrap();
        assert_eq!(g.entry, p(80.0, 0.0));
        assert!(g.entry_inside && !g.exit_inside);
        assert!(entry_exit(p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn overlapping_discs_split_the_leg() {
        let (q, inside) = boundary(p(0.0, 0.0), 50.0, p(60.0, 0.0), 50.0);
        assert!(inside);
        assert_relative_eq!(q.x, 30.0, max_relative = 1e-12);
    }

    #[test]
    fn no_data_gives_straight_chord_at_max_speed() {
        let uav = UavPowerModel::default();
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(100.0, 200.0), 50.0).unwrap();
        let t = refine_disc(&g, 0.0, &RadioParams::default(), &uav, &unit_weights(1.0)).unwrap();
        let chord = g.entry.dist(g.exit);
        assert_relative_eq!(t.time, chord / uav.max_speed, max_relative = 1e-12);
        assert!(t.speeds.iter().all(|&v| (v - uav.max_speed).abs() < 1e-9));
        check_invariants(&t, &g, 0.0, &uav);
    }

    #[test]
    fn no_data_energy_only_flies_at_least_energy_per_metre() {
        // P(v)/v on the tabulated curve: 12.6 at 10, 9.0 at 18, 11.87 at 30.
        let uav = UavPowerModel::default();
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(200.0, 0.0), 50.0).unwrap();
        let t = refine_disc(&g, 0.0, &RadioParams::default(), &uav, &unit_weights(0.0)).unwrap();
        assert!(t.speeds.iter().all(|&v| (v - 18.0).abs() < 1e-9));
        assert_relative_eq!(t.energy, 162.0 * 100.0 / 18.0, max_relative = 1e-12);
    }

    #[test]
    fn refined_disc_beats_fly_hover_seed() {
        let radio = RadioParams::default();
        let uav = UavPowerModel::default();
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(200.0, 0.0), 50.0).unwrap();
        let bits = 500e6;
        let hover = bits / radio.rate(0.0);
        let seed_time = 2.0 * 50.0 / 18.0 + hover;
        let seed_energy = 162.0 * 2.0 * 50.0 / 18.0 + 165.0 * hover;
        assert_relative_eq!(hover, 25.081, epsilon = 0.01);
        for lambda in [0.0, 0.5, 1.0] {
            let obj = unit_weights(lambda);
            let t = refine_disc(&g, bits, &radio, &uav, &obj).unwrap();
            check_invariants(&t, &g, bits, &uav);
            assert_relative_eq!(t.seed_time, seed_time, max_relative = 1e-12);
            assert_relative_eq!(t.seed_energy, seed_energy, max_relative = 1e-12);
            assert!(obj.value(t.time, t.energy) <= obj.value(seed_time, seed_energy));
            assert!(t.time <= seed_time - 50.0 / 18.0 + 1e-9);
            assert!(t.energy <= seed_energy * (1.0 + 1e-12));
        }
    }

    #[test]
    fn tiny_disc_converges_to_fly_hover() {
        let radio = RadioParams::default();
        let uav = UavPowerModel::default();
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(100.0, 300.0), 0.01).unwrap();
        let t = refine_disc(&g, 500e6, &radio, &uav, &unit_weights(0.5)).unwrap();
        let hover = 500e6 / radio.rate(0.0);
        assert_relative_eq!(t.time, hover + 0.02 / 18.0, max_relative = 1e-3);
        assert_relative_eq!(
            t.energy,
            165.0 * hover + 162.0 * 0.02 / 18.0,
            max_relative = 1e-3
        );
    }

    fn instance(k: usize, seed: u64, d_th: f64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sensors = (0..k)
            .map(|_| p(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)))
            .collect();
        let mut inst = Instance::with_defaults(p(500.0, 500.0), sensors).unwrap();
        inst.coverage_radius = d_th;
        inst
    }

    #[test]
    fn star_single_sensor_age_within_fly_hover() {
        let inst = Instance::with_defaults(p(0.0, 0.0), vec![p(300.0, 400.0)]).unwrap();
        let w = build_edge_weights(&inst);
        let ext = compute_extremes(&w).unwrap();
        let r = refine_tour(&MultiTour::star(1), &inst, 0.5, &ext).unwrap();
        let t10 = inst.hover_time(1) + 500.0 / 18.0;
        assert_relative_eq!(w.time(1, 0), t10, max_relative = 1e-12);
        assert!(r.avg_aoi <= t10, "{} > {t10}", r.avg_aoi);
        assert!(r.energy <= w.energy(0, 1) + w.energy(1, 0));
    }

    #[test]
    fn tiny_discs_reproduce_tour_metrics() {
        let inst = instance(6, 5, 0.01);
        let w = build_edge_weights(&inst);
        let ext = compute_extremes(&w).unwrap();
        let tour = MultiTour::new(vec![vec![3, 1], vec![2, 6, 5], vec![4]], 6).unwrap();
        let r = refine_tour(&tour, &inst, 0.5, &ext).unwrap();
        let fh = evaluate(&tour, &w).unwrap();
        assert_relative_eq!(r.avg_aoi, fh.avg_aoi, max_relative = 1e-3);
        assert_relative_eq!(r.energy, fh.energy, max_relative = 1e-3);
        assert_eq!(r.fly_hover_avg_aoi, fh.avg_aoi);
    }

    #[test]
    fn refined_optimum_dominates_fly_hover_at_k10() {
        let inst = instance(10, 21, 50.0);
        let w = build_edge_weights(&inst);
        let ext = compute_extremes(&w).unwrap();
        let sol = build_flow_milp(&w, 0.5, &ext).unwrap().solve(&w).unwrap();
        let r = refine_tour(&sol.tour, &inst, 0.5, &ext).unwrap();
        assert!(
            r.avg_aoi <= sol.metrics.avg_aoi,
            "{} > {}",
            r.avg_aoi,
            sol.metrics.avg_aoi
        );
        assert!(
            r.energy <= sol.metrics.energy,
            "{} > {}",
            r.energy,
            sol.metrics.energy
        );
        for (refined, fh) in r.aoi_per_sn.iter().zip(&sol.metrics.aoi_per_sn) {
            assert!(refined <= fh);
        }
        assert_eq!(r.traversals.len(), 10);
    }

    #[test]
    fn json_uses_external_field_names() {
        let g = entry_exit(p(0.0, 0.0), p(100.0, 0.0), p(200.0, 0.0), 50.0).unwrap();
        let t = refine_disc(
            &g,
            1e6,
            &RadioParams::default(),
            &UavPowerModel::default(),
            &unit_weights(0.5),
        )
        .unwrap();
        let v = serde_json::to_value(&t).unwrap();
        for key in [
            "sn",
            "entry",
            "exit",
            "waypoints",
            "speeds",
            "time_s",
            "energy_j",
            "bits",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["entry"], serde_json::json!([50.0, 0.0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn refinement_respects_constraints_and_never_worsens(
            ax in -500.0..500.0f64, ay in -500.0..500.0f64,
            bx in -500.0..500.0f64, by in -500.0..500.0f64,
            radius in 5.0..80.0f64,
            mbits in 0.0..800.0f64,
            lambda in 0.0..=1.0f64,
        ) {
            let center = p(0.0, 0.0);
            let (prev, next) = (p(ax, ay), p(bx, by));
            prop_assume!(prev.dist(center) > radius && next.dist(center) > radius);
            let uav = UavPowerModel::default();
            let g = entry_exit(prev, center, next, radius).unwrap();
            prop_assert!((g.entry.dist(center) - radius).abs() <= 1e-9 * radius);
            prop_assert!((g.exit.dist(center) - radius).abs() <= 1e-9 * radius);
            let obj = unit_weights(lambda);
            let t = refine_disc(&g, mbits * 1e6, &RadioParams::default(), &uav, &obj).unwrap();
            check_invariants(&t, &g, mbits * 1e6, &uav);
            if mbits > 0.0 {
                prop_assert!(t.objective(&obj) <= t.seed_objective(&obj) + 1e-12);
                prop_assert!(t.energy <= t.seed_energy * (1.0 + 1e-12));
            }
        }
    }
}
