//! Multi-return tours, their age-of-information and energy metrics, and the
//! exhaustive small-instance oracle used to cross-check every solver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightMatrix;

/// Largest K the enumeration oracle accepts.
pub const ORACLE_MAX_K: usize = 8;

/// A UAV trajectory made of depot-anchored cycles. Sensors are numbered
/// `1..=K`; the depot is implicit at both ends of every cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiTour {
    pub cycles: Vec<Vec<usize>>,
}

impl MultiTour {
    pub fn new(cycles: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        let tour = Self { cycles };
        tour.validate(k)?;
        Ok(tour)
    }

    /// Each sensor in its own cycle.
    pub fn star(k: usize) -> Self {
        Self {
            cycles: (1..=k).map(|i| vec![i]).collect(),
        }
    }

    pub fn single(order: Vec<usize>) -> Self {
        Self {
            cycles: vec![order],
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let mut seen = vec![false; k + 1];
        for cycle in &self.cycles {
            if cycle.is_empty() {
                return Err(Error::InvalidTour("empty cycle".into()));
            }
            for &i in cycle {
                if i == 0 || i > k {
                    return Err(Error::InvalidTour(format!(
                        "sensor index {i} outside 1..={k}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidTour(format!("sensor {i} visited twice")));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = (1..=k).find(|&i| !seen[i]) {
            return Err(Error::InvalidTour(format!(
                "sensor {missing} never visited"
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.cycles.iter().map(Vec::len).sum()
    }

    /// Same tour with cycles ordered by their smallest sensor index. Cycle
    /// order affects neither metric.
    pub fn canonical(&self) -> Self {
        let mut cycles = self.cycles.clone();
        cycles.sort_by_key(|c| c.iter().copied().min());
        Self { cycles }
    }

    /// Directed arcs traversed, including depot legs.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        let mut arcs = Vec::with_capacity(self.k() + self.cycles.len());
        for cycle in &self.cycles {
            let mut prev = 0;
            for &i in cycle {
                arcs.push((prev, i));
                prev = i;
            }
            arcs.push((prev, 0));
        }
        arcs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TourMetrics {
    /// AoI of sensor `i` at index `i - 1`.
    pub aoi_per_sn: Vec<f64>,
    pub avg_aoi: f64,
    pub energy: f64,
    /// Number of sensors served since the last depot departure, per traversed arc.
    pub flow: BTreeMap<(usize, usize), usize>,
}

impl TourMetrics {
    /// Flow on arc `(i, j)`; zero for arcs the tour does not use.
    pub fn flow_on(&self, i: usize, j: usize) -> usize {
        self.flow.get(&(i, j)).copied().unwrap_or(0)
    }
}

pub fn evaluate(tour: &MultiTour, w: &WeightMatrix) -> Result<TourMetrics> {
    let k = w.k();
    tour.validate(k)?;
    let mut aoi = vec![0.0; k];
    let mut energy = 0.0;
    let mut flow = BTreeMap::new();
    for cycle in &tour.cycles {
        // Backward recursion: the last sensor's age is its edge back to the
        // depot; every earlier one adds its own outgoing edge.
        let mut acc = 0.0;
        let mut next = 0;
        for &i in cycle.iter().rev() {
            acc += w.time(i, next);
            aoi[i - 1] = acc;
            next = i;
        }
        let mut prev = 0;
        for (pos, &i) in cycle.iter().enumerate() {
            energy += w.energy(prev, i);
            flow.insert((prev, i), pos);
            prev = i;
        }
        energy += w.energy(prev, 0);
        flow.insert((prev, 0), cycle.len());
    }
    let avg_aoi = aoi.iter().sum::<f64>() / k as f64;

    let via_flow: f64 = flow
        .iter()
        .map(|(&(i, j), &f)| f as f64 * w.time(i, j))
        .sum::<f64>()
        / k as f64;
    assert!(
        (via_flow - avg_aoi).abs() <= 1e-9 * avg_aoi.abs().max(1.0),
        "recursion and flow-weighted average AoI disagree: {avg_aoi} vs {via_flow}"
    );

    Ok(TourMetrics {
        aoi_per_sn: aoi,
        avg_aoi,
        energy,
        flow,
    })
}

/// Rebuilds a multi-tour from the set of arcs with `x_ij = 1`.
///
/// Cycles are produced by following successors from each depot-out arc in
/// ascending order of the first sensor.
pub fn decode_arcs(arcs: &[(usize, usize)], k: usize) -> Result<MultiTour> {
    let mut succ = vec![usize::MAX; k + 1];
    let mut indeg = vec![0usize; k + 1];
    let mut starts = Vec::new();
    let mut depot_in = 0;
    for &(i, j) in arcs {
        if i > k || j > k || i == j {
            return Err(Error::InvalidTour(format!(
                "arc ({i},{j}) is not an edge for K = {k}"
            )));
        }
        if i == 0 {
            starts.push(j);
        } else {
            if succ[i] != usize::MAX {
                return Err(Error::InvalidTour(format!(
                    "sensor {i} has more than one outgoing arc"
                )));
            }
            succ[i] = j;
        }
        if j == 0 {
            depot_in += 1;
        } else {
            indeg[j] += 1;
        }
    }
    if let Some(i) = (1..=k).find(|&i| succ[i] == usize::MAX) {
        return Err(Error::InvalidTour(format!(
            "sensor {i} has no outgoing arc"
        )));
    }
    if let Some(i) = (1..=k).find(|&i| indeg[i] != 1) {
        return Err(Error::InvalidTour(format!(
            "sensor {i} has in-degree {}",
            indeg[i]
        )));
    }
    if depot_in != starts.len() {
        return Err(Error::InvalidTour(format!(
            "depot has {} departures but {} returns",
            starts.len(),
            depot_in
        )));
    }
    starts.sort_unstable();

    let mut visited = vec![false; k + 1];
    let mut cycles = Vec::with_capacity(starts.len());
    for &first in &starts {
        let mut cycle = Vec::new();
        let mut at = first;
        while at != 0 {
            if visited[at] {
                return Err(Error::InvalidTour(format!("sensor {at} reached twice")));
            }
            visited[at] = true;
            cycle.push(at);
            at = succ[at];
        }
        cycles.push(cycle);
    }
    if let Some(orphan) = (1..=k).find(|&i| !visited[i]) {
        let mut members = vec![orphan];
        let mut at = succ[orphan];
        while at != orphan {
            members.push(at);
            at = succ[at];
        }
        members.sort_unstable();
        return Err(Error::DepotFreeCycle(members));
    }
    Ok(MultiTour { cycles })
}

/// One enumerated tour: a sensor permutation cut into contiguous cycles.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    order: [u8; ORACLE_MAX_K],
    /// Bit `p` set: a cycle ends after position `p`.
    breaks: u8,
    pub avg_aoi: f64,
    pub energy: f64,
}

impl Candidate {
    pub fn tour(&self, k: usize) -> MultiTour {
        let mut cycles = Vec::new();
        let mut current = Vec::new();
        for p in 0..k {
            current.push(self.order[p] as usize);
            if p + 1 == k || self.breaks & (1 << p) != 0 {
                cycles.push(std::mem::take(&mut current));
            }
        }
        MultiTour { cycles }
    }
}

/// Every distinct multi-tour of a small instance, evaluated.
#[derive(Debug, Clone)]
pub struct Oracle {
    k: usize,
    candidates: Vec<Candidate>,
}

impl Oracle {
    /// Enumerates all sensor permutations split into contiguous cycles,
    /// keeping one representative per multi-tour (cycles ordered by their
    /// smallest sensor).
    pub fn enumerate(w: &WeightMatrix) -> Result<Self> {
        let k = w.k();
        if k > ORACLE_MAX_K {
            return Err(Error::SizeBound {
                what: "enumeration oracle",
                k,
                max: ORACLE_MAX_K,
            });
        }
        let mut perm: Vec<u8> = (1..=k as u8).collect();
        let mut candidates = Vec::new();
        let masks = 1u16 << (k - 1);
        loop {
            for mask in 0..masks {
                let breaks = mask as u8;
                if !cycle_minima_increasing(&perm, breaks) {
                    continue;
                }
                let (aoi_sum, energy) = score(&perm, breaks, w);
                let mut order = [0u8; ORACLE_MAX_K];
                order[..k].copy_from_slice(&perm);
                candidates.push(Candidate {
                    order,
                    breaks,
                    avg_aoi: aoi_sum / k as f64,
                    energy,
                });
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        Ok(Self { k, candidates })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn min_energy(&self) -> f64 {
        self.candidates
            .iter()
            .map(|c| c.energy)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_avg_aoi(&self) -> f64 {
        self.candidates
            .iter()
            .map(|c| c.avg_aoi)
            .fold(f64::INFINITY, f64::min)
    }

    /// Non-dominated candidates in (average AoI, energy), ascending in AoI.
    pub fn pareto(&self) -> Vec<Candidate> {
        let mut sorted = self.candidates.clone();
        sorted.sort_by(|a, b| {
            a.avg_aoi
                .total_cmp(&b.avg_aoi)
                .then(a.energy.total_cmp(&b.energy))
        });
        let mut front: Vec<Candidate> = Vec::new();
        let mut best_energy = f64::INFINITY;
        for c in sorted {
            if c.energy < best_energy {
                best_energy = c.energy;
                front.push(c);
            }
        }
        front
    }

    /// Exact minimiser of `objective(avg_aoi, energy)` over all tours. The
    /// first minimiser in enumeration order wins ties.
    pub fn minimize<F: Fn(f64, f64) -> f64>(&self, objective: F) -> (MultiTour, f64) {
        let (best, value) = self
            .candidates
            .iter()
            .map(|c| (c, objective(c.avg_aoi, c.energy)))
            .fold((None, f64::INFINITY), |(bc, bv), (c, v)| {
                if v < bv {
                    (Some(c), v)
                } else {
                    (bc, bv)
                }
            });
        (
            best.expect("oracle has at least one candidate")
                .tour(self.k),
            value,
        )
    }
}

/// Enumerates every multi-tour of the instance behind `w`, returning the
/// oracle and its Pareto set with full metrics.
pub fn oracle_pareto(w: &WeightMatrix) -> Result<(Oracle, Vec<(MultiTour, TourMetrics)>)> {
    let oracle = Oracle::enumerate(w)?;
    let front = oracle
        .pareto()
        .iter()
        .map(|c| {
            let tour = c.tour(oracle.k);
            let m = evaluate(&tour, w)?;
            Ok((tour, m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((oracle, front))
}

fn cycle_minima_increasing(perm: &[u8], breaks: u8) -> bool {
    let mut last_min = 0u8;
    let mut cur_min = u8::MAX;
    for (p, &s) in perm.iter().enumerate() {
        cur_min = cur_min.min(s);
        if p + 1 == perm.len() || breaks & (1 << p) != 0 {
            if cur_min < last_min {
                return false;
            }
            last_min = cur_min;
            cur_min = u8::MAX;
        }
    }
    true
}

fn score(perm: &[u8], breaks: u8, w: &WeightMatrix) -> (f64, f64) {
    let mut aoi_sum = 0.0;
    let mut energy = 0.0;
    let mut start = 0;
    for p in 0..perm.len() {
        if p + 1 == perm.len() || breaks & (1 << p) != 0 {
            let cycle = &perm[start..=p];
            let mut prev = 0usize;
            let r = cycle.len();
            for (pos, &s) in cycle.iter().enumerate() {
                let s = s as usize;
                energy += w.energy(prev, s);
                aoi_sum += pos as f64 * w.time(prev, s);
                prev = s;
            }
            energy += w.energy(prev, 0);
            aoi_sum += r as f64 * w.time(prev, 0);
            start = p + 1;
        }
    }
    (aoi_sum, energy)
}

fn next_permutation(v: &mut [u8]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_edge_weights, Instance, Point};
    use approx::assert_relative_eq;

    /// Weights with T_01 = 10, T_12 = 20, T_20 = 30.
    fn hand_weights() -> WeightMatrix {
        let n = 3;
        let mut t = vec![1.0; n * n];
        t[1] = 10.0;
        t[n + 2] = 20.0;
        t[2 * n] = 30.0;
        WeightMatrix::from_raw(n, t.clone(), t).unwrap()
    }

    #[test]
    fn hand_recursion_single_cycle() {
        let w = hand_weights();
        let m = evaluate(&MultiTour::single(vec![1, 2]), &w).unwrap();
        assert_eq!(m.aoi_per_sn, vec![50.0, 30.0]);
        assert_eq!(m.avg_aoi, 40.0);
        assert_eq!(m.flow_on(0, 1), 0);
        assert_eq!(m.flow_on(1, 2), 1);
        assert_eq!(m.flow_on(2, 0), 2);
        assert_eq!(m.flow_on(2, 1), 0);
    }

    #[test]
    fn star_aoi_is_return_leg() {
        let inst = Instance::with_defaults(
            Point::new(0.0, 0.0),
            vec![
                Point::new(100.0, 0.0),
                Point::new(0.0, 300.0),
                Point::new(-50.0, -50.0),
            ],
        )
        .unwrap();
        let w = build_edge_weights(&inst);
        let m = evaluate(&MultiTour::star(3), &w).unwrap();
        for i in 1..=3 {
            assert_eq!(m.aoi_per_sn[i - 1], w.time(i, 0));
            assert_eq!(m.flow_on(i, 0), 1);
        }
    }

    #[test]
    fn evaluate_rejects_bad_tours() {
        let w = hand_weights();
        assert!(evaluate(&MultiTour::single(vec![1]), &w).is_err());
        assert!(evaluate(&MultiTour::single(vec![1, 1, 2]), &w).is_err());
        assert!(evaluate(
            &MultiTour {
                cycles: vec![vec![1, 2], vec![]]
            },
            &w
        )
        .is_err());
        assert!(evaluate(&MultiTour::single(vec![1, 3]), &w).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode_arcs(&[(0, 1), (1, 0)], 1).unwrap().cycles,
            vec![vec![1]]
        );
        let arcs = [(0, 3), (3, 0), (0, 1), (1, 2), (2, 0)];
        assert_eq!(
            decode_arcs(&arcs, 3).unwrap().cycles,
            vec![vec![1, 2], vec![3]]
        );
        let arcs = [(0, 1), (1, 0), (2, 3), (3, 2)];
        match decode_arcs(&arcs, 3) {
            Err(Error::DepotFreeCycle(v)) => assert_eq!(v, vec![2, 3]),
            other => panic!("expected depot-free cycle, got {other:?}"),
        }
    }

    #[test]
    fn decode_rejects_degree_violations() {
        assert!(decode_arcs(&[(0, 1), (1, 0), (0, 2)], 2).is_err());
        assert!(decode_arcs(&[(0, 1), (1, 2), (2, 0), (0, 2)], 2).is_err());
    }

    #[test]
    fn oracle_counts_distinct_tours() {
        // Number of ways to arrange K labelled items into unordered lists.
        let expected = [1usize, 3, 13, 73, 501];
        for (k, &count) in (1..=5).zip(expected.iter()) {
            let sensors = (0..k)
                .map(|i| Point::new(100.0 * (i as f64 + 1.0), 37.0 * i as f64))
                .collect();
            let inst = Instance::with_defaults(Point::new(0.0, 0.0), sensors).unwrap();
            let oracle = Oracle::enumerate(&build_edge_weights(&inst)).unwrap();
            assert_eq!(oracle.candidates().len(), count, "K = {k}");
        }
    }

    #[test]
    fn oracle_single_sensor() {
        let inst =
            Instance::with_defaults(Point::new(0.0, 0.0), vec![Point::new(10.0, 0.0)]).unwrap();
        let (oracle, front) = oracle_pareto(&build_edge_weights(&inst)).unwrap();
        assert_eq!(oracle.candidates().len(), 1);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].0.cycles, vec![vec![1]]);
    }

    #[test]
    fn oracle_two_symmetric_sensors() {
        let inst = Instance::with_defaults(
            Point::new(0.0, 0.0),
            vec![Point::new(100.0, 0.0), Point::new(-100.0, 0.0)],
        )
        .unwrap();
        let w = build_edge_weights(&inst);
        let (_, front) = oracle_pareto(&w).unwrap();
        let allowed = [
            MultiTour::star(2),
            MultiTour::single(vec![1, 2]),
            MultiTour::single(vec![2, 1]),
        ];
        for (t, _) in &front {
            assert!(allowed.contains(&t.canonical()), "{t:?}");
        }
        // Collinear through the depot: the single cycle saves no distance, so
        // the star dominates.
        assert_eq!(front.len(), 1);
    }

    #[test]
    fn oracle_rejects_large_k() {
        let sensors = (0..9)
            .map(|i| Point::new(10.0 * (i + 1) as f64, 0.0))
            .collect();
        let inst = Instance::with_defaults(Point::new(0.0, 0.0), sensors).unwrap();
        assert!(matches!(
            Oracle::enumerate(&build_edge_weights(&inst)),
            Err(Error::SizeBound { k: 9, max: 8, .. })
        ));
    }

    #[test]
    fn oracle_scores_match_evaluate() {
        let inst = Instance::with_defaults(
            Point::new(0.0, 0.0),
            vec![
                Point::new(100.0, 20.0),
                Point::new(-30.0, 200.0),
                Point::new(80.0, -90.0),
                Point::new(5.0, 60.0),
            ],
        )
        .unwrap();
        let w = build_edge_weights(&inst);
        let oracle = Oracle::enumerate(&w).unwrap();
        for c in oracle.candidates() {
            let m = evaluate(&c.tour(4), &w).unwrap();
            assert_relative_eq!(m.avg_aoi, c.avg_aoi, max_relative = 1e-12);
            assert_relative_eq!(m.energy, c.energy, max_relative = 1e-12);
        }
    }
}
