//! Brute-force cross-checks on small instances: exhaustive enumeration of
//! binary velocity controls, and grid search for monotone staircase paths.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::Deserialize;

use crate::control::{Command, VelocityLaw};
use crate::coordspace::{obstacle_bounds, PathGeometry, SectionSet};
use crate::error::{Error, Result};
use crate::priority::{feasibility_and_margin, precedence_of, DiscretizedPath, MarginReport, PriorityGraph};

pub const MAX_ROBOTS_OPTIMALITY: usize = 3;
pub const MAX_HORIZON: usize = 12;
pub const MAX_ROBOTS_FEASIBILITY: usize = 4;
const MAX_GRID_NODES: usize = 8_000_000;

/// A handful of straight paths, one robot each, for the velocity model.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub diameter: f64,
    pub paths: Vec<PathGeometry>,
    /// Distance per advancing slot.
    pub v_max: Vec<f64>,
    pub start: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    diameter: f64,
    v_max: Vec<f64>,
    #[serde(default)]
    start: Option<Vec<f64>>,
    paths: Vec<InstancePath>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstancePath {
    origin: [f64; 2],
    heading_deg: f64,
}

impl Instance {
    /// Robots start half a diameter before their first section unless `start` is given.
    pub fn new(diameter: f64, paths: Vec<PathGeometry>, v_max: Vec<f64>, start: Option<Vec<f64>>) -> Result<Self> {
        if v_max.len() != paths.len() {
            return Err(Error::config("v_max", "one value per path"));
        }
        let mut inst = Instance { diameter, paths, v_max, start: Vec::new() };
        let sections = inst.sections()?;
        inst.start = match start {
            Some(s) if s.len() == inst.paths.len() => s,
            Some(_) => return Err(Error::config("start", "one value per path")),
            None => obstacle_bounds(&sections)
                .iter()
                .map(|b| if b.0.is_finite() { b.0 - 0.5 * diameter } else { 0.0 })
                .collect(),
        };
        Ok(inst)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: InstanceFile = toml::from_str(text).map_err(|e| Error::config("instance", e.to_string()))?;
        let paths = f
            .paths
            .iter()
            .enumerate()
            .map(|(k, p)| PathGeometry::new(k, p.origin, p.heading_deg.to_radians(), 0.0, 1e3))
            .collect::<Result<_>>()?;
        Self::new(f.diameter, paths, f.v_max, f.start)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn sections(&self) -> Result<SectionSet> {
        SectionSet::from_paths(&self.paths, self.diameter)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Random instance with pairwise crossing paths near the origin and a
/// random priority order.
pub fn random_instance(rng: &mut impl Rng, n: usize) -> Result<(Instance, PriorityGraph)> {
    let mut headings: Vec<f64> = Vec::new();
    while headings.len() < n {
        let h = rng.random_range(0.0..std::f64::consts::PI);
        let ok = headings.iter().all(|&o: &f64| {
            let d = (h - o).abs();
            d > 0.35 && d < std::f64::consts::PI - 0.35
        });
        if ok {
            headings.push(h);
        }
    }
    let paths: Vec<PathGeometry> = headings
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let through = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let back = 8.0;
            PathGeometry::new(k, [through[0] - back * h.cos(), through[1] - back * h.sin()], h, 0.0, 1e3)
        })
        .collect::<Result<_>>()?;
    let v_max: Vec<f64> = (0..n).map(|_| [0.25, 0.5, 0.75, 1.0][rng.random_range(0..4)]).collect();
    let mut inst = Instance::new(1.0, paths, v_max, None)?;
    for s in &mut inst.start {
        *s -= rng.random_range(0.0..3.0);
    }
    let mut order: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        order.swap(k, rng.random_range(0..=k));
    }
    let sections = inst.sections()?;
    let mut g = PriorityGraph::new(0..n);
    for a in 0..n {
        for b in a + 1..n {
            if sections.get(order[a], order[b]).is_some() {
                g.add_edge(order[a], order[b])?;
            }
        }
    }
    Ok((inst, g))
}

/// Whether the joint segment `x -> y` stays out of every completed region of `g`.
pub fn segment_admissible(g: &PriorityGraph, sections: &SectionSet, x: &[f64], y: &[f64], r: f64) -> bool {
    g.edges().all(|(w, l)| match sections.get(w, l) {
        Some(cs) => {
            let (a, b) = cs.pair;
            !cs.segment_enters((x[a], x[b]), (y[a], y[b]), precedence_of(cs, w), r)
        }
        None => true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub slot: usize,
    pub robot: usize,
    /// Advance flags per slot of an admissible control that gets further.
    pub controls: Vec<Vec<bool>>,
    pub law_position: f64,
    pub other_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub horizon: usize,
    /// Reachable configurations summed over slots.
    pub explored: usize,
    /// Set when the law itself leaves the admissible set.
    pub law_violation: Option<usize>,
    pub counterexample: Option<Counterexample>,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.law_violation.is_none() && self.counterexample.is_none()
    }
}

/// Checks that the velocity law dominates every admissible binary control.
pub fn oracle_optimality(inst: &Instance, g: &PriorityGraph, horizon: usize) -> Result<OptimalityReport> {
    let sections = inst.sections()?;
    let law = VelocityLaw::new(g, &sections, inst.v_max.clone())?;
    oracle_optimality_with(inst, g, horizon, |x| {
        Ok(law.decide(x)?.into_iter().map(|c| c == Command::Advance).collect())
    })
}

/// [`oracle_optimality`] against an arbitrary advance/stop policy.
///
/// Positions are built by repeated addition from the start, exactly as the
/// law steps, so configurations are compared as integer advance counts.
pub fn oracle_optimality_with(
    inst: &Instance,
    g: &PriorityGraph,
    horizon: usize,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<bool>>,
) -> Result<OptimalityReport> {
    let n = inst.len();
    if n > MAX_ROBOTS_OPTIMALITY || horizon > MAX_HORIZON {
        return Err(Error::TooLarge(format!(
            "{n} robots, horizon {horizon}; limits are {MAX_ROBOTS_OPTIMALITY} robots and horizon {MAX_HORIZON}"
        )));
    }
    let sections = inst.sections()?;
    g.validate(&sections)?;
    let table: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut col = vec![inst.start[i]];
            for _ in 0..horizon {
                col.push(col[col.len() - 1] + inst.v_max[i]);
            }
            col
        })
        .collect();
    let pos = |c: &[u8]| -> Vec<f64> { c.iter().enumerate().map(|(i, &k)| table[i][k as usize]).collect() };

    let mut law_counts = vec![vec![0u8; n]];
    let mut law_violation = None;
    for k in 0..horizon {
        let cur = law_counts[k].clone();
        let x = pos(&cur);
        let adv = match policy(&x) {
            Ok(a) => a,
            Err(_) => {
                law_violation.get_or_insert(k);
                vec![false; n]
            }
        };
        let next: Vec<u8> = cur.iter().zip(&adv).map(|(&c, &a)| c + u8::from(a)).collect();
        if !segment_admissible(g, &sections, &x, &pos(&next), 0.0) {
            law_violation.get_or_insert(k);
        }
        law_counts.push(next);
    }

    // layers[k]: (counts, parent index in layers[k - 1], advance mask)
    let mut layers: Vec<Vec<(Vec<u8>, usize, u32)>> = vec![vec![(vec![0; n], 0, 0)]];
    let mut explored = 1;
    let mut counterexample = None;
    'slots: for k in 0..horizon {
        let mut next: Vec<(Vec<u8>, usize, u32)> = Vec::new();
        let mut seen: HashMap<Vec<u8>, ()> = HashMap::new();
        for (p, (c, _, _)) in layers[k].iter().enumerate() {
            let x = pos(c);
            for mask in 0u32..(1 << n) {
                let d: Vec<u8> = (0..n).map(|i| c[i] + ((mask >> i) & 1) as u8).collect();
                if seen.contains_key(&d) || !segment_admissible(g, &sections, &x, &pos(&d), 0.0) {
                    continue;
                }
                seen.insert(d.clone(), ());
                next.push((d, p, mask));
            }
        }
        explored += next.len();
        layers.push(next);
        for (idx, (c, _, _)) in layers[k + 1].iter().enumerate() {
            if let Some(i) = (0..n).find(|&i| c[i] > law_counts[k + 1][i]) {
                let mut controls = Vec::new();
                let (mut layer, mut at) = (k + 1, idx);
                while layer > 0 {
                    let (_, parent, mask) = &layers[layer][at];
                    controls.push((0..n).map(|r| (mask >> r) & 1 == 1).collect());
                    at = *parent;
                    layer -= 1;
                }
                controls.reverse();
                counterexample = Some(Counterexample {
                    slot: k + 1,
                    robot: i,
                    controls,
                    law_position: table[i][law_counts[k + 1][i] as usize],
                    other_position: table[i][c[i] as usize],
                });
                break 'slots;
            }
        }
    }
    Ok(OptimalityReport { horizon, explored, law_violation, counterexample })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub grid: usize,
    pub oracle_feasible: bool,
    pub library: MarginReport,
    /// Largest dilation at which the grid still finds a staircase; a lower
    /// bound on the margin. `None` when infeasible.
    pub grid_margin: Option<f64>,
}

impl FeasibilityReport {
    pub fn agree(&self) -> bool {
        self.oracle_feasible == self.library.feasible
    }
}

/// Breadth-first search over a lattice covering the obstacle hull for a
/// monotone staircase that respects `g` with dilation `r`.
pub fn grid_staircase(
    g: &PriorityGraph,
    sections: &SectionSet,
    grid: usize,
    r: f64,
) -> Result<Option<DiscretizedPath>> {
    let n = sections.robots();
    if n > MAX_ROBOTS_FEASIBILITY {
        return Err(Error::TooLarge(format!("{n} robots; limit is {MAX_ROBOTS_FEASIBILITY}")));
    }
    if grid == 0 {
        return Err(Error::config("grid", "must be at least 1"));
    }
    g.validate(sections)?;
    let scale = sections.iter().map(|cs| cs.scale()).fold(0.0, f64::max).max(1.0);
    let axes: Vec<(f64, usize)> = obstacle_bounds(sections)
        .iter()
        .map(|b| if b.0.is_finite() { (b.0 - scale - r, grid) } else { (0.0, 0) })
        .collect();
    let steps: Vec<f64> = obstacle_bounds(sections)
        .iter()
        .map(|b| if b.0.is_finite() { (b.1 - b.0 + 2.0 * (scale + r)) / grid as f64 } else { 0.0 })
        .collect();
    let dims: Vec<usize> = axes.iter().map(|a| a.1 + 1).collect();
    let total: usize = dims.iter().product();
    if total > MAX_GRID_NODES {
        return Err(Error::TooLarge(format!("{total} grid nodes; limit is {MAX_GRID_NODES}")));
    }
    let coord = |idx: &[usize]| -> Vec<f64> { (0..n).map(|i| axes[i].0 + idx[i] as f64 * steps[i]).collect() };
    let encode = |idx: &[usize]| idx.iter().zip(&dims).rev().fold(0usize, |acc, (&v, &d)| acc * d + v);
    let decode = |mut code: usize| -> Vec<usize> {
        dims.iter()
            .map(|&d| {
                let v = code % d;
                code /= d;
                v
            })
            .collect()
    };
    let goal: Vec<usize> = axes.iter().map(|a| a.1).collect();
    let mut parent = vec![usize::MAX; total];
    let start = encode(&vec![0; n]);
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(code) = queue.pop_front() {
        let idx = decode(code);
        if idx == goal {
            let mut samples = vec![coord(&idx)];
            let mut at = code;
            while parent[at] != at {
                at = parent[at];
                samples.push(coord(&decode(at)));
            }
            samples.reverse();
            return DiscretizedPath::new(samples).map(Some);
        }
        let x = coord(&idx);
        for mask in 1u32..(1 << n) {
            let mut next = idx.clone();
            let mut valid = true;
            for i in 0..n {
                if (mask >> i) & 1 == 1 {
                    if next[i] == goal[i] {
                        valid = false;
                        break;
                    }
                    next[i] += 1;
                }
            }
            if !valid {
                continue;
            }
            let nc = encode(&next);
            if parent[nc] != usize::MAX || !segment_admissible(g, sections, &x, &coord(&next), r) {
                continue;
            }
            parent[nc] = code;
            queue.push_back(nc);
        }
    }
    Ok(None)
}

/// Compares [`feasibility_and_margin`] with the grid search.
pub fn oracle_feasibility(g: &PriorityGraph, sections: &SectionSet, grid: usize) -> Result<FeasibilityReport> {
    let library = feasibility_and_margin(g, sections)?;
    let oracle_feasible = grid_staircase(g, sections, grid, 0.0)?.is_some();
    let grid_margin = if oracle_feasible {
        let (mut lo, mut hi) = (0.0, sections.iter().map(|cs| cs.scale()).fold(0.0, f64::max).max(1.0));
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            if grid_staircase(g, sections, grid, mid)?.is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    } else {
        None
    };
    Ok(FeasibilityReport { grid, oracle_feasible, library, grid_margin })
}

/// Configuration samples of a closed-loop velocity-law run from `inst.start`
/// until every robot is past its obstacles.
pub fn closed_loop_path(inst: &Instance, g: &PriorityGraph, max_slots: usize) -> Result<DiscretizedPath> {
    let sections = inst.sections()?;
    let law = VelocityLaw::new(g, &sections, inst.v_max.clone())?;
    let goal: Vec<f64> = obstacle_bounds(&sections).iter().map(|b| b.1).collect();
    let mut x = inst.start.clone();
    let mut samples = vec![x.clone()];
    for _ in 0..max_slots {
        if x.iter().zip(&goal).all(|(a, b)| a > b) {
            break;
        }
        x = law.step(&x)?;
        samples.push(x.clone());
    }
    DiscretizedPath::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn perpendicular(v: [f64; 2]) -> Instance {
        let paths = vec![
            PathGeometry::new(0, [-4.0, 0.0], 0.0, 0.0, 1e3).unwrap(),
            PathGeometry::new(1, [0.0, -4.0], PI / 2.0, 0.0, 1e3).unwrap(),
        ];
        Instance::new(1.0, paths, v.to_vec(), None).unwrap()
    }

    #[test]
    fn single_robot_is_trivially_optimal() {
        let inst = Instance::new(1.0, vec![PathGeometry::new(0, [0.0, 0.0], 0.0, 0.0, 1e3).unwrap()], vec![0.5], None)
            .unwrap();
        let g = PriorityGraph::new([0]);
        let rep = oracle_optimality(&inst, &g, 12).unwrap();
        assert!(rep.passed());
        // k + 1 reachable advance counts after k slots.
        assert_eq!(rep.explored, (1..=13).sum::<usize>());
    }

    #[test]
    fn perpendicular_pair_passes() {
        let inst = perpendicular([0.5, 0.5]);
        let g = PriorityGraph::from_edges(0..2, [(0, 1)]).unwrap();
        let rep = oracle_optimality(&inst, &g, 12).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn flipped_branch_is_caught() {
        let inst = perpendicular([0.5, 0.5]);
        let g = PriorityGraph::from_edges(0..2, [(0, 1)]).unwrap();
        let s = inst.sections().unwrap();
        let law = VelocityLaw::new(&g, &s, inst.v_max.clone()).unwrap();
        // Robot 1 stops exactly when the law would let it advance.
        let rep = oracle_optimality_with(&inst, &g, 12, |x| {
            let mut a: Vec<bool> = law.decide(x)?.into_iter().map(|c| c == Command::Advance).collect();
            a[1] = !a[1];
            Ok(a)
        })
        .unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn lazy_law_yields_counterexample() {
        let inst = perpendicular([0.5, 0.5]);
        let g = PriorityGraph::from_edges(0..2, [(0, 1)]).unwrap();
        let rep = oracle_optimality_with(&inst, &g, 6, |_| Ok(vec![true, false])).unwrap();
        let c = rep.counterexample.expect("robot 1 can advance at once");
        assert_eq!(c.slot, 1);
        assert_eq!(c.robot, 1);
        assert_eq!(c.controls, vec![vec![false, true]]);
    }

    #[test]
    fn oversize_instances_are_refused() {
        let inst = perpendicular([0.5, 0.5]);
        let g = PriorityGraph::from_edges(0..2, [(0, 1)]).unwrap();
        assert!(matches!(oracle_optimality(&inst, &g, 13), Err(Error::TooLarge(_))));
    }

    #[test]
    fn random_instances_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3] {
            for _ in 0..5 {
                let (inst, g) = random_instance(&mut rng, n).unwrap();
                let s = inst.sections().unwrap();
                g.validate(&s).unwrap();
                assert!(g.is_acyclic());
                assert!(segment_admissible(&g, &s, &inst.start, &inst.start, 0.0));
            }
        }
    }

    #[test]
    fn grid_agrees_on_fixture_graphs() {
        let s = crate::priority::fixtures::triangle_deadlock();
        let cyc = PriorityGraph::from_edges(0..3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let rep = oracle_feasibility(&cyc, &s, 24).unwrap();
        assert!(!rep.oracle_feasible && rep.agree());
        let acyc = PriorityGraph::from_edges(0..3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let rep = oracle_feasibility(&acyc, &s, 24).unwrap();
        assert!(rep.oracle_feasible && rep.agree());
        assert!(rep.grid_margin.unwrap() <= rep.library.margin + 1e-3);
    }
}
