//! Priority graphs over conflicting robots.
//!
//! An edge `(i, j)` means robot `i` passes before robot `j`; the configurations
//! forbidden by that edge are the completed region of the pair for precedence
//! `i` first. This module extracts graphs from paths, decides feasibility
//! through elementary cycles, computes safety margins, local graphs and
//! witness paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::coordspace::{obstacle_bounds, Configuration, CrossSection, Precedence, SectionSet, EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriorityGraph {
    vertices: BTreeSet<usize>,
    edges: BTreeSet<(usize, usize)>,
    reverse: BTreeSet<(usize, usize)>,
}

impl PriorityGraph {
    pub fn new(vertices: impl IntoIterator<Item = usize>) -> Self {
        PriorityGraph { vertices: vertices.into_iter().collect(), ..Default::default() }
    }

    pub fn from_edges(
        vertices: impl IntoIterator<Item = usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut g = PriorityGraph::new(vertices);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    pub fn add_vertex(&mut self, v: usize) {
        self.vertices.insert(v);
    }

    /// Adds `i` over `j`, inserting missing vertices.
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i == j {
            return Err(Error::InvalidGraph(format!("self loop on {i}")));
        }
        if self.edges.contains(&(j, i)) {
            return Err(Error::InvalidGraph(format!("both ({i}, {j}) and ({j}, {i})")));
        }
        self.vertices.insert(i);
        self.vertices.insert(j);
        self.edges.insert((i, j));
        self.reverse.insert((j, i));
        Ok(())
    }

    pub fn remove_vertex(&mut self, v: usize) {
        self.vertices.remove(&v);
        let out: Vec<_> = self.successors(v).collect();
        let inc: Vec<_> = self.predecessors(v).collect();
        for j in out {
            self.edges.remove(&(v, j));
            self.reverse.remove(&(j, v));
        }
        for i in inc {
            self.edges.remove(&(i, v));
            self.reverse.remove(&(v, i));
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn contains_vertex(&self, v: usize) -> bool {
        self.vertices.contains(&v)
    }

    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        self.vertices.iter().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Robots with priority over `v`.
    pub fn predecessors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.reverse.range((v, 0)..=(v, usize::MAX)).map(|&(_, i)| i)
    }

    /// Robots `v` has priority over.
    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((v, 0)..=(v, usize::MAX)).map(|&(_, j)| j)
    }

    /// Kahn's algorithm, smallest ready id first; `None` when cyclic.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: BTreeMap<usize, usize> = self.vertices.iter().map(|&v| (v, 0)).collect();
        for &(_, j) in &self.edges {
            *indeg.entry(j).or_default() += 1;
        }
        let mut ready: BTreeSet<usize> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&v, _)| v).collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for j in self.successors(v) {
                let d = indeg.get_mut(&j).expect("edge endpoint is a vertex");
                *d -= 1;
                if *d == 0 {
                    ready.insert(j);
                }
            }
        }
        (order.len() == indeg.len()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Every edge must join a conflicting pair.
    pub fn validate(&self, sections: &SectionSet) -> Result<()> {
        for (i, j) in self.edges() {
            if !sections.conflicts(i, j) {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) joins robots that never conflict")));
            }
        }
        Ok(())
    }

    pub fn retain_vertices(&mut self, keep: impl Fn(usize) -> bool) {
        let drop: Vec<usize> = self.vertices().filter(|&v| !keep(v)).collect();
        for v in drop {
            self.remove_vertex(v);
        }
    }

    /// Parses `edge <i> <j>` lines; `vertex <v>` lines add isolated vertices,
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = PriorityGraph::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::config(format!("graph line {}", no + 1), format!("bad id `{s}`")))
            };
            match parts.as_slice() {
                ["edge", i, j] => g
                    .add_edge(num(i)?, num(j)?)
                    .map_err(|e| Error::config(format!("graph line {}", no + 1), e.to_string()))?,
                ["vertex", v] => g.add_vertex(num(v)?),
                _ => {
                    return Err(Error::config(
                        format!("graph line {}", no + 1),
                        format!("expected `edge <i> <j>`, got `{line}`"),
                    ))
                }
            }
        }
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(out, "edge {i} {j}");
        }
        out
    }
}

/// Precedence of `cs` that puts `winner` first.
pub fn precedence_of(cs: &CrossSection, winner: usize) -> Precedence {
    if cs.pair.0 == winner {
        Precedence::First
    } else {
        Precedence::Second
    }
}

/// Whether configuration `x` lies in the `r`-dilated region forbidden by edge `(w, l)`.
pub fn edge_forbids(cs: &CrossSection, w: usize, l: usize, x: &[f64], r: f64) -> bool {
    cs.excess(cs.pair.0 == w, x[w], x[l], r) > EPS
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPath {
    samples: Vec<Configuration>,
}

impl DiscretizedPath {
    pub fn new(samples: Vec<Configuration>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidGeometry("empty path".into()));
        };
        let n = first.len();
        for (k, s) in samples.iter().enumerate() {
            if s.len() != n || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGeometry(format!("sample {k} malformed")));
            }
            if k > 0 && samples[k - 1].iter().zip(s).any(|(a, b)| b < a) {
                return Err(Error::InvalidGeometry(format!("sample {k} decreases")));
            }
        }
        Ok(DiscretizedPath { samples })
    }

    pub fn samples(&self) -> &[Configuration] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// Consecutive sample pairs; a single-sample path yields one degenerate segment.
    fn segments(&self) -> impl Iterator<Item = (usize, &Configuration, &Configuration)> {
        let s = &self.samples;
        let count = s.len().saturating_sub(1).max(1);
        (0..count).map(move |k| (k, &s[k], &s[(k + 1).min(s.len() - 1)]))
    }
}

/// Priority graph of a collision-free monotone path.
pub fn induce_priority_graph(path: &DiscretizedPath, sections: &SectionSet) -> Result<PriorityGraph> {
    if path.dim() != sections.robots() {
        return Err(Error::InvalidGeometry(format!(
            "path has {} axes, sections cover {} robots",
            path.dim(),
            sections.robots()
        )));
    }
    let mut g = PriorityGraph::new(0..sections.robots());
    for cs in sections.iter() {
        let (i, j) = cs.pair;
        let (mut first_side, mut second_side) = (false, false);
        for (k, a, b) in path.segments() {
            let (p0, p1) = ((a[i], a[j]), (b[i], b[j]));
            if cs.segment_collides(p0, p1) {
                return Err(Error::PathInfeasible(i, j, k));
            }
            first_side |= cs.segment_enters(p0, p1, Precedence::First, 0.0);
            second_side |= cs.segment_enters(p0, p1, Precedence::Second, 0.0);
        }
        match (first_side, second_side) {
            (true, false) => g.add_edge(j, i)?,
            (false, true) => g.add_edge(i, j)?,
            (false, false) => return Err(Error::UndeterminedPriority(i, j)),
            (true, true) => return Err(Error::PathInfeasible(i, j, 0)),
        }
    }
    Ok(g)
}

/// Fails with the first edge whose forbidden region the path enters.
pub fn check_path(path: &DiscretizedPath, g: &PriorityGraph, sections: &SectionSet) -> Result<()> {
    for (w, l) in g.edges() {
        let cs = sections.get(w, l).ok_or(Error::InvalidCycle(w, l))?;
        let first = cs.pair.0 == w;
        for (_, a, b) in path.segments() {
            if cs.sweep_excess(first, (a[w], a[l]), (b[w], b[l]), 0.0) > EPS {
                return Err(Error::PriorityViolated(w, l));
            }
        }
    }
    Ok(())
}

const CYCLE_LIMIT: usize = 10_000;

/// All elementary cycles of a directed edge set, each rotated to start at its
/// smallest vertex, in lexicographic order.
pub fn elementary_cycles(edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Vec<Vec<usize>>> {
    elementary_cycles_bounded(edges, CYCLE_LIMIT)
}

pub fn elementary_cycles_bounded(
    edges: impl IntoIterator<Item = (usize, usize)>,
    limit: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, j) in edges {
        if i != j {
            adj.entry(i).or_default().insert(j);
        }
    }
    let mut cycles = Vec::new();
    let starts: Vec<usize> = adj.keys().copied().collect();
    for s in starts {
        let mut path = vec![s];
        let mut on_path = BTreeSet::from([s]);
        let mut stack: Vec<Vec<usize>> =
            vec![adj.get(&s).map(|n| n.iter().rev().copied().collect()).unwrap_or_default()];
        while let Some(frontier) = stack.last_mut() {
            match frontier.pop() {
                None => {
                    stack.pop();
                    if let Some(v) = path.pop() {
                        on_path.remove(&v);
                    }
                }
                Some(v) if v == s => {
                    cycles.push(path.clone());
                    if cycles.len() > limit {
                        return Err(Error::TooManyCycles(limit));
                    }
                }
                Some(v) if v < s || on_path.contains(&v) => {}
                Some(v) => {
                    path.push(v);
                    on_path.insert(v);
                    stack.push(adj.get(&v).map(|n| n.iter().rev().copied().collect()).unwrap_or_default());
                }
            }
        }
    }
    cycles.sort();
    Ok(cycles)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginOptions {
    pub r_max: f64,
    pub resolution: f64,
    pub grid: usize,
}

impl MarginOptions {
    pub fn for_diameter(d: f64) -> Self {
        MarginOptions { r_max: 10.0 * d, resolution: 1e-3 * d, grid: 512 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub feasible: bool,
    pub margin: f64,
    pub witness_cycle: Option<Vec<usize>>,
}

struct CycleEdge<'a> {
    cs: &'a CrossSection,
    first: bool,
    ow: f64,
    ol: f64,
}

impl CycleEdge<'_> {
    /// Loser threshold for the `r`-dilated completion.
    fn threshold(&self, xw: f64, r: f64) -> f64 {
        self.ol + self.cs.kind.floor(xw - self.ow - r) - r
    }
}

fn cycle_edges<'a>(cycle: &[usize], sections: &'a SectionSet) -> Result<Vec<CycleEdge<'a>>> {
    let m = cycle.len();
    (0..m)
        .map(|k| {
            let (w, l) = (cycle[k], cycle[(k + 1) % m]);
            let cs = sections.get(w, l).ok_or(Error::InvalidCycle(w, l))?;
            let first = cs.pair.0 == w;
            let (ow, ol) = if first { cs.offsets } else { (cs.offsets.1, cs.offsets.0) };
            Ok(CycleEdge { cs, first, ow, ol })
        })
        .collect()
}

/// Whether the `r`-dilated completed regions along `cycle` share a point
/// (`r < 0` erodes). Edges run `cycle[k] -> cycle[k + 1]`, wrapping around.
pub fn cycle_obstruction_check(cycle: &[usize], sections: &SectionSet, r: f64) -> Result<bool> {
    cycle_obstruction_check_with(cycle, sections, r, 512)
}

pub fn cycle_obstruction_check_with(cycle: &[usize], sections: &SectionSet, r: f64, grid: usize) -> Result<bool> {
    if cycle.len() < 2 {
        return Err(Error::InvalidGraph(format!("cycle {cycle:?} too short")));
    }
    let edges = cycle_edges(cycle, sections)?;
    // score(a) = a - H(a) where H composes the thresholds around the cycle;
    // H is convex and non-decreasing, so score is concave.
    let score = |a: f64| {
        let mut x = a;
        for e in &edges {
            x = e.threshold(x, r);
            if x == f64::INFINITY {
                return f64::NEG_INFINITY;
            }
        }
        a - x
    };
    let first = &edges[0];
    let last = &edges[edges.len() - 1];
    let b0 = if first.first { first.cs.bounds_i } else { first.cs.bounds_j };
    let b1 = if last.first { last.cs.bounds_j } else { last.cs.bounds_i };
    let pad = r.abs() + first.cs.scale();
    let (lo, hi) = (b0.0.min(b1.0) - pad, b0.1.max(b1.1) + pad);
    let n = grid.max(4);
    let at = |k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    let (mut best_k, mut best) = (0, f64::NEG_INFINITY);
    for k in 0..n {
        let s = score(at(k));
        if s > best {
            best = s;
            best_k = k;
        }
    }
    if best > EPS {
        return Ok(true);
    }
    // Golden-section refinement around the best grid cell.
    let (mut a, mut b) = (at(best_k.saturating_sub(1)), at((best_k + 1).min(n - 1)));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..80 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = score(d);
        }
        best = best.max(fc).max(fd);
    }
    Ok(best > EPS)
}

/// Feasibility and safety margin with defaults scaled to the largest section.
pub fn feasibility_and_margin(g: &PriorityGraph, sections: &SectionSet) -> Result<MarginReport> {
    let scale = sections.scale();
    feasibility_and_margin_with(g, sections, &MarginOptions::for_diameter(if scale > 0.0 { scale } else { 1.0 }))
}

pub fn feasibility_and_margin_with(
    g: &PriorityGraph,
    sections: &SectionSet,
    opts: &MarginOptions,
) -> Result<MarginReport> {
    let cycles = elementary_cycles(g.edges())?;
    if cycles.is_empty() {
        return Ok(MarginReport { feasible: true, margin: opts.r_max, witness_cycle: None });
    }
    let nonempty = |r: f64| -> Result<bool> {
        for c in &cycles {
            if cycle_obstruction_check_with(c, sections, r, opts.grid)? {
                return Ok(true);
            }
        }
        Ok(false)
    };
    let mut witness = None;
    for c in &cycles {
        if cycle_obstruction_check_with(c, sections, 0.0, opts.grid)? {
            witness = Some(c.clone());
            break;
        }
    }
    match witness {
        None => {
            if !nonempty(opts.r_max)? {
                return Ok(MarginReport { feasible: true, margin: opts.r_max, witness_cycle: None });
            }
            let (mut lo, mut hi) = (0.0, opts.r_max);
            while hi - lo > opts.resolution {
                let mid = 0.5 * (lo + hi);
                if nonempty(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(MarginReport { feasible: true, margin: lo, witness_cycle: None })
        }
        Some(cycle) => {
            if nonempty(-opts.r_max)? {
                return Ok(MarginReport { feasible: false, margin: -opts.r_max, witness_cycle: Some(cycle) });
            }
            let (mut lo, mut hi) = (0.0, opts.r_max);
            while hi - lo > opts.resolution {
                let mid = 0.5 * (lo + hi);
                if nonempty(-mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(MarginReport { feasible: false, margin: -hi, witness_cycle: Some(cycle) })
        }
    }
}

/// Edges of `g` whose forbidden region lies within infinity-norm distance `r` of `x`.
pub fn local_priority_graph(g: &PriorityGraph, x: &[f64], sections: &SectionSet, r: f64) -> Result<PriorityGraph> {
    let mut out = PriorityGraph::new(g.vertices());
    for (w, l) in g.edges() {
        let cs = sections.get(w, l).ok_or(Error::InvalidCycle(w, l))?;
        if edge_forbids(cs, w, l, x, r) {
            out.add_edge(w, l)?;
        }
    }
    Ok(out)
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// A monotone path from below every obstacle to beyond every obstacle that
/// respects `g`.
pub fn construct_feasible_path(g: &PriorityGraph, sections: &SectionSet, step: f64) -> Result<DiscretizedPath> {
    if !(step > 0.0) {
        return Err(Error::InvalidGeometry(format!("step {step}")));
    }
    g.validate(sections)?;
    let n = sections.robots();
    let bounds = obstacle_bounds(sections);
    let path = if let Some(order) = g.topological_order() {
        let mut x: Vec<f64> = bounds.iter().map(|b| finite_or_zero(b.0)).collect();
        let mut samples = vec![x.clone()];
        for v in order.into_iter().filter(|&v| v < n) {
            x[v] = finite_or_zero(bounds[v].1) + step;
            samples.push(x.clone());
        }
        DiscretizedPath::new(samples)?
    } else {
        let report = feasibility_and_margin(g, sections)?;
        if report.margin <= step {
            return Err(Error::InsufficientMargin { margin: report.margin, step });
        }
        let mut x: Vec<f64> = bounds.iter().map(|b| finite_or_zero(b.0) - 2.0 * step).collect();
        let goal: Vec<f64> = bounds.iter().map(|b| finite_or_zero(b.1) + step).collect();
        let budget: f64 = x.iter().zip(&goal).map(|(a, b)| b - a).sum();
        let max_steps = (budget / step).ceil() as usize + 1;
        let mut samples = vec![x.clone()];
        for _ in 0..max_steps {
            if x.iter().zip(&goal).all(|(a, b)| a >= b) {
                break;
            }
            let local = local_priority_graph(g, &x, sections, step)?;
            let movers: Vec<usize> =
                (0..n).filter(|&i| x[i] < goal[i] && local.predecessors(i).next().is_none()).collect();
            if movers.is_empty() {
                return Err(Error::InsufficientMargin { margin: report.margin, step });
            }
            for i in movers {
                x[i] = (x[i] + step).min(goal[i]);
            }
            samples.push(x.clone());
        }
        if x.iter().zip(&goal).any(|(a, b)| a < b) {
            return Err(Error::InsufficientMargin { margin: report.margin, step });
        }
        DiscretizedPath::new(samples)?
    };
    check_path(&path, g, sections)?;
    Ok(path)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::coordspace::{PathGeometry, SectionSet};
    use std::f64::consts::PI;

    pub fn lines(spec: &[([f64; 2], f64)], d: f64) -> SectionSet {
        let paths: Vec<PathGeometry> =
            spec.iter().enumerate().map(|(k, &(o, h))| PathGeometry::new(k, o, h, 0.0, 40.0).unwrap()).collect();
        SectionSet::from_paths(&paths, d).unwrap()
    }

    fn through(point: [f64; 2], heading: f64, back: f64) -> ([f64; 2], f64) {
        ([point[0] - back * heading.cos(), point[1] - back * heading.sin()], heading)
    }

    /// Three paths through one point at 60 degree spacing.
    pub fn triangle_deadlock() -> SectionSet {
        let h = [0.0, PI / 3.0, 2.0 * PI / 3.0];
        lines(&h.map(|a| through([0.0, 0.0], a, 10.0)), 1.0)
    }

    /// Paths running around an equilateral triangle of side `side`:
    /// robot 0 meets 1 then 2, robot 1 meets 2 then 0, robot 2 meets 0 then 1.
    pub fn roundabout(side: f64) -> SectionSet {
        let v01 = [0.0, 0.0];
        let v02 = [side, 0.0];
        let v12 = [side / 2.0, side * 3f64.sqrt() / 2.0];
        lines(&[through(v01, 0.0, 10.0), through(v12, 4.0 * PI / 3.0, 10.0), through(v02, 2.0 * PI / 3.0, 10.0)], 1.0)
    }

    pub fn perpendicular_pair() -> SectionSet {
        lines(&[([-10.0, 0.0], 0.0), ([0.0, -10.0], PI / 2.0)], 1.0)
    }
}
