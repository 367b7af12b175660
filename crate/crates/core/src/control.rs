//! Priority preserving control laws and brake safety.
//!
//! Each law is configured by a list of [`Constraint`]s, one per priority edge.
//! Trajectories are sampled `substeps` times per slot and a pair of sampled
//! trajectories is checked on the staggered corners `(x_w(t_k), x_l(t_{k+1}))`.
//! Both coordinates are non-decreasing inside a sub-interval and the completed
//! region is monotone, so a clean corner clears the whole sub-interval.

use std::fmt;

use crate::coordspace::{CrossSection, Precedence, SectionSet, EPS};
use crate::dynamics::{brake_position_with, sample_flow, stop_position_with, Disturbance, NdState, RobotLimits, State};
use crate::error::{Error, Result};
use crate::priority::{edge_forbids, feasibility_and_margin, local_priority_graph, PriorityGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Stop,
    Advance,
    Throttle,
    Brake,
}

impl Command {
    /// Velocity (velocity mode) or acceleration applied for the slot.
    pub fn value(self, lim: &RobotLimits) -> f64 {
        match self {
            Command::Stop => 0.0,
            Command::Advance => lim.v_max,
            Command::Throttle => lim.u_max,
            Command::Brake => lim.u_min,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Stop => "stop",
            Command::Advance => "advance",
            Command::Throttle => "throttle",
            Command::Brake => "brake",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One command per robot, indexed like the state vector.
pub type ControlDecision = Vec<Command>;

/// Priority of `winner` over `loser` on `section`.
#[derive(Debug, Clone, Copy)]
pub struct Constraint<'a> {
    pub winner: usize,
    pub loser: usize,
    pub section: &'a CrossSection,
    /// Whether the winner is the first axis of `section`.
    pub winner_first: bool,
}

impl<'a> Constraint<'a> {
    pub fn new(winner: usize, loser: usize, section: &'a CrossSection) -> Self {
        Constraint { winner, loser, section, winner_first: section.pair.0 == winner }
    }

    pub fn oriented(winner: usize, loser: usize, section: &'a CrossSection, winner_first: bool) -> Self {
        Constraint { winner, loser, section, winner_first }
    }

    pub fn excess(&self, xw: f64, xl: f64, r: f64) -> f64 {
        self.section.excess(self.winner_first, xw, xl, r)
    }

    /// Staggered-corner maximum of [`Constraint::excess`] over two sampled
    /// trajectories; a shorter trajectory is held at its last sample.
    pub fn staggered_excess(&self, w: &[f64], l: &[f64], r: f64) -> f64 {
        let n = w.len().max(l.len());
        if n <= 1 {
            return self.excess(w[0], l[0], r);
        }
        (0..n - 1).map(|k| self.excess(at(w, k), at(l, k + 1), r)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sufficient condition for clearance when the winner never goes below
    /// `w_min` and the loser never beyond `l_max`; the excess is monotone in
    /// both coordinates.
    pub fn clear_by_bounds(&self, w_min: f64, l_max: f64, r: f64) -> bool {
        self.excess(w_min, l_max, r) <= EPS
    }

    pub fn staggered_clear(&self, w: &[f64], l: &[f64], r: f64) -> bool {
        let n = w.len().max(l.len());
        if n <= 1 {
            return self.excess(w[0], l[0], r) <= EPS;
        }
        (0..n - 1).all(|k| self.excess(at(w, k), at(l, k + 1), r) <= EPS)
    }
}

fn at(s: &[f64], k: usize) -> f64 {
    s[k.min(s.len() - 1)]
}

/// Constraints for every edge of `g`, with robot `k` at index `k`.
pub fn constraints<'a>(g: &PriorityGraph, sections: &'a SectionSet) -> Result<Vec<Constraint<'a>>> {
    g.edges()
        .map(|(w, l)| sections.get(w, l).map(|cs| Constraint::new(w, l, cs)).ok_or(Error::InvalidCycle(w, l)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checker {
    pub substeps: usize,
    /// Dilation used by the laws so that decisions survive rounding.
    pub guard: f64,
}

impl Default for Checker {
    fn default() -> Self {
        Checker { substeps: 4, guard: 1e-10 }
    }
}

fn horizon(limits: &[RobotLimits]) -> usize {
    limits.iter().map(RobotLimits::stop_horizon).max().unwrap_or(1)
}

fn incoming(cons: &[Constraint], n: usize) -> Vec<Vec<usize>> {
    let mut inc = vec![Vec::new(); n];
    for (k, c) in cons.iter().enumerate() {
        inc[c.loser].push(k);
    }
    inc
}

/// Worst-case corners: winners start from `lo` under `d_lo`, losers from `hi`
/// under `d_hi`.
struct Corners<'s> {
    lo: &'s [State],
    hi: &'s [State],
    d_lo: Vec<Disturbance>,
    d_hi: Vec<Disturbance>,
}

impl<'s> Corners<'s> {
    fn point(s: &'s [State]) -> Self {
        Corners {
            lo: s,
            hi: s,
            d_lo: vec![Disturbance::default(); s.len()],
            d_hi: vec![Disturbance::default(); s.len()],
        }
    }

    fn brake_lo(&self, i: usize, h: usize, m: usize, lim: &RobotLimits) -> Vec<f64> {
        sample_flow(self.lo[i], lim.u_min, lim.u_min, self.d_lo[i], h, m, lim)
    }

    fn brake_hi(&self, i: usize, h: usize, m: usize, lim: &RobotLimits) -> Vec<f64> {
        sample_flow(self.hi[i], lim.u_min, lim.u_min, self.d_hi[i], h, m, lim)
    }

    fn impulse_hi(&self, i: usize, h: usize, m: usize, lim: &RobotLimits) -> Vec<f64> {
        sample_flow(self.hi[i], lim.u_max, lim.u_min, self.d_hi[i], h, m, lim)
    }
}

fn split(boxes: &[NdState]) -> (Vec<State>, Vec<State>) {
    (boxes.iter().map(|b| b.lo).collect(), boxes.iter().map(|b| b.hi).collect())
}

fn brake_safe_core(c: &Corners, cons: &[Constraint], limits: &[RobotLimits], checker: &Checker, r: f64) -> bool {
    let (h, m) = (horizon(limits), checker.substeps);
    let n = c.lo.len();
    let mut wins: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut loses: Vec<Option<Vec<f64>>> = vec![None; n];
    cons.iter().all(|k| {
        let (w, l) = (k.winner, k.loser);
        if k.clear_by_bounds(c.lo[w].x, brake_position_with(c.hi[l], &limits[l], c.d_hi[l]), r) {
            return true;
        }
        if wins[w].is_none() {
            wins[w] = Some(c.brake_lo(w, h, m, &limits[w]));
        }
        if loses[l].is_none() {
            loses[l] = Some(c.brake_hi(l, h, m, &limits[l]));
        }
        k.staggered_clear(wins[w].as_deref().unwrap(), loses[l].as_deref().unwrap(), r)
    })
}

fn law_core(c: &Corners, cons: &[Constraint], limits: &[RobotLimits], checker: &Checker) -> ControlDecision {
    let (h, m) = (horizon(limits), checker.substeps);
    let n = c.lo.len();
    let inc = incoming(cons, n);
    let mut brakes: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut out = vec![Command::Throttle; n];
    for i in 0..n {
        if inc[i].is_empty() {
            continue;
        }
        let reach = stop_position_with(c.hi[i], &limits[i], c.d_hi[i]);
        let mut imp: Option<Vec<f64>> = None;
        for &k in &inc[i] {
            let w = cons[k].winner;
            if cons[k].clear_by_bounds(c.lo[w].x, reach, checker.guard) {
                continue;
            }
            if brakes[w].is_none() {
                brakes[w] = Some(c.brake_lo(w, h, m, &limits[w]));
            }
            let imp = imp.get_or_insert_with(|| c.impulse_hi(i, h, m, &limits[i]));
            if !cons[k].staggered_clear(brakes[w].as_deref().unwrap(), imp, checker.guard) {
                out[i] = Command::Brake;
                break;
            }
        }
    }
    out
}

/// Whether all-robots maximum braking from `s` keeps every constraint clear
/// at dilation `r`.
pub fn is_brake_safe(s: &[State], cons: &[Constraint], limits: &[RobotLimits], checker: &Checker, r: f64) -> bool {
    brake_safe_core(&Corners::point(s), cons, limits, checker, r)
}

/// [`is_brake_safe`] for the worst corners of information-state boxes.
pub fn is_brake_safe_nd(
    boxes: &[NdState],
    cons: &[Constraint],
    limits: &[RobotLimits],
    checker: &Checker,
    r: f64,
) -> bool {
    let (lo, hi) = split(boxes);
    let c = Corners {
        lo: &lo,
        hi: &hi,
        d_lo: limits.iter().map(|l| l.d_lo).collect(),
        d_hi: limits.iter().map(|l| l.d_hi).collect(),
    };
    brake_safe_core(&c, cons, limits, checker, r)
}

/// Decentralized acceleration law: brake iff the impulse flow of a robot meets
/// the brake flow of one of its higher-priority robots.
pub fn acceleration_law(
    s: &[State],
    cons: &[Constraint],
    limits: &[RobotLimits],
    checker: &Checker,
) -> ControlDecision {
    law_core(&Corners::point(s), cons, limits, checker)
}

/// Acceleration law evaluated at the worst corners of the boxes.
pub fn nd_law(boxes: &[NdState], cons: &[Constraint], limits: &[RobotLimits], checker: &Checker) -> ControlDecision {
    let (lo, hi) = split(boxes);
    let c = Corners {
        lo: &lo,
        hi: &hi,
        d_lo: limits.iter().map(|l| l.d_lo).collect(),
        d_hi: limits.iter().map(|l| l.d_hi).collect(),
    };
    law_core(&c, cons, limits, checker)
}

pub fn is_brake_safe_graph(
    s: &[State],
    g: &PriorityGraph,
    sections: &SectionSet,
    limits: &[RobotLimits],
) -> Result<bool> {
    Ok(is_brake_safe(s, &constraints(g, sections)?, limits, &Checker::default(), 0.0))
}

pub fn acceleration_law_graph(
    s: &[State],
    g: &PriorityGraph,
    sections: &SectionSet,
    limits: &[RobotLimits],
) -> Result<ControlDecision> {
    Ok(acceleration_law(s, &constraints(g, sections)?, limits, &Checker::default()))
}

pub fn nd_law_graph(
    boxes: &[NdState],
    g: &PriorityGraph,
    sections: &SectionSet,
    limits: &[RobotLimits],
) -> Result<ControlDecision> {
    Ok(nd_law(boxes, &constraints(g, sections)?, limits, &Checker::default()))
}

/// Velocity-mode law in topological order.
#[derive(Debug, Clone)]
pub struct VelocityLaw<'a> {
    g: PriorityGraph,
    sections: &'a SectionSet,
    v_max: Vec<f64>,
    /// Local graph radius, set when `g` has cycles.
    radius: Option<f64>,
}

impl<'a> VelocityLaw<'a> {
    pub fn new(g: &PriorityGraph, sections: &'a SectionSet, v_max: Vec<f64>) -> Result<Self> {
        g.validate(sections)?;
        if v_max.len() < sections.robots() || v_max.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidLimits("one positive v_max per robot".into()));
        }
        let radius = if g.is_acyclic() {
            None
        } else {
            let top = v_max.iter().copied().fold(0.0, f64::max);
            let report = feasibility_and_margin(g, sections)?;
            if !report.feasible || report.margin < top {
                return Err(Error::UnsupportedPriorities(format!(
                    "cyclic graph with margin {} below largest step {top}",
                    report.margin
                )));
            }
            Some(top)
        };
        Ok(VelocityLaw { g: g.clone(), sections, v_max, radius })
    }

    pub fn decide(&self, x: &[f64]) -> Result<ControlDecision> {
        for (w, l) in self.g.edges() {
            let cs = self.sections.get(w, l).ok_or(Error::InvalidCycle(w, l))?;
            if edge_forbids(cs, w, l, x, 0.0) {
                return Err(Error::PriorityViolated(w, l));
            }
        }
        let local;
        let graph = match self.radius {
            None => &self.g,
            Some(r) => {
                local = local_priority_graph(&self.g, x, self.sections, r)?;
                &local
            }
        };
        let order = graph
            .topological_order()
            .ok_or_else(|| Error::UnsupportedPriorities("local priority graph has a cycle".into()))?;
        let mut next = x.to_vec();
        let mut out = vec![Command::Stop; x.len()];
        for i in order.into_iter().filter(|&i| i < x.len()) {
            let cand = x[i] + self.v_max[i];
            let blocked = graph.predecessors(i).any(|j| {
                let cs = self.sections.get(j, i).expect("validated");
                let (p0, p1, prec) = if cs.pair.0 == j {
                    ((x[j], x[i]), (next[j], cand), Precedence::First)
                } else {
                    ((x[i], x[j]), (cand, next[j]), Precedence::Second)
                };
                cs.segment_enters(p0, p1, prec, 0.0)
            });
            if !blocked {
                next[i] = cand;
                out[i] = Command::Advance;
            }
        }
        Ok(out)
    }

    /// Configuration after one slot under the law.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.decide(x)?;
        Ok(x.iter()
            .zip(&d)
            .enumerate()
            .map(|(i, (xi, c))| if *c == Command::Advance { xi + self.v_max[i] } else { *xi })
            .collect())
    }
}

pub fn velocity_law(x: &[f64], g: &PriorityGraph, sections: &SectionSet, v_max: &[f64]) -> Result<ControlDecision> {
    VelocityLaw::new(g, sections, v_max.to_vec())?.decide(x)
}
