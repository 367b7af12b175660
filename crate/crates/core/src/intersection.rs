//! Intersection controller: entry requests, priority assignment, locking and
//! back-pressure phase gating.
//!
//! A newly accepted robot always gets the lowest priority with respect to the
//! accepted robots it conflicts with, so the priority graph stays acyclic.
//! Robots on the same path are kept apart by a car-following constraint that
//! lives outside the graph.

use std::collections::BTreeSet;

use crate::control::{acceleration_law, is_brake_safe_nd, Checker, Constraint};
use crate::coordspace::{build_cross_section, CrossSection, PathGeometry, SectionKind};
use crate::dynamics::{sample_flow, slot_flow, stop_position, Disturbance, NdState, RobotLimits, State};
use crate::error::{Error, Result};
use crate::priority::PriorityGraph;

/// Distance between the control area boundary and the conflict zone, in diameters.
pub const AREA_MARGIN: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    All,
    P1,
    P2,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::All => "all",
            Phase::P1 => "p1",
            Phase::P2 => "p2",
        }
    }

    fn admits(self, group: u8) -> bool {
        match self {
            Phase::All => true,
            Phase::P1 => group == 1,
            Phase::P2 => group == 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub locking: bool,
    pub lock_a: f64,
    pub lock_b: f64,
    pub lock_threshold: f64,
    pub backpressure: bool,
    pub period: u64,
    pub queue_limit: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Heuristic,
            locking: false,
            lock_a: 1.0,
            lock_b: 2.0,
            lock_threshold: 2500.0,
            backpressure: false,
            period: 100,
            queue_limit: 30.0,
        }
    }
}

/// Static intersection geometry shared by the controller and the simulator.
#[derive(Debug, Clone)]
pub struct Layout {
    pub paths: Vec<PathGeometry>,
    pub diameter: f64,
    /// Back-pressure group of each path: 1, 2, or 0 for none.
    pub groups: Vec<u8>,
    /// Hull of the crossing sections on each path.
    pub zone: Vec<(f64, f64)>,
    sections: Vec<Vec<Option<CrossSection>>>,
    follow: CrossSection,
}

impl Layout {
    /// Places entry and exit `AREA_MARGIN` diameters around the crossings of
    /// each path; `paths[k].id` is replaced by `k`.
    pub fn new(paths: &[PathGeometry], diameter: f64, groups: Vec<u8>) -> Result<Self> {
        let n = paths.len();
        if groups.len() != n {
            return Err(Error::config("paths", "one phase group per path"));
        }
        let mut zone = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
        for p in 0..n {
            for q in 0..n {
                if p == q {
                    continue;
                }
                if let Some(cs) = build_cross_section(&paths[p], &paths[q], diameter)? {
                    if matches!(cs.kind, SectionKind::Ellipse { .. }) {
                        zone[p].0 = zone[p].0.min(cs.bounds_i.0);
                        zone[p].1 = zone[p].1.max(cs.bounds_i.1);
                    }
                }
            }
        }
        let margin = AREA_MARGIN * diameter;
        let placed: Vec<PathGeometry> = paths
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if zone[k].0 > zone[k].1 {
                    zone[k] = (margin, margin);
                }
                PathGeometry::new(k, p.origin, p.heading, zone[k].0 - margin, zone[k].1 + margin)
            })
            .collect::<Result<_>>()?;
        let mut sections = vec![vec![None; n]; n];
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    sections[p][q] =
                        build_cross_section(&placed[p], &placed[q], diameter)?.map(|cs| cs.relabeled((p, q)));
                }
            }
        }
        let follow = CrossSection::band((0, 1), diameter, (f64::NEG_INFINITY, f64::INFINITY), (0.0, 0.0))?;
        Ok(Layout { paths: placed, diameter, groups, zone, sections, follow })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn entry(&self, path: usize) -> f64 {
        self.paths[path].entry_pos
    }

    pub fn exit(&self, path: usize) -> f64 {
        self.paths[path].exit_pos
    }

    /// Section between two distinct paths with `p` on the first axis.
    pub fn section(&self, p: usize, q: usize) -> Option<&CrossSection> {
        self.sections[p][q].as_ref()
    }

    pub fn conflicts(&self, p: usize, q: usize) -> bool {
        self.sections[p][q].is_some()
    }

    /// Unbounded same-path following band.
    pub fn follow(&self) -> &CrossSection {
        &self.follow
    }
}

/// What the controller and the laws know about a robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub path: usize,
    pub belief: NdState,
    pub limits: RobotLimits,
    pub accepted: bool,
}

/// Index of the robot just ahead on the same path; `agents` sorted by id.
pub fn leaders(agents: &[Agent]) -> Vec<Option<usize>> {
    let mut last: Vec<Option<usize>> = Vec::new();
    agents
        .iter()
        .enumerate()
        .map(|(k, a)| {
            if last.len() <= a.path {
                last.resize(a.path + 1, None);
            }
            last[a.path].replace(k)
        })
        .collect()
}

fn index_of(agents: &[Agent], id: usize) -> Option<usize> {
    agents.binary_search_by_key(&id, |a| a.id).ok()
}

/// Constraints of the priority graph plus car following, over agent indices.
pub fn active_constraints<'a>(agents: &[Agent], graph: &PriorityGraph, layout: &'a Layout) -> Vec<Constraint<'a>> {
    let mut out = Vec::new();
    for (k, lead) in leaders(agents).into_iter().enumerate() {
        if let Some(l) = lead {
            out.push(Constraint::oriented(l, k, layout.follow(), true));
        }
    }
    for (w, l) in graph.edges() {
        if let (Some(wi), Some(li)) = (index_of(agents, w), index_of(agents, l)) {
            if let Some(cs) = layout.section(agents[wi].path, agents[li].path) {
                out.push(Constraint::oriented(wi, li, cs, true));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EntryRequest {
    pub robot: usize,
    pub path: usize,
    pub state: NdState,
    pub slot: u64,
    pub wait: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lock {
    pub path: usize,
    pub robot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Phase,
    Lock,
    Policy,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub accepted: BTreeSet<usize>,
    pub graph: PriorityGraph,
    /// Robots generated minus robots accepted, per path.
    pub queues: Vec<usize>,
    pub phase: Phase,
    /// Slots since the last phase update.
    pub phase_timer: u64,
    pub lock: Option<Lock>,
    pub last_accepted: Vec<Option<usize>>,
}

impl ControllerState {
    pub fn new(paths: usize) -> Self {
        ControllerState {
            accepted: BTreeSet::new(),
            graph: PriorityGraph::new([]),
            queues: vec![0; paths],
            phase: Phase::All,
            phase_timer: 0,
            lock: None,
            last_accepted: vec![None; paths],
        }
    }

    pub fn enqueue(&mut self, path: usize) {
        self.queues[path] += 1;
    }

    pub fn group_queues(&self, groups: &[u8]) -> (usize, usize) {
        let sum = |g: u8| self.queues.iter().zip(groups).filter(|(_, &k)| k == g).map(|(q, _)| q).sum();
        (sum(1), sum(2))
    }

    /// Phase update every `period` slots and lock acquisition; `waiting`
    /// lists `(robot, path, wait)` for requesters not yet accepted.
    pub fn tick_phase_and_locks(
        &mut self,
        slot: u64,
        cfg: &PolicyConfig,
        groups: &[u8],
        waiting: &[(usize, usize, u64)],
    ) {
        if cfg.backpressure && slot.is_multiple_of(cfg.period.max(1)) {
            let (q1, q2) = self.group_queues(groups);
            let diff = q1 as f64 - q2 as f64;
            self.phase = if diff >= cfg.queue_limit {
                Phase::P1
            } else if -diff > cfg.queue_limit {
                Phase::P2
            } else {
                Phase::All
            };
            self.phase_timer = 0;
        } else {
            self.phase_timer += 1;
        }
        if cfg.locking && self.lock.is_none() {
            let worst = waiting
                .iter()
                .filter(|w| cfg.lock_a * (w.2 as f64).powf(cfg.lock_b) > cfg.lock_threshold)
                .max_by(|a, b| a.2.cmp(&b.2).then(b.0.cmp(&a.0)));
            if let Some(&(robot, path, _)) = worst {
                self.lock = Some(Lock { path, robot });
            }
        }
    }

    /// Rejection imposed by the lock or the phase, if any.
    pub fn gate(&self, robot: usize, path: usize, layout: &Layout) -> Option<Rejection> {
        if let Some(lock) = self.lock {
            if lock.robot == robot {
                return None;
            }
            if lock.path == path || layout.conflicts(lock.path, path) {
                return Some(Rejection::Lock);
            }
        }
        (!self.phase.admits(layout.groups[path])).then_some(Rejection::Phase)
    }

    /// Grants entry with lowest priority among conflicting accepted robots.
    pub fn accept(&mut self, robot: usize, path: usize, agents: &[Agent], layout: &Layout) {
        self.graph.add_vertex(robot);
        for &j in &self.accepted {
            if let Some(a) = index_of(agents, j) {
                if layout.conflicts(agents[a].path, path) {
                    self.graph.add_edge(j, robot).expect("new vertex has no edges");
                }
            }
        }
        self.accepted.insert(robot);
        self.queues[path] = self.queues[path].saturating_sub(1);
        self.last_accepted[path] = Some(robot);
        if self.lock.is_some_and(|l| l.robot == robot) {
            self.lock = None;
        }
    }

    pub fn remove(&mut self, robot: usize) {
        self.accepted.remove(&robot);
        self.graph.remove_vertex(robot);
        for l in &mut self.last_accepted {
            if *l == Some(robot) {
                *l = None;
            }
        }
        if self.lock.is_some_and(|l| l.robot == robot) {
            self.lock = None;
        }
    }
}

/// Full-throttle slots until position `target` is reached.
pub fn slots_to_reach(s: State, target: f64, lim: &RobotLimits) -> u64 {
    let mut cur = s;
    let mut k = 0;
    while cur.x < target && k < 100_000 {
        cur = slot_flow(cur, lim.u_max, Disturbance::default(), 1.0, lim);
        k += 1;
    }
    k
}

/// Constraints the requester would receive, winner first.
fn rival_constraints<'a>(
    req: &EntryRequest,
    me: usize,
    ctrl: &ControllerState,
    agents: &[Agent],
    layout: &'a Layout,
) -> Vec<Constraint<'a>> {
    let mut out = Vec::new();
    if let Some(lead) = leaders(agents)[me] {
        out.push(Constraint::oriented(lead, me, layout.follow(), true));
    }
    for &j in &ctrl.accepted {
        if let Some(a) = index_of(agents, j) {
            if let Some(cs) = layout.section(agents[a].path, req.path) {
                out.push(Constraint::oriented(a, me, cs, true));
            }
        }
    }
    out
}

/// Brake safety of the joint belief once the requester holds its new constraints.
fn validate(req: &EntryRequest, ctrl: &ControllerState, agents: &[Agent], layout: &Layout, checker: &Checker) -> bool {
    let Some(me) = index_of(agents, req.robot) else {
        return false;
    };
    let cons = rival_constraints(req, me, ctrl, agents, layout);
    let boxes: Vec<NdState> = agents.iter().map(|a| a.belief).collect();
    let limits: Vec<RobotLimits> = agents.iter().map(|a| a.limits).collect();
    is_brake_safe_nd(&boxes, &cons, &limits, checker, checker.guard)
}

/// Slot-count comparison against the last accepted robot of each crossing
/// path, followed by a brake-safety check of the resulting state.
pub fn process_request_heuristic(
    req: &EntryRequest,
    ctrl: &ControllerState,
    agents: &[Agent],
    layout: &Layout,
    checker: &Checker,
) -> std::result::Result<(), Rejection> {
    let Some(me) = index_of(agents, req.robot) else {
        return Err(Rejection::Policy);
    };
    let mine = req.state.mean();
    for q in 0..layout.len() {
        let Some(cs) = layout.section(req.path, q) else {
            continue;
        };
        let Some(j) = ctrl.last_accepted[q].and_then(|j| index_of(agents, j)) else {
            continue;
        };
        let tau_i = slots_to_reach(mine, cs.bounds_i.0, &agents[me].limits);
        let tau_j = slots_to_reach(agents[j].belief.mean(), cs.bounds_j.1, &agents[j].limits);
        if tau_i < tau_j {
            return Err(Rejection::Policy);
        }
    }
    if validate(req, ctrl, agents, layout, checker) {
        Ok(())
    } else {
        Err(Rejection::Validation)
    }
}

/// Closed-loop forecast of the accepted robots in the absence of newcomers.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Agent index of each forecast robot.
    members: Vec<usize>,
    /// `traj[m][k]`: state of member `m` after `k` slots.
    traj: Vec<Vec<State>>,
    horizon: usize,
}

impl Prediction {
    pub fn build(agents: &[Agent], ctrl: &ControllerState, layout: &Layout, checker: &Checker, horizon: usize) -> Self {
        let members: Vec<usize> = (0..agents.len()).filter(|&k| ctrl.accepted.contains(&agents[k].id)).collect();
        let local: Vec<Agent> = members.iter().map(|&k| agents[k].clone()).collect();
        let cons = active_constraints(&local, &ctrl.graph, layout);
        let limits: Vec<RobotLimits> = local.iter().map(|a| a.limits).collect();
        let mut cur: Vec<State> = local.iter().map(|a| a.belief.mean()).collect();
        let mut traj: Vec<Vec<State>> = cur.iter().map(|&s| vec![s]).collect();
        for _ in 0..horizon {
            let d = acceleration_law(&cur, &cons, &limits, checker);
            for (m, s) in cur.iter_mut().enumerate() {
                *s = slot_flow(*s, d[m].value(&limits[m]), Disturbance::default(), 1.0, &limits[m]);
                traj[m].push(*s);
            }
        }
        Prediction { members, traj, horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn state(&self, agent: usize, k: usize) -> Option<State> {
        let m = self.members.iter().position(|&a| a == agent)?;
        let t = &self.traj[m];
        Some(t[k.min(t.len() - 1)])
    }
}

/// Forecast slots needed to judge a request: until the requester clears its
/// conflict zone at full throttle, plus the stop horizon.
pub fn request_horizon(req: &EntryRequest, lim: &RobotLimits, layout: &Layout) -> usize {
    let target = layout.zone[req.path].1 + layout.diameter;
    slots_to_reach(req.state.mean(), target, lim) as usize + lim.stop_horizon()
}

/// Accepts iff the requester at constant full throttle stays brake safe, at
/// every forecast slot, against every accepted robot it would yield to.
pub fn process_request_exact(
    req: &EntryRequest,
    ctrl: &ControllerState,
    agents: &[Agent],
    layout: &Layout,
    checker: &Checker,
    pred: &mut Prediction,
) -> std::result::Result<(), Rejection> {
    let Some(me) = index_of(agents, req.robot) else {
        return Err(Rejection::Policy);
    };
    let lim = agents[me].limits;
    let cons = rival_constraints(req, me, ctrl, agents, layout);
    let h = lim.stop_horizon().max(cons.iter().map(|c| agents[c.winner].limits.stop_horizon()).max().unwrap_or(0));
    let m = checker.substeps;
    let mut s = req.state.mean();
    let mut mine = vec![s];
    for k in 0..=pred.horizon {
        let reach = stop_position(s, &lim);
        let mut imp: Option<Vec<f64>> = None;
        for c in &cons {
            let Some(w) = pred.state(c.winner, k) else {
                continue;
            };
            let wl = agents[c.winner].limits;
            if c.clear_by_bounds(w.x, reach, checker.guard) {
                continue;
            }
            let brake = sample_flow(w, wl.u_min, wl.u_min, Disturbance::default(), h, m, &wl);
            let imp =
                imp.get_or_insert_with(|| sample_flow(s, lim.u_max, lim.u_min, Disturbance::default(), h, m, &lim));
            if !c.staggered_clear(&brake, imp, checker.guard) {
                return Err(Rejection::Policy);
            }
        }
        s = slot_flow(s, lim.u_max, Disturbance::default(), 1.0, &lim);
        mine.push(s);
    }
    if !validate(req, ctrl, agents, layout, checker) {
        return Err(Rejection::Validation);
    }
    pred.members.push(me);
    pred.traj.push(mine);
    Ok(())
}
