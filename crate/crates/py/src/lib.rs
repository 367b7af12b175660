//! Python bindings for the coordination library.

use std::path::PathBuf;

use prio_core::oracle::{self, Instance as CoreInstance};
use prio_core::priority::{self, PriorityGraph as CoreGraph};
use prio_core::scenario::{PolicyName, Scenario as CoreScenario};
use prio_core::simulator::{self, RunMetrics as CoreMetrics, Simulation as CoreSimulation};
use prio_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidGraph(_) | Error::InvalidGeometry(_) | Error::InvalidLimits(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreScenario::from_toml(text).map(|inner| Scenario { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreScenario::load(&path).map(|inner| Scenario { inner }).map_err(err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn slots(&self) -> u64 {
        self.inner.slots
    }

    #[setter]
    fn set_slots(&mut self, slots: u64) {
        self.inner.slots = slots;
    }

    #[getter]
    fn arrival_rate(&self) -> f64 {
        self.inner.arrival_rate
    }

    /// Sets the rate on every path, dropping per-path overrides.
    #[setter]
    fn set_arrival_rate(&mut self, rate: f64) -> PyResult<()> {
        let mut s = self.inner.clone();
        s.arrival_rate = rate;
        for p in &mut s.paths {
            p.rate = None;
        }
        s.validate().map_err(err)?;
        self.inner = s;
        Ok(())
    }

    #[getter]
    fn policy(&self) -> &'static str {
        match self.inner.policy.kind {
            PolicyName::Exact => "exact",
            PolicyName::Heuristic => "heuristic",
        }
    }

    #[setter]
    fn set_policy(&mut self, name: &str) -> PyResult<()> {
        self.inner.policy.kind = name.parse().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn backpressure(&self) -> bool {
        self.inner.policy.backpressure
    }

    #[setter]
    fn set_backpressure(&mut self, on: bool) {
        self.inner.policy.backpressure = on;
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.paths.len()
    }

    fn run(&self) -> PyResult<RunMetrics> {
        simulator::run(&self.inner).map(|inner| RunMetrics { inner }).map_err(err)
    }
}

#[pyclass(name = "RunMetrics", frozen)]
struct RunMetrics {
    inner: CoreMetrics,
}

#[pymethods]
impl RunMetrics {
    #[getter]
    fn slots_run(&self) -> u64 {
        self.inner.slots_run
    }
    #[getter]
    fn queue(&self) -> Vec<usize> {
        self.inner.queue.clone()
    }
    #[getter]
    fn collisions(&self) -> u64 {
        self.inner.collisions
    }
    #[getter]
    fn violations(&self) -> u64 {
        self.inner.violations
    }
    #[getter]
    fn box_entries(&self) -> u64 {
        self.inner.box_entries
    }
    #[getter]
    fn box_escapes(&self) -> u64 {
        self.inner.box_escapes
    }
    #[getter]
    fn spawned(&self) -> u64 {
        self.inner.spawned
    }
    #[getter]
    fn accepted(&self) -> u64 {
        self.inner.accepted
    }
    #[getter]
    fn exited(&self) -> u64 {
        self.inner.exited
    }
    #[getter]
    fn remaining(&self) -> usize {
        self.inner.remaining
    }
    #[getter]
    fn digest(&self) -> u64 {
        self.inner.digest
    }
    #[getter]
    fn breach(&self) -> Option<String> {
        self.inner.breach.clone()
    }
    fn throttle_hold(&self) -> f64 {
        self.inner.throttle_hold()
    }
    fn mean_time_in_system(&self) -> f64 {
        self.inner.mean_time_in_system()
    }
    fn is_clean(&self) -> bool {
        self.inner.is_clean()
    }
    fn summary(&self) -> Vec<(&'static str, String)> {
        self.inner.summary()
    }
    fn __repr__(&self) -> String {
        format!(
            "RunMetrics(slots_run={}, spawned={}, exited={}, collisions={}, violations={})",
            self.inner.slots_run, self.inner.spawned, self.inner.exited, self.inner.collisions, self.inner.violations
        )
    }
}

/// Slot-by-slot stepping of a scenario.
#[pyclass(name = "Simulation", unsendable)]
struct Simulation {
    inner: CoreSimulation,
}

#[pymethods]
impl Simulation {
    #[new]
    fn new(scenario: &Scenario) -> PyResult<Self> {
        CoreSimulation::new(&scenario.inner).map(|inner| Simulation { inner }).map_err(err)
    }

    /// Advances one slot; returns false once the run has halted on a breach.
    fn step(&mut self) -> PyResult<bool> {
        self.inner.step().map_err(err)
    }

    #[getter]
    fn slot(&self) -> u64 {
        self.inner.slot()
    }

    /// `(id, path, x, v, accepted)` per robot in the system.
    fn robots(&self) -> Vec<(usize, usize, f64, f64, bool)> {
        self.inner.agents().iter().zip(self.inner.truths()).map(|(a, s)| (a.id, a.path, s.x, s.v, a.accepted)).collect()
    }

    fn queues(&self) -> Vec<usize> {
        self.inner.controller().queues.clone()
    }

    fn phase(&self) -> &'static str {
        self.inner.controller().phase.as_str()
    }

    fn priority_edges(&self) -> Vec<(usize, usize)> {
        self.inner.controller().graph.edges().collect()
    }

    fn metrics(&self) -> RunMetrics {
        RunMetrics { inner: self.inner.snapshot() }
    }
}

#[pyclass(name = "PriorityGraph", from_py_object)]
#[derive(Clone)]
struct PriorityGraph {
    inner: CoreGraph,
}

#[pymethods]
impl PriorityGraph {
    #[new]
    fn new(vertices: Vec<usize>, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        let mut g = CoreGraph::new(vertices);
        for (i, j) in edges {
            g.add_edge(i, j).map_err(err)?;
        }
        Ok(PriorityGraph { inner: g })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreGraph::parse(text).map(|inner| PriorityGraph { inner }).map_err(err)
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn vertices(&self) -> Vec<usize> {
        self.inner.vertices().collect()
    }

    fn is_acyclic(&self) -> bool {
        self.inner.is_acyclic()
    }

    fn topological_order(&self) -> Option<Vec<usize>> {
        self.inner.topological_order()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Straight paths with one robot each.
#[pyclass(name = "Instance", from_py_object)]
#[derive(Clone)]
struct Instance {
    inner: CoreInstance,
}

#[pymethods]
impl Instance {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreInstance::from_toml(text).map(|inner| Instance { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreInstance::load(&path).map(|inner| Instance { inner }).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Returns `(feasible, margin, witness_cycle)`.
    fn feasibility(&self, graph: &PriorityGraph) -> PyResult<(bool, f64, Option<Vec<usize>>)> {
        let r = priority::feasibility_and_margin(&graph.inner, &self.inner.sections().map_err(err)?).map_err(err)?;
        Ok((r.feasible, r.margin, r.witness_cycle))
    }

    /// Samples of the closed-loop path under the velocity law.
    fn closed_loop_path(&self, graph: &PriorityGraph, max_slots: usize) -> PyResult<Vec<Vec<f64>>> {
        oracle::closed_loop_path(&self.inner, &graph.inner, max_slots).map(|p| p.samples().to_vec()).map_err(err)
    }

    /// Priority graph induced by a sampled path.
    fn induce(&self, samples: Vec<Vec<f64>>) -> PyResult<PriorityGraph> {
        let path = priority::DiscretizedPath::new(samples).map_err(err)?;
        priority::induce_priority_graph(&path, &self.inner.sections().map_err(err)?)
            .map(|inner| PriorityGraph { inner })
            .map_err(err)
    }

    /// True when no admissible binary control beats the velocity law.
    #[pyo3(signature = (graph, horizon = 12))]
    fn oracle_optimality(&self, graph: &PriorityGraph, horizon: usize) -> PyResult<bool> {
        oracle::oracle_optimality(&self.inner, &graph.inner, horizon).map(|r| r.passed()).map_err(err)
    }

    /// Returns `(library_feasible, grid_feasible)`.
    #[pyo3(signature = (graph, grid = 48))]
    fn oracle_feasibility(&self, graph: &PriorityGraph, grid: usize) -> PyResult<(bool, bool)> {
        oracle::oracle_feasibility(&graph.inner, &self.inner.sections().map_err(err)?, grid)
            .map(|r| (r.library.feasible, r.oracle_feasible))
            .map_err(err)
    }
}

#[pymodule]
fn prio_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<RunMetrics>()?;
    m.add_class::<Simulation>()?;
    m.add_class::<PriorityGraph>()?;
    m.add_class::<Instance>()?;
    m.add("TRACE_HEADER", simulator::TRACE_HEADER)?;
    Ok(())
}
