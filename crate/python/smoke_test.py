"""Smoke test for the prio_py extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

from pathlib import Path

import prio_py

ROOT = Path(__file__).resolve().parent.parent


def check_simulation():
    sc = prio_py.Scenario.load(ROOT / "scenarios" / "eight_path.toml")
    sc.slots = 400
    sc.seed = 3
    m = sc.run()
    assert m.is_clean(), m.breach
    assert m.slots_run == 400 and len(m.queue) == 400
    assert m.throttle_hold() >= 0.99
    assert sc.run().digest == m.digest

    sim = prio_py.Simulation(sc)
    for _ in range(sc.slots):
        assert sim.step()
    assert sim.slot == 400
    assert sim.metrics().digest == m.digest
    for rid, path, x, v, accepted in sim.robots():
        assert 0 <= path < sc.n_paths and v >= 0.0

    try:
        sc.arrival_rate = 1.5
    except ValueError as e:
        assert "arrival_rate" in str(e)
    else:
        raise AssertionError("rate above one accepted")
    print("simulation", m)


def check_priorities():
    tri = prio_py.Instance.load(ROOT / "instances" / "triangle.toml")
    acyclic = prio_py.PriorityGraph.parse((ROOT / "instances" / "acyclic_triple.graph").read_text())
    deadlock = prio_py.PriorityGraph([0, 1, 2], [(0, 1), (1, 2), (2, 0)])
    feasible, margin, _ = tri.feasibility(acyclic)
    assert feasible and margin > 0
    feasible, _, cycle = tri.feasibility(deadlock)
    assert not feasible and sorted(cycle) == [0, 1, 2]
    assert tri.oracle_feasibility(deadlock, 32) == (False, False)

    samples = tri.closed_loop_path(acyclic, 4000)
    assert tri.induce(samples) == acyclic
    assert tri.oracle_optimality(acyclic, 8)
    print("priorities ok, margin", margin)


if __name__ == "__main__":
    check_simulation()
    check_priorities()
    print("smoke test passed")
