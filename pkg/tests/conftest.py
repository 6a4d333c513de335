import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_stable(rng, n, radius=0.9):
    A = rng.normal(size=(n, n))
    return A * radius / max(1e-12, np.max(np.abs(np.linalg.eigvals(A))))


def random_connected(rng, n, p=0.5):
    from zdaguard.model import Topology

    while True:
        upper = np.triu(rng.random((n, n)) < p, 1)
        topo = Topology(upper | upper.T)
        if topo.is_connected():
            return topo


def desk_instances(rng, count, n_topos=3, n_agents=4):
    """Feasible 1-D consensus instances with ``n_topos`` random connected topologies per step."""
    from zdaguard.model import SamplingConfig, build_double_integrator_network
    from zdaguard.switching import NoFeasibleSequence, SwitchingInstance, brute_force_select

    model = build_double_integrator_network(n_agents, 1)
    sampling = SamplingConfig(1, 1, 2)
    out = []
    while len(out) < count:
        steps = [[random_connected(rng, n_agents) for _ in range(n_topos)] for _ in range(3)]
        inst = SwitchingInstance.from_topologies(model, sampling, steps, gain_policy="consensus")
        try:
            brute = brute_force_select(inst)
        except NoFeasibleSequence:
            continue
        out.append((inst, brute))
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
