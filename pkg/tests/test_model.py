import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zdaguard.model import (
    SamplingConfig,
    Scenario,
    Topology,
    TopologySet,
    build_cartpole,
    build_double_integrator_network,
    enumerate_feasible_topologies,
    sample_feasible_topologies,
)


def path(n):
    return Topology.from_edges(n, [(i, i + 1) for i in range(n - 1)])


class TestTopology:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            Topology([[0, 2], [2, 0]])

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            Topology([[1, 0], [0, 0]])

    def test_rejects_asymmetric_when_undirected(self):
        with pytest.raises(ValueError):
            Topology([[0, 1], [0, 0]])
        Topology([[0, 1], [0, 0]], undirected=False)

    def test_edges_sorted_and_density(self):
        t = Topology.from_edges(4, [(2, 1), (0, 3)])
        assert t.edges() == [(0, 3), (1, 2)]
        assert t.density == pytest.approx(2 / 6)
        assert not t.is_connected()
        assert path(4).is_connected()

    def test_hash_equality(self):
        assert path(3) == Topology.from_edges(3, [(1, 2), (0, 1)])
        assert len({path(3), path(3)}) == 1

    def test_topology_set_density_cap(self):
        tri = Topology.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        with pytest.raises(ValueError):
            TopologySet(((tri,),), density_cap=0.5)
        assert TopologySet(((path(3), tri),), density_cap=1.0).n_sequences() == 2


class TestSampling:
    def test_horizons_and_exact_times(self):
        s = SamplingConfig("0.1", "0.3", "0.9")
        assert (s.K, s.L) == (3, 9)
        assert s.t_u(3) == s.t_y(1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            SamplingConfig(0, 1, 2)
        with pytest.raises(ValueError):
            SamplingConfig(1, 2, 1)

    def test_scenario_noise_nonnegative(self):
        m = build_cartpole()
        with pytest.raises(ValueError):
            Scenario(m, SamplingConfig(1, 1, 2), TopologySet(((),)), process_std=-1)

    def test_scenario_rng_deterministic(self):
        m = build_cartpole()
        sc = Scenario(m, SamplingConfig(1, 1, 2), TopologySet(((),)), seed=7)
        assert np.array_equal(sc.rng(1).normal(size=5), sc.rng(1).normal(size=5))


class TestDoubleIntegrator:
    def test_six_agent_dimensions(self):
        topo = Topology.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)])
        m = build_double_integrator_network(6, 3, topo)
        A, B, C = m.matrices(topo)
        assert (m.p, m.q) == (36, 18)
        # leader contributes absolute position and velocity rows
        assert C.shape[0] == 3 * topo.n_edges + 6

    def test_two_agent_canonical(self):
        topo = Topology.from_edges(2, [(0, 1)])
        A, B, C = build_double_integrator_network(2, 1, topo).matrices(topo)
        expected = np.array([[0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0]])
        assert np.array_equal(A, expected)
        assert np.array_equal(B, np.array([[0, 0], [1, 0], [0, 0], [0, 1]]))

    def test_edge_row_is_relative(self):
        topo = Topology.from_edges(2, [(0, 1)])
        m = build_double_integrator_network(2, 1, topo, lookahead=0.5)
        C = m.matrices(topo)[2]
        assert np.allclose(C[2], [1, 0.5, -1, -0.5])
        # common translation of both agents is invisible to the edge row
        assert C[2] @ np.array([1.0, 0, 1.0, 0]) == 0

    def test_edgeless_without_leader(self):
        topo = Topology.empty(3)
        m = build_double_integrator_network(3, 2, topo, leader_measured=False)
        assert m.output_dim(topo) == 0

    def test_topology_mismatch(self):
        with pytest.raises(ValueError):
            build_double_integrator_network(3, 1, path(4))
        with pytest.raises(ValueError):
            build_double_integrator_network(3, 4)

    def test_a_is_topology_independent(self):
        pos = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)
        topos = enumerate_feasible_topologies(pos, 1.5, 1.0)
        m = build_double_integrator_network(4, 2)
        As = {m.matrices(t)[0].tobytes() for t in topos}
        assert len(As) == 1
        for t in topos:
            A, B, C = m.matrices(t)
            assert A.shape == (16, 16) and B.shape == (16, 8) and C.shape[1] == 16


class TestCartpole:
    def test_dimensions_and_instability(self):
        m = build_cartpole()
        A, B, C = m.matrices()
        assert (m.p, m.q, C.shape[0]) == (4, 1, 1)
        assert np.max(np.linalg.eigvals(A).real) > 0
        assert np.all(C @ np.zeros(4) == 0)


def brute_force_connected(n, edges):
    found = set()
    for m in range(len(edges) + 1):
        for sub in itertools.combinations(edges, m):
            adj = np.zeros((n, n), int)
            for i, j in sub:
                adj[i, j] = adj[j, i] = 1
            # connectivity via matrix powers
            reach = np.linalg.matrix_power(adj + np.eye(n, dtype=int), n)
            if np.all(reach > 0):
                found.add(adj.tobytes())
    return found


class TestEnumeration:
    def test_two_agents(self):
        out = enumerate_feasible_topologies([[0.0], [1.0]], 2.0, 1.0)
        assert out == (Topology.from_edges(2, [(0, 1)]),)

    def test_three_agents_all_in_range(self):
        out = enumerate_feasible_topologies([[0, 0], [1, 0], [0, 1]], 2.0, 1.0)
        assert len(out) == 4

    def test_out_of_range_empty(self):
        assert enumerate_feasible_topologies([[0.0], [5.0]], 1.0, 1.0) == ()

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            enumerate_feasible_topologies([[0.0], [1.0]], 0.0, 1.0)

    def test_lexicographic(self):
        out = enumerate_feasible_topologies(np.eye(4), 2.0, 1.0)
        keys = [t.flat_key() for t in out]
        assert keys == sorted(keys)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.5, 1.0))
    def test_matches_brute_force_and_permutation(self, seed, cap):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(0, 2, size=(5, 2))
        out = enumerate_feasible_topologies(pos, 1.2, cap)
        edges = [(i, j) for i, j in itertools.combinations(range(5), 2)
                 if np.linalg.norm(pos[i] - pos[j]) <= 1.2]
        oracle = {
            b for b in brute_force_connected(5, edges)
            if np.frombuffer(b, dtype=int).sum() / 2 <= cap * 10 + 1e-9
        }
        got = {t.adjacency.astype(int).tobytes() for t in out}
        assert got == oracle
        # relabelling agents permutes the result set consistently
        perm = rng.permutation(5)
        out_p = enumerate_feasible_topologies(pos[perm], 1.2, cap)
        inv = np.argsort(perm)
        back = {Topology(t.adjacency[np.ix_(inv, inv)]) for t in out_p}
        assert back == set(out)

    def test_size_limit(self):
        pos = np.zeros((12, 2))
        with pytest.raises(ValueError):
            enumerate_feasible_topologies(pos, 1.0, 1.0, max_candidates=1000)

    def test_sampling_connected_and_capped(self, rng):
        pos = rng.uniform(0, 3, size=(18, 2))
        out = sample_feasible_topologies(pos, 2.5, 0.4, 10, rng)
        assert out
        for t in out:
            assert t.is_connected() and t.density <= 0.4 + 1e-12
