import math

import numpy as np
import pytest
from scipy.integrate import quad

from zdaguard.discretize import assemble_stacked, hold_integral, matrix_exponential
from zdaguard.model import SamplingConfig, Topology, build_double_integrator_network, build_matrix_model

from conftest import random_stable


def taylor_expm(A, terms=200):
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


class TestMatrixExponential:
    def test_zero_time(self, rng):
        assert np.array_equal(matrix_exponential(rng.normal(size=(3, 3)), 0.0), np.eye(3))

    def test_diagonal(self):
        E = matrix_exponential(np.diag([math.log(2.0), 0.0]), 1.0)
        assert np.allclose(E, np.diag([2.0, 1.0]), atol=1e-15, rtol=1e-14)

    def test_taylor_oracle(self, rng):
        for _ in range(10):
            A = random_stable(rng, 4)
            assert np.max(np.abs(matrix_exponential(A, 1.0) - taylor_expm(A))) < 1e-10

    @pytest.mark.parametrize("scale", [1e-4, 0.05, 0.5, 2.0, 8.0, 40.0])
    def test_all_pade_orders_relative_error(self, rng, scale):
        # Taylor on a scaled-down copy, squared back up, as an independent oracle
        A = rng.normal(size=(5, 5)) * scale / 5
        s = max(0, math.ceil(math.log2(max(np.linalg.norm(A, 1), 1e-300)) + 4))
        ref = taylor_expm(A / 2**s, 40)
        for _ in range(s):
            ref = ref @ ref
        got = matrix_exponential(A)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-12 * max(1, 2**s / 64)

    def test_semigroup(self, rng):
        for _ in range(20):
            A = rng.normal(size=(5, 5)) * 0.5
            s, t = rng.uniform(0, 1, 2)
            lhs = matrix_exponential(A, s + t)
            rhs = matrix_exponential(A, s) @ matrix_exponential(A, t)
            assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1, np.abs(lhs).max())

    def test_non_finite(self):
        with pytest.raises(ValueError):
            matrix_exponential(np.array([[np.nan]]))
        with pytest.raises(ValueError):
            matrix_exponential(np.eye(2), -1.0)


class TestHoldIntegral:
    def test_zero_a_contained(self):
        H = hold_integral(np.zeros((3, 3)), 0.0, 1.0, 0.25, 0.5)
        assert np.allclose(H, 0.5 * np.eye(3), atol=1e-15)

    def test_disjoint(self):
        H = hold_integral(np.eye(2), 0.0, 1.0, 1.0, 0.5)
        assert np.array_equal(H, np.zeros((2, 2)))

    @pytest.mark.parametrize("a", [-1.3, 0.7, 2.0])
    @pytest.mark.parametrize("window", [(-0.3, 0.5), (0.6, 0.8), (0.2, 0.3)])
    def test_scalar_quadrature(self, a, window):
        t_l, dt_u = window
        t_k, t_k1 = 0.0, 1.0
        lo, hi = max(t_k, t_l), min(t_k1, t_l + dt_u)
        ref, _ = quad(lambda tau: math.exp(a * (t_k1 - tau)), lo, hi, epsabs=1e-13, epsrel=1e-13)
        got = hold_integral(np.array([[a]]), t_k, t_k1, t_l, dt_u)[0, 0]
        assert abs(got - ref) < 1e-10

    def test_t_k1_must_exceed(self):
        with pytest.raises(ValueError):
            hold_integral(np.eye(1), 1.0, 1.0, 0.0, 1.0)


def rk4_held(A, B, x0, u, dt_u, t_F, h):
    """Integrate x' = Ax + B u(t) with piecewise constant held inputs."""
    n_steps = int(round(t_F / h))
    x = x0.copy()
    states = {0: x.copy()}
    for i in range(n_steps):
        t = i * h
        ell = min(int(math.floor(t / dt_u + 1e-9)), len(u) - 1)
        f = lambda z: A @ z + B @ u[ell]
        k1 = f(x)
        k2 = f(x + h / 2 * k1)
        k3 = f(x + h / 2 * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        states[i + 1] = x.copy()
    return states


class TestAssembly:
    def test_k1_structure(self, rng):
        A = random_stable(rng, 3)
        m = build_matrix_model(A, rng.normal(size=(3, 2)), rng.normal(size=(1, 3)))
        ops = assemble_stacked(m, SamplingConfig(1, 1, 1))
        assert np.array_equal(ops.A_stack[:3], np.eye(3))
        assert np.allclose(ops.A_stack[3:], matrix_exponential(A, 1.0), atol=0)
        assert np.all(ops.B_stack[:3] == 0)

    def test_block_structure(self, rng):
        m = build_matrix_model(random_stable(rng, 3), rng.normal(size=(3, 2)), rng.normal(size=(2, 3)))
        ops = assemble_stacked(m, SamplingConfig("0.3", "0.5", "2"))
        assert ops.A_stack.shape == (3 * 5, 3)
        assert ops.B_stack.shape == (15, 2 * (ops.L + 1))
        assert np.all(ops.B_stack[:3] == 0)
        mask = np.kron(np.eye(5), np.ones((2, 3)))
        assert np.all(ops.C_stack[mask == 0] == 0)
        for k, E in enumerate(ops.selectors):
            assert np.array_equal(E @ np.arange(15.0), np.arange(15.0)[3 * k : 3 * k + 3])

    def test_euler_exact_zero_a(self, rng):
        B = rng.normal(size=(2, 1))
        m = build_matrix_model(np.zeros((2, 2)), B, np.eye(2))
        ops = assemble_stacked(m, SamplingConfig("0.5", "0.5", "2"))
        u = np.zeros((ops.L + 1, 1))
        u[0] = 1.0
        x = np.zeros(2)
        traj = [x]
        for k in range(ops.K):
            x = x + (B @ u[k]) * 0.5
            traj.append(x)
        assert np.allclose(ops.propagate(np.zeros(2), u), np.array(traj), atol=1e-10)

    @pytest.mark.parametrize("dt_u,dt_y", [("0.5", "1"), ("0.3", "0.2"), ("0.25", "0.25"), ("0.4", "0.3")])
    def test_rk4_trajectory(self, rng, dt_u, dt_y):
        A = random_stable(rng, 3)
        B = rng.normal(size=(3, 2))
        m = build_matrix_model(A, B, np.eye(3))
        s = SamplingConfig(dt_u, dt_y, "1.2")
        ops = assemble_stacked(m, s)
        x0 = rng.normal(size=3)
        u = rng.normal(size=(ops.L + 1, 2))
        xs = ops.propagate(x0, u)
        h = float(s.dt_y) / 1000
        # the grid is fine enough to hit every hold boundary
        h = 1e-4 if float(s.dt_u) % h > 1e-12 else h
        ref = rk4_held(A, B, x0, u, float(s.dt_u), float(s.t_y(ops.K)), h)
        for k in range(ops.K + 1):
            idx = int(round(float(s.t_y(k)) / h))
            assert np.max(np.abs(xs[k] - ref[idx])) < 1e-6

    def test_synchronous_single_block(self, rng):
        m = build_matrix_model(random_stable(rng, 3), rng.normal(size=(3, 1)), np.eye(3))
        ops = assemble_stacked(m, SamplingConfig(1, 1, 4))
        for k in range(ops.K):
            assert list(ops.input_blocks[k]) == [k]

    def test_active_mask(self):
        m = build_matrix_model(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
        ops = assemble_stacked(m, SamplingConfig("0.5", "1", "2"))
        assert ops.active.tolist() == [True, True, True, True, False]
        col = ops.B_stack[:, ~ops.active]
        assert np.all(col == 0)

    def test_schedule_switches_measurements(self):
        t1 = Topology.from_edges(3, [(0, 1), (1, 2)])
        t2 = Topology.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        m = build_double_integrator_network(3, 1)
        ops = assemble_stacked(m, SamplingConfig(1, 1, 2), [t1, t2, t1])
        assert ops.output_dims == (4, 5, 4)
        assert ops.C_stack.shape == (13, 18)

    def test_schedule_length_mismatch(self):
        m = build_double_integrator_network(2, 1, Topology.from_edges(2, [(0, 1)]))
        with pytest.raises(ValueError):
            assemble_stacked(m, SamplingConfig(1, 1, 2), [m.default_topology] * 2)
