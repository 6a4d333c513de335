import numpy as np
import pytest
from scipy.optimize import minimize

from zdaguard.discretize import assemble_stacked
from zdaguard.metrics import (
    compute_metrics,
    controllability_metric,
    minimum_energy_cost,
    observability_metric,
    robustness_metric,
    sensitivity_metric,
    symmetric_extreme_eigen,
)
from zdaguard.model import SamplingConfig, Topology, build_double_integrator_network, build_matrix_model

from conftest import random_stable


def jacobi_eigenvalues(M, tol=1e-13):
    A = M.copy()
    n = A.shape[0]
    for _ in range(200):
        off = np.sqrt(np.sum(A**2) - np.sum(np.diag(A) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1)) if theta else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


class TestExtremeEigen:
    def test_identity(self):
        r = symmetric_extreme_eigen(np.eye(3), "max")
        assert r.value == pytest.approx(1.0) and np.linalg.norm(r.vector) == pytest.approx(1.0)

    def test_diag(self):
        r = symmetric_extreme_eigen(np.diag([3.0, 1.0, 2.0]), "min")
        assert r.value == pytest.approx(1.0)
        assert abs(abs(r.vector[1]) - 1) < 1e-12

    def test_jacobi_oracle(self, rng):
        for _ in range(5):
            X = rng.normal(size=(8, 8))
            M = X + X.T
            ref = jacobi_eigenvalues(M)
            lo, hi = symmetric_extreme_eigen(M, "min"), symmetric_extreme_eigen(M, "max")
            assert abs(lo.value - ref[0]) < 1e-9 and abs(hi.value - ref[-1]) < 1e-9
            for r in (lo, hi):
                assert np.linalg.norm(M @ r.vector - r.value * r.vector) <= 1e-9 * np.linalg.norm(M, 2)

    def test_rejects_asymmetric_and_nan(self):
        with pytest.raises(ValueError):
            symmetric_extreme_eigen(np.array([[0, 1.0], [0, 0]]))
        with pytest.raises(ValueError):
            symmetric_extreme_eigen(np.array([[np.inf]]))

    def test_tiny_symmetry_defect_accepted(self):
        M = np.array([[1.0, 2.0], [2.0 + 1e-12, 1.0]])
        assert symmetric_extreme_eigen(M, "max").value == pytest.approx(3.0)

    def test_clamp_flag(self):
        r = symmetric_extreme_eigen(np.diag([1e-14, 1.0]), "min")
        assert r.value == 0.0 and r.clamped


def small_ops(rng, dt_u="1", dt_y="1", t_F="2", p=2, q=1, r=1):
    A = random_stable(rng, p)
    B = rng.normal(size=(p, q))
    C = rng.normal(size=(r, p))
    return assemble_stacked(build_matrix_model(A, B, C), SamplingConfig(dt_u, dt_y, t_F)), (A, B, C)


class TestControllability:
    def test_identity_rows(self):
        # A = 0, B = I, one unit-length step: terminal map is exactly I
        ops = assemble_stacked(build_matrix_model(np.zeros((2, 2)), np.eye(2), np.eye(2)), SamplingConfig(1, 1, 1))
        assert controllability_metric(ops).value == pytest.approx(1.0, abs=1e-14)

    def test_actuatorless_agent(self):
        topo = Topology.from_edges(2, [(0, 1)])
        base = build_double_integrator_network(2, 1, topo)
        A, B, C = base.matrices(topo)
        B = B.copy()
        B[:, 1] = 0
        ops = assemble_stacked(build_matrix_model(A, B, C), SamplingConfig(1, 1, 3))
        assert controllability_metric(ops).value <= 1e-10

    def test_min_energy_oracle(self, rng):
        ops, _ = small_ops(rng, t_F="2", p=2, q=1)
        BK = ops.B_last
        xs, xf = rng.normal(size=2), rng.normal(size=2)
        d = xf - ops.A_stack[ops.state_rows(ops.K)] @ xs
        res = minimize(lambda u: u @ u, np.zeros(BK.shape[1]), jac=lambda u: 2 * u,
                       constraints={"type": "eq", "fun": lambda u: BK @ u - d, "jac": lambda u: BK},
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
        lsq = np.linalg.lstsq(BK, d, rcond=None)[0]
        got = minimum_energy_cost(ops, xs, xf)
        assert abs(got - lsq @ lsq) < 1e-8
        assert abs(got - res.fun) < 1e-6

    def test_min_energy_singular_reported(self):
        A = np.zeros((2, 2))
        ops = assemble_stacked(build_matrix_model(A, np.array([[1.0], [0.0]]), np.eye(2)), SamplingConfig(1, 1, 2))
        assert controllability_metric(ops).value == 0.0
        assert minimum_energy_cost(ops, np.zeros(2), np.ones(2)) is None

    def test_synchronous_gramian(self, rng):
        A = random_stable(rng, 3)
        B = rng.normal(size=(3, 2))
        ops = assemble_stacked(build_matrix_model(A, B, np.eye(3)), SamplingConfig(1, 1, 4))
        S = ops.S[0]
        Bd = ops.input_blocks[0][0]
        W = sum(np.linalg.matrix_power(S, j) @ Bd @ Bd.T @ np.linalg.matrix_power(S, j).T for j in range(4))
        assert abs(controllability_metric(ops).value - np.linalg.eigvalsh(W)[0]) < 1e-10


class TestObservability:
    def test_identity_output(self, rng):
        ops = assemble_stacked(build_matrix_model(random_stable(rng, 3), np.ones((3, 1)), np.eye(3)), SamplingConfig(1, 1, 2))
        assert observability_metric(ops).value > 0

    def test_zero_output(self, rng):
        ops = assemble_stacked(build_matrix_model(random_stable(rng, 3), np.ones((3, 1)), np.zeros((1, 3))), SamplingConfig(1, 1, 2))
        assert observability_metric(ops).value == 0

    def test_recursive_gramian(self, rng):
        A = random_stable(rng, 3)
        C = rng.normal(size=(1, 3))
        ops = assemble_stacked(build_matrix_model(A, np.ones((3, 1)), C), SamplingConfig("0.5", "0.5", "3"))
        Phi = np.eye(3)
        W = np.zeros((3, 3))
        for k in range(ops.K + 1):
            W += Phi.T @ C.T @ C @ Phi
            if k < ops.K:
                Phi = ops.S[k] @ Phi
        assert abs(observability_metric(ops).value - np.linalg.eigvalsh(W)[0]) < 1e-10

    def test_monotone_in_horizon(self, rng):
        A = random_stable(rng, 3)
        C = rng.normal(size=(1, 3))
        m = build_matrix_model(A, np.ones((3, 1)), C)
        short = assemble_stacked(m, SamplingConfig(1, 1, 2))
        long = assemble_stacked(m, SamplingConfig(1, 1, 3))
        for _ in range(50):
            x = rng.normal(size=3)
            a = np.linalg.norm(short.C_stack @ short.A_stack @ x)
            b = np.linalg.norm(long.C_stack @ long.A_stack @ x)
            assert b >= a - 1e-12


class TestRobustnessSensitivity:
    def test_no_input_identity(self):
        ops = assemble_stacked(build_matrix_model(np.zeros((2, 2)), np.zeros((2, 1)), np.eye(2)), SamplingConfig(1, 1, 1))
        E = np.hstack([np.vstack([np.eye(2), np.zeros((2, 2))]), ops.B_active])
        assert robustness_metric(ops, E=E).value == pytest.approx(1.0)

    def test_rayleigh_bound(self, rng):
        ops, _ = small_ops(rng, "0.5", "1", "3", p=3, q=2, r=2)
        r = robustness_metric(ops)
        E = ops.E
        for _ in range(100):
            z = rng.normal(size=E.shape[1])
            z /= np.linalg.norm(z)
            assert np.sum((E @ z) ** 2) <= r.value + 1e-9
        assert abs(np.sum((E @ r.vector) ** 2) - r.value) < 1e-9

    def test_scaling(self, rng):
        ops, _ = small_ops(rng, p=3, q=2)
        Q = np.diag(rng.uniform(0.5, 2.0, ops.E.shape[0]))
        assert robustness_metric(ops, 3.7 * Q).value == pytest.approx(3.7 * robustness_metric(ops, Q).value, rel=1e-10)

    def test_rejects_indefinite_weight(self, rng):
        ops, _ = small_ops(rng)
        Q = -np.eye(ops.E.shape[0])
        with pytest.raises(ValueError):
            robustness_metric(ops, Q)

    def test_sensitivity_zero_output(self, rng):
        ops = assemble_stacked(build_matrix_model(random_stable(rng, 2), np.ones((2, 1)), np.zeros((1, 2))), SamplingConfig(1, 1, 2))
        assert sensitivity_metric(ops).value == 0

    def test_sensitivity_no_attack_channel(self, rng):
        ops = assemble_stacked(build_matrix_model(random_stable(rng, 2), np.zeros((2, 1)), np.eye(2)), SamplingConfig(1, 1, 2))
        E = ops.A_stack
        val = sensitivity_metric(ops, E=E).value
        assert val > 0 and abs(val - np.linalg.eigvalsh(E.T @ E)[0]) < 1e-12

    def test_sensitivity_svd(self, rng):
        ops, _ = small_ops(rng, "0.5", "1", "3", p=3, q=1, r=2)
        sv = np.linalg.svd(ops.C_stack @ ops.E, compute_uv=False)
        smin = sv[-1] if len(sv) == ops.E.shape[1] else 0.0
        assert abs(sensitivity_metric(ops).value - smin**2) < 1e-9

    def test_rob_ge_sen_identity_output(self, rng):
        ops = assemble_stacked(build_matrix_model(random_stable(rng, 2), np.ones((2, 1)), np.eye(2)), SamplingConfig(1, 1, 2))
        rep = compute_metrics(ops)
        assert rep.j_rob >= rep.j_sen
        assert set(rep.to_dict()) >= {"j_con", "j_obs", "j_rob", "j_sen", "K", "L"}

    def test_six_agent_sparse_is_stealthy(self):
        topo = Topology.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
        m = build_double_integrator_network(6, 3, topo)
        ops = assemble_stacked(m, SamplingConfig("0.5", "1", "3"), topo)
        M = ops.C_stack @ ops.E
        s = np.linalg.svd(M, compute_uv=False)
        oracle = 0.0 if M.shape[0] < M.shape[1] else s[-1] ** 2
        assert oracle <= 1e-10
        assert sensitivity_metric(ops).value <= 1e-10
