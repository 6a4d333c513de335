"""Transient security metrics as extreme eigenvalues of stacked quadratic forms."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .discretize import StackedOperators

__all__ = [
    "EigenResult",
    "MetricReport",
    "symmetric_extreme_eigen",
    "controllability_metric",
    "minimum_energy_cost",
    "observability_metric",
    "robustness_metric",
    "sensitivity_metric",
    "compute_metrics",
    "ZERO_RTOL",
]

ZERO_RTOL = 1e-10


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    clamped: bool = False

    def __float__(self):
        return self.value


def _check_symmetric(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    defect = np.max(np.abs(M - M.T)) if M.size else 0.0
    if defect > 1e-9 * max(1.0, np.max(np.abs(M))):
        raise ValueError(f"matrix is not symmetric (defect {defect:.2e})")
    return 0.5 * (M + M.T)


def symmetric_extreme_eigen(M, which: str = "min", *, clamp: bool = True) -> EigenResult:
    """Smallest or largest eigenpair of a symmetric matrix.

    Values with magnitude below ``1e-10 (1 + ||M||_2)`` are returned as
    exactly zero with ``clamped=True``.
    """
    if which not in ("min", "max"):
        raise ValueError("which must be 'min' or 'max'")
    M = _check_symmetric(M)
    n = M.shape[0]
    if n == 0:
        return EigenResult(0.0, np.zeros(0), True)
    w, V = np.linalg.eigh(M)
    idx = 0 if which == "min" else n - 1
    value, vec = float(w[idx]), V[:, idx].copy()
    scale = 1.0 + max(abs(w[0]), abs(w[-1]))
    if clamp and abs(value) <= ZERO_RTOL * scale:
        return EigenResult(0.0, vec, True)
    return EigenResult(value, vec, False)


def _gram_rows(X: np.ndarray) -> np.ndarray:
    return X @ X.T


def _gram_cols(X: np.ndarray) -> np.ndarray:
    return X.T @ X


def controllability_matrix(ops: StackedOperators) -> np.ndarray:
    B = ops.B_last
    return _gram_rows(B)


def controllability_metric(ops: StackedOperators) -> EigenResult:
    """Smallest eigenvalue of ``B_K B_K^T`` for the terminal input map ``B_K``."""
    return symmetric_extreme_eigen(controllability_matrix(ops), "min")


def minimum_energy_cost(ops: StackedOperators, x_start, x_final) -> Optional[float]:
    """Least input energy ``u^T u`` steering ``x_start`` to ``x_final`` over the horizon.

    Returns ``None`` when the terminal input map is rank deficient (a
    Cholesky pivot falls below ``1e-12`` relative to the largest diagonal).
    """
    W = controllability_matrix(ops)
    d = np.asarray(x_final, dtype=float) - ops.A_stack[ops.state_rows(ops.K)] @ np.asarray(
        x_start, dtype=float
    )
    diag_max = float(np.max(np.diag(W))) if W.size else 0.0
    if diag_max <= 0:
        return None
    try:
        c, low = sla.cho_factor(W, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.abs(np.diag(c))) ** 2 <= 1e-12 * diag_max:
        return None
    return float(d @ sla.cho_solve((c, low), d))


def observability_metric(ops: StackedOperators) -> EigenResult:
    """Smallest eigenvalue of the stacked observability Gramian."""
    CA = ops.C_stack @ ops.A_stack
    return symmetric_extreme_eigen(_gram_cols(CA), "min")


def _joint_map(ops: StackedOperators, E: Optional[np.ndarray]) -> np.ndarray:
    return ops.E if E is None else np.asarray(E, dtype=float)


def robustness_matrix(ops: StackedOperators, q_rob=None, E=None) -> np.ndarray:
    E = _joint_map(ops, E)
    if q_rob is None:
        return _gram_cols(E)
    Q = np.asarray(q_rob, dtype=float)
    if Q.shape != (E.shape[0], E.shape[0]):
        raise ValueError(f"q_rob must be {E.shape[0]}x{E.shape[0]}")
    Qs = _check_symmetric(Q)
    if np.min(np.linalg.eigvalsh(Qs)) < -1e-12 * max(1.0, np.abs(Qs).max()):
        raise ValueError("q_rob must be positive semidefinite")
    return E.T @ Qs @ E


def robustness_metric(ops: StackedOperators, q_rob=None, *, E=None) -> EigenResult:
    """Largest eigenvalue of ``E^T Q E`` with ``E = [A_stack, B_stack]``.

    Parameters
    ----------
    ops : StackedOperators
    q_rob : array_like, optional
        Positive semidefinite state weight of size ``p (K+1)``; identity if omitted.
    E : array_like, optional
        Replacement joint map, e.g. the closed-loop map from feedback.
    """
    return symmetric_extreme_eigen(robustness_matrix(ops, q_rob, E), "max")


def sensitivity_matrix(ops: StackedOperators, E=None) -> np.ndarray:
    return _gram_cols(ops.C_stack @ _joint_map(ops, E))


def sensitivity_metric(ops: StackedOperators, *, E=None) -> EigenResult:
    """Smallest eigenvalue of ``E^T C^T C E``; zero certifies a stealthy direction."""
    return symmetric_extreme_eigen(sensitivity_matrix(ops, E), "min")


@dataclass(frozen=True)
class MetricReport:
    j_con: float
    j_obs: float
    j_rob: float
    j_sen: float
    K: int
    L: int
    q_rob: str = "identity"
    j_con_zero: bool = False
    j_obs_zero: bool = False
    j_sen_zero: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(ops: StackedOperators, q_rob=None, *, E=None) -> MetricReport:
    con = controllability_metric(ops)
    obs = observability_metric(ops)
    rob = robustness_metric(ops, q_rob, E=E)
    sen = sensitivity_metric(ops, E=E)
    return MetricReport(
        j_con=max(con.value, 0.0),
        j_obs=max(obs.value, 0.0),
        j_rob=max(rob.value, 0.0),
        j_sen=max(sen.value, 0.0),
        K=ops.K,
        L=ops.L,
        q_rob="identity" if q_rob is None else "custom",
        j_con_zero=con.clamped,
        j_obs_zero=obs.clamped,
        j_sen_zero=sen.clamped,
    )
