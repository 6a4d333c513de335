"""Exact discretization of held inputs and horizon-stacked operators.

Actuation is held piecewise constant over ``[t_l, t_l + dt_u)`` and sensing
happens at ``t_k = k dt_y``. The two clocks need not be commensurate; window
boundaries are compared with exact fractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .model import SamplingConfig, SystemModel, Topology

__all__ = [
    "matrix_exponential",
    "hold_integral",
    "StackedOperators",
    "assemble_stacked",
    "interval_maps",
]

# Scaling thresholds and numerator coefficients of the diagonal Pade
# approximants of orders 3, 5, 7, 9 and 13 (Higham, SIAM J. Matrix Anal. 2005).
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ),
}


def _pade_uv(X: np.ndarray, m: int):
    b = _PADE[m]
    n = X.shape[0]
    ident = np.eye(n)
    X2 = X @ X
    if m == 13:
        X4 = X2 @ X2
        X6 = X4 @ X2
        U = X @ (
            X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
            + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident
        )
        V = (
            X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
            + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident
        )
        return U, V
    powers = [ident, X2]
    while len(powers) < (m + 1) // 2:
        powers.append(powers[-1] @ X2)
    U = X @ sum(b[2 * j + 1] * powers[j] for j in range(len(powers)))
    V = sum(b[2 * j] * powers[j] for j in range(len(powers)))
    return U, V


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """Compute ``exp(A t)`` by scaling and squaring with a diagonal Pade approximant.

    Parameters
    ----------
    A : (n, n) array_like
        Finite square matrix.
    t : float, optional
        Non-negative time scale.

    Returns
    -------
    ndarray
        The matrix exponential.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    t = float(t)
    if not np.all(np.isfinite(A)) or not math.isfinite(t):
        raise ValueError("matrix exponential requires finite inputs")
    if t < 0:
        raise ValueError("t must be non-negative")
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    X = A * t
    norm = np.linalg.norm(X, 1)
    if norm == 0.0:
        return np.eye(n)
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            U, V = _pade_uv(X, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, int(math.ceil(math.log2(norm / _THETA[13]))))
    X = X / (2.0**s)
    U, V = _pade_uv(X, 13)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def _phi1(A: np.ndarray, h: float) -> np.ndarray:
    """``int_0^h exp(A s) ds`` from the exponential of ``[[A, I], [0, 0]] h``."""
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A
    aug[:n, n:] = np.eye(n)
    return matrix_exponential(aug, h)[:n, n:]


def _overlap(t_k, t_k1, t_l, dt_u):
    lo = max(t_k, t_l)
    hi = min(t_k1, t_l + dt_u)
    return lo, hi


def hold_integral(A, t_k, t_k1, t_l, dt_u) -> np.ndarray:
    """Response over ``[t_k, t_k1)`` to a unit input held on ``[t_l, t_l + dt_u)``.

    Returns ``int_{t_k}^{t_k1} exp(A (t_k1 - tau)) h(tau - t_l) dtau`` where
    ``h`` is the indicator of ``[0, dt_u)``. Time arguments may be fractions
    for exact window comparison.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("hold integral requires finite A")
    vals = [t_k, t_k1, t_l, dt_u]
    if any(isinstance(v, float) and not math.isfinite(v) for v in vals):
        raise ValueError("hold integral requires finite times")
    if not t_k1 > t_k:
        raise ValueError("t_k1 must exceed t_k")
    lo, hi = _overlap(t_k, t_k1, t_l, dt_u)
    n = A.shape[0]
    if hi <= lo:
        return np.zeros((n, n))
    tail = matrix_exponential(A, float(t_k1 - hi))
    return tail @ _phi1(A, float(hi - lo))


def _input_window(sampling: SamplingConfig, k: int) -> range:
    """Input indices whose hold window meets ``[t_k, t_{k+1})``."""
    t_k, t_k1 = sampling.t_y(k), sampling.t_y(k + 1)
    first = max(0, math.floor(t_k / sampling.dt_u))
    last = min(sampling.n_control, math.ceil(t_k1 / sampling.dt_u) - 1)
    return range(first, last + 1)


def interval_maps(A, B, sampling: SamplingConfig, k: int):
    """State transition ``S_k`` and per-input maps ``{l: H_kl B}`` on interval ``k``.

    Only inputs with a non-empty hold overlap are returned.
    """
    A = np.asarray(A, dtype=float)
    dt_y = sampling.dt_y
    S = matrix_exponential(A, float(dt_y))
    t_k, t_k1 = sampling.t_y(k), sampling.t_y(k + 1)
    blocks = {}
    cache: dict[tuple[Fraction, Fraction], np.ndarray] = {}
    for ell in _input_window(sampling, k):
        lo, hi = _overlap(t_k, t_k1, sampling.t_u(ell), sampling.dt_u)
        if hi <= lo:
            continue
        key = (t_k1 - hi, hi - lo)
        if key not in cache:
            cache[key] = matrix_exponential(A, float(key[0])) @ _phi1(A, float(key[1]))
        blocks[ell] = cache[key] @ B
    return S, blocks


@dataclass(frozen=True, eq=False)
class StackedOperators:
    """Horizon-stacked maps from ``(x_0, u_0..u_L)`` to states and measurements.

    ``x_stack = A_stack x_0 + B_stack (u + a)`` and ``y_stack = C_stack x_stack``.
    ``active`` flags input samples that start before the last sensing instant;
    later samples cannot influence any sample in the horizon.
    """

    A_stack: np.ndarray
    B_stack: np.ndarray
    C_stack: np.ndarray
    K: int
    L: int
    p: int
    q: int
    output_dims: tuple[int, ...]
    S: tuple[np.ndarray, ...]
    input_blocks: tuple[dict, ...]
    active: np.ndarray
    sampling: SamplingConfig
    schedule: tuple[Topology | None, ...]
    C_blocks: tuple[np.ndarray, ...] = field(default=())

    @property
    def selectors(self) -> list[np.ndarray]:
        """Row selectors ``E_k`` with ``x_k = E_k x_stack``."""
        out = []
        for k in range(self.K + 1):
            E = np.zeros((self.p, self.p * (self.K + 1)))
            E[:, k * self.p : (k + 1) * self.p] = np.eye(self.p)
            out.append(E)
        return out

    def state_rows(self, k: int) -> slice:
        return slice(k * self.p, (k + 1) * self.p)

    def output_rows(self, k: int) -> slice:
        start = sum(self.output_dims[:k])
        return slice(start, start + self.output_dims[k])

    @property
    def B_last(self) -> np.ndarray:
        """Final block row of ``B_stack``: input-to-terminal-state map."""
        return self.B_stack[self.state_rows(self.K)]

    @property
    def active_columns(self) -> np.ndarray:
        return np.repeat(self.active, self.q)

    @property
    def B_active(self) -> np.ndarray:
        return self.B_stack[:, self.active_columns]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def E(self) -> np.ndarray:
        """``[A_stack, B_active]``: joint map from initial state and active inputs."""
        return np.hstack([self.A_stack, self.B_active])

    def propagate(self, x0, u=None) -> np.ndarray:
        """Stacked states for initial state ``x0`` and inputs ``u`` of shape ``(L+1, q)``."""
        x = self.A_stack @ np.asarray(x0, dtype=float)
        if u is not None:
            u = np.asarray(u, dtype=float).reshape(-1)
            x = x + self.B_stack @ u
        return x.reshape(self.K + 1, self.p)

    def measure(self, x_stack) -> np.ndarray:
        return self.C_stack @ np.asarray(x_stack, dtype=float).reshape(-1)

    def expand_active(self, a_active) -> np.ndarray:
        """Embed an active-input vector into the full ``(L+1) q`` input vector."""
        full = np.zeros((self.L + 1) * self.q)
        full[self.active_columns] = np.asarray(a_active, dtype=float).reshape(-1)
        return full

    def to_csv_blocks(self) -> dict[str, np.ndarray]:
        return {"A_stack": self.A_stack, "B_stack": self.B_stack, "C_stack": self.C_stack}


def assemble_stacked(
    model: SystemModel,
    sampling: SamplingConfig,
    schedule: Sequence[Topology | None] | Topology | None = None,
) -> StackedOperators:
    """Build the stacked operators over the sensing horizon.

    Parameters
    ----------
    model : SystemModel
    sampling : SamplingConfig
    schedule : sequence of Topology, optional
        One topology per sensing step ``k = 0..K``. A single topology is
        repeated; ``None`` uses the model default.

    Returns
    -------
    StackedOperators
    """
    K, L = sampling.n_sense, sampling.n_control
    if K < 1 or L < 1:
        raise ValueError("sampling horizons must be at least 1")
    if schedule is None or isinstance(schedule, Topology):
        schedule = [schedule] * (K + 1)
    schedule = tuple(schedule)
    if len(schedule) != K + 1:
        raise ValueError(f"schedule has {len(schedule)} entries, expected K+1={K + 1}")
    p, q = model.p, model.q

    mats = [model.matrices(t) for t in schedule]
    A_stack = np.zeros((p * (K + 1), p))
    B_stack = np.zeros((p * (K + 1), q * (L + 1)))
    A_stack[:p] = np.eye(p)
    S_list, blocks_list = [], []
    cache = {}
    for k in range(K):
        A, B, _ = mats[k]
        key = (id(A), id(B), k) if not sampling.synchronous else (id(A), id(B))
        # with commensurate clocks the per-interval maps repeat; reuse them
        if sampling.synchronous and key in cache:
            S, blk0 = cache[key]
            blocks = {k: blk0}
        else:
            S, blocks = interval_maps(A, B, sampling, k)
            if sampling.synchronous:
                cache[key] = (S, blocks.get(k, np.zeros((p, q))))
        S_list.append(S)
        blocks_list.append(blocks)
        rows_k, rows_k1 = slice(k * p, (k + 1) * p), slice((k + 1) * p, (k + 2) * p)
        A_stack[rows_k1] = S @ A_stack[rows_k]
        B_stack[rows_k1] = S @ B_stack[rows_k]
        for ell, blk in blocks.items():
            B_stack[rows_k1, ell * q : (ell + 1) * q] += blk

    out_dims = tuple(m[2].shape[0] for m in mats)
    C_blocks = tuple(m[2] for m in mats)
    C_stack = sla.block_diag(*C_blocks) if sum(out_dims) else np.zeros((0, p * (K + 1)))
    if C_stack.shape[1] != p * (K + 1):
        # block_diag drops width of zero-row blocks; rebuild explicitly
        C_stack = np.zeros((sum(out_dims), p * (K + 1)))
        r0 = 0
        for k, Ck in enumerate(C_blocks):
            C_stack[r0 : r0 + Ck.shape[0], k * p : (k + 1) * p] = Ck
            r0 += Ck.shape[0]
    t_K = sampling.t_y(K)
    active = np.array([sampling.t_u(ell) < t_K for ell in range(L + 1)])
    return StackedOperators(
        A_stack=A_stack,
        B_stack=B_stack,
        C_stack=C_stack,
        K=K,
        L=L,
        p=p,
        q=q,
        output_dims=out_dims,
        S=tuple(S_list),
        input_blocks=tuple(blocks_list),
        active=active,
        sampling=sampling,
        schedule=schedule,
        C_blocks=C_blocks,
    )
