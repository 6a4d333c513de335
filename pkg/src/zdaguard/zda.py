"""Zero dynamics attack synthesis, stealth checks and output-nulling subspaces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .discretize import StackedOperators, assemble_stacked, interval_maps, matrix_exponential
from .feedback import CausalGainStack, closed_loop_joint_map, closed_loop_state
from .metrics import sensitivity_matrix
from .model import SamplingConfig, SystemModel, Topology

__all__ = [
    "InvariantZero",
    "ZeroResult",
    "AttackPlan",
    "OutputNullingSubspace",
    "invariant_zeros",
    "discrete_invariant_zeros",
    "intrinsic_attack",
    "sampling_attack",
    "enforced_attack",
    "stealthiness_check",
    "output_nulling_subspace",
    "reveal_check",
    "NoStealthyDirection",
    "STEALTH_TOL",
]

STEALTH_TOL = 1e-8


class NoStealthyDirection(ValueError):
    """Raised when no zero or nullspace direction exists for an attack."""


@dataclass(frozen=True)
class InvariantZero:
    z: complex
    x_a0: np.ndarray
    u_a0: np.ndarray
    residual: float


@dataclass(frozen=True)
class ZeroResult:
    """Invariant zeros of a pencil.

    ``status`` is ``"finite"`` when the pencil is regular (possibly with no
    zeros) and ``"everywhere"`` when it loses rank for every ``z``.
    """

    status: str
    zeros: tuple[InvariantZero, ...]

    def __len__(self):
        return len(self.zeros)

    def __iter__(self):
        return iter(self.zeros)

    def __getitem__(self, i):
        return self.zeros[i]

    def unstable(self, discrete: bool = False) -> tuple[InvariantZero, ...]:
        if discrete:
            return tuple(z for z in self.zeros if abs(z.z) > 1 + 1e-12)
        return tuple(z for z in self.zeros if z.z.real > 1e-12)


def _null_space(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(M.shape[1], dtype=M.dtype)
    _, s, Vh = np.linalg.svd(M)
    scale = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * max(scale, 1.0)))
    return Vh[rank:].conj().T


def _zeros_of_pencil(A, B, C, I_like, rng_seed=0):
    """Finite ``z`` with ``(z I_like - A) x = B u`` and ``C x = 0``, ``(x, u)`` nonzero."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    p, q = B.shape
    scale = max(1.0, np.abs(A).max(), np.abs(B).max() if B.size else 0.0)
    N = _null_space(C) if C.shape[0] else np.eye(p)
    nk = N.shape[1]
    # (z I - A) N xi - B u = 0 is a p x (nk + q) pencil z P - Q
    P = np.hstack([I_like @ N, np.zeros((p, q))])
    Q = np.hstack([A @ N, B])
    n_unk = nk + q

    def residual(z, v):
        return np.linalg.norm((z * P - Q) @ v)

    if n_unk == 0:
        return ZeroResult("finite", ())
    if n_unk > p:
        return ZeroResult("everywhere", ())
    rng = np.random.default_rng(rng_seed)
    # a pencil that drops rank at two random points drops rank everywhere
    probes = rng.normal(size=2) + 1j * rng.normal(size=2)
    smins = [np.linalg.svd(z * P - Q, compute_uv=False)[-1] for z in probes]
    if max(smins) <= 1e-10 * scale * (1 + max(abs(probes))):
        return ZeroResult("everywhere", ())
    if n_unk == p:
        Pp, Qp = P, Q
    else:
        W = np.linalg.qr(rng.normal(size=(p, n_unk)))[0].T
        Pp, Qp = W @ P, W @ Q
    alpha, beta = sla.eig(Qp, Pp, right=False, homogeneous_eigvals=True)
    zeros = []
    for a, b in zip(alpha, beta):
        if abs(b) <= 1e-12 * max(abs(a), 1e-300) or abs(b) < 1e-14:
            continue
        z = complex(a / b)
        if not np.isfinite(z.real) or not np.isfinite(z.imag):
            continue
        M = z * P - Q
        _, s, Vh = np.linalg.svd(M)
        v = Vh[-1].conj()
        res = s[-1] if len(s) == n_unk else 0.0
        if res > 1e-8 * (1 + abs(z)) * scale:
            continue
        if abs(z.imag) <= 1e-10 * max(1.0, abs(z)):
            z = complex(z.real, 0.0)
            # a real zero of a real pencil has a real null vector
            _, s_r, Vh_r = np.linalg.svd(np.real(z.real * P - Q))
            v = Vh_r[-1].astype(complex)
        x = N @ v[:nk]
        u = v[nk:]
        nrm = np.linalg.norm(np.concatenate([x, u]))
        x, u = x / nrm, u / nrm
        rz = np.linalg.norm(np.concatenate([(z * I_like - A) @ x - B @ u, C @ x]))
        zeros.append(InvariantZero(z, x, u, float(rz)))
    zeros.sort(key=lambda zz: (-zz.z.real, zz.z.imag))
    return ZeroResult("finite", tuple(zeros))


def invariant_zeros(A, B, C) -> ZeroResult:
    """Invariant zeros of ``x' = A x + B u``, ``y = C x``.

    Each zero ``z`` comes with ``(x_a0, u_a0)`` satisfying
    ``(z I - A) x_a0 - B u_a0 = 0`` and ``C x_a0 = 0``, normalised so the
    stacked vector has unit norm. Degenerate systems whose pencil loses rank
    for every ``z`` return status ``"everywhere"``.
    """
    A = np.asarray(A, dtype=float)
    return _zeros_of_pencil(A, B, C, np.eye(A.shape[0]))


def _lifted_discrete_system(model: SystemModel, sampling: SamplingConfig, topo):
    ratio = sampling.dt_y / sampling.dt_u
    if ratio.denominator != 1:
        raise ValueError("sampling zeros need dt_y to be an integer multiple of dt_u")
    A, B, C = model.matrices(topo)
    S, blocks = interval_maps(A, B, sampling, 0)
    n = int(ratio)
    Gamma = np.hstack([blocks[ell] for ell in range(n)])
    return S, Gamma, C, n


def discrete_invariant_zeros(model: SystemModel, sampling: SamplingConfig, topo=None) -> ZeroResult:
    """Zeros of the sampled system over one sensing interval.

    Held inputs inside one interval are lifted into a single input vector, so
    ``dt_y`` must be an integer multiple of ``dt_u``.
    """
    S, Gamma, C, _ = _lifted_discrete_system(model, sampling, topo)
    return _zeros_of_pencil(S, Gamma, C, np.eye(S.shape[0]))


@dataclass(frozen=True, eq=False)
class AttackPlan:
    """A synthesised attack.

    Attributes
    ----------
    kind : {"intrinsic", "sampling", "enforced"}
    a_seq : ndarray, shape (L+1, q)
        Attack value held on each actuation window.
    x_a0 : ndarray, shape (p,)
        Initial-state perturbation paired with the attack.
    certificate : dict
        ``{"z": complex, "u_a0": ...}`` for zero-based plans or
        ``{"eigenvalue": float, "vector": ...}`` for enforced plans.
    claimed_stealthy_until : float
        End of the horizon over which stealth is claimed (s).
    """

    kind: str
    a_seq: np.ndarray
    x_a0: np.ndarray
    certificate: dict
    claimed_stealthy_until: float
    meta: dict = field(default_factory=dict)

    def scaled(self, factor: float) -> "AttackPlan":
        cert = dict(self.certificate)
        if "u_a0" in cert:
            cert["u_a0"] = np.asarray(cert["u_a0"]) * factor
        if "x_a0" in cert:
            cert["x_a0"] = np.asarray(cert["x_a0"]) * factor
        return AttackPlan(
            self.kind, self.a_seq * factor, self.x_a0 * factor, cert, self.claimed_stealthy_until, dict(self.meta)
        )

    def signal(self, t: float) -> np.ndarray:
        """Continuous attack for zero-based plans; held samples otherwise."""
        if self.kind == "intrinsic":
            z = complex(self.certificate["z"])
            u0 = np.asarray(self.certificate["u_a0"], dtype=complex)
            return np.real(np.exp(z * t) * u0)
        dt_u = float(self.meta.get("dt_u", 1.0))
        ell = min(int(math.floor(t / dt_u + 1e-12)), self.a_seq.shape[0] - 1)
        return self.a_seq[ell]


def _pick_zero(zeros: ZeroResult, index: Optional[int], discrete: bool) -> InvariantZero:
    if not zeros.zeros:
        raise NoStealthyDirection(f"no finite invariant zero (status {zeros.status})")
    if index is not None:
        return zeros.zeros[index]
    unstable = zeros.unstable(discrete)
    pool = unstable if unstable else zeros.zeros
    key = (lambda z: abs(z.z)) if discrete else (lambda z: z.z.real)
    return max(pool, key=key)


def _realify(zero: InvariantZero):
    """Real initial state and complex direction giving the real part of the trajectory."""
    x = np.asarray(zero.x_a0, dtype=complex)
    u = np.asarray(zero.u_a0, dtype=complex)
    if abs(zero.z.imag) == 0.0:
        # rotate away any global phase so the real part is not degenerate
        k = int(np.argmax(np.abs(np.concatenate([x, u]))))
        phase = np.concatenate([x, u])[k]
        phase = phase / abs(phase) if abs(phase) else 1.0
        x, u = x / phase, u / phase
    return x, u


def intrinsic_attack(
    zeros: ZeroResult | Sequence[InvariantZero],
    sampling: SamplingConfig,
    *,
    index: Optional[int] = None,
    scale: float = 1.0,
) -> AttackPlan:
    """Attack ``a(t) = Re(exp(z t) u_a0)`` from a continuous-time invariant zero.

    The unstable zero with the largest real part is used unless ``index``
    picks one. The paired state perturbation is ``Re(x_a0)``; the state
    deviation then equals ``Re(exp(z t) x_a0)`` and never reaches the output.
    """
    if not isinstance(zeros, ZeroResult):
        zeros = ZeroResult("finite", tuple(zeros))
    zero = _pick_zero(zeros, index, discrete=False)
    x, u = _realify(zero)
    x, u = x * scale, u * scale
    t = np.array([float(sampling.t_u(ell)) for ell in range(sampling.n_control + 1)])
    a_seq = np.real(np.exp(zero.z * t)[:, None] * u[None, :])
    return AttackPlan(
        kind="intrinsic",
        a_seq=a_seq,
        x_a0=np.real(x),
        certificate={"z": zero.z, "u_a0": u, "x_a0": x, "residual": zero.residual},
        claimed_stealthy_until=float(sampling.t_F),
        meta={"dt_u": float(sampling.dt_u)},
    )


def sampling_attack(
    model: SystemModel,
    sampling: SamplingConfig,
    topo: Topology | None = None,
    *,
    zeros: ZeroResult | None = None,
    index: Optional[int] = None,
    z: complex | None = None,
    scale: float = 1.0,
) -> AttackPlan:
    """Attack ``a_k = Re(z^k u_a0)`` from a zero of the sampled system.

    When the sampled pencil is degenerate every ``z`` is a zero; pass ``z``
    to choose one.
    """
    S, Gamma, C, n = _lifted_discrete_system(model, sampling, topo)
    if zeros is None:
        zeros = _zeros_of_pencil(S, Gamma, C, np.eye(S.shape[0]))
    if zeros.status == "everywhere":
        if z is None:
            raise NoStealthyDirection("sampled pencil is degenerate; choose z explicitly")
        M = np.vstack([np.hstack([z * np.eye(S.shape[0]) - S, -Gamma]),
                       np.hstack([C, np.zeros((C.shape[0], Gamma.shape[1]))])]).astype(complex)
        v = _null_space(M)[:, 0]
        v = v / np.linalg.norm(v)
        zero = InvariantZero(complex(z), v[: S.shape[0]], v[S.shape[0]:], float(np.linalg.norm(M @ v)))
    else:
        zero = _pick_zero(zeros, index, discrete=True)
    x, u = _realify(zero)
    x, u = x * scale, u * scale
    q = model.q
    L = sampling.n_control
    a_seq = np.zeros((L + 1, q))
    for ell in range(L + 1):
        k, j = divmod(ell, n)
        a_seq[ell] = np.real(zero.z**k * u[j * q : (j + 1) * q])
    return AttackPlan(
        kind="sampling",
        a_seq=a_seq,
        x_a0=np.real(x),
        certificate={"z": zero.z, "u_a0": u, "x_a0": x, "residual": zero.residual},
        claimed_stealthy_until=float(sampling.t_F),
        meta={"dt_u": float(sampling.dt_u)},
    )


def enforced_attack(
    ops: StackedOperators,
    gains: CausalGainStack | None = None,
    *,
    tol: float = 1e-10,
    scale: float = 1.0,
    objective: str = "terminal",
    free_initial: bool = True,
) -> AttackPlan:
    """Stealthy ``(x_a0, a)`` from the nullspace of the stacked output map.

    Among unit vectors in the (numerical) nullspace of ``C_stack E`` the one
    maximizing the terminal state deviation is returned (``objective="terminal"``),
    or the plain minimizing eigenvector (``objective="eigen"``). With
    ``free_initial=False`` the search is restricted to ``x_a0 = 0``, so the
    attack starts from the nominal state and acts through inputs alone.

    Raises
    ------
    NoStealthyDirection
        If the smallest eigenvalue of the sensitivity matrix exceeds ``tol``
        relative to its scale.
    """
    E = closed_loop_joint_map(ops, gains)
    M = sensitivity_matrix(ops, E=E)
    lo = 0 if free_initial else ops.p
    w, V = np.linalg.eigh(0.5 * (M[lo:, lo:] + M[lo:, lo:].T))
    thresh = tol * (1.0 + abs(w[-1]))
    if w[0] > thresh:
        raise NoStealthyDirection(f"smallest sensitivity eigenvalue {w[0]:.3e} exceeds tolerance")
    null = V[:, w <= thresh]
    if objective == "terminal" and null.shape[1] > 1:
        term = E[ops.state_rows(ops.K), lo:] @ null
        _, _, Vh = np.linalg.svd(term)
        v = null @ Vh[0]
    else:
        v = V[:, 0]
    v = np.concatenate([np.zeros(lo), v])
    v = v / np.linalg.norm(v)
    # fix the sign so plans are reproducible
    k = int(np.argmax(np.abs(v)))
    v = v * np.sign(v[k])
    value = float(v @ M @ v)
    x_a0 = v[: ops.p] * scale
    a_seq = ops.expand_active(v[ops.p :]).reshape(ops.L + 1, ops.q) * scale
    return AttackPlan(
        kind="enforced",
        a_seq=a_seq,
        x_a0=x_a0,
        certificate={"eigenvalue": max(value, 0.0), "vector": v, "nullity": int(null.shape[1])},
        claimed_stealthy_until=float(ops.sampling.t_y(ops.K)),
        meta={"dt_u": float(ops.sampling.dt_u), "closed_loop": gains is not None},
    )


def _exponential_deviation(model, sampling, schedule, plan: AttackPlan, fine: int):
    """Output deviation of a zero-based plan with its exact exponential input."""
    z = complex(plan.certificate["z"])
    u0 = np.asarray(plan.certificate["u_a0"], dtype=complex)
    x0 = np.asarray(plan.certificate.get("x_a0", plan.x_a0), dtype=complex)
    sig, om = z.real, z.imag
    Lam = np.array([[sig, -om], [om, sig]])
    Gam = np.column_stack([u0.real, -u0.imag])
    p = model.p
    state = np.concatenate([np.real(x0), [1.0, 0.0]])
    devs = []
    K = sampling.n_sense
    dt = float(sampling.dt_y)
    for k in range(K + 1):
        A, B, C = model.matrices(schedule[k])
        if k == K:
            devs.append(np.linalg.norm(C @ state[:p]) if C.size else 0.0)
            break
        aug = np.zeros((p + 2, p + 2))
        aug[:p, :p] = A
        aug[:p, p:] = B @ Gam
        aug[p:, p:] = Lam
        step = matrix_exponential(aug, dt / fine)
        for _ in range(fine):
            devs.append(np.linalg.norm(C @ state[:p]) if C.size else 0.0)
            state = step @ state
    return float(max(devs)), state[:p]


def stealthiness_check(
    model: SystemModel,
    sampling: SamplingConfig,
    schedule,
    plan: AttackPlan,
    tol: float = STEALTH_TOL,
    *,
    gains: CausalGainStack | None = None,
    x_nominal=None,
    fine: int = 1,
) -> tuple[bool, float]:
    """Compare attacked and nominal outputs over the horizon.

    Held-sample plans are evaluated through the stacked maps. Intrinsic plans
    use their exact exponential input (sampled at ``fine`` points per sensing
    interval), since holding the samples would itself break stealth.

    Returns
    -------
    stealthy : bool
    max_deviation : float
        ``max_k ||y_k - y_nominal_k||``.
    """
    if schedule is None or isinstance(schedule, Topology):
        schedule = [schedule] * (sampling.n_sense + 1)
    if plan.kind == "intrinsic":
        if gains is not None:
            raise ValueError("intrinsic plans are checked in open loop")
        dev, _ = _exponential_deviation(model, sampling, list(schedule), plan, fine)
        return dev <= tol, dev
    ops = assemble_stacked(model, sampling, schedule)
    L = sampling.n_control
    if plan.a_seq.shape != (L + 1, model.q):
        raise ValueError(f"plan has {plan.a_seq.shape} samples, horizon needs {(L + 1, model.q)}")
    xn = np.zeros(model.p) if x_nominal is None else np.asarray(x_nominal, dtype=float)
    a = plan.a_seq.reshape(-1)
    if gains is None:
        y_nom = ops.measure(ops.propagate(xn))
        y_att = ops.measure(ops.propagate(xn + plan.x_a0, a))
    else:
        y_nom = ops.measure(closed_loop_state(ops, gains, xn))
        y_att = ops.measure(closed_loop_state(ops, gains, xn + plan.x_a0, a_seq=a))
    diff = y_att - y_nom
    dev = max(
        (float(np.linalg.norm(diff[ops.output_rows(k)])) for k in range(ops.K + 1)),
        default=0.0,
    )
    return dev <= tol, dev


@dataclass(frozen=True)
class OutputNullingSubspace:
    """Largest output-nulling controlled invariant subspace and a friend gain."""

    basis: np.ndarray
    friend_gain: np.ndarray
    iterations: int

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def restricted_dynamics(self, A, B) -> np.ndarray:
        V = self.basis
        return V.T @ (np.asarray(A) + np.asarray(B) @ self.friend_gain) @ V


def _orth(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    if M.size == 0 or M.shape[1] == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((M.shape[0], 0))
    return U[:, s > rtol * s[0]]


def output_nulling_subspace(A, B, C, *, rtol: float = 1e-10) -> OutputNullingSubspace:
    """Fixed point of ``V <- ker C  intersect  A^{-1}(V + Im B)`` starting from ``ker C``."""
    A = np.asarray(A, dtype=float)
    p = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(p, -1)
    C = np.asarray(C, dtype=float).reshape(-1, p)
    V = _null_space(C, rtol) if C.shape[0] else np.eye(p)
    iters = 0
    while True:
        iters += 1
        W = _orth(np.hstack([V, B]), rtol)
        proj = np.eye(p) - W @ W.T
        V_new = _null_space(np.vstack([C, proj @ A]), rtol) if p else V
        if V_new.shape[1] == V.shape[1]:
            V = V_new
            break
        V = V_new
        if iters > p + 1:
            raise RuntimeError("subspace iteration failed to converge")
    if V.shape[1] == 0:
        return OutputNullingSubspace(np.zeros((p, 0)), np.zeros((B.shape[1], p)), iters)
    V = np.linalg.qr(V)[0]
    XU = np.linalg.lstsq(np.hstack([V, B]), A @ V, rcond=None)[0]
    U = XU[V.shape[1] :]
    F = -U @ V.T
    return OutputNullingSubspace(V, F, iters)


def _trivial_intersection(V: np.ndarray, M: np.ndarray, rtol: float) -> bool:
    """True iff ``span(V)`` meets ``ker M`` only at zero."""
    MV = M @ V
    if MV.size == 0:
        return V.shape[1] == 0
    s = np.linalg.svd(MV, compute_uv=False)
    scale = max(np.linalg.norm(M, 2), 1.0)
    return len(s) == V.shape[1] and s[-1] > rtol * scale


def reveal_check(
    subspace: OutputNullingSubspace,
    *,
    C_new=None,
    B_old=None,
    B_new=None,
    rtol: float = 1e-9,
) -> bool:
    """Whether a switch exposes every zero direction in ``subspace``.

    Pass ``C_new`` for a measurement switch (revealed iff the subspace meets
    ``ker C_new`` trivially), or ``B_old`` and ``B_new`` for an actuation
    switch (revealed iff it meets ``ker((B_new - B_old) F)`` trivially).
    """
    if subspace.dim == 0:
        raise ValueError("nothing to reveal: output-nulling subspace is trivial")
    if C_new is not None:
        return _trivial_intersection(subspace.basis, np.asarray(C_new, dtype=float), rtol)
    if B_old is None or B_new is None:
        raise ValueError("give C_new, or both B_old and B_new")
    D = (np.asarray(B_new, dtype=float) - np.asarray(B_old, dtype=float)) @ subspace.friend_gain
    return _trivial_intersection(subspace.basis, D, rtol)
