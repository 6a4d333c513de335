"""Dense primal-dual interior-point solver for small linear matrix inequality programs.

Problem form::

    minimize    c^T x
    subject to  F0_j + sum_i x_i F_ij  >= 0   (PSD, one block per j)
                G x = h

Its dual is::

    maximize    -sum_j <F0_j, Z_j> + h^T y
    subject to  sum_j <F_ij, Z_j> + (G^T y)_i = c_i,   Z_j >= 0

The solver follows the infeasible path-following scheme with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step. Blocks of size one are
handled as a linear cone. Symmetric matrices enter the Schur complement in
packed lower-triangular order with off-diagonal entries scaled by sqrt(2)
(see :func:`svec`), so the Euclidean inner product of packed vectors equals
the trace inner product.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LmiBlock",
    "SdpProblem",
    "SdpSolution",
    "LmiBuilder",
    "solve",
    "svec",
    "smat",
    "schur_embed",
    "schur_lmi_matrix",
    "export_sparse",
    "import_sparse",
    "kkt_residuals",
]

log = logging.getLogger(__name__)


def svec(M: np.ndarray) -> np.ndarray:
    """Pack the lower triangle column by column, off-diagonals times sqrt(2)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    w = np.where(rows == cols, 1.0, math.sqrt(2.0))
    return M[..., rows, cols] * w


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    w = np.where(rows == cols, 1.0, 1.0 / math.sqrt(2.0))
    M = np.zeros((n, n))
    M[rows, cols] = v * w
    M[cols, rows] = v * w
    return M


@dataclass(frozen=True, eq=False)
class LmiBlock:
    """One PSD constraint ``F0 + sum_k x[var_idx[k]] F[k] >= 0``."""

    F0: np.ndarray
    var_idx: np.ndarray
    F: np.ndarray
    name: str = ""

    def __post_init__(self):
        F0 = np.asarray(self.F0, dtype=float)
        F0 = np.atleast_2d(F0)
        idx = np.asarray(self.var_idx, dtype=int).reshape(-1)
        F = np.asarray(self.F, dtype=float).reshape(len(idx), *F0.shape)
        n = F0.shape[0]
        if F0.shape != (n, n):
            raise ValueError(f"block {self.name!r}: F0 must be square, got {F0.shape}")
        tol = 1e-10 * max(1.0, np.abs(F0).max() if F0.size else 0.0, np.abs(F).max() if F.size else 0.0)
        if np.abs(F0 - F0.T).max(initial=0.0) > tol or (
            F.size and np.abs(F - F.transpose(0, 2, 1)).max() > tol
        ):
            raise ValueError(f"block {self.name!r}: matrices must be symmetric")
        if len(set(idx.tolist())) != len(idx):
            raise ValueError(f"block {self.name!r}: repeated variable index")
        object.__setattr__(self, "F0", 0.5 * (F0 + F0.T))
        object.__setattr__(self, "var_idx", idx)
        object.__setattr__(self, "F", 0.5 * (F + F.transpose(0, 2, 1)))

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        if len(self.var_idx) == 0:
            return self.F0.copy()
        return self.F0 + np.tensordot(x[self.var_idx], self.F, axes=1)


@dataclass(frozen=True, eq=False)
class SdpProblem:
    c: np.ndarray
    blocks: tuple[LmiBlock, ...]
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    var_names: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        m = c.size
        for b in self.blocks:
            if b.var_idx.size and (b.var_idx.min() < 0 or b.var_idx.max() >= m):
                raise ValueError(f"block {b.name!r} references a variable outside 0..{m - 1}")
        if self.G is not None:
            G = np.atleast_2d(np.asarray(self.G, dtype=float))
            h = np.asarray(self.h, dtype=float).reshape(-1)
            if G.shape != (h.size, m):
                raise ValueError(f"equality system has G{G.shape}, h{h.shape} for m={m}")
            object.__setattr__(self, "G", G)
            object.__setattr__(self, "h", h)

    @property
    def m(self) -> int:
        return self.c.size

    @classmethod
    def from_dense(cls, c, blocks: Sequence[Sequence[np.ndarray]], G=None, h=None) -> "SdpProblem":
        """Build from ``[[F0, F1, ..., Fm], ...]`` per block."""
        m = len(np.asarray(c).reshape(-1))
        out = []
        for j, mats in enumerate(blocks):
            if len(mats) != m + 1:
                raise ValueError(f"block {j}: expected {m + 1} matrices, got {len(mats)}")
            F = np.array([np.atleast_2d(np.asarray(F_, dtype=float)) for F_ in mats[1:]])
            nz = [i for i in range(m) if np.any(F[i])]
            out.append(LmiBlock(np.atleast_2d(mats[0]), np.array(nz, dtype=int), F[nz]))
        return cls(np.asarray(c, dtype=float), tuple(out), G, h)

    def evaluate(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        return [b.evaluate(x) for b in self.blocks]

    def violation(self, x) -> float:
        """Largest negative eigenvalue over blocks and equality residual (infinity norm)."""
        x = np.asarray(x, dtype=float)
        v = 0.0
        for M in self.evaluate(x):
            if M.size:
                v = max(v, -float(np.linalg.eigvalsh(M)[0]))
        if self.G is not None and self.G.size:
            v = max(v, float(np.abs(self.G @ x - self.h).max()))
        return v


class LmiBuilder:
    """Incremental assembly of an :class:`SdpProblem` with named variables."""

    def __init__(self):
        self.names: list[str] = []
        self._blocks: list[LmiBlock] = []
        self._eq_rows: list[dict[int, float]] = []
        self._eq_rhs: list[float] = []
        self.c: dict[int, float] = {}

    def add_variable(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    def add_variables(self, prefix: str, count: int) -> list[int]:
        return [self.add_variable(f"{prefix}[{i}]") for i in range(count)]

    def add_block(self, F0, terms: Mapping[int, np.ndarray], name: str = ""):
        F0 = np.atleast_2d(np.asarray(F0, dtype=float))
        keep = [(i, np.asarray(M, dtype=float)) for i, M in terms.items() if np.any(M)]
        idx = np.array([i for i, _ in keep], dtype=int)
        F = np.array([M for _, M in keep]).reshape(len(keep), *F0.shape)
        self._blocks.append(LmiBlock(F0, idx, F, name))

    def add_scalar(self, f0: float, terms: Mapping[int, float], name: str = ""):
        """Linear inequality ``f0 + sum_i terms[i] x_i >= 0``."""
        self.add_block(np.array([[f0]]), {i: np.array([[v]]) for i, v in terms.items()}, name)

    def add_equality(self, terms: Mapping[int, float], rhs: float):
        self._eq_rows.append(dict(terms))
        self._eq_rhs.append(float(rhs))

    def set_objective(self, terms: Mapping[int, float]):
        self.c = dict(terms)

    def build(self) -> SdpProblem:
        m = len(self.names)
        c = np.zeros(m)
        for i, v in self.c.items():
            c[i] = v
        G = h = None
        if self._eq_rows:
            G = np.zeros((len(self._eq_rows), m))
            for r, row in enumerate(self._eq_rows):
                for i, v in row.items():
                    G[r, i] = v
            h = np.array(self._eq_rhs)
        return SdpProblem(c, tuple(self._blocks), G, h, tuple(self.names))


@dataclass
class SdpSolution:
    x: np.ndarray
    status: str
    duality_gap: float
    violation: float
    primal_objective: float
    dual_objective: float
    iterations: int
    Z: list = field(default_factory=list)
    y: np.ndarray | None = None
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# internal cone representation
# ---------------------------------------------------------------------------


class _Cones:
    def __init__(self, problem: SdpProblem):
        m = problem.m
        self.m = m
        self.sdp = [b for b in problem.blocks if b.size > 1]
        lp = [b for b in problem.blocks if b.size == 1]
        self.a0 = np.array([b.F0[0, 0] for b in lp])
        self.A = np.zeros((len(lp), m))
        for r, b in enumerate(lp):
            self.A[r, b.var_idx] = b.F[:, 0, 0]
        self.nu = sum(b.size for b in self.sdp) + len(lp)
        self.packed = [svec(b.F) if len(b.var_idx) else np.zeros((0, 0)) for b in self.sdp]

    def apply(self, x):
        """``sum_i x_i F_i`` per cone (no constant term)."""
        mats = [np.tensordot(x[b.var_idx], b.F, axes=1) if len(b.var_idx) else np.zeros_like(b.F0)
                for b in self.sdp]
        return mats, self.A @ x

    def adjoint(self, Zs, z):
        out = self.A.T @ z if z.size else np.zeros(self.m)
        out = out.copy()
        for b, Z in zip(self.sdp, Zs):
            if len(b.var_idx):
                out[b.var_idx] += np.tensordot(b.F, Z, axes=([1, 2], [0, 1]))
        return out


def _nt_scaling(S, Z):
    """Return ``(Tinv, lam)`` with ``Tinv^T S Tinv = T Z T^T = diag(lam)``."""
    Ls = np.linalg.cholesky(S)
    Lz = np.linalg.cholesky(Z)
    U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
    Tinv = sla.solve_triangular(Ls.T, Vt.T, lower=False) * np.sqrt(lam)
    T = (Vt @ Ls.T) / np.sqrt(lam)[:, None]
    return Tinv, T, lam


def _max_step(lam, dhat):
    """Largest ``a`` with ``diag(lam) + a dhat >= 0``."""
    d = 1.0 / np.sqrt(lam)
    w = np.linalg.eigvalsh((dhat * d[:, None]) * d[None, :])
    mn = w[0]
    return math.inf if mn >= 0 else -1.0 / mn


def _max_step_lp(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-v[neg] / dv[neg]))


def _initial_scale(problem: SdpProblem, cones: _Cones):
    f0 = max([np.linalg.norm(b.F0) for b in problem.blocks] + [0.0])
    fmax = max([np.linalg.norm(b.F) for b in problem.blocks if b.F.size] + [1.0])
    n = max(1, max([b.size for b in problem.blocks] + [1]))
    xi_s = max(10.0, math.sqrt(n), f0, np.linalg.norm(cones.A, ord=np.inf) if cones.A.size else 0)
    xi_z = max(10.0, math.sqrt(n), np.max((1 + np.abs(problem.c)) / (1 + fmax)) * math.sqrt(n))
    return xi_s, xi_z


def solve(
    problem: SdpProblem,
    *,
    tol: float = 1e-9,
    max_iter: int = 150,
    step: float = 0.98,
    infeasibility_tol: float = 1e-8,
    keep_trace: bool = True,
    refine: int = 2,
) -> SdpSolution:
    """Solve an :class:`SdpProblem`.

    Returns
    -------
    SdpSolution
        ``status`` is one of ``"optimal"``, ``"infeasible"`` (no x satisfies
        the constraints), ``"unbounded"``, ``"max_iter"`` or
        ``"numerical_failure"``.
    """
    cones = _Cones(problem)
    m = problem.m
    c = problem.c
    G = problem.G if problem.G is not None else np.zeros((0, m))
    h = problem.h if problem.h is not None else np.zeros(0)
    n_eq = G.shape[0]

    xi_s, xi_z = _initial_scale(problem, cones)
    x = np.zeros(m)
    y = np.zeros(n_eq)
    S = [xi_s * np.eye(b.size) for b in cones.sdp]
    Z = [xi_z * np.eye(b.size) for b in cones.sdp]
    s_lp = np.full(cones.a0.size, xi_s)
    z_lp = np.full(cones.a0.size, xi_z)

    norm_F0 = 1.0 + math.sqrt(sum(np.linalg.norm(b.F0) ** 2 for b in problem.blocks) + h @ h)
    norm_c = 1.0 + np.linalg.norm(c)
    trace = []
    status = "max_iter"
    it = 0

    def residuals():
        AX, Ax = cones.apply(x)
        P = [b.F0 + AX_ - S_ for b, AX_, S_ in zip(cones.sdp, AX, S)]
        p_lp = cones.a0 + Ax - s_lp
        D = c - cones.adjoint(Z, z_lp) - G.T @ y
        Re = h - G @ x
        return P, p_lp, D, Re

    def objectives():
        pobj = float(c @ x)
        dobj = -sum(float(np.sum(b.F0 * Z_)) for b, Z_ in zip(cones.sdp, Z)) - float(cones.a0 @ z_lp) + float(h @ y)
        return pobj, dobj

    for it in range(1, max_iter + 1):
        P, p_lp, D, Re = residuals()
        gap = sum(float(np.sum(S_ * Z_)) for S_, Z_ in zip(S, Z)) + float(s_lp @ z_lp)
        mu = gap / max(cones.nu, 1)
        pobj, dobj = objectives()
        pinf = math.sqrt(sum(np.linalg.norm(P_) ** 2 for P_ in P) + p_lp @ p_lp + Re @ Re) / norm_F0
        dinf = np.linalg.norm(D) / norm_c
        rel_gap = gap / (1.0 + abs(pobj) + abs(dobj))
        if keep_trace:
            trace.append({"iter": it, "pobj": pobj, "dobj": dobj, "gap": gap, "pinf": pinf, "dinf": dinf, "mu": mu})
        log.debug("it %3d pobj %.6e dobj %.6e gap %.2e pinf %.2e dinf %.2e", it, pobj, dobj, gap, pinf, dinf)
        if pinf <= tol and dinf <= tol and rel_gap <= tol:
            status = "optimal"
            break
        # infeasibility certificates
        b_ray = dobj - 0.0  # -<F0,Z> + h^T y
        if b_ray > 0:
            ray = np.linalg.norm(cones.adjoint(Z, z_lp) + G.T @ y) / b_ray
            if ray <= infeasibility_tol and pinf > tol:
                status = "infeasible"
                break
        if pobj < 0 and dinf > tol:
            AX, Ax = cones.apply(x)
            neg = max([max(0.0, -np.linalg.eigvalsh(M)[0]) for M in AX] + [max(0.0, -(Ax.min() if Ax.size else 0.0))])
            if (neg + np.linalg.norm(G @ x)) / (-pobj) <= infeasibility_tol:
                status = "unbounded"
                break

        try:
            scal = [_nt_scaling(S_, Z_) for S_, Z_ in zip(S, Z)]
        except np.linalg.LinAlgError:
            status = "numerical_failure"
            break
        W = [Tinv @ Tinv.T for Tinv, _, _ in scal]
        d_lp = z_lp / s_lp

        # Schur complement M_ij = <F_i, W F_j W> = <Fhat_i, Fhat_j>
        M = np.zeros((m, m))
        for b, (Tinv, _, _) in zip(cones.sdp, scal):
            if not len(b.var_idx):
                continue
            Fh = svec(np.einsum("ji,kjl,lm->kim", Tinv, b.F, Tinv, optimize=True))
            M[np.ix_(b.var_idx, b.var_idx)] += Fh @ Fh.T
        if cones.A.size:
            M += cones.A.T @ (d_lp[:, None] * cones.A)
        KKT = np.zeros((m + n_eq, m + n_eq))
        KKT[:m, :m] = M
        KKT[:m, m:] = G.T
        KKT[m:, :m] = G
        reg = 1e-14 * max(1.0, np.abs(np.diag(M)).max(initial=0.0))

        try:
            if n_eq == 0:
                factor = sla.cho_factor(M + reg * np.eye(m), check_finite=True)
                base_solve = lambda r: sla.cho_solve(factor, r)
            else:
                lu = sla.lu_factor(KKT + reg * np.diag(np.r_[np.ones(m), -np.ones(n_eq)]))
                base_solve = lambda r: sla.lu_solve(lu, r)
        except (np.linalg.LinAlgError, ValueError):
            status = "numerical_failure"
            break

        def solve_kkt(r):
            # iterative refinement against the unregularized system
            sol = base_solve(r)
            for _ in range(refine):
                sol = sol + base_solve(r - KKT @ sol)
            return sol

        def direction(Rc, rc_lp):
            WPW = [W_ @ P_ @ W_ for W_, P_ in zip(W, P)]
            r = cones.adjoint([R - Q for R, Q in zip(Rc, WPW)], rc_lp - d_lp * p_lp) - D
            sol = solve_kkt(np.r_[r, Re])
            dx = sol[:m]
            dy = -sol[m:] if n_eq else np.zeros(0)
            AdX, Adx = cones.apply(dx)
            dS = [A_ + P_ for A_, P_ in zip(AdX, P)]
            dZ = [R - W_ @ dS_ @ W_ for R, W_, dS_ in zip(Rc, W, dS)]
            ds = Adx + p_lp
            dz = rc_lp - d_lp * ds
            dZ = [0.5 * (X + X.T) for X in dZ]
            dS = [0.5 * (X + X.T) for X in dS]
            return dx, dy, dS, dZ, ds, dz

        def step_lengths(dS, dZ, ds, dz):
            ap = _max_step_lp(s_lp, ds)
            ad = _max_step_lp(z_lp, dz)
            for (Tinv, T, lam), dS_, dZ_ in zip(scal, dS, dZ):
                ap = min(ap, _max_step(lam, Tinv.T @ dS_ @ Tinv))
                ad = min(ad, _max_step(lam, T @ dZ_ @ T.T))
            return ap, ad

        # predictor
        Rc = [-Z_ for Z_ in Z]
        dx, dy, dS, dZ, ds, dz = direction(Rc, -z_lp)
        ap, ad = step_lengths(dS, dZ, ds, dz)
        ap, ad = min(1.0, ap), min(1.0, ad)
        gap_aff = sum(float(np.sum((S_ + ap * a) * (Z_ + ad * b)))
                      for S_, a, Z_, b in zip(S, dS, Z, dZ))
        gap_aff += float((s_lp + ap * ds) @ (z_lp + ad * dz))
        sigma = min(1.0, max(0.0, (gap_aff / gap) ** 3)) if gap > 0 else 0.0

        # corrector
        Rc = []
        for (Tinv, T, lam), dS_, dZ_ in zip(scal, dS, dZ):
            dSh = Tinv.T @ dS_ @ Tinv
            dZh = T @ dZ_ @ T.T
            prod = dSh @ dZh
            Rh = sigma * mu * np.eye(len(lam)) - np.diag(lam**2) - 0.5 * (prod + prod.T)
            Gam = 0.5 * (lam[:, None] + lam[None, :])
            Rc.append(Tinv @ (Rh / Gam) @ Tinv.T)
        rc_lp = (sigma * mu - ds * dz) / s_lp - z_lp
        dx, dy, dS, dZ, ds, dz = direction(Rc, rc_lp)
        ap, ad = step_lengths(dS, dZ, ds, dz)
        ap, ad = min(1.0, step * ap), min(1.0, step * ad)
        if not (np.all(np.isfinite(dx)) and math.isfinite(ap) and math.isfinite(ad)):
            status = "numerical_failure"
            break
        x = x + ap * dx
        S = [S_ + ap * d for S_, d in zip(S, dS)]
        s_lp = s_lp + ap * ds
        Z = [Z_ + ad * d for Z_, d in zip(Z, dZ)]
        z_lp = z_lp + ad * dz
        y = y + ad * dy
        if max(ap, ad) < 1e-12:
            status = "numerical_failure"
            break

    pobj, dobj = objectives()
    gap = sum(float(np.sum(S_ * Z_)) for S_, Z_ in zip(S, Z)) + float(s_lp @ z_lp)
    # reassemble dual blocks in the original order
    Zs, si, li = [], 0, 0
    for b in problem.blocks:
        if b.size > 1:
            Zs.append(Z[si])
            si += 1
        else:
            Zs.append(np.array([[z_lp[li]]]))
            li += 1
    viol = problem.violation(x)
    if status == "optimal" and (viol > 1e-7 or gap > 1e-7 * (1 + abs(pobj))):
        status = "max_iter" if it >= max_iter else "numerical_failure"
    return SdpSolution(
        x=x,
        status=status,
        duality_gap=gap,
        violation=viol,
        primal_objective=pobj,
        dual_objective=dobj,
        iterations=it,
        Z=Zs,
        y=y,
        trace=trace,
    )


def kkt_residuals(problem: SdpProblem, sol: SdpSolution) -> dict[str, float]:
    """Primal violation, dual residual and complementarity at a solution."""
    x = sol.x
    Fx = problem.evaluate(x)
    dual = problem.c.copy()
    for b, Z in zip(problem.blocks, sol.Z):
        if len(b.var_idx):
            dual[b.var_idx] -= np.tensordot(b.F, Z, axes=([1, 2], [0, 1]))
    if problem.G is not None and sol.y is not None and sol.y.size:
        dual -= problem.G.T @ sol.y
    dual_psd = max([max(0.0, -np.linalg.eigvalsh(Z)[0]) for Z in sol.Z] + [0.0])
    comp = sum(float(np.sum(F * Z)) for F, Z in zip(Fx, sol.Z))
    return {
        "primal": problem.violation(x),
        "dual": float(np.linalg.norm(dual, np.inf)) + dual_psd,
        "complementarity": abs(comp),
    }


# ---------------------------------------------------------------------------
# Robustness epigraph LMI
# ---------------------------------------------------------------------------


def schur_lmi_matrix(E, B, KC, Q, gamma) -> np.ndarray:
    """Block matrix whose PSD-ness is equivalent to ``lambda_max(M) <= gamma``.

    ``M = E^T L^{-T} Q L^{-1} E`` with ``L = I - B KC``. With
    ``F = B + Q^{-1} KC^T`` and
    ``Y = Q^{-1} + B B^T + Q^{-1} KC^T KC Q^{-1} + B KC Q^{-1} KC^T B^T``
    the matrix is ``[[Y, E, F], [E^T, gamma I, 0], [F^T, 0, I]]``.
    """
    F0, Fg = schur_embed(E, B, KC, Q)
    return F0 + gamma * Fg


def schur_embed(E, B, KC, Q):
    """Constant part and ``gamma`` coefficient of the robustness epigraph LMI.

    Raises
    ------
    ValueError
        If ``Q`` is not positive definite.
    """
    E = np.asarray(E, dtype=float)
    B = np.asarray(B, dtype=float)
    KC = np.asarray(KC, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = E.shape[0]
    try:
        cQ = sla.cho_factor(0.5 * (Q + Q.T))
    except np.linalg.LinAlgError as exc:
        raise ValueError("Q must be positive definite") from exc
    Qi = sla.cho_solve(cQ, np.eye(n))
    QiKCt = Qi @ KC.T
    Fm = B + QiKCt
    BKC = B @ KC
    Y = Qi + B @ B.T + QiKCt @ (KC @ Qi) + BKC @ Qi @ BKC.T
    Y = 0.5 * (Y + Y.T)
    ne, nu = E.shape[1], B.shape[1]
    N = n + ne + nu
    F0 = np.zeros((N, N))
    F0[:n, :n] = Y
    F0[:n, n : n + ne] = E
    F0[n : n + ne, :n] = E.T
    F0[:n, n + ne :] = Fm
    F0[n + ne :, :n] = Fm.T
    F0[n + ne :, n + ne :] = np.eye(nu)
    Fg = np.zeros((N, N))
    Fg[n : n + ne, n : n + ne] = np.eye(ne)
    return F0, Fg


# ---------------------------------------------------------------------------
# Sparse text exchange format
# ---------------------------------------------------------------------------

_HEADER = "# zdaguard sparse sdp v1"


def export_sparse(problem: SdpProblem, stream=None) -> str:
    """Write ``problem`` in the sparse text format and return it as a string.

    Lines (indices are 1-based, ``var`` 0 is the constant term, only
    ``row <= col`` entries are listed)::

        m <number of variables>
        blocks <size_1> <size_2> ...
        c <var> <value>
        f <block> <row> <col> <var> <value>
        g <row> <var> <value>
        h <row> <value>
    """
    out = io.StringIO()
    out.write(_HEADER + "\n")
    out.write(f"m {problem.m}\n")
    out.write("blocks " + " ".join(str(b.size) for b in problem.blocks) + "\n")
    for i, v in enumerate(problem.c):
        if v:
            out.write(f"c {i + 1} {float(v)!r}\n")
    for j, b in enumerate(problem.blocks, start=1):
        mats = [(0, b.F0)] + [(int(i) + 1, F) for i, F in zip(b.var_idx, b.F)]
        for var, F in mats:
            r, cidx = np.nonzero(np.triu(F))
            for a, bb in zip(r, cidx):
                out.write(f"f {j} {a + 1} {bb + 1} {var} {float(F[a, bb])!r}\n")
    if problem.G is not None:
        for r, row in enumerate(problem.G, start=1):
            for i in np.nonzero(row)[0]:
                out.write(f"g {r} {i + 1} {float(row[i])!r}\n")
        for r, v in enumerate(problem.h, start=1):
            out.write(f"h {r} {float(v)!r}\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def import_sparse(text: str) -> SdpProblem:
    """Parse the format written by :func:`export_sparse`."""
    m = None
    sizes: list[int] = []
    c_terms: dict[int, float] = {}
    f_terms: dict[tuple[int, int], np.ndarray] = {}
    g_terms: dict[tuple[int, int], float] = {}
    h_terms: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "m":
                m = int(tok[1])
            elif tok[0] == "blocks":
                sizes = [int(t) for t in tok[1:]]
            elif tok[0] == "c":
                c_terms[int(tok[1]) - 1] = float(tok[2])
            elif tok[0] == "f":
                j, r, cc, var, v = int(tok[1]) - 1, int(tok[2]) - 1, int(tok[3]) - 1, int(tok[4]), float(tok[5])
                M = f_terms.setdefault((j, var), np.zeros((sizes[j], sizes[j])))
                M[r, cc] = M[cc, r] = v
            elif tok[0] == "g":
                g_terms[(int(tok[1]) - 1, int(tok[2]) - 1)] = float(tok[3])
            elif tok[0] == "h":
                h_terms[int(tok[1]) - 1] = float(tok[2])
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if m is None:
        raise ValueError("missing 'm' record")
    c = np.zeros(m)
    for i, v in c_terms.items():
        c[i] = v
    blocks = []
    for j, n in enumerate(sizes):
        F0 = f_terms.get((j, 0), np.zeros((n, n)))
        vars_ = sorted(v for (jj, v) in f_terms if jj == j and v > 0)
        F = np.array([f_terms[(j, v)] for v in vars_]).reshape(len(vars_), n, n)
        blocks.append(LmiBlock(F0, np.array(vars_, dtype=int) - 1, F))
    G = h = None
    if h_terms or g_terms:
        n_eq = 1 + max([r for r, _ in g_terms] + list(h_terms))
        G = np.zeros((n_eq, m))
        for (r, i), v in g_terms.items():
            G[r, i] = v
        h = np.zeros(n_eq)
        for r, v in h_terms.items():
            h[r] = v
    return SdpProblem(c, tuple(blocks), G, h)
