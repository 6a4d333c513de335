"""Linear lifting maps that turn products of (B, C, K) into linear functions.

Conventions: ``B`` is ``n x m``, ``C`` is ``r x n`` and ``K`` is ``m x r`` so
that ``B K C`` is ``n x n``. ``vec`` stacks columns. The liftings are

* ``X_b  = vec(B) vec(B)^T``
* ``X_c  = v v^T`` with ``v = [vec(C); vec(K)]``
* ``X_k  = vec(X_c) vec(X_c)^T``
* ``X_bc = vec(X_b) vec(X_c)^T`` (cross block of the joint lifting)
* ``X_bk = vec(X_b) vec(X_k)^T``

Inner vectorizations of lifted matrices (``vec(X_b)``, ``vec(X_c)``) use
row-major order; the liftings are symmetric, so only consistency matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LiftingDims", "lifting_maps", "rank_one_liftings", "vec"]


def vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M, dtype=float).ravel(order="F")


@dataclass(frozen=True)
class LiftingDims:
    n: int
    m: int
    r: int
    block: int | None = None
    Q: np.ndarray | None = None

    @property
    def nb(self) -> int:
        return self.n * self.m

    @property
    def nc(self) -> int:
        return self.r * self.n + self.m * self.r

    @property
    def Qinv(self) -> np.ndarray:
        if self.Q is None:
            return np.eye(self.n)
        return np.linalg.inv(self.Q)


def rank_one_liftings(B, C, K) -> dict[str, np.ndarray]:
    """Exact liftings of concrete ``(B, C, K)``."""
    vb = vec(B)
    vc = np.concatenate([vec(C), vec(K)])
    Xb = np.outer(vb, vb)
    Xc = np.outer(vc, vc)
    Xk = np.outer(Xc.ravel(), Xc.ravel())
    return {
        "X_b": Xb,
        "X_c": Xc,
        "X_k": Xk,
        "X_bc": np.outer(Xb.ravel(), Xc.ravel()),
        "X_bk": np.outer(Xb.ravel(), Xk.ravel()),
    }


def lifting_maps(dims: LiftingDims) -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    """Linear maps from liftings to the matrix products they represent.

    Returns a dict with keys ``phi_b`` (terminal block of ``B B^T``, rows
    ``dims.block`` of size ``n / (number of blocks)``), ``Phi_b`` (``B B^T``),
    ``Phi_c`` (``C^T C``), ``Phi_k`` (``Q^{-1} C^T K^T K C Q^{-1}``),
    ``Psi_bc`` (``B^T C^T C B``), ``Psi_ck`` (``C^T K^T``) and ``Pi_bk``
    (``B K C Q^{-1} C^T K^T B^T``).
    """
    n, m, r = dims.n, dims.m, dims.r
    nb, nc, rn = dims.nb, dims.nc, r * n
    Qi = dims.Qinv

    def Phi_b(Xb):
        T = np.asarray(Xb).reshape(m, n, m, n)  # [a, i, b, k] = B_ia B_kb
        return np.einsum("aiak->ik", T)

    def phi_b(Xb):
        full = Phi_b(Xb)
        if dims.block is None:
            return full
        rows = slice(n - dims.block, n)
        return full[rows, rows]

    def Phi_c(Xc):
        T = np.asarray(Xc)[:rn, :rn].reshape(n, r, n, r)  # [a, i, b, k] = C_ia C_kb
        return np.einsum("aibi->ab", T)

    def Psi_ck(Xc):
        T = np.asarray(Xc)[:rn, rn:].reshape(n, r, r, m)  # [a, i, j, u] = C_ia K_uj
        return np.einsum("aiiu->au", T)

    def Phi_k(Xk):
        T = np.asarray(Xk).reshape(nc, nc, nc, nc)[:rn, rn:, rn:, :rn]
        T = T.reshape(n, r, r, m, r, m, n, r)  # C_ix K_ui K_uj C_jy
        return Qi @ np.einsum("xiiujuyj->xy", T) @ Qi

    def Psi_bc(Xbc):
        T = np.asarray(Xbc).reshape(nb, nb, nc, nc)[:, :, :rn, :rn]
        T = T.reshape(m, n, m, n, n, r, n, r)  # B_ia B_kb C_jc C_ld
        return np.einsum("aibkijkj->ab", T)

    def Pi_bk(Xbk):
        T = np.asarray(Xbk).reshape(nb, nb, nc, nc, nc, nc)[:, :, rn:, :rn, :rn, rn:]
        # B_xa, B_yf, K_ab, C_bc, C_ed, K_fe
        T = T.reshape(m, n, m, n, r, m, n, r, n, r, r, m)
        return np.einsum("axfybacbdeef,cd->xy", T, Qi)

    return {
        "phi_b": phi_b,
        "Phi_b": Phi_b,
        "Phi_c": Phi_c,
        "Phi_k": Phi_k,
        "Psi_bc": Psi_bc,
        "Psi_ck": Psi_ck,
        "Pi_bk": Pi_bk,
    }
