"""Causal output feedback over the stacked horizon."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .discretize import StackedOperators
from .model import SamplingConfig, SystemModel, Topology

__all__ = [
    "CausalGainStack",
    "causal_mask",
    "assemble_gain",
    "memoryless_gains",
    "consensus_gain",
    "closed_loop_map",
    "closed_loop_state",
    "closed_loop_joint_map",
    "sensitivity_invariance_check",
    "InvarianceTrial",
    "numerical_rank",
]


def causal_mask(sampling: SamplingConfig) -> np.ndarray:
    """Boolean ``(L+1, K+1)`` array, true where input ``l`` may use output ``k``."""
    L, K = sampling.n_control, sampling.n_sense
    mask = np.zeros((L + 1, K + 1), dtype=bool)
    for ell in range(L + 1):
        for k in range(K + 1):
            mask[ell, k] = sampling.t_u(ell) >= sampling.t_y(k)
    return mask


@dataclass(frozen=True, eq=False)
class CausalGainStack:
    """Dense gain ``K`` mapping stacked outputs to stacked inputs, ``u = K y``."""

    dense: np.ndarray
    q: int
    output_dims: tuple[int, ...]
    mask: np.ndarray

    @property
    def L(self) -> int:
        return self.mask.shape[0] - 1

    @property
    def K(self) -> int:
        return self.mask.shape[1] - 1

    def _cols(self, k: int) -> slice:
        s = sum(self.output_dims[:k])
        return slice(s, s + self.output_dims[k])

    def block(self, ell: int, k: int) -> np.ndarray:
        return self.dense[ell * self.q : (ell + 1) * self.q, self._cols(k)]

    def is_memoryless(self, sampling: SamplingConfig) -> bool:
        """True if each input uses only the most recent output sample."""
        for ell in range(self.L + 1):
            latest = sampling.latest_sense_index(ell)
            for k in range(self.K + 1):
                if k != latest and np.any(self.block(ell, k)):
                    return False
        return True

    def latest_gain(self, sampling: SamplingConfig, ell: int) -> np.ndarray:
        return self.block(ell, min(sampling.latest_sense_index(ell), self.K))


def assemble_gain(
    blocks: Mapping[tuple[int, int], np.ndarray] | np.ndarray,
    sampling: SamplingConfig,
    output_dims: Sequence[int] | None = None,
    q: int | None = None,
) -> CausalGainStack:
    """Assemble the dense causal gain from per-pair blocks.

    Parameters
    ----------
    blocks : mapping or ndarray
        Either ``{(l, k): (q, r_k) array}`` or an array of shape
        ``(L+1, K+1, q, r)``. Acausal blocks (``t_l < t_k``) are zeroed.
    sampling : SamplingConfig
    output_dims : sequence of int, optional
        Output size per sensing step; inferred from array input.
    q : int, optional
        Input size; inferred when possible.
    """
    L, K = sampling.n_control, sampling.n_sense
    mask = causal_mask(sampling)
    if isinstance(blocks, np.ndarray):
        if blocks.ndim != 4 or blocks.shape[:2] != (L + 1, K + 1):
            raise ValueError(f"gain array must have shape ({L + 1}, {K + 1}, q, r), got {blocks.shape}")
        q = blocks.shape[2]
        output_dims = tuple([blocks.shape[3]] * (K + 1)) if output_dims is None else tuple(output_dims)
        items = {(ell, k): blocks[ell, k] for ell in range(L + 1) for k in range(K + 1)}
    else:
        items = dict(blocks)
        if output_dims is None or q is None:
            if not items:
                raise ValueError("output_dims and q are required for empty block maps")
            shape = next(iter(items.values())).shape
            q = shape[0] if q is None else q
            output_dims = tuple([shape[1]] * (K + 1)) if output_dims is None else tuple(output_dims)
        output_dims = tuple(output_dims)
    if len(output_dims) != K + 1:
        raise ValueError(f"need {K + 1} output dimensions, got {len(output_dims)}")
    offsets = np.concatenate([[0], np.cumsum(output_dims)])
    dense = np.zeros((q * (L + 1), int(offsets[-1])))
    for (ell, k), blk in items.items():
        if not (0 <= ell <= L and 0 <= k <= K):
            raise ValueError(f"block index ({ell}, {k}) outside horizon")
        blk = np.asarray(blk, dtype=float)
        if blk.shape != (q, output_dims[k]):
            raise ValueError(
                f"block ({ell}, {k}) has shape {blk.shape}, expected ({q}, {output_dims[k]})"
            )
        if mask[ell, k]:
            dense[ell * q : (ell + 1) * q, offsets[k] : offsets[k + 1]] = blk
    return CausalGainStack(dense=dense, q=q, output_dims=output_dims, mask=mask)


def memoryless_gains(
    sampling: SamplingConfig, per_step: Sequence[np.ndarray]
) -> CausalGainStack:
    """Gain stack where input ``l`` applies ``per_step[k]`` to the latest output ``y_k``."""
    K = sampling.n_sense
    if len(per_step) != K + 1:
        raise ValueError(f"need {K + 1} per-step gains, got {len(per_step)}")
    per_step = [np.atleast_2d(np.asarray(g, dtype=float)) for g in per_step]
    q = per_step[0].shape[0]
    blocks = {}
    for ell in range(sampling.n_control + 1):
        k = min(sampling.latest_sense_index(ell), K)
        blocks[(ell, k)] = per_step[k]
    return assemble_gain(blocks, sampling, [g.shape[1] for g in per_step], q)


def consensus_gain(
    model: SystemModel,
    topo: Topology,
    k_edge: float = 1.0,
    k_leader: tuple[float, float] = (1.0, 1.5),
    normalize: bool = True,
) -> np.ndarray:
    """Output-feedback gain ``u = G y`` for the double-integrator network.

    Each edge reading is pushed back with opposite signs onto its two
    endpoints (scaled by degree when ``normalize``); the leader additionally
    applies PD feedback on its absolute measurements.
    """
    meta = model.meta
    if "dims" not in meta:
        raise ValueError("consensus_gain needs a double-integrator network model")
    d, leader = meta["dims"], meta["leader"]
    C = model.matrices(topo)[2]
    G = np.zeros((model.q, C.shape[0]))
    deg = np.maximum(topo.degree(), 1) if normalize else np.ones(topo.n)
    row = 0
    eye = np.eye(d)
    if meta.get("leader_measured", True):
        G[d * leader : d * (leader + 1), 0:d] = -k_leader[0] * eye
        G[d * leader : d * (leader + 1), d : 2 * d] = -k_leader[1] * eye
        row = 2 * d
    for i, j in topo.edges():
        G[d * i : d * (i + 1), row : row + d] -= k_edge / deg[i] * eye
        G[d * j : d * (j + 1), row : row + d] += k_edge / deg[j] * eye
        row += d
    return G


def _check_conformal(ops: StackedOperators, gains: CausalGainStack):
    if gains.dense.shape != (ops.B_stack.shape[1], ops.C_stack.shape[0]):
        raise ValueError(
            f"gain shape {gains.dense.shape} does not match stacked operators "
            f"({ops.B_stack.shape[1]}, {ops.C_stack.shape[0]})"
        )


def closed_loop_map(ops: StackedOperators, gains: CausalGainStack):
    """``L = I - B K C`` and its inverse by block forward substitution."""
    _check_conformal(ops, gains)
    p, K = ops.p, ops.K
    N = ops.B_stack @ gains.dense @ ops.C_stack
    n = p * (K + 1)
    scale = max(1.0, np.abs(N).max() if N.size else 0.0)
    for i in range(K + 1):
        upper = N[i * p : (i + 1) * p, i * p :]
        if upper.size and np.abs(upper).max() > 1e-12 * scale:
            raise RuntimeError("feedback product is not strictly block lower triangular")
    L = np.eye(n) - N
    Linv = np.eye(n)
    for i in range(1, K + 1):
        ri = slice(i * p, (i + 1) * p)
        # row i of L^{-1} = N_i,<i applied to earlier rows of L^{-1}
        Linv[ri, : i * p] = N[ri, : i * p] @ Linv[: i * p, : i * p]
    return L, Linv


def closed_loop_state(ops: StackedOperators, gains: CausalGainStack, x_start, v_seq=None, a_seq=None):
    """Stacked closed-loop states for reference input ``v`` and attack ``a``."""
    _, Linv = closed_loop_map(ops, gains)
    rhs = ops.A_stack @ np.asarray(x_start, dtype=float)
    n_in = ops.B_stack.shape[1]
    w = np.zeros(n_in)
    for seq in (v_seq, a_seq):
        if seq is not None:
            seq = np.asarray(seq, dtype=float).reshape(-1)
            if seq.size != n_in:
                raise ValueError(f"input sequence has {seq.size} entries, expected {n_in}")
            w = w + seq
    return (Linv @ (rhs + ops.B_stack @ w)).reshape(ops.K + 1, ops.p)


def closed_loop_joint_map(ops: StackedOperators, gains: CausalGainStack | None) -> np.ndarray:
    """``L^{-1} [A_stack, B_active]``; the open-loop map when ``gains`` is None."""
    if gains is None:
        return ops.E
    _, Linv = closed_loop_map(ops, gains)
    return Linv @ ops.E


def numerical_rank(M: np.ndarray, rtol: float = 1e-9) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


@dataclass(frozen=True)
class InvarianceTrial:
    trial: int
    nullity_open: int
    nullity_closed: int

    @property
    def passed(self) -> bool:
        return self.nullity_open == self.nullity_closed


def sensitivity_invariance_check(
    ops: StackedOperators,
    trials: int,
    rng: np.random.Generator | None = None,
    scale: float = 1.0,
    include_zero: bool = True,
) -> list[InvarianceTrial]:
    """Compare nullspace dimensions of ``C E`` and ``C L^{-1} E`` over random causal gains."""
    rng = np.random.default_rng(0) if rng is None else rng
    E = ops.E
    n_cols = E.shape[1]
    open_null = n_cols - numerical_rank(ops.C_stack @ E)
    L, Kh = ops.L, ops.K
    out = []
    for t in range(trials):
        if include_zero and t == 0:
            gains = assemble_gain({}, ops.sampling, ops.output_dims, ops.q)
        else:
            blocks = {
                (ell, k): scale * rng.normal(size=(ops.q, ops.output_dims[k]))
                for ell in range(L + 1)
                for k in range(Kh + 1)
            }
            gains = assemble_gain(blocks, ops.sampling, ops.output_dims, ops.q)
        M = ops.C_stack @ closed_loop_joint_map(ops, gains)
        out.append(InvarianceTrial(t, open_null, n_cols - numerical_rank(M)))
    return out
