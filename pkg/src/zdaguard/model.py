"""Networked system models, topologies and sampling configuration."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Topology",
    "TopologySet",
    "SystemModel",
    "SamplingConfig",
    "Scenario",
    "Target",
    "build_double_integrator_network",
    "build_cartpole",
    "build_matrix_model",
    "default_lookahead",
    "enumerate_feasible_topologies",
    "sample_feasible_topologies",
    "spanning_tree_topology",
    "disk_graph_edges",
]


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("boolean is not a duration")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite duration {value!r}")
        # repr round-trips, so "0.1" stays 1/10 instead of the binary expansion
        return Fraction(repr(value))
    return Fraction(str(value).strip())


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        self.parent[max(ri, rj)] = min(ri, rj)
        return True


def _connected(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    if n <= 1:
        return True
    uf = _UnionFind(n)
    groups = n
    for i, j in edges:
        if uf.union(i, j):
            groups -= 1
    return groups == 1


class Topology:
    """Binary adjacency matrix of the agent network.

    Instances are immutable and hashable so they can key caches and sets.
    """

    __slots__ = ("_adj", "_key")

    def __init__(self, adjacency, *, undirected: bool = True):
        adj = np.asarray(adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if not np.all((adj == 0) | (adj == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        adj = adj.astype(np.int8)
        if np.any(np.diag(adj)):
            raise ValueError("adjacency must have a zero diagonal")
        if undirected and not np.array_equal(adj, adj.T):
            raise ValueError("undirected topology requires a symmetric adjacency")
        adj.setflags(write=False)
        self._adj = adj
        self._key = (adj.shape[0], adj.tobytes())

    @classmethod
    def from_edges(cls, n: int, edges) -> "Topology":
        adj = np.zeros((n, n), dtype=np.int8)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self loop on node {i}")
            adj[i, j] = adj[j, i] = 1
        return cls(adj)

    @classmethod
    def empty(cls, n: int) -> "Topology":
        return cls(np.zeros((n, n), dtype=np.int8))

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    @property
    def n(self) -> int:
        return self._adj.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as sorted ``(i, j)`` pairs with ``i < j``."""
        i, j = np.nonzero(np.triu(self._adj, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def n_edges(self) -> int:
        return int(np.triu(self._adj, 1).sum())

    @property
    def density(self) -> float:
        n = self.n
        if n < 2:
            return 0.0
        return self.n_edges / (n * (n - 1) / 2)

    def degree(self) -> np.ndarray:
        return self._adj.sum(axis=1).astype(int)

    def is_connected(self) -> bool:
        return _connected(self.n, self.edges())

    def flat_key(self) -> tuple[int, ...]:
        return tuple(self._adj.ravel().tolist())

    def hamming(self, other: "Topology") -> int:
        return int(np.sum(self._adj != other._adj)) // 2

    def __eq__(self, other):
        return isinstance(other, Topology) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"Topology(n={self.n}, edges={self.edges()})"


@dataclass(frozen=True)
class TopologySet:
    """Admissible topologies for each sensing step."""

    steps: tuple[tuple[Topology, ...], ...]
    density_cap: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.density_cap <= 1.0:
            raise ValueError("density_cap must lie in (0, 1]")
        steps = tuple(tuple(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        for k, members in enumerate(steps):
            for t in members:
                if t.density > self.density_cap + 1e-12:
                    raise ValueError(
                        f"step {k}: topology density {t.density:.3f} exceeds cap {self.density_cap}"
                    )

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, k):
        return self.steps[k]

    def n_sequences(self) -> int:
        return math.prod(len(s) for s in self.steps)


@dataclass(frozen=True)
class SamplingConfig:
    """Actuation period ``dt_u``, sensing period ``dt_y`` and terminal time ``t_F``.

    Durations are stored as exact fractions so that hold windows and causality
    masks compare sampling instants without float round-off.
    """

    dt_u: Fraction
    dt_y: Fraction
    t_F: Fraction

    def __init__(self, dt_u, dt_y, t_F):
        object.__setattr__(self, "dt_u", _as_fraction(dt_u))
        object.__setattr__(self, "dt_y", _as_fraction(dt_y))
        object.__setattr__(self, "t_F", _as_fraction(t_F))
        if self.dt_u <= 0 or self.dt_y <= 0:
            raise ValueError("sampling periods must be positive")
        if self.t_F < max(self.dt_u, self.dt_y):
            raise ValueError("t_F must be at least max(dt_u, dt_y)")

    @property
    def n_control(self) -> int:
        """Control horizon, ``floor(t_F / dt_u)``."""
        return math.floor(self.t_F / self.dt_u)

    @property
    def n_sense(self) -> int:
        """Sensing horizon, ``floor(t_F / dt_y)``."""
        return math.floor(self.t_F / self.dt_y)

    # short aliases matching the usual (K, L) notation
    K = n_sense
    L = n_control

    def t_u(self, ell: int) -> Fraction:
        return ell * self.dt_u

    def t_y(self, k: int) -> Fraction:
        return k * self.dt_y

    def latest_sense_index(self, ell: int) -> int:
        """Largest ``k`` with ``t_k <= t_ell``."""
        return math.floor(self.t_u(ell) / self.dt_y)

    def with_sense_horizon(self, K: int) -> "SamplingConfig":
        return SamplingConfig(self.dt_u, self.dt_y, K * self.dt_y)

    @property
    def synchronous(self) -> bool:
        return self.dt_u == self.dt_y


MatrixMap = Callable[[Topology], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Continuous-time model ``x' = A x + B (u + a)``, ``y = C x`` indexed by topology."""

    state_dim: int
    input_dim: int
    matrix_map: MatrixMap
    a_fixed: bool = True
    b_fixed: bool = True
    n_agents: int | None = None
    name: str = "model"
    default_topology: Topology | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_cached", lru_cache(maxsize=4096)(self._build))

    def _build(self, topo: Topology):
        A, B, C = (np.array(m, dtype=float) for m in self.matrix_map(topo))
        p, q = self.state_dim, self.input_dim
        if A.shape != (p, p) or B.shape != (p, q) or C.ndim != 2 or C.shape[1] != p:
            raise ValueError(
                f"{self.name}: matrix map returned A{A.shape} B{B.shape} C{C.shape} "
                f"for declared p={p}, q={q}"
            )
        for m in (A, B, C):
            m.setflags(write=False)
        return A, B, C

    def matrices(self, topo: Topology | None = None):
        """Return ``(A, B, C)`` for a topology (read-only arrays)."""
        if topo is None:
            topo = self.default_topology
        if self.n_agents is not None and topo is not None and topo.n != self.n_agents:
            raise ValueError(f"topology has {topo.n} nodes, model expects {self.n_agents}")
        return self._cached(topo)

    def output_dim(self, topo: Topology | None = None) -> int:
        return self.matrices(topo)[2].shape[0]

    @property
    def p(self) -> int:
        return self.state_dim

    @property
    def q(self) -> int:
        return self.input_dim


@dataclass(frozen=True)
class Target:
    """Reference trajectory: per-agent set-points plus optional sinusoids.

    ``q_d(t) = offset + amplitude * sin(frequency * t + phase)`` per agent and axis.
    """

    offset: np.ndarray
    amplitude: np.ndarray | None = None
    frequency: float = 0.0
    phase: np.ndarray | None = None

    def position(self, t: float) -> np.ndarray:
        pos = np.array(self.offset, dtype=float)
        if self.amplitude is not None and self.frequency:
            ph = 0.0 if self.phase is None else self.phase
            pos = pos + self.amplitude * np.sin(self.frequency * t + ph)
        return pos

    def velocity(self, t: float) -> np.ndarray:
        if self.amplitude is None or not self.frequency:
            return np.zeros_like(np.asarray(self.offset, dtype=float))
        ph = 0.0 if self.phase is None else self.phase
        return self.amplitude * self.frequency * np.cos(self.frequency * t + ph)

    def acceleration(self, t: float) -> np.ndarray:
        if self.amplitude is None or not self.frequency:
            return np.zeros_like(np.asarray(self.offset, dtype=float))
        ph = 0.0 if self.phase is None else self.phase
        return -self.amplitude * self.frequency**2 * np.sin(self.frequency * t + ph)


@dataclass(frozen=True, eq=False)
class Scenario:
    model: SystemModel
    sampling: SamplingConfig
    topology_set: TopologySet
    process_std: float = 1e-4
    sensor_std: float = 5e-3
    seed: int = 0
    target: Target | None = None

    def __post_init__(self):
        if self.process_std < 0 or self.sensor_std < 0:
            raise ValueError("noise standard deviations must be non-negative")

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


# ---------------------------------------------------------------------------
# Double-integrator network
# ---------------------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def default_lookahead(n_agents: int, base: float = 0.5) -> np.ndarray:
    """Per-link lookahead constants in ``[base, 2 base)``.

    Values follow a golden-ratio sequence over the pair index so they are
    deterministic and pairwise distinct.
    """
    tau = np.zeros((n_agents, n_agents))
    for i, j in itertools.combinations(range(n_agents), 2):
        frac = ((i + 1) * (j + 2) * _GOLDEN) % 1.0
        tau[i, j] = tau[j, i] = base * (1.0 + frac)
    return tau


def build_double_integrator_network(
    N: int,
    dims: int,
    topo: Topology | None = None,
    *,
    lookahead: np.ndarray | float | None = None,
    leader: int = 0,
    leader_measured: bool = True,
) -> SystemModel:
    """Network of ``N`` double integrators in ``dims`` spatial dimensions.

    State ordering is agent-major: ``[p_0, v_0, p_1, v_1, ...]`` with each
    block ``dims`` long. Inputs are per-agent forces (unit mass). For every
    edge ``(i, j)``, ``i < j``, the measurement carries the relative position
    extrapolated over the link lookahead ``tau_ij``:
    ``(p_i - p_j) + tau_ij (v_i - v_j)``. The leader additionally measures
    its absolute position and velocity. Leader rows come first, then edges
    in sorted order.
    """
    if N < 2:
        raise ValueError("need at least two agents")
    if dims not in (1, 2, 3):
        raise ValueError("dims must be 1, 2 or 3")
    if topo is not None and topo.n != N:
        raise ValueError(f"topology has {topo.n} nodes but N={N}")
    if not 0 <= leader < N:
        raise ValueError("leader index out of range")

    if lookahead is None:
        tau = default_lookahead(N)
    elif np.isscalar(lookahead):
        tau = np.full((N, N), float(lookahead))
    else:
        tau = np.asarray(lookahead, dtype=float)
        if tau.shape != (N, N):
            raise ValueError("lookahead matrix must be N x N")
    tau = tau.copy()
    tau.setflags(write=False)

    d = dims
    p, q = 2 * d * N, d * N
    A = np.zeros((p, p))
    B = np.zeros((p, q))
    eye = np.eye(d)
    for i in range(N):
        A[2 * d * i : 2 * d * i + d, 2 * d * i + d : 2 * d * (i + 1)] = eye
        B[2 * d * i + d : 2 * d * (i + 1), d * i : d * (i + 1)] = eye

    def pos(i):
        return slice(2 * d * i, 2 * d * i + d)

    def vel(i):
        return slice(2 * d * i + d, 2 * d * (i + 1))

    def matrix_map(t: Topology):
        rows = []
        if leader_measured:
            lp = np.zeros((d, p))
            lp[:, pos(leader)] = eye
            lv = np.zeros((d, p))
            lv[:, vel(leader)] = eye
            rows += [lp, lv]
        for i, j in t.edges():
            r = np.zeros((d, p))
            r[:, pos(i)] = eye
            r[:, pos(j)] = -eye
            r[:, vel(i)] = tau[i, j] * eye
            r[:, vel(j)] = -tau[i, j] * eye
            rows.append(r)
        C = np.vstack(rows) if rows else np.zeros((0, p))
        return A, B, C

    return SystemModel(
        state_dim=p,
        input_dim=q,
        matrix_map=matrix_map,
        a_fixed=True,
        b_fixed=True,
        n_agents=N,
        name=f"double_integrator_{N}x{d}d",
        default_topology=topo,
        meta={"dims": d, "leader": leader, "lookahead": tau, "leader_measured": leader_measured},
    )


def build_cartpole(
    M: float = 0.5,
    m: float = 0.2,
    b: float = 0.1,
    inertia: float = 0.006,
    g: float = 9.8,
    length: float = 0.3,
) -> SystemModel:
    """Cart-pole linearised about the upright equilibrium, cart position measured.

    State ``[x, v, phi, omega]``; default parameters are the common teaching
    values (cart 0.5 kg, pole 0.2 kg, friction 0.1, pivot-to-COM 0.3 m).
    """
    den = inertia * (M + m) + M * m * length**2
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -(inertia + m * length**2) * b / den, m**2 * g * length**2 / den, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, -m * length * b / den, m * g * length * (M + m) / den, 0.0],
        ]
    )
    B = np.array([[0.0], [(inertia + m * length**2) / den], [0.0], [m * length / den]])
    C = np.array([[1.0, 0.0, 0.0, 0.0]])
    topo = Topology.empty(1)
    return SystemModel(
        state_dim=4,
        input_dim=1,
        matrix_map=lambda _t: (A, B, C),
        n_agents=1,
        name="cartpole",
        default_topology=topo,
    )


def build_matrix_model(A, B, C, name: str = "matrices") -> SystemModel:
    """Topology-independent model from explicit matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if B.shape[0] != A.shape[0] and B.shape[1] == A.shape[0]:
        B = B.T
    return SystemModel(
        state_dim=A.shape[0],
        input_dim=B.shape[1],
        matrix_map=lambda _t: (A, B, C),
        name=name,
        default_topology=None,
    )


# ---------------------------------------------------------------------------
# Admissible topology sets
# ---------------------------------------------------------------------------


def disk_graph_edges(positions, radius: float) -> list[tuple[int, int]]:
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 1 and np.ndim(positions) == 1:
        pts = pts.T
    n = pts.shape[0]
    edges = []
    for i, j in itertools.combinations(range(n), 2):
        if np.linalg.norm(pts[i] - pts[j]) <= radius:
            edges.append((i, j))
    return edges


def _sorted_topologies(topos) -> tuple[Topology, ...]:
    return tuple(sorted(set(topos), key=lambda t: t.flat_key()))


def enumerate_feasible_topologies(
    positions,
    radius: float,
    density_cap: float = 1.0,
    *,
    max_candidates: int = 500_000,
) -> tuple[Topology, ...]:
    """Every connected subgraph of the disk graph with density at most ``density_cap``.

    Returns an empty tuple (not an error) when nothing is admissible. Raises
    ``ValueError`` when the search space exceeds ``max_candidates`` subsets;
    use :func:`sample_feasible_topologies` for large networks.
    """
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    n = pts.shape[0]
    candidates = disk_graph_edges(pts, radius)
    max_edges = math.floor(density_cap * n * (n - 1) / 2 + 1e-9)
    lo, hi = n - 1, min(max_edges, len(candidates))
    total = sum(math.comb(len(candidates), m) for m in range(lo, hi + 1))
    if total > max_candidates:
        raise ValueError(
            f"{total} candidate subgraphs exceed max_candidates={max_candidates}; "
            "sample instead"
        )
    found = []
    for m in range(lo, hi + 1):
        for subset in itertools.combinations(candidates, m):
            if _connected(n, subset):
                found.append(Topology.from_edges(n, subset))
    return _sorted_topologies(found)


def spanning_tree_topology(positions, radius: float, rng=None) -> Topology | None:
    """Minimum-length spanning tree of the disk graph (random weights if ``rng``)."""
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    n = pts.shape[0]
    cand = disk_graph_edges(pts, radius)
    if rng is None:
        weights = [np.linalg.norm(pts[i] - pts[j]) for i, j in cand]
    else:
        weights = rng.random(len(cand)).tolist()
    uf = _UnionFind(n)
    tree = []
    for _w, (i, j) in sorted(zip(weights, cand)):
        if uf.union(i, j):
            tree.append((i, j))
    if len(tree) != n - 1:
        return None
    return Topology.from_edges(n, tree)


def sample_feasible_topologies(
    positions,
    radius: float,
    density_cap: float,
    count: int,
    rng: np.random.Generator,
    *,
    min_edges: int | None = None,
    max_tries: int | None = None,
) -> tuple[Topology, ...]:
    """Random connected disk subgraphs with density at most ``density_cap``.

    Each sample is a random spanning tree augmented with uniformly chosen extra
    disk edges up to a random size in ``[min_edges, cap]``.
    """
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    n = pts.shape[0]
    cand = disk_graph_edges(pts, radius)
    max_edges = min(len(cand), math.floor(density_cap * n * (n - 1) / 2 + 1e-9))
    lo = n - 1 if min_edges is None else max(n - 1, min_edges)
    if max_edges < lo:
        return ()
    out: set[Topology] = set()
    tries = 0
    limit = max_tries if max_tries is not None else 20 * count
    while len(out) < count and tries < limit:
        tries += 1
        tree = spanning_tree_topology(pts, radius, rng)
        if tree is None:
            return ()
        edges = set(tree.edges())
        size = int(rng.integers(lo, max_edges + 1))
        extra = [e for e in cand if e not in edges]
        rng.shuffle(extra)
        edges.update(extra[: max(0, size - len(edges))])
        out.add(Topology.from_edges(n, edges))
    return _sorted_topologies(out)
