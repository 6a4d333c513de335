"""Topology switching that minimizes attack impact while keeping attacks visible.

One option (topology plus feedback gain) is chosen per sensing step. The
choice minimizes the closed-loop robustness metric subject to lower bounds on
controllability, observability and sensitivity. Three solvers are offered:

* :func:`brute_force_select` enumerates every option sequence;
* :func:`solve_shor` solves the convex relaxation of the lifted problem;
* :func:`solve_rank_iteration` pushes the lifted matrix towards rank one
  and certifies each projected candidate exactly.

The lifted problem encodes the per-step choice with one-hot indicators
``lambda_{k,t}``; option 0 of each step is the reference, so only
``theta_{k,t} = lambda_{k,t}`` for ``t >= 1`` are variables. ``Z`` is the
lifting of ``[1; theta]``: its diagonal equals ``theta``, same-step products
vanish and cross-step products are free variables ``w``. ``Z`` has rank one
exactly when ``theta`` is a valid one-hot choice.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from . import sdp as sdp_mod
from .discretize import StackedOperators, assemble_stacked
from .feedback import closed_loop_joint_map, consensus_gain, memoryless_gains
from .metrics import MetricReport, compute_metrics, robustness_metric, symmetric_extreme_eigen
from .model import SamplingConfig, SystemModel, Topology, TopologySet

__all__ = [
    "Thresholds",
    "SwitchOption",
    "SwitchingInstance",
    "SwitchResult",
    "LiftedProblem",
    "StabilitySpec",
    "NoFeasibleSequence",
    "SearchCapExceeded",
    "RelaxationInfeasible",
    "SolverFailure",
    "exact_metrics",
    "brute_force_select",
    "build_lifted_problem",
    "add_stability_constraint",
    "solve_shor",
    "solve_rank_iteration",
    "receding_horizon_select",
    "stitch_schedule",
    "BRUTE_FORCE_CAP",
]

log = logging.getLogger(__name__)

BRUTE_FORCE_CAP = 10_000


class NoFeasibleSequence(ValueError):
    """No option sequence meets the metric thresholds."""


class SearchCapExceeded(ValueError):
    """The enumeration would exceed the configured sequence cap."""


class RelaxationInfeasible(RuntimeError):
    """The convex relaxation has no feasible point, so neither does the original problem."""


class SolverFailure(RuntimeError):
    """The conic solver stopped without a usable answer."""


@dataclass(frozen=True)
class Thresholds:
    c_c: float = 1e-6
    c_o: float = 1e-8
    c_s: float = 1e-9

    def __post_init__(self):
        for name in ("c_c", "c_o", "c_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"threshold {name} must be positive")

    def admits(self, report: MetricReport) -> bool:
        return report.j_con >= self.c_c and report.j_obs >= self.c_o and report.j_sen >= self.c_s


@dataclass(frozen=True, eq=False)
class SwitchOption:
    """A topology together with the memoryless output gain used while it is active."""

    topology: Topology
    gain: np.ndarray | None = None
    label: str = ""


GainPolicy = Callable[[SystemModel, Topology], np.ndarray]


def _gain_policy(policy) -> GainPolicy | None:
    if policy is None or policy == "zero":
        return None
    if policy == "consensus":
        return lambda model, topo: consensus_gain(model, topo)
    if callable(policy):
        return policy
    raise ValueError(f"unknown gain policy {policy!r}; use 'zero', 'consensus' or a callable")


# ---------------------------------------------------------------------------
# exact evaluation
# ---------------------------------------------------------------------------

def _per_step_gains(model, schedule, gains, sampling):
    out = []
    for topo, G in zip(schedule, gains):
        r = model.output_dim(topo)
        out.append(np.zeros((model.q, r)) if G is None else np.asarray(G, dtype=float))
    return memoryless_gains(sampling, out)


def exact_metrics(
    model: SystemModel,
    sampling: SamplingConfig,
    schedule: Sequence[Topology],
    gains: Sequence[np.ndarray | None] | None = None,
    q_rob=None,
) -> MetricReport:
    """Metrics of one schedule built from scratch.

    Controllability, observability and sensitivity use the open-loop maps;
    robustness uses the closed loop under the per-step memoryless ``gains``.
    """
    ops = assemble_stacked(model, sampling, list(schedule))
    base = compute_metrics(ops)
    E = None
    if gains is not None and any(g is not None and np.any(g) for g in gains):
        E = closed_loop_joint_map(ops, _per_step_gains(model, schedule, gains, sampling))
    rob = robustness_metric(ops, q_rob, E=E)
    return replace(base, j_rob=max(rob.value, 0.0), q_rob="identity" if q_rob is None else "custom")


@dataclass(frozen=True)
class StabilitySpec:
    """Per-step Lyapunov matrices ``P_0..P_K`` and contraction factor ``alpha``.

    A choice is admissible when ``A_cl,k^T P_{k+1} A_cl,k <= alpha P_k`` for
    every interval ``k < K``.
    """

    P: tuple[np.ndarray, ...]
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        P = tuple(np.asarray(p, dtype=float) for p in self.P)
        for p in P:
            if np.min(np.linalg.eigvalsh(0.5 * (p + p.T))) <= 0:
                raise ValueError("Lyapunov matrices must be positive definite")
        object.__setattr__(self, "P", P)


class SwitchingInstance:
    """Fixed data shared by all solvers: model, horizon, options and thresholds.

    Parameters
    ----------
    model : SystemModel
    sampling : SamplingConfig
    options : sequence of sequence of SwitchOption
        Candidates for each sensing step ``k = 0..K``. Option 0 is the reference.
    thresholds : Thresholds
    q_rob : array_like, optional
        Positive definite state weight for the robustness metric.
    """

    def __init__(self, model, sampling, options, thresholds=Thresholds(), q_rob=None):
        self.model = model
        self.sampling = sampling
        self.options = tuple(tuple(o) for o in options)
        self.thresholds = thresholds
        K = sampling.n_sense
        if len(self.options) != K + 1:
            raise ValueError(f"need options for {K + 1} sensing steps, got {len(self.options)}")
        if any(len(o) == 0 for o in self.options):
            raise ValueError("every sensing step needs at least one option")
        self.ops = assemble_stacked(model, sampling, [o[0].topology for o in self.options])
        n = self.ops.A_stack.shape[0]
        self.Q = np.eye(n) if q_rob is None else np.asarray(q_rob, dtype=float)
        self.q_rob = q_rob
        if self.Q.shape != (n, n):
            raise ValueError(f"q_rob must be {n}x{n}")
        try:
            cQ = sla.cho_factor(0.5 * (self.Q + self.Q.T))
        except np.linalg.LinAlgError as exc:
            raise ValueError("q_rob must be positive definite") from exc
        self.Qinv = sla.cho_solve(cQ, np.eye(n))
        self.fixed_dynamics = self._dynamics_fixed()
        self.j_con = max(symmetric_extreme_eigen(self.ops.B_last @ self.ops.B_last.T).value, 0.0)
        self._prepare()

    @classmethod
    def from_topologies(
        cls,
        model: SystemModel,
        sampling: SamplingConfig,
        topology_set: TopologySet | Sequence[Sequence[Topology]],
        *,
        gain_policy="zero",
        gain_levels: Sequence[float] = (1.0,),
        thresholds: Thresholds = Thresholds(),
        q_rob=None,
    ) -> "SwitchingInstance":
        """Options from admissible topologies.

        With a gain policy, each topology is offered once per entry of
        ``gain_levels`` (the policy gain scaled by that level), so the gain
        level is chosen jointly with the topology.
        """
        policy = _gain_policy(gain_policy)
        steps = topology_set.steps if isinstance(topology_set, TopologySet) else topology_set
        options = []
        for members in steps:
            opts = []
            for topo in members:
                if policy is None:
                    opts.append(SwitchOption(topo, None, "zero"))
                    continue
                G = np.asarray(policy(model, topo), dtype=float)
                for lev in gain_levels:
                    opts.append(SwitchOption(topo, lev * G, f"x{lev:g}"))
            options.append(opts)
        return cls(model, sampling, options, thresholds, q_rob)

    # -- cached per-option data -------------------------------------------

    def _dynamics_fixed(self) -> bool:
        if not (self.model.a_fixed and self.model.b_fixed):
            return False
        A0, B0, _ = self.model.matrices(self.options[0][0].topology)
        for step in self.options:
            for o in step:
                A, B, _ = self.model.matrices(o.topology)
                if not (np.array_equal(A, A0) and np.array_equal(B, B0)):
                    return False
        return True

    def _prepare(self):
        ops, sampling = self.ops, self.sampling
        K, p, q = ops.K, ops.p, ops.q
        n = p * (K + 1)
        act = np.flatnonzero(ops.active)
        self.active_inputs = act
        self.input_step = np.array([min(sampling.latest_sense_index(l), K) for l in act], dtype=int)
        self.C = []
        self.CtC = []
        self.step_kc = []
        for k, step in enumerate(self.options):
            Cs, CtCs, KCs = [], [], []
            for o in step:
                C = np.asarray(self.model.matrices(o.topology)[2])
                if o.gain is not None and np.asarray(o.gain).shape != (q, C.shape[0]):
                    raise ValueError(
                        f"step {k}: gain shape {np.asarray(o.gain).shape} does not match "
                        f"({q}, {C.shape[0]})"
                    )
                Cs.append(C)
                CtCs.append(C.T @ C)
                KC = np.zeros((act.size * q, n))
                if o.gain is not None:
                    GC = np.asarray(o.gain, dtype=float) @ C
                    for j in np.flatnonzero(self.input_step == k):
                        KC[j * q : (j + 1) * q, ops.state_rows(k)] = GC
                KCs.append(KC)
            self.C.append(Cs)
            self.CtC.append(CtCs)
            self.step_kc.append(KCs)
        self.has_feedback = any(np.any(KC) for KCs in self.step_kc for KC in KCs)
        E = ops.E
        self.E_rows = [E[ops.state_rows(k)] for k in range(K + 1)]
        self.A_rows = [ops.A_stack[ops.state_rows(k)] for k in range(K + 1)]

    @property
    def K(self) -> int:
        return self.ops.K

    @property
    def n_sequences(self) -> int:
        return int(np.prod([len(o) for o in self.options]))

    def schedule(self, choice: Sequence[int]) -> tuple[Topology, ...]:
        return tuple(self.options[k][t].topology for k, t in enumerate(choice))

    def gains(self, choice: Sequence[int]) -> tuple[np.ndarray | None, ...]:
        return tuple(self.options[k][t].gain for k, t in enumerate(choice))

    def KC(self, choice: Sequence[int]) -> np.ndarray:
        return sum(self.step_kc[k][t] for k, t in enumerate(choice))

    def evaluate(self, choice: Sequence[int]) -> MetricReport:
        """Exact metrics of one option sequence."""
        choice = tuple(int(t) for t in choice)
        if not self.fixed_dynamics:
            return exact_metrics(
                self.model, self.sampling, self.schedule(choice), self.gains(choice), self.q_rob
            )
        obs = sum(A.T @ self.CtC[k][t] @ A for k, (t, A) in enumerate(zip(choice, self.A_rows)))
        sen = sum(E.T @ self.CtC[k][t] @ E for k, (t, E) in enumerate(zip(choice, self.E_rows)))
        E = self.ops.E
        if self.has_feedback:
            KC = self.KC(choice)
            Lmat = np.eye(E.shape[0]) - self.ops.B_active @ KC
            E = sla.solve_triangular(Lmat, E, lower=True, unit_diagonal=True)
        rob = symmetric_extreme_eigen(E.T @ self.Q @ E, "max")
        o = symmetric_extreme_eigen(obs, "min")
        s = symmetric_extreme_eigen(sen, "min")
        return MetricReport(
            j_con=self.j_con,
            j_obs=max(o.value, 0.0),
            j_rob=max(rob.value, 0.0),
            j_sen=max(s.value, 0.0),
            K=self.ops.K,
            L=self.ops.L,
            q_rob="identity" if self.q_rob is None else "custom",
            j_con_zero=self.j_con == 0.0,
            j_obs_zero=o.clamped,
            j_sen_zero=s.clamped,
        )

    def closed_loop_step(self, k: int, t: int) -> np.ndarray:
        """One-interval closed-loop transition ``x_{k+1} = A_cl x_k`` under option ``t``."""
        blocks = self.ops.input_blocks[k]
        for ell in blocks:
            if min(self.sampling.latest_sense_index(ell), self.K) != k:
                raise ValueError(
                    "an input hold window straddles a sensing instant, so the closed loop "
                    "is not a one-step map; use dt_y that is a multiple of dt_u"
                )
        A_cl = np.array(self.ops.S[k], dtype=float)
        gain = self.options[k][t].gain
        if gain is not None and blocks:
            HB = sum(blocks.values())
            A_cl = A_cl + HB @ np.asarray(gain) @ self.C[k][t]
        return A_cl

    def is_stable(self, choice, spec: StabilitySpec, tol: float = 1e-10) -> bool:
        for k in range(self.K):
            A_cl = self.closed_loop_step(k, choice[k])
            D = spec.alpha * spec.P[k] - A_cl.T @ spec.P[k + 1] @ A_cl
            if np.min(np.linalg.eigvalsh(0.5 * (D + D.T))) < -tol * max(1.0, np.abs(spec.P[k]).max()):
                return False
        return True


# ---------------------------------------------------------------------------
# result type
# ---------------------------------------------------------------------------

@dataclass
class SwitchResult:
    """Chosen option sequence with its exact metrics.

    ``gamma_relax`` is the optimal value of the convex relaxation when one
    was solved; it lower-bounds the robustness of every admissible choice.
    """

    choice: tuple[int, ...]
    schedule: tuple[Topology, ...]
    gains: tuple[np.ndarray | None, ...]
    report: MetricReport
    method: str
    status: str
    feasible: bool = True
    gamma_relax: float | None = None
    rounds: int = 0
    rank_ratio: float | None = None
    evaluated: int = 0
    history: list = field(default_factory=list)

    @property
    def j_rob(self) -> float:
        return self.report.j_rob

    @property
    def relaxation_gap(self) -> float | None:
        if self.gamma_relax is None:
            return None
        return self.report.j_rob - self.gamma_relax

    def audit(self, instance: SwitchingInstance, rtol: float = 1e-8) -> dict:
        """Recompute all metrics from scratch and compare with the stored report."""
        fresh = exact_metrics(instance.model, instance.sampling, self.schedule, self.gains, instance.q_rob)
        diffs = {}
        for name in ("j_con", "j_obs", "j_rob", "j_sen"):
            a, b = getattr(self.report, name), getattr(fresh, name)
            diffs[name] = abs(a - b) / max(1.0, abs(b))
        return {"max_rel_diff": max(diffs.values()), "diffs": diffs, "ok": max(diffs.values()) <= rtol}

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "feasible": self.feasible,
            "choice": list(self.choice),
            "schedule": [t.adjacency.tolist() for t in self.schedule],
            "gains": [None if g is None else np.asarray(g).tolist() for g in self.gains],
            "metrics": self.report.to_dict(),
            "gamma_relax": self.gamma_relax,
            "relaxation_gap": self.relaxation_gap,
            "rounds": self.rounds,
            "rank_ratio": self.rank_ratio,
            "evaluated": self.evaluated,
            "history": self.history,
        }


def _result(instance, choice, report, method, status, **kw) -> SwitchResult:
    choice = tuple(int(t) for t in choice)
    return SwitchResult(
        choice=choice,
        schedule=instance.schedule(choice),
        gains=instance.gains(choice),
        report=report,
        method=method,
        status=status,
        feasible=instance.thresholds.admits(report),
        **kw,
    )


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def brute_force_select(
    instance: SwitchingInstance,
    *,
    cap: int = BRUTE_FORCE_CAP,
    jobs: int = 1,
    stability: StabilitySpec | None = None,
) -> SwitchResult:
    """Exhaustive search for the admissible sequence with least robustness.

    Sequences are visited in lexicographic order of option indices and ties
    (relative difference below ``1e-12``) keep the earliest sequence, so the
    answer does not depend on ``jobs``.

    Raises
    ------
    SearchCapExceeded
        If the number of sequences exceeds ``cap``.
    NoFeasibleSequence
        If no sequence meets the thresholds (and the stability condition).
    """
    total = instance.n_sequences
    if total > cap:
        raise SearchCapExceeded(f"{total} option sequences exceed the cap of {cap}")
    choices = list(itertools.product(*[range(len(o)) for o in instance.options]))

    def work(choice):
        if stability is not None and not instance.is_stable(choice, stability):
            return None
        return instance.evaluate(choice)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(work, choices, chunksize=max(1, len(choices) // (4 * jobs))))
    else:
        reports = [work(c) for c in choices]

    best, best_rep = None, None
    n_feasible = 0
    for choice, rep in zip(choices, reports):
        if rep is None or not instance.thresholds.admits(rep):
            continue
        n_feasible += 1
        if best_rep is None or rep.j_rob < best_rep.j_rob - 1e-12 * max(1.0, abs(best_rep.j_rob)):
            best, best_rep = choice, rep
    if best is None:
        raise NoFeasibleSequence(
            f"none of the {total} option sequences meets the thresholds {instance.thresholds}"
        )
    return _result(
        instance, best, best_rep, "brute_force", "optimal",
        evaluated=total, history=[{"feasible_sequences": n_feasible}],
    )


# ---------------------------------------------------------------------------
# lifted problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LiftedProblem:
    """Lifted conic program together with the bookkeeping needed to read it back.

    ``Z(x) = Z0 + sum_i x_i Zterms[i]`` is the lifted indicator matrix.
    """

    instance: SwitchingInstance
    problem: sdp_mod.SdpProblem
    gamma: int
    theta: dict
    groups: tuple
    w: dict
    Z0: np.ndarray
    Zterms: dict
    con_ok: bool
    stability: StabilitySpec | None = None

    def Z(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        Z = self.Z0.copy()
        for i, M in self.Zterms.items():
            Z += x[i] * M
        return Z

    def point(self, choice: Sequence[int], gamma: float) -> np.ndarray:
        """Variable vector of the rank-one lifting of a concrete choice."""
        x = np.zeros(self.problem.m)
        x[self.gamma] = gamma
        lam = {}
        for (k, t), i in self.theta.items():
            lam[i] = 1.0 if choice[k] == t else 0.0
            x[i] = lam[i]
        for (a, b), i in self.w.items():
            x[i] = lam[a] * lam[b]
        return x

    def theta_from(self, x) -> list[np.ndarray]:
        """Per-step indicator weights ``lambda_k`` (reference first) read from ``x``."""
        out = []
        for k, idx in enumerate(self.groups):
            th = np.array([x[i] for i in idx])
            out.append(np.concatenate([[1.0 - th.sum()], th]))
        return out


def _coef_sum(terms: dict, key: int, M: np.ndarray):
    if key in terms:
        terms[key] = terms[key] + M
    else:
        terms[key] = M.copy()


def build_lifted_problem(
    instance: SwitchingInstance,
    *,
    rlt: bool = True,
    tight: bool = True,
) -> LiftedProblem:
    """Convex lifted program over indicator liftings.

    Variables are ``gamma``, the indicators ``theta`` and the cross-step
    products ``w``. Constraints: the observability and sensitivity Gramians
    exceed their thresholds, the robustness epigraph holds through its Schur
    complement form, the lifted indicator matrix is PSD, and (optionally)
    linear product bounds tighten the relaxation. With ``tight`` and a
    horizon ``K <= 2`` the robustness epigraph is also imposed on the
    expanded closed-loop map, which is affine in the lifted variables.

    Raises
    ------
    ValueError
        If the dynamics ``A`` or ``B`` change with the topology; use
        :func:`brute_force_select` in that case.
    """
    if not instance.fixed_dynamics:
        raise ValueError(
            "the lifted problem needs A and B independent of the topology; "
            "use brute_force_select for this model"
        )
    ops, th = instance.ops, instance.thresholds
    K = ops.K
    b = sdp_mod.LmiBuilder()
    g = b.add_variable("gamma")
    theta, groups = {}, []
    for k, step in enumerate(instance.options):
        idx = []
        for t in range(1, len(step)):
            theta[(k, t)] = b.add_variable(f"theta[{k},{t}]")
            idx.append(theta[(k, t)])
        groups.append(tuple(idx))
    atoms = list(theta.keys())  # Z index a+1 <-> atoms[a]
    var_of_atom = [theta[a] for a in atoms]
    w = {}
    for i, a in enumerate(atoms):
        for j in range(i + 1, len(atoms)):
            bb = atoms[j]
            if a[0] != bb[0]:
                w[(theta[a], theta[bb])] = b.add_variable(f"w[{a[0]},{a[1]}|{bb[0]},{bb[1]}]")
    b.set_objective({g: 1.0})

    # observability and sensitivity: affine in theta because lambda is one-hot
    p = ops.p
    F0o = -th.c_o * np.eye(p)
    F0s = -th.c_s * np.eye(ops.E.shape[1])
    To, Ts = {}, {}
    for k in range(K + 1):
        A_k, E_k = instance.A_rows[k], instance.E_rows[k]
        base = instance.CtC[k][0]
        F0o = F0o + A_k.T @ base @ A_k
        F0s = F0s + E_k.T @ base @ E_k
        for t in range(1, len(instance.options[k])):
            D = instance.CtC[k][t] - base
            To[theta[(k, t)]] = A_k.T @ D @ A_k
            Ts[theta[(k, t)]] = E_k.T @ D @ E_k
    b.add_block(F0o, To, "observability")
    b.add_block(F0s, Ts, "sensitivity")

    # robustness epigraph
    E, B = ops.E, ops.B_active
    n, ne, nu = E.shape[0], E.shape[1], B.shape[1]
    Qi = instance.Qinv
    R = np.linalg.cholesky(0.5 * (Qi + Qi.T))
    G0 = sum(instance.step_kc[k][0] for k in range(K + 1))
    D = [instance.step_kc[k][t] - instance.step_kc[k][0] for (k, t) in atoms]
    P = [G0] + D
    U = [Gm @ Qi for Gm in P]
    V = [B @ Gm @ R for Gm in P]

    def prod(a, c):
        return U[a].T @ U[c] + V[a] @ V[c].T

    N = n + ne + nu
    F0 = np.zeros((N, N))
    Y0 = Qi + B @ B.T + prod(0, 0)
    Fm0 = B + Qi @ G0.T
    F0[:n, :n] = 0.5 * (Y0 + Y0.T)
    F0[:n, n : n + ne] = E
    F0[n : n + ne, :n] = E.T
    F0[:n, n + ne :] = Fm0
    F0[n + ne :, :n] = Fm0.T
    F0[n + ne :, n + ne :] = np.eye(nu)
    terms = {}
    Fg = np.zeros((N, N))
    Fg[n : n + ne, n : n + ne] = np.eye(ne)
    terms[g] = Fg
    if instance.has_feedback:
        for a, var in enumerate(var_of_atom, start=1):
            M = np.zeros((N, N))
            Ya = prod(0, a) + prod(a, 0) + prod(a, a)
            M[:n, :n] = 0.5 * (Ya + Ya.T)
            Fa = Qi @ P[a].T
            M[:n, n + ne :] = Fa
            M[n + ne :, :n] = Fa.T
            _coef_sum(terms, var, M)
        for (va, vb), var in w.items():
            a, c = var_of_atom.index(va) + 1, var_of_atom.index(vb) + 1
            M = np.zeros((N, N))
            Yab = prod(a, c) + prod(c, a)
            M[:n, :n] = 0.5 * (Yab + Yab.T)
            _coef_sum(terms, var, M)
    b.add_block(F0, terms, "robustness")

    # With K <= 2 the feedback product N = B KC is nilpotent of order three,
    # so L^{-1} E = (I + N + N^2) E is affine in (theta, w). This gives a
    # second exact epigraph that is much tighter than the one above.
    if tight and instance.has_feedback and K <= 2:
        Rq = np.linalg.cholesky(0.5 * (instance.Q + instance.Q.T))
        Ns = [B @ Gm for Gm in P]
        Ecl0 = E + Ns[0] @ E + Ns[0] @ Ns[0] @ E
        F0t = np.zeros((ne + n, ne + n))
        F0t[ne:, ne:] = np.eye(n)
        X = Rq.T @ Ecl0
        F0t[ne:, :ne] = X
        F0t[:ne, ne:] = X.T
        tterms = {}
        Fgt = np.zeros_like(F0t)
        Fgt[:ne, :ne] = np.eye(ne)
        tterms[g] = Fgt

        def embed(Mx):
            out = np.zeros_like(F0t)
            X = Rq.T @ Mx
            out[ne:, :ne] = X
            out[:ne, ne:] = X.T
            return out

        for a, var in enumerate(var_of_atom, start=1):
            Na = Ns[a] + Ns[0] @ Ns[a] + Ns[a] @ Ns[0] + Ns[a] @ Ns[a]
            tterms[var] = embed(Na @ E)
        for (va, vb), var in w.items():
            a, c = var_of_atom.index(va) + 1, var_of_atom.index(vb) + 1
            tterms[var] = embed((Ns[a] @ Ns[c] + Ns[c] @ Ns[a]) @ E)
        b.add_block(F0t, tterms, "robustness-expanded")

    # lifted indicator matrix
    nz = len(atoms) + 1
    Z0 = np.zeros((nz, nz))
    Z0[0, 0] = 1.0
    Zterms = {}
    for a, var in enumerate(var_of_atom, start=1):
        M = np.zeros((nz, nz))
        M[0, a] = M[a, 0] = M[a, a] = 1.0
        Zterms[var] = M
    for (va, vb), var in w.items():
        a, c = var_of_atom.index(va) + 1, var_of_atom.index(vb) + 1
        M = np.zeros((nz, nz))
        M[a, c] = M[c, a] = 1.0
        Zterms[var] = M
    if nz > 1:
        b.add_block(Z0, Zterms, "lifting")

    if rlt:
        for k, idx in enumerate(groups):
            if idx:
                b.add_scalar(1.0, {i: -1.0 for i in idx}, f"reference[{k}]")
        for (va, vb), var in w.items():
            b.add_scalar(0.0, {var: 1.0}, "w>=0")
            b.add_scalar(0.0, {va: 1.0, var: -1.0}, "w<=theta_a")
            b.add_scalar(0.0, {vb: 1.0, var: -1.0}, "w<=theta_b")
            b.add_scalar(1.0, {va: -1.0, vb: -1.0, var: 1.0}, "w>=theta_a+theta_b-1")
        # products with the reference option of another step are non-negative
        for (k, t), va in theta.items():
            for k2, idx in enumerate(groups):
                if k2 == k or not idx:
                    continue
                row = {va: 1.0}
                for vb in idx:
                    row[w[tuple(sorted((va, vb)))]] = -1.0
                b.add_scalar(0.0, row, f"ref-product[{k},{t}|{k2}]")
        for k, ia in enumerate(groups):
            for k2 in range(k + 1, len(groups)):
                ib = groups[k2]
                if not ia or not ib:
                    continue
                row = {i: -1.0 for i in ia + ib}
                for va in ia:
                    for vb in ib:
                        row[w[tuple(sorted((va, vb)))]] = 1.0
                b.add_scalar(1.0, row, f"ref-ref[{k}|{k2}]")

    return LiftedProblem(
        instance=instance,
        problem=b.build(),
        gamma=g,
        theta=theta,
        groups=tuple(groups),
        w=w,
        Z0=Z0,
        Zterms=Zterms,
        con_ok=instance.j_con >= th.c_c,
    )


def add_stability_constraint(lifted: LiftedProblem, P: Sequence[np.ndarray], alpha: float) -> LiftedProblem:
    """Append ``[[alpha P_k, A_cl,k^T], [A_cl,k, P_{k+1}^{-1}]] >= 0`` for each interval.

    ``A_cl,k`` is affine in the indicators because the memoryless gain of
    interval ``k`` acts on the output of step ``k`` only. This certifies
    ``V_{k+1} <= alpha V_k`` for ``V_k = x_k^T P_k x_k``.

    Raises
    ------
    ValueError
        If an input hold window straddles a sensing instant, or the sizes
        of ``P`` do not match.
    """
    spec = StabilitySpec(tuple(P), alpha)
    inst = lifted.instance
    K, p = inst.K, inst.ops.p
    if len(spec.P) != K + 1 or any(Pk.shape != (p, p) for Pk in spec.P):
        raise ValueError(f"need {K + 1} Lyapunov matrices of size {p}x{p}")
    blocks = list(lifted.problem.blocks)
    for k in range(K):
        Pn_inv = np.linalg.inv(spec.P[k + 1])
        Pn_inv = 0.5 * (Pn_inv + Pn_inv.T)
        base = inst.closed_loop_step(k, 0)
        F0 = np.block([[alpha * spec.P[k], base.T], [base, Pn_inv]])
        idx, F = [], []
        for t in range(1, len(inst.options[k])):
            Dk = inst.closed_loop_step(k, t) - base
            if np.any(Dk):
                idx.append(lifted.theta[(k, t)])
                F.append(np.block([[np.zeros((p, p)), Dk.T], [Dk, np.zeros((p, p))]]))
        blocks.append(
            sdp_mod.LmiBlock(F0, np.array(idx, dtype=int), np.array(F).reshape(len(idx), 2 * p, 2 * p), f"stability[{k}]")
        )
    problem = replace(lifted.problem, blocks=tuple(blocks))
    return replace(lifted, problem=problem, stability=spec)


# ---------------------------------------------------------------------------
# relaxation solvers
# ---------------------------------------------------------------------------

def _solve(problem, tol):
    sol = sdp_mod.solve(problem, tol=tol, keep_trace=False)
    if sol.status == "infeasible":
        raise RelaxationInfeasible("the lifted relaxation is infeasible")
    if sol.status in ("numerical_failure", "max_iter"):
        # a stall close to the optimum is still a usable point for projection
        scale = 1.0 + abs(sol.primal_objective)
        if sol.violation <= 1e-7 and abs(sol.duality_gap) <= 1e-5 * scale:
            log.debug("accepting stalled solve: gap %.2e, violation %.2e", sol.duality_gap, sol.violation)
            return sol
    if sol.status != "optimal":
        raise SolverFailure(f"conic solver stopped with status {sol.status!r}")
    return sol


def _rank_ratio(Z: np.ndarray) -> tuple[float, np.ndarray]:
    w, V = np.linalg.eigh(0.5 * (Z + Z.T))
    lead = V[:, -1]
    if Z.shape[0] < 2 or w[-1] <= 0:
        return 0.0, lead
    return float(max(w[-2], 0.0) / w[-1]), lead


def _lead_weights(lifted: LiftedProblem, x) -> list[np.ndarray]:
    """Per-step indicator weights read from the leading eigenvector of ``Z(x)``."""
    _, lead = _rank_ratio(lifted.Z(x))
    if abs(lead[0]) <= 1e-9:
        return lifted.theta_from(x)
    v = lead / lead[0]
    th = np.zeros(lifted.problem.m)
    for var, M in lifted.Zterms.items():
        if M[0, 1:].any():
            th[var] = v[int(np.argmax(M[0]))]
    return lifted.theta_from(th)


def _project(lifted: LiftedProblem, weights: list[np.ndarray]) -> list[tuple[int, ...]]:
    """Snap each step to the admissible topology nearest in Hamming distance.

    The weighted adjacency ``sum_t lambda_t A_t`` is rounded at one half;
    ties go to the larger weight. Every gain option sharing the snapped
    topology is returned so the caller can pick the gains exactly.
    """
    per_step = []
    for k, lam in enumerate(weights):
        opts = lifted.instance.options[k]
        est = sum(l * o.topology.adjacency.astype(float) for l, o in zip(lam, opts))
        pattern = est >= 0.5
        dist = [int(np.count_nonzero(o.topology.adjacency.astype(bool) != pattern)) for o in opts]
        near = [t for t in range(len(opts)) if dist[t] == min(dist)]
        topo = opts[max(near, key=lambda t: lam[t])].topology
        per_step.append([t for t, o in enumerate(opts) if o.topology == topo])
    return list(itertools.product(*per_step))


def _next_unseen(weights, seen) -> tuple[int, ...] | None:
    """Highest-weight choice not yet seen, among the two heaviest options per step."""
    tops = [np.argsort(-np.asarray(l), kind="stable")[:2] for l in weights]
    best, score = None, -np.inf
    for c in itertools.product(*tops):
        c = tuple(int(t) for t in c)
        sc = sum(weights[k][t] for k, t in enumerate(c))
        if c not in seen and sc > score:
            best, score = c, sc
    return best


def _candidates(lifted, x, seen=()) -> list[tuple[int, ...]]:
    out = []
    sources = (_lead_weights(lifted, x), lifted.theta_from(x))
    for weights in sources:
        for c in _project(lifted, weights):
            if c not in out:
                out.append(c)
    if all(c in seen for c in out):
        # the snapped choices were already examined; move to the next nearest one
        extra = _next_unseen(sources[0], set(seen))
        if extra is not None:
            out.append(extra)
    return out


class _Tracker:
    def __init__(self, lifted: LiftedProblem):
        self.lifted = lifted
        self.best = None
        self.best_rep = None
        self.seen = {}

    def offer(self, choice):
        inst = self.lifted.instance
        if choice not in self.seen:
            rep = inst.evaluate(choice)
            ok = inst.thresholds.admits(rep)
            if ok and self.lifted.stability is not None:
                ok = inst.is_stable(choice, self.lifted.stability)
            self.seen[choice] = (rep, ok)
        rep, ok = self.seen[choice]
        if ok and (self.best_rep is None or rep.j_rob < self.best_rep.j_rob - 1e-12 * max(1.0, self.best_rep.j_rob)):
            self.best, self.best_rep = choice, rep
        return rep, ok


def _finish(lifted, tracker, method, status, gamma_relax, rounds, ratio, history):
    inst = lifted.instance
    if tracker.best is None:
        # report the last projected candidate, flagged as not certified
        choice = next(reversed(tracker.seen))
        rep = tracker.seen[choice][0]
        res = _result(inst, choice, rep, method, "no_certified_candidate",
                      gamma_relax=gamma_relax, rounds=rounds, rank_ratio=ratio,
                      evaluated=len(tracker.seen), history=history)
        res.feasible = False
        return res
    return _result(inst, tracker.best, tracker.best_rep, method, status,
                   gamma_relax=gamma_relax, rounds=rounds, rank_ratio=ratio,
                   evaluated=len(tracker.seen), history=history)


def _scalar(f0: float, terms: dict, name: str) -> sdp_mod.LmiBlock:
    idx = np.array(list(terms.keys()), dtype=int)
    F = np.array([[[v]] for v in terms.values()], dtype=float).reshape(len(idx), 1, 1)
    return sdp_mod.LmiBlock(np.array([[f0]]), idx, F, name)


def _exclusion_cut(lifted: LiftedProblem, choice) -> sdp_mod.LmiBlock | None:
    """Linear cut ``sum_k lambda_{k, c_k} <= K`` removing one one-hot point."""
    K = len(choice) - 1
    f0, terms = float(K), {}
    for k, t in enumerate(choice):
        if t == 0:
            f0 -= 1.0
            for var in lifted.groups[k]:
                terms[var] = terms.get(var, 0.0) + 1.0
        else:
            var = lifted.theta[(k, t)]
            terms[var] = terms.get(var, 0.0) - 1.0
    if not terms:
        return None
    return _scalar(f0, terms, f"exclude{tuple(choice)}")


def _check_con(lifted):
    if not lifted.con_ok:
        inst = lifted.instance
        raise RelaxationInfeasible(
            f"controllability {inst.j_con:.3e} is below c_c={inst.thresholds.c_c:.1e}"
        )


def solve_shor(lifted: LiftedProblem, *, tol: float = 1e-9) -> SwitchResult:
    """Solve the convex relaxation once and project its solution to a choice.

    ``gamma_relax`` lower-bounds the robustness of every admissible choice.

    Raises
    ------
    RelaxationInfeasible
        When the relaxation (hence the original problem) is infeasible.
    SolverFailure
        When the conic solver fails numerically.
    """
    _check_con(lifted)
    sol = _solve(lifted.problem, tol)
    gamma = float(sol.x[lifted.gamma])
    ratio, _ = _rank_ratio(lifted.Z(sol.x))
    tracker = _Tracker(lifted)
    history = [{"relaxed_theta": [l.tolist() for l in lifted.theta_from(sol.x)]}]
    for c in _candidates(lifted, sol.x):
        rep, ok = tracker.offer(c)
        history.append({"candidate": list(c), "j_rob": rep.j_rob, "certified": ok})
    return _finish(lifted, tracker, "shor", "optimal", gamma, 1, ratio, history)


def solve_rank_iteration(
    lifted: LiftedProblem,
    *,
    max_rounds: int = 80,
    max_restarts: int = 20,
    pass_rounds: int = 8,
    rho0: float | None = None,
    growth: float = 3.0,
    ratio_tol: float = 1e-6,
    tol: float = 1e-9,
) -> SwitchResult:
    """Convex iteration towards a rank-one lifting, restarted with cuts.

    Each round adds ``rho <W, Z>`` to the objective, where ``W`` projects
    onto all but the leading eigenvector of the previous ``Z``; the penalty
    vanishes exactly for rank-one ``Z`` and ``rho`` grows geometrically.
    Every round's solution is projected to a choice whose metrics are
    recomputed exactly. A pass that reaches ``lambda_2 / lambda_1 <=
    ratio_tol`` with a certified candidate ends the method (status
    ``"converged"``). Otherwise the pass's final candidates are excluded by
    linear cuts, ``gamma`` is bounded below the best certified value and the
    iteration restarts. An infeasible restart proves the incumbent optimal
    (status ``"certified_optimal"``).

    ``max_rounds`` bounds the total number of conic solves over all passes
    and ``pass_rounds`` the number of penalty rounds within one pass.

    Raises
    ------
    RelaxationInfeasible
        When the first relaxation is infeasible.
    NoFeasibleSequence
        When cuts exhaust the relaxation without any certified choice.
    """
    _check_con(lifted)
    base = lifted.problem
    tracker = _Tracker(lifted)
    cuts: list[sdp_mod.LmiBlock] = []
    history = []
    gamma_relax = None
    rounds, ratio, status = 0, None, "max_rounds"
    for restart in range(max_restarts + 1):
        extra = list(cuts)
        if tracker.best_rep is not None:
            bound = tracker.best_rep.j_rob * (1 - 1e-7) - 1e-9
            extra.append(_scalar(bound, {lifted.gamma: -1.0}, "incumbent"))
        prob = replace(base, blocks=base.blocks + tuple(extra))
        try:
            sol = _solve(prob, tol)
        except RelaxationInfeasible:
            if gamma_relax is None:
                raise
            if tracker.best is None:
                raise NoFeasibleSequence("cuts exhausted the relaxation without a certified choice")
            status = "certified_optimal"
            break
        except SolverFailure as exc:
            log.warning("rank iteration restart %d: %s", restart, exc)
            status = "solver_failure"
            break
        rounds += 1
        if gamma_relax is None:
            gamma_relax = float(sol.x[lifted.gamma])
        rho = max(1.0, abs(float(sol.x[lifted.gamma]))) * 0.1 if rho0 is None else rho0
        ratio, lead = _rank_ratio(lifted.Z(sol.x))
        last = _candidates(lifted, sol.x, tracker.seen)
        for c in last:
            tracker.offer(c)
        history.append({"restart": restart, "rho": 0.0, "rank_ratio": ratio, "gamma": float(sol.x[lifted.gamma])})
        in_pass = 0
        while ratio > ratio_tol and rounds < max_rounds and in_pass < pass_rounds:
            in_pass += 1
            W = np.eye(len(lead)) - np.outer(lead, lead)
            c = prob.c.copy()
            for var, M in lifted.Zterms.items():
                c[var] += rho * float(np.sum(W * M))
            try:
                sol = _solve(replace(prob, c=c), tol)
            except SolverFailure as exc:
                log.warning("rank iteration round %d: %s", rounds, exc)
                break
            rounds += 1
            ratio, lead = _rank_ratio(lifted.Z(sol.x))
            last = _candidates(lifted, sol.x, tracker.seen)
            for cand in last:
                tracker.offer(cand)
            history.append({"restart": restart, "rho": rho, "rank_ratio": ratio, "gamma": float(sol.x[lifted.gamma])})
            rho *= growth
        if ratio <= ratio_tol and any(tracker.seen[c][1] for c in last):
            status = "converged"
            break
        new_cuts = [cut for cut in (_exclusion_cut(lifted, ch) for ch in last) if cut is not None]
        if not new_cuts:
            status = "exhausted"
            break
        cuts.extend(new_cuts)
        if rounds >= max_rounds:
            break
    return _finish(lifted, tracker, "rank_iteration", status, gamma_relax, rounds, ratio, history)



# ---------------------------------------------------------------------------
# receding horizon
# ---------------------------------------------------------------------------

def receding_horizon_select(
    model: SystemModel,
    dt_u,
    dt_y,
    step_topologies: Sequence[Sequence[Topology]],
    K: int,
    *,
    method: str = "brute_force",
    gain_policy="zero",
    gain_levels: Sequence[float] = (1.0,),
    thresholds: Thresholds = Thresholds(),
    q_rob=None,
    cap: int = BRUTE_FORCE_CAP,
    jobs: int = 1,
) -> list[SwitchResult]:
    """Select a schedule on each window ``[j, j+K]`` of a long sensing sequence.

    ``step_topologies[j]`` lists the admissible topologies at global step
    ``j``. Returns one result per window start.
    """
    sampling = SamplingConfig(dt_u, dt_y, K * SamplingConfig(dt_u, dt_y, dt_y).dt_y)
    out = []
    for j in range(len(step_topologies) - K):
        inst = SwitchingInstance.from_topologies(
            model, sampling, step_topologies[j : j + K + 1],
            gain_policy=gain_policy, gain_levels=gain_levels, thresholds=thresholds, q_rob=q_rob,
        )
        if method == "brute_force":
            out.append(brute_force_select(inst, cap=cap, jobs=jobs))
        elif method == "shor":
            out.append(solve_shor(build_lifted_problem(inst)))
        elif method == "rank_iteration":
            out.append(solve_rank_iteration(build_lifted_problem(inst)))
        else:
            raise ValueError(f"unknown method {method!r}")
    return out


def stitch_schedule(results: Sequence[SwitchResult]) -> tuple[list[Topology], list]:
    """Applied schedule and gains of a receding-horizon run.

    Window ``j`` fixes step ``j``; the last window also fixes the steps after it.
    """
    if not results:
        raise ValueError("no window results to stitch")
    topos = [r.schedule[0] for r in results[:-1]] + list(results[-1].schedule)
    gains = [r.gains[0] for r in results[:-1]] + list(results[-1].gains)
    return topos, gains
