"""Closed-loop simulation with noise, attack injection and residual detection.

The plant advances with the exact per-interval maps of held inputs. A
steady-state Kalman predictor runs per topology, and its innovation
``r_k = y_k - C_k xhat_k`` is thresholded: an alarm is raised once ``||r_k||``
exceeds the threshold on ``window`` consecutive sensing steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .discretize import assemble_stacked, interval_maps, matrix_exponential
from .feedback import CausalGainStack, consensus_gain, memoryless_gains
from .metrics import MetricReport
from .model import SamplingConfig, Scenario, Topology, TopologySet, build_cartpole
from .switching import _gain_policy, exact_metrics
from .zda import AttackPlan, intrinsic_attack, invariant_zeros

__all__ = [
    "DetectorConfig",
    "SimTrace",
    "InadmissibleSchedule",
    "run",
    "calibrate_threshold",
    "synchronization_gains",
    "lqr_gain",
    "random_attack",
    "run_cartpole_demo",
    "metrics_over_time",
]

DEFAULT_PROCESS_STD = 1e-4
DEFAULT_SENSOR_STD = 5e-3

_RUN_STREAM = 1
_ATTACK_STREAM = 2
_CALIBRATION_STREAM = 1000


class InadmissibleSchedule(ValueError):
    """A scheduled topology is not admissible at its sensing step."""


@dataclass(frozen=True)
class DetectorConfig:
    """Residual detector settings.

    ``threshold`` fixes the alarm level; when ``None`` it is calibrated as
    ``mean + sigmas * std`` of noise-only residual norms, never below ``floor``.
    ``process_std`` and ``sensor_std`` set the Kalman design covariances; when
    ``None`` the scenario values are used, falling back to the defaults when
    those are zero.
    """

    threshold: float | None = None
    sigmas: float = 5.0
    window: int = 2
    floor: float = 1e-6
    calibration_runs: int = 20
    process_std: float | None = None
    sensor_std: float | None = None
    countermeasure: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("detector window must be at least 1")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if self.calibration_runs < 2:
            raise ValueError("need at least two calibration runs")


@dataclass(frozen=True, eq=False)
class SimTrace:
    """One simulated run on the sensing grid ``k = 0..K`` and actuation grid ``l = 0..L``.

    ``outputs`` and ``residuals`` are tuples because the output size follows
    the topology. ``reference`` is the set-point state; tracking error is
    ``state - reference``.
    """

    time: np.ndarray
    state: np.ndarray
    estimate: np.ndarray
    outputs: tuple[np.ndarray, ...]
    residuals: tuple[np.ndarray, ...]
    residual_norm: np.ndarray
    control: np.ndarray
    attack: np.ndarray
    detection: np.ndarray
    threshold: float
    schedule: tuple[Topology, ...]
    reference: np.ndarray
    metrics: tuple[MetricReport, ...] = ()
    info: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.state.shape[0] - 1

    @property
    def L(self) -> int:
        return self.control.shape[0] - 1

    @property
    def tracking_error(self) -> np.ndarray:
        return np.linalg.norm(self.state - self.reference, axis=1)

    @property
    def first_alarm(self) -> int | None:
        hits = np.flatnonzero(self.detection)
        return int(hits[0]) if hits.size else None

    def summary(self) -> dict:
        return {
            "K": self.K,
            "L": self.L,
            "threshold": self.threshold,
            "first_alarm": self.first_alarm,
            "alarms": int(self.detection.sum()),
            "max_residual": float(self.residual_norm.max()),
            "final_tracking_error": float(self.tracking_error[-1]),
            "final_state_norm": float(np.linalg.norm(self.state[-1])),
            "final_estimate_norm": float(np.linalg.norm(self.estimate[-1])),
            "schedule": [t.edges() for t in self.schedule],
            "metrics": [m.to_dict() for m in self.metrics],
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))},
        }


# ---------------------------------------------------------------------------
# set-up helpers
# ---------------------------------------------------------------------------

def _schedule(scenario: Scenario, schedule) -> tuple[Topology, ...]:
    K = scenario.sampling.n_sense
    if schedule is None:
        schedule = [steps[0] for steps in scenario.topology_set.steps]
    elif isinstance(schedule, Topology):
        schedule = [schedule] * (K + 1)
    schedule = tuple(schedule)
    if len(schedule) != K + 1:
        raise InadmissibleSchedule(f"schedule has {len(schedule)} entries, expected K+1={K + 1}")
    steps = scenario.topology_set.steps
    if len(steps) == K + 1:
        for k, topo in enumerate(schedule):
            if topo not in steps[k]:
                raise InadmissibleSchedule(f"step {k}: topology {topo.edges()} is not admissible")
    return schedule


def _reference_state(scenario: Scenario) -> np.ndarray:
    model = scenario.model
    x_ref = np.zeros(model.p)
    target = scenario.target
    if target is None:
        return x_ref
    if target.amplitude is not None and target.frequency and np.any(target.amplitude):
        raise ValueError("only constant set-point targets can be simulated")
    d = model.meta.get("dims")
    if d is None:
        raise ValueError("targets need a double-integrator network model")
    pos = np.asarray(target.position(0.0), dtype=float).reshape(-1, d)
    for i, row in enumerate(pos):
        x_ref[2 * d * i : 2 * d * i + d] = row
    A = model.matrices(scenario.topology_set.steps[0][0])[0]
    if np.linalg.norm(A @ x_ref) > 1e-12 * max(1.0, np.linalg.norm(x_ref)):
        raise ValueError("target is not an equilibrium of the open-loop dynamics")
    return x_ref


def synchronization_gains(scenario: Scenario, schedule=None, scales=None) -> list[np.ndarray]:
    """Consensus output-feedback gains with a scale picked for stability.

    The edge gain ``s`` and leader gains ``(s, 1.5 s)`` are scaled together; ``s``
    minimizes the largest per-topology spectral radius of the sampled closed loop.
    """
    model, sampling = scenario.model, scenario.sampling
    schedule = _schedule(scenario, schedule)
    if scales is None:
        scales = np.geomspace(0.05, 2.0, 17)
    distinct = list(dict.fromkeys(schedule))
    maps = {}
    for topo in distinct:
        A, B, C = model.matrices(topo)
        S, blocks = interval_maps(A, B, sampling, 0)
        maps[topo] = (S, sum(blocks.values(), np.zeros_like(B)), C)

    def worst(s):
        rho = 0.0
        for topo, (S, Gam, C) in maps.items():
            G = consensus_gain(model, topo, k_edge=s, k_leader=(s, 1.5 * s))
            rho = max(rho, float(np.max(np.abs(np.linalg.eigvals(S + Gam @ G @ C)))))
        return rho

    best = min(scales, key=worst)
    return [consensus_gain(model, t, k_edge=best, k_leader=(best, 1.5 * best)) for t in schedule]


def _gain_stack(scenario: Scenario, schedule, gains) -> CausalGainStack | None:
    model, sampling = scenario.model, scenario.sampling
    if gains is None:
        return None
    if isinstance(gains, CausalGainStack):
        return gains
    if isinstance(gains, str):
        if gains == "synchronize":
            per_step = synchronization_gains(scenario, schedule)
        else:
            policy = _gain_policy(gains)
            per_step = [None if policy is None else policy(model, t) for t in schedule]
    else:
        per_step = list(gains)
    per_step = [
        np.zeros((model.q, model.output_dim(t))) if G is None else np.asarray(G, dtype=float)
        for t, G in zip(schedule, per_step)
    ]
    return memoryless_gains(sampling, per_step)


def _design_stds(scenario: Scenario, detector: DetectorConfig) -> tuple[float, float]:
    w = detector.process_std if detector.process_std is not None else scenario.process_std
    v = detector.sensor_std if detector.sensor_std is not None else scenario.sensor_std
    return (w if w > 0 else DEFAULT_PROCESS_STD, v if v > 0 else DEFAULT_SENSOR_STD)


def _kalman_gain(S: np.ndarray, C: np.ndarray, w_std: float, v_std: float) -> np.ndarray:
    """Steady-state predictor gain ``S P C^T (C P C^T + R)^{-1}``."""
    p, r = S.shape[0], C.shape[0]
    if r == 0:
        return np.zeros((p, 0))
    Qw, R = w_std**2 * np.eye(p), v_std**2 * np.eye(r)
    try:
        P = sla.solve_discrete_are(S.T, C.T, Qw, R)
    except (ValueError, np.linalg.LinAlgError):
        # undetectable pair: fall back to a finite run of the Riccati recursion
        P = Qw.copy()
        for _ in range(200):
            G = P @ C.T @ np.linalg.inv(C @ P @ C.T + R)
            P = S @ (P - G @ C @ P) @ S.T + Qw
    return S @ P @ C.T @ np.linalg.inv(C @ P @ C.T + R)


def _attack_drive(A, B, plan: AttackPlan, dt: float):
    """Per-interval map of the exosystem generating ``Re(exp(z t) u_a0)``."""
    z = complex(plan.certificate["z"])
    u0 = np.asarray(plan.certificate["u_a0"], dtype=complex)
    Lam = np.array([[z.real, -z.imag], [z.imag, z.real]])
    Gam = np.column_stack([u0.real, -u0.imag])
    p = A.shape[0]
    aug = np.zeros((p + 2, p + 2))
    aug[:p, :p] = A
    aug[:p, p:] = B @ Gam
    aug[p:, p:] = Lam
    T = matrix_exponential(aug, dt)
    return T[:p, p:], T[p:, p:]


# ---------------------------------------------------------------------------
# core recursion
# ---------------------------------------------------------------------------

def _interval_table(scenario: Scenario, schedule) -> list:
    model, sampling = scenario.model, scenario.sampling
    out, cache = [], {}
    for k in range(sampling.n_sense):
        A, B, _ = model.matrices(schedule[k])
        key = (schedule[k], k) if not sampling.synchronous else schedule[k]
        if key not in cache:
            cache[key] = interval_maps(A, B, sampling, k)
        S, blocks = cache[key]
        out.append((S, blocks) if not sampling.synchronous else (S, {k: blocks[next(iter(blocks))]}))
    return out


def _simulate(
    scenario: Scenario,
    schedule: tuple[Topology, ...],
    gain_stack: CausalGainStack | None,
    state_feedback: np.ndarray | None,
    attack: AttackPlan | None,
    detector: DetectorConfig,
    threshold: float,
    x0: np.ndarray,
    xhat0: np.ndarray,
    rng: np.random.Generator,
    noise: bool,
    table=None,
):
    model, sampling = scenario.model, scenario.sampling
    K, L = sampling.n_sense, sampling.n_control
    p, q = model.p, model.q
    x_ref = _reference_state(scenario)
    w_std, v_std = (scenario.process_std, scenario.sensor_std) if noise else (0.0, 0.0)
    dw, dv = _design_stds(scenario, detector)
    dt = float(sampling.dt_y)

    mats = [model.matrices(t) for t in schedule]
    if table is None:
        table = _interval_table(scenario, schedule)
    kalman: dict[Topology, np.ndarray] = {}
    intrinsic = attack is not None and attack.kind == "intrinsic"
    if attack is not None and not intrinsic and attack.a_seq.shape != (L + 1, q):
        raise ValueError(f"attack has {attack.a_seq.shape} samples, horizon needs {(L + 1, q)}")
    xi = np.array([1.0, 0.0])

    x = np.array(x0, dtype=float) + (attack.x_a0 if attack is not None else 0.0)
    xhat = np.array(xhat0, dtype=float)
    u = np.zeros((L + 1, q))
    a = np.zeros((L + 1, q))
    if attack is not None:
        a = (
            np.array([attack.signal(float(sampling.t_u(ell))) for ell in range(L + 1)])
            if intrinsic
            else np.array(attack.a_seq, dtype=float)
        )
    a_live = a.copy()
    states, estimates, outputs, residuals = [], [], [], []
    norms = np.zeros(K + 1)
    flags = np.zeros(K + 1, dtype=bool)
    streak, alarmed = 0, False
    ys: list[np.ndarray] = []
    for k in range(K + 1):
        A, B, C = mats[k]
        y = C @ x + (v_std * rng.standard_normal(C.shape[0]) if v_std else 0.0)
        r = y - C @ xhat
        ys.append(y - C @ x_ref)
        states.append(x.copy())
        estimates.append(xhat.copy())
        outputs.append(y)
        residuals.append(r)
        norms[k] = float(np.linalg.norm(r))
        streak = streak + 1 if norms[k] > threshold else 0
        if streak >= detector.window:
            flags[k] = True
            if detector.countermeasure and not alarmed:
                alarmed = True
                # stand-in countermeasure: cut the attack channel from here on
                later = [ell for ell in range(L + 1) if sampling.t_u(ell) >= sampling.t_y(k)]
                a_live[later] = 0.0
                xi = np.zeros(2)
        # inputs whose latest sensing instant is t_k
        for ell in range(L + 1):
            if sampling.latest_sense_index(ell) != k:
                continue
            if state_feedback is not None:
                u[ell] = -state_feedback @ (xhat - x_ref)
            elif gain_stack is not None:
                u[ell] = sum(
                    (gain_stack.block(ell, j) @ ys[j] for j in range(min(k, gain_stack.K) + 1)),
                    np.zeros(q),
                )
        if k == K:
            break
        S, blocks = table[k]
        drive = sum((blk @ u[ell] for ell, blk in blocks.items()), np.zeros(p))
        x_next = S @ x + drive
        if intrinsic:
            M, Phi = _attack_drive(A, B, attack, dt)
            x_next = x_next + M @ xi
            xi = Phi @ xi
        elif attack is not None:
            x_next = x_next + sum((blk @ a_live[ell] for ell, blk in blocks.items()), np.zeros(p))
        if w_std:
            x_next = x_next + w_std * rng.standard_normal(p)
        if schedule[k] not in kalman:
            kalman[schedule[k]] = _kalman_gain(S, C, dw, dv)
        xhat = S @ xhat + drive + kalman[schedule[k]] @ r
        x = x_next
    return (
        np.array(states),
        np.array(estimates),
        tuple(outputs),
        tuple(residuals),
        norms,
        u,
        a_live,
        flags,
        x_ref,
    )


def calibrate_threshold(
    scenario: Scenario,
    schedule=None,
    gains=None,
    *,
    detector: DetectorConfig | None = None,
    state_feedback=None,
) -> float:
    """Alarm level ``mean + sigmas * std`` of noise-only residual norms.

    Residuals are pooled over ``detector.calibration_runs`` seeded runs that
    start with an exact estimate, so only noise drives them.
    """
    detector = detector or DetectorConfig()
    schedule = _schedule(scenario, schedule)
    stack = _gain_stack(scenario, schedule, gains)
    pooled = []
    table = _interval_table(scenario, schedule)
    x0 = _reference_state(scenario)
    noisy = scenario.process_std > 0 or scenario.sensor_std > 0
    for i in range(detector.calibration_runs if noisy else 1):
        out = _simulate(
            scenario, schedule, stack, state_feedback, None, detector, math.inf,
            x0, x0, scenario.rng(_CALIBRATION_STREAM + i), noise=True, table=table,
        )
        pooled.append(out[4])
    pooled = np.concatenate(pooled)
    level = float(pooled.mean() + detector.sigmas * pooled.std())
    return max(level, detector.floor)


def run(
    scenario: Scenario,
    schedule=None,
    gains=None,
    attack: AttackPlan | None = None,
    detector: DetectorConfig | None = None,
    *,
    x0=None,
    xhat0=None,
    state_feedback=None,
    metrics_window: int | None = None,
) -> SimTrace:
    """Simulate one closed-loop run.

    Parameters
    ----------
    scenario : Scenario
        Model, sampling, admissible topologies, noise levels and seed.
    schedule : sequence of Topology, optional
        One topology per sensing step; defaults to the first admissible one.
    gains : CausalGainStack, sequence of per-step matrices or str, optional
        Output feedback ``u = G (y - C x_ref)``. Strings name a policy:
        ``"zero"``, ``"consensus"`` or ``"synchronize"`` (consensus with a
        stability-tuned scale). ``None`` runs open loop.
    attack : AttackPlan, optional
        Its ``x_a0`` is added to the true initial state, unknown to the observer.
    detector : DetectorConfig, optional
    x0, xhat0 : array, optional
        True initial state and initial estimate; both default to the set-point.
    state_feedback : array, optional
        Gain ``F`` for ``u = -F (xhat - x_ref)``; overrides ``gains``.
    metrics_window : int, optional
        Attach sliding-window metrics of this length to the trace.

    Raises
    ------
    InadmissibleSchedule
        If a scheduled topology is not admissible at its step.
    """
    detector = detector or DetectorConfig()
    schedule = _schedule(scenario, schedule)
    stack = _gain_stack(scenario, schedule, gains)
    x_ref = _reference_state(scenario)
    x0 = x_ref if x0 is None else np.asarray(x0, dtype=float)
    xhat0 = x0 if xhat0 is None else np.asarray(xhat0, dtype=float)
    F = None if state_feedback is None else np.atleast_2d(np.asarray(state_feedback, dtype=float))
    threshold = detector.threshold
    if threshold is None:
        threshold = calibrate_threshold(scenario, schedule, stack, detector=detector, state_feedback=F)
    states, est, outs, res, norms, u, a, flags, x_ref = _simulate(
        scenario, schedule, stack, F, attack, detector, threshold, x0, xhat0,
        scenario.rng(_RUN_STREAM), noise=True,
    )
    metrics = ()
    if metrics_window is not None:
        per_step = None if stack is None else _per_step_from_stack(scenario, stack)
        metrics = tuple(metrics_over_time(scenario, schedule, window=metrics_window, gains=per_step))
    sampling = scenario.sampling
    return SimTrace(
        time=np.array([float(sampling.t_y(k)) for k in range(sampling.n_sense + 1)]),
        state=states,
        estimate=est,
        outputs=outs,
        residuals=res,
        residual_norm=norms,
        control=u,
        attack=a,
        detection=flags,
        threshold=float(threshold),
        schedule=schedule,
        reference=np.broadcast_to(x_ref, states.shape).copy(),
        metrics=metrics,
        info={"attack_kind": attack.kind if attack is not None else "none"},
    )


def _per_step_from_stack(scenario: Scenario, stack: CausalGainStack):
    s = scenario.sampling
    out = []
    for k in range(stack.K + 1):
        ells = [ell for ell in range(stack.L + 1) if s.latest_sense_index(ell) == k]
        out.append(stack.block(ells[0], k) if ells else None)
    return out


def random_attack(
    scenario: Scenario,
    magnitude: float = 1.0,
    probability: float = 0.05,
    *,
    channels: Sequence[int] | None = None,
) -> AttackPlan:
    """Attack that fires on each actuation sample with ``probability``.

    Firing samples and values are drawn from the scenario seed, so the same
    scenario always yields the same plan.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    model, sampling = scenario.model, scenario.sampling
    rng = scenario.rng(_ATTACK_STREAM)
    L, q = sampling.n_control, model.q
    fire = rng.random(L + 1) < probability
    values = magnitude * rng.standard_normal((L + 1, q))
    if channels is not None:
        mask = np.zeros(q, dtype=bool)
        mask[list(channels)] = True
        values[:, ~mask] = 0.0
    a_seq = np.where(fire[:, None], values, 0.0)
    return AttackPlan(
        kind="random",
        a_seq=a_seq,
        x_a0=np.zeros(model.p),
        certificate={"probability": probability, "fired": np.flatnonzero(fire).tolist()},
        claimed_stealthy_until=0.0,
        meta={"dt_u": float(sampling.dt_u)},
    )


# ---------------------------------------------------------------------------
# cart-pole scenario
# ---------------------------------------------------------------------------

def _lqr(S: np.ndarray, Gam: np.ndarray, Qx: np.ndarray, Ru: np.ndarray) -> np.ndarray:
    P = sla.solve_discrete_are(S, Gam, Qx, Ru)
    return np.linalg.solve(Ru + Gam.T @ P @ Gam, Gam.T @ P @ S)


def lqr_gain(scenario: Scenario, topo: Topology | None = None, state_weight=1.0, input_weight=1.0) -> np.ndarray:
    """Discrete LQR gain ``F`` for ``u = -F xhat`` on one sensing interval.

    All inputs held within the interval are computed from the same estimate,
    so their maps are summed. Weights are scalars or matrices.
    """
    model, sampling = scenario.model, scenario.sampling
    if topo is None:
        topo = scenario.topology_set.steps[0][0]
    A, B, _ = model.matrices(topo)
    S, blocks = interval_maps(A, B, sampling, 0)
    Gam = sum(blocks.values(), np.zeros_like(B))
    Qx = state_weight * np.eye(model.p) if np.isscalar(state_weight) else np.asarray(state_weight)
    Ru = input_weight * np.eye(model.q) if np.isscalar(input_weight) else np.asarray(input_weight)
    return _lqr(S, Gam, Qx, Ru)


def run_cartpole_demo(
    attack: bool = True,
    *,
    t_F="2",
    dt="0.05",
    scale: float = 0.05,
    x0=(0.05, 0.0, 0.02, 0.0),
    seed: int = 0,
    process_std: float = DEFAULT_PROCESS_STD,
    sensor_std: float = DEFAULT_SENSOR_STD,
) -> SimTrace:
    """Cart-pole under observer-based LQR control, optionally with an intrinsic attack.

    Only the cart position is measured. The attack follows the unstable
    invariant zero, so the output and hence the Kalman estimate match the
    attack-free run while the true state diverges. ``info`` records the zero
    and the largest estimate norm of the attack-free run.
    """
    model = build_cartpole()
    sampling = SamplingConfig(dt, dt, t_F)
    topo = model.default_topology
    scenario = Scenario(
        model=model,
        sampling=sampling,
        topology_set=TopologySet(tuple((topo,) for _ in range(sampling.n_sense + 1))),
        process_std=process_std,
        sensor_std=sensor_std,
        seed=seed,
    )
    A, B, C = model.matrices()
    F = lqr_gain(scenario, topo, np.diag([10.0, 1.0, 10.0, 1.0]))
    zeros = invariant_zeros(A, B, C)
    plan = intrinsic_attack(zeros, sampling, scale=scale) if attack else None
    detector = DetectorConfig()
    common = dict(x0=np.asarray(x0, dtype=float), state_feedback=F, detector=detector)
    nominal = run(scenario, topo, None, None, **common)
    trace = nominal if plan is None else run(scenario, topo, None, plan, **_with_threshold(common, nominal))
    z = max(zeros, key=lambda zz: zz.z.real).z if zeros.zeros else complex("nan")
    info = dict(trace.info)
    info.update(
        zero_real=float(z.real),
        zero_imag=float(z.imag),
        nominal_estimate_envelope=float(np.linalg.norm(nominal.estimate, axis=1).max()),
        attack_initial_norm=float(np.linalg.norm(plan.x_a0)) if plan is not None else 0.0,
        max_output_deviation=float(
            max(np.linalg.norm(ya - yn) for ya, yn in zip(trace.outputs, nominal.outputs))
        ),
    )
    return replace(trace, info=info)


def _with_threshold(common: dict, nominal: SimTrace) -> dict:
    """Reuse the attack-free run's calibrated threshold."""
    out = dict(common)
    out["detector"] = replace(common["detector"], threshold=nominal.threshold)
    return out


# ---------------------------------------------------------------------------
# metrics along a schedule
# ---------------------------------------------------------------------------

def metrics_over_time(
    scenario: Scenario,
    schedule=None,
    *,
    window: int = 2,
    gains=None,
    q_rob=None,
) -> list[MetricReport]:
    """Metrics on every length-``window`` slice of the schedule, then their mean.

    Slice ``s`` covers sensing steps ``s..s+window``. The last list entry is
    the time average (its zero flags are set only when every slice is zero).
    ``gains`` is a per-step sequence or a policy name as in :func:`run`.

    Raises
    ------
    ValueError
        If a slice does not start on an actuation instant, since the stacked
        maps assume the horizon starts at one.
    """
    sampling = scenario.sampling
    schedule = _schedule(scenario, schedule)
    K = sampling.n_sense
    if not 1 <= window <= K:
        raise ValueError(f"window must lie in [1, {K}]")
    if isinstance(gains, str):
        if gains == "synchronize":
            gains = synchronization_gains(scenario, schedule)
        else:
            policy = _gain_policy(gains)
            gains = None if policy is None else [policy(scenario.model, t) for t in schedule]
    sub = SamplingConfig(sampling.dt_u, sampling.dt_y, window * sampling.dt_y)
    reports = []
    for s in range(K - window + 1):
        if (s * sampling.dt_y) % sampling.dt_u:
            raise ValueError(f"slice {s} starts between actuation instants")
        sl = schedule[s : s + window + 1]
        g = None if gains is None else list(gains[s : s + window + 1])
        reports.append(exact_metrics(scenario.model, sub, sl, g, q_rob))
    mean = {f: float(np.mean([getattr(r, f) for r in reports])) for f in ("j_con", "j_obs", "j_rob", "j_sen")}
    flags = {f: all(getattr(r, f) for r in reports) for f in ("j_con_zero", "j_obs_zero", "j_sen_zero")}
    reports.append(replace(reports[0], **mean, **flags))
    return reports
