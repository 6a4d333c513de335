"""JSON and CSV interchange: scenario configs, schedules, attack plans and traces.

Config errors carry the dotted path of the offending field, for example
``sampling.dt_u`` or ``topologies.steps[1][0].edges[2]``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from .discretize import StackedOperators
from .metrics import MetricReport
from .model import (
    SamplingConfig,
    Scenario,
    Target,
    Topology,
    TopologySet,
    build_cartpole,
    build_double_integrator_network,
    build_matrix_model,
)
from .sim import DetectorConfig, SimTrace
from .switching import Thresholds
from .zda import AttackPlan

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "load_json",
    "load_scenario",
    "topology_to_json",
    "topology_from_json",
    "load_schedule",
    "plan_to_json",
    "plan_from_json",
    "write_json",
    "write_metrics_csv",
    "write_trace_csv",
    "dump_stacked_csv",
    "METRIC_COLUMNS",
    "trace_columns",
]

METRIC_COLUMNS = ("label", "K", "L", "j_con", "j_obs", "j_rob", "j_sen", "j_con_zero", "j_obs_zero", "j_sen_zero")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


def _dotted(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _schema() -> dict:
    text = resources.files("zdaguard").joinpath("schemas/scenario.json").read_text()
    return json.loads(text)


def load_json(path) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A validated scenario document and the objects built from it."""

    scenario: Scenario
    thresholds: Thresholds
    detector: DetectorConfig
    optimize: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    initial_state: np.ndarray | None = None
    metrics_window: int | None = None
    raw: dict = field(default_factory=dict)


def topology_to_json(topo: Topology) -> dict:
    return {"n": topo.n, "edges": [list(e) for e in topo.edges()]}


def topology_from_json(doc: dict, n: int, path: str = "") -> Topology:
    n_doc = doc.get("n", n)
    if n_doc != n:
        raise ConfigError(f"{path}.n" if path else "n", f"topology has {n_doc} nodes, model has {n}")
    for i, (a, b) in enumerate(doc["edges"]):
        if a == b or max(a, b) >= n:
            raise ConfigError(f"{path}.edges[{i}]", f"edge ({a}, {b}) is invalid for {n} nodes")
    return Topology.from_edges(n, [tuple(e) for e in doc["edges"]])


def _build_model(doc: dict):
    kind = doc["kind"]
    try:
        if kind == "double_integrator":
            if doc.get("leader", 0) >= doc["agents"]:
                raise ConfigError("model.leader", "leader index must be below the agent count")
            return build_double_integrator_network(
                doc["agents"], doc["dims"], lookahead=doc.get("lookahead"), leader=doc.get("leader", 0)
            )
        if kind == "cartpole":
            return build_cartpole()
        A, B, C = (np.asarray(doc[k], dtype=float) for k in ("A", "B", "C"))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError("model.A", "must be a square matrix")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ConfigError("model.B", f"needs {A.shape[0]} rows")
        if C.ndim != 2 or C.shape[1] != A.shape[0]:
            raise ConfigError("model.C", f"needs {A.shape[0]} columns")
        return build_matrix_model(A, B, C)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc


def _model_nodes(model) -> int:
    return model.n_agents if model.n_agents is not None else 1


def _topology_set(doc: dict | None, model, K: int) -> TopologySet:
    n = _model_nodes(model)
    if doc is None or ("steps" not in doc and "candidates" not in doc):
        if model.meta.get("dims") is not None:
            raise ConfigError("topologies", "a network model needs candidate topologies")
        default = model.default_topology or Topology.empty(n)
        return TopologySet(tuple((default,) for _ in range(K + 1)))
    cap = doc.get("density_cap", 1.0)
    if "steps" in doc:
        if len(doc["steps"]) != K + 1:
            raise ConfigError("topologies.steps", f"has {len(doc['steps'])} entries, the horizon needs {K + 1}")
        steps = tuple(
            tuple(topology_from_json(t, n, f"topologies.steps[{k}][{i}]") for i, t in enumerate(members))
            for k, members in enumerate(doc["steps"])
        )
    else:
        members = tuple(topology_from_json(t, n, f"topologies.candidates[{i}]") for i, t in enumerate(doc["candidates"]))
        steps = tuple(members for _ in range(K + 1))
    try:
        return TopologySet(steps, density_cap=cap)
    except ValueError as exc:
        raise ConfigError("topologies", str(exc)) from exc


def load_scenario(source, *, seed: int | None = None) -> ScenarioConfig:
    """Validate a scenario document (dict or path) and build its objects.

    Raises
    ------
    ConfigError
        With the dotted path of the first offending field.
    """
    doc = load_json(source) if isinstance(source, (str, Path)) else source
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_dotted(err.absolute_path), err.message)
    model = _build_model(doc["model"])
    try:
        s = doc["sampling"]
        sampling = SamplingConfig(s["dt_u"], s["dt_y"], s["t_F"])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError("sampling", str(exc)) from exc
    topo_set = _topology_set(doc.get("topologies"), model, sampling.n_sense)
    noise = doc.get("noise", {})
    target = None
    if "target" in doc:
        offset = np.asarray(doc["target"]["offset"], dtype=float)
        d = model.meta.get("dims")
        if d is None or offset.size != d * model.n_agents:
            raise ConfigError("target.offset", "needs one position per agent and axis")
        target = Target(offset=offset)
    scenario = Scenario(
        model=model,
        sampling=sampling,
        topology_set=topo_set,
        process_std=noise.get("process_std", 1e-4),
        sensor_std=noise.get("sensor_std", 5e-3),
        seed=doc.get("seed", 0) if seed is None else seed,
        target=target,
    )
    x0 = None
    if "initial_state" in doc:
        x0 = np.asarray(doc["initial_state"], dtype=float)
        if x0.size != model.p:
            raise ConfigError("initial_state", f"needs {model.p} entries")
    return ScenarioConfig(
        scenario=scenario,
        thresholds=Thresholds(**doc.get("thresholds", {})),
        detector=DetectorConfig(**doc.get("detector", {})),
        optimize=dict(doc.get("optimize", {})),
        controller=dict(doc.get("controller", {})),
        initial_state=x0,
        metrics_window=doc.get("metrics", {}).get("window"),
        raw=doc,
    )


def load_schedule(source, scenario: Scenario) -> list[Topology]:
    """Schedule from a JSON document with a ``schedule`` list.

    Entries may be adjacency matrices (as written by the optimizer) or
    ``{"edges": ...}`` objects.
    """
    doc = load_json(source) if isinstance(source, (str, Path)) else source
    if not isinstance(doc, dict) or "schedule" not in doc:
        raise ConfigError("schedule", "missing 'schedule' list")
    n = _model_nodes(scenario.model)
    out = []
    for k, entry in enumerate(doc["schedule"]):
        path = f"schedule[{k}]"
        if isinstance(entry, dict) and "edges" in entry:
            out.append(topology_from_json(entry, n, path))
            continue
        adj = np.asarray(entry)
        if adj.shape != (n, n):
            raise ConfigError(path, f"expected an {n}x{n} adjacency matrix or an edge list")
        try:
            out.append(Topology(adj != 0))
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from exc
    return out


# ---------------------------------------------------------------------------
# attack plans
# ---------------------------------------------------------------------------

def _encode(value):
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return {"re": value.real.tolist(), "im": value.imag.tolist()}
        return value.tolist()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _decode(value):
    if isinstance(value, dict) and set(value) == {"re", "im"}:
        re, im = np.asarray(value["re"], dtype=float), np.asarray(value["im"], dtype=float)
        out = re + 1j * im
        return complex(out) if out.ndim == 0 else out
    if isinstance(value, list):
        return np.asarray(value, dtype=float)
    return value


def plan_to_json(plan: AttackPlan) -> dict:
    """JSON form of a plan; floats round-trip exactly."""
    return {
        "kind": plan.kind,
        "a_seq": plan.a_seq.tolist(),
        "x_a0": plan.x_a0.tolist(),
        "certificate": {k: _encode(v) for k, v in plan.certificate.items()},
        "claimed_stealthy_until": plan.claimed_stealthy_until,
        "meta": {k: _encode(v) for k, v in plan.meta.items()},
    }


def plan_from_json(source) -> AttackPlan:
    doc = load_json(source) if isinstance(source, (str, Path)) else source
    for key in ("kind", "a_seq", "x_a0"):
        if key not in doc:
            raise ConfigError(key, "missing from attack plan")
    cert = {k: _decode(v) for k, v in doc.get("certificate", {}).items()}
    if "nullity" in cert:
        cert["nullity"] = int(cert["nullity"])
    if "fired" in cert:
        cert["fired"] = [int(i) for i in cert["fired"]]
    return AttackPlan(
        kind=doc["kind"],
        a_seq=np.asarray(doc["a_seq"], dtype=float).reshape(len(doc["a_seq"]), -1),
        x_a0=np.asarray(doc["x_a0"], dtype=float),
        certificate=cert,
        claimed_stealthy_until=float(doc.get("claimed_stealthy_until", 0.0)),
        meta={k: _decode(v) for k, v in doc.get("meta", {}).items()},
    )


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_metrics_csv(path, reports: Sequence[MetricReport], labels: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for label, r in zip(labels, reports):
            d = r.to_dict()
            w.writerow([label] + [repr(d[c]) if isinstance(d[c], float) else d[c] for c in METRIC_COLUMNS[1:]])


def trace_columns(p: int) -> list[str]:
    """Trace CSV header: per-step summary columns, then states and estimates."""
    head = [
        "step", "time", "edges", "residual_norm", "threshold", "alarm",
        "tracking_error", "state_norm", "estimate_norm", "control_norm", "attack_norm",
    ]
    return head + [f"x{i}" for i in range(p)] + [f"xhat{i}" for i in range(p)]


def write_trace_csv(path, trace: SimTrace, sampling: SamplingConfig) -> None:
    """One row per sensing step.

    ``control_norm`` and ``attack_norm`` are the largest norms over the
    actuation samples whose latest sensing instant is that step.
    """
    p = trace.state.shape[1]
    owner = np.array([sampling.latest_sense_index(ell) for ell in range(trace.L + 1)])
    err = trace.tracking_error
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns(p))
        for k in range(trace.K + 1):
            mine = owner == k
            u = np.linalg.norm(trace.control[mine], axis=1).max() if mine.any() else 0.0
            a = np.linalg.norm(trace.attack[mine], axis=1).max() if mine.any() else 0.0
            edges = " ".join(f"{i}-{j}" for i, j in trace.schedule[k].edges())
            row = [
                k, repr(float(trace.time[k])), edges, repr(float(trace.residual_norm[k])),
                repr(trace.threshold), int(trace.detection[k]), repr(float(err[k])),
                repr(float(np.linalg.norm(trace.state[k]))), repr(float(np.linalg.norm(trace.estimate[k]))),
                repr(float(u)), repr(float(a)),
            ]
            row += [repr(float(v)) for v in trace.state[k]] + [repr(float(v)) for v in trace.estimate[k]]
            w.writerow(row)


def dump_stacked_csv(directory, ops: StackedOperators) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, M in ops.to_csv_blocks().items():
        path = directory / f"{name}.csv"
        np.savetxt(path, M, delimiter=",", fmt="%.17g")
        out.append(path)
    return out
