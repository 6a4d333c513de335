"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 infeasible (no feasible
sequence, relaxation infeasible or no stealthy direction), 4 numerical failure.
Every run writes ``manifest.json`` next to its artifacts.
"""

from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .discretize import assemble_stacked
from .io import (
    ConfigError,
    ScenarioConfig,
    dump_stacked_csv,
    load_scenario,
    load_schedule,
    plan_from_json,
    plan_to_json,
    topology_to_json,
    write_json,
    write_metrics_csv,
    write_trace_csv,
)
from .sim import lqr_gain, metrics_over_time, run
from .switching import (
    NoFeasibleSequence,
    RelaxationInfeasible,
    SearchCapExceeded,
    SolverFailure,
    SwitchingInstance,
    brute_force_select,
    build_lifted_problem,
    exact_metrics,
    receding_horizon_select,
    solve_rank_iteration,
    solve_shor,
    stitch_schedule,
)
from .switching import _gain_policy
from .zda import (
    NoStealthyDirection,
    enforced_attack,
    intrinsic_attack,
    invariant_zeros,
    sampling_attack,
    stealthiness_check,
)

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_INFEASIBLE", "EXIT_NUMERICAL"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("zdaguard")

_METHODS = {"brute": "brute_force", "shor": "shor", "rank": "rank_iteration"}


class Infeasible(RuntimeError):
    pass


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        desc = out.stdout.strip()
        if desc:
            return f"v{__version__}-g{desc}" if not desc.startswith("v") else desc
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def _schedule(cfg: ScenarioConfig, path):
    if path is None:
        return [members[0] for members in cfg.scenario.topology_set.steps]
    return load_schedule(path, cfg.scenario)


def _per_step_gains(cfg: ScenarioConfig, schedule):
    kind = cfg.controller.get("kind", "none")
    if kind in ("none", "zero", "lqr"):
        return None
    if kind == "synchronize":
        from .sim import synchronization_gains

        return synchronization_gains(cfg.scenario, schedule)
    policy = _gain_policy(kind)
    return [policy(cfg.scenario.model, t) for t in schedule]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_metrics(args, cfg: ScenarioConfig, out: Path) -> dict:
    sc = cfg.scenario
    schedule = _schedule(cfg, args.schedule)
    gains = _per_step_gains(cfg, schedule)
    horizon = exact_metrics(sc.model, sc.sampling, schedule, gains)
    reports, labels = [horizon], ["horizon"]
    doc = {"horizon": horizon.to_dict()}
    if cfg.metrics_window is not None:
        series = metrics_over_time(sc, schedule, window=cfg.metrics_window, gains=gains)
        doc["windows"] = [r.to_dict() for r in series[:-1]]
        doc["average"] = series[-1].to_dict()
        reports += series
        labels += [f"window_{s}" for s in range(len(series) - 1)] + ["average"]
    doc["schedule"] = [topology_to_json(t) for t in schedule]
    write_json(out / "metrics.json", doc)
    write_metrics_csv(out / "metrics.csv", reports, labels)
    if args.dump_stacked:
        dump_stacked_csv(out / "stacked", assemble_stacked(sc.model, sc.sampling, schedule))
    return doc


def cmd_attack(args, cfg: ScenarioConfig, out: Path) -> dict:
    sc = cfg.scenario
    model, sampling = sc.model, sc.sampling
    schedule = _schedule(cfg, args.schedule)
    try:
        if args.kind == "intrinsic":
            zeros = invariant_zeros(*model.matrices(schedule[0]))
            if not zeros.zeros:
                raise NoStealthyDirection(f"no invariant zeros (status {zeros.status})")
            plan = intrinsic_attack(zeros, sampling)
        elif args.kind == "sampling":
            plan = sampling_attack(model, sampling, schedule[0])
        else:
            ops = assemble_stacked(model, sampling, schedule)
            plan = enforced_attack(ops, free_initial=not args.input_only)
    except NoStealthyDirection as exc:
        raise Infeasible(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("sampling", str(exc)) from exc
    stealthy, dev = stealthiness_check(model, sampling, schedule, plan, fine=4)
    doc = plan_to_json(plan)
    doc["check"] = {"stealthy": bool(stealthy), "max_deviation": dev}
    doc["schedule"] = [topology_to_json(t) for t in schedule]
    write_json(out / "plan.json", doc)
    return doc


def _solve(instance, method: str, jobs: int):
    if method == "brute_force":
        return brute_force_select(instance, jobs=jobs)
    lifted = build_lifted_problem(instance)
    return solve_shor(lifted) if method == "shor" else solve_rank_iteration(lifted)


def cmd_optimize(args, cfg: ScenarioConfig, out: Path) -> dict:
    sc = cfg.scenario
    opt = cfg.optimize
    method = _METHODS[args.method]
    policy = opt.get("gain_policy", "zero")
    levels = tuple(opt.get("gain_levels", (1.0,)))
    K = sc.sampling.n_sense
    window = opt.get("window")
    try:
        if window is None or window >= K:
            inst = SwitchingInstance.from_topologies(
                sc.model, sc.sampling, sc.topology_set,
                gain_policy=policy, gain_levels=levels, thresholds=cfg.thresholds,
            )
            if method == "brute_force" and "cap" in opt:
                result = brute_force_select(inst, cap=opt["cap"], jobs=args.jobs)
            else:
                result = _solve(inst, method, args.jobs)
            doc = result.to_dict()
        else:
            results = receding_horizon_select(
                sc.model, sc.sampling.dt_u, sc.sampling.dt_y, sc.topology_set.steps, window,
                method=method, gain_policy=policy, gain_levels=levels,
                thresholds=cfg.thresholds, jobs=args.jobs, **({"cap": opt["cap"]} if "cap" in opt else {}),
            )
            topos, gains = stitch_schedule(results)
            doc = {
                "method": method,
                "window": window,
                "windows": [r.to_dict() for r in results],
                "schedule": [t.adjacency.astype(int).tolist() for t in topos],
                "gains": [None if g is None else np.asarray(g).tolist() for g in gains],
                "feasible": all(r.feasible for r in results),
            }
    except (NoFeasibleSequence, RelaxationInfeasible) as exc:
        raise Infeasible(str(exc)) from exc
    except SearchCapExceeded as exc:
        raise ConfigError("optimize.cap", str(exc)) from exc
    if "schedule" in doc:
        doc["schedule"] = [np.asarray(a).astype(int).tolist() for a in doc["schedule"]]
    write_json(out / "result.json", doc)
    return doc


def cmd_simulate(args, cfg: ScenarioConfig, out: Path) -> dict:
    sc = cfg.scenario
    schedule = _schedule(cfg, args.schedule)
    plan = plan_from_json(args.plan) if args.plan else None
    if plan is not None and plan.kind != "intrinsic" and plan.a_seq.shape != (sc.sampling.n_control + 1, sc.model.q):
        raise ConfigError("plan.a_seq", f"shape {plan.a_seq.shape} does not match the scenario horizon")
    kind = cfg.controller.get("kind", "none")
    gains, F = None, None
    if kind == "lqr":
        F = lqr_gain(sc, schedule[0], cfg.controller.get("state_weight", 1.0), cfg.controller.get("input_weight", 1.0))
    elif kind != "none":
        gains = kind
    trace = run(
        sc, schedule, gains, plan, cfg.detector,
        x0=cfg.initial_state, state_feedback=F, metrics_window=cfg.metrics_window,
    )
    write_trace_csv(out / "trace.csv", trace, sc.sampling)
    summary = trace.summary()
    if plan is not None:
        ok, dev = stealthiness_check(sc.model, sc.sampling, schedule, plan, fine=4)
        summary["plan_deviation"] = dev
    write_json(out / "summary.json", summary)
    return summary


COMMANDS = {
    "metrics": cmd_metrics,
    "attack": cmd_attack,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zdaguard", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--schedule", default=None, help="schedule JSON (optimizer result or edge lists)")

    p = sub.add_parser("metrics", help="metric report for a schedule")
    common(p)
    p.add_argument("--dump-stacked", action="store_true", help="also write the stacked operators as CSV")
    p = sub.add_parser("attack", help="synthesise an attack plan")
    common(p)
    p.add_argument("--kind", choices=["intrinsic", "sampling", "enforced"], default="enforced")
    p.add_argument("--input-only", action="store_true", help="enforced attack with zero initial perturbation")
    p = sub.add_parser("optimize", help="select a switching schedule")
    common(p)
    p.add_argument("--method", choices=sorted(_METHODS), default="brute")
    p.add_argument("--jobs", type=int, default=1, help="worker cap for enumeration")
    p = sub.add_parser("simulate", help="closed-loop simulation with detection")
    common(p)
    p.add_argument("--plan", default=None, help="attack plan JSON")
    return parser


def _configure_logging():
    level = os.environ.get("ZDAGUARD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    start = time.perf_counter()
    code, message = EXIT_OK, "ok"
    seed = args.seed
    try:
        cfg = load_scenario(args.config, seed=args.seed)
        seed = cfg.scenario.seed
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        code, message = EXIT_CONFIG, f"config error: {exc}"
    except Infeasible as exc:
        code, message = EXIT_INFEASIBLE, f"infeasible: {exc}"
    except (SolverFailure, np.linalg.LinAlgError) as exc:
        code, message = EXIT_NUMERICAL, f"numerical failure: {exc}"
    if code != EXIT_OK:
        print(message, file=sys.stderr)
    if out.is_dir():
        write_json(out / "manifest.json", {
            "command": args.command,
            "argv": argv,
            "config": str(Path(args.config).resolve()),
            "seed": seed,
            "version": version_string(),
            "out": str(out.resolve()),
            "wall_clock_s": time.perf_counter() - start,
            "started_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "exit_code": code,
            "message": message,
        })
    log.info("%s finished with exit code %d", args.command, code)
    return code
