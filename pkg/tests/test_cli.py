import copy
import csv
import json
from pathlib import Path

import numpy as np
import pytest

from zdaguard.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from zdaguard.io import (
    ConfigError,
    load_scenario,
    load_schedule,
    plan_from_json,
    plan_to_json,
    trace_columns,
)
from zdaguard.discretize import assemble_stacked
from zdaguard.model import SamplingConfig, build_cartpole
from zdaguard.switching import SwitchingInstance, exact_metrics
from zdaguard.zda import enforced_attack, intrinsic_attack, invariant_zeros

GOLDEN = Path(__file__).parent / "golden"
RING = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]]
COMPLETE = [[i, j] for i in range(6) for j in range(i + 1, 6)]


def six_agent(**extra):
    doc = {
        "model": {"kind": "double_integrator", "agents": 6, "dims": 3},
        "sampling": {"dt_u": "0.5", "dt_y": "1", "t_F": "3"},
        "topologies": {"candidates": [{"edges": RING}, {"edges": COMPLETE}]},
        "noise": {"process_std": 0, "sensor_std": 0},
        "controller": {"kind": "synchronize"},
    }
    doc.update(extra)
    return copy.deepcopy(doc)


def three_topology():
    return {
        "model": {"kind": "double_integrator", "agents": 4, "dims": 1},
        "sampling": {"dt_u": 1, "dt_y": 1, "t_F": 2},
        "topologies": {"candidates": [
            {"edges": [[0, 1], [1, 2], [2, 3]]},
            {"edges": [[0, 1], [0, 2], [0, 3]]},
            {"edges": [[0, 1], [1, 2], [2, 3], [3, 0], [0, 2]]},
        ]},
        "optimize": {"gain_policy": "consensus"},
    }


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def invoke(tmp_path, command, doc, *extra, out="out"):
    cfg = write(tmp_path, f"{out}_cfg.json", doc) if isinstance(doc, dict) else doc
    outdir = tmp_path / out
    code = main([command, "--config", cfg, "--out", str(outdir), *extra])
    return code, outdir


class TestConfig:
    def test_valid(self):
        cfg = load_scenario(six_agent())
        assert cfg.scenario.model.p == 36
        assert len(cfg.scenario.topology_set) == 4

    @pytest.mark.parametrize(
        "mutate, path",
        [
            (lambda d: d["sampling"].pop("dt_u"), "sampling"),
            (lambda d: d["sampling"].__setitem__("dt_y", "fast"), "sampling.dt_y"),
            (lambda d: d["model"].__setitem__("dims", 4), "model.dims"),
            (lambda d: d["topologies"]["candidates"][0]["edges"].append([5, 9]),
             "topologies.candidates[0].edges[5]"),
            (lambda d: d.__setitem__("noise", {"sensor_std": -1}), "noise.sensor_std"),
            (lambda d: d.__setitem__("colour", 1), "<root>"),
            (lambda d: d["model"].__setitem__("leader", 7), "model.leader"),
            (lambda d: d.__setitem__("initial_state", [0.0, 1.0]), "initial_state"),
        ],
    )
    def test_error_names_path(self, mutate, path):
        doc = six_agent()
        mutate(doc)
        with pytest.raises(ConfigError) as info:
            load_scenario(doc)
        assert info.value.path == path

    def test_steps_length_checked(self):
        doc = six_agent(topologies={"steps": [[{"edges": RING}]] * 2})
        with pytest.raises(ConfigError, match="topologies.steps"):
            load_scenario(doc)

    def test_malformed_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"model": {"kind": ')
        with pytest.raises(ConfigError, match="malformed JSON"):
            load_scenario(str(bad))

    def test_schedule_formats(self):
        cfg = load_scenario(six_agent())
        adj = np.zeros((6, 6), dtype=int)
        adj[0, 1] = adj[1, 0] = 1
        sched = load_schedule({"schedule": [adj.tolist(), {"edges": RING}]}, cfg.scenario)
        assert sched[0].edges() == [(0, 1)] and len(sched[1].edges()) == 5
        with pytest.raises(ConfigError, match=r"schedule\[0\]"):
            load_schedule({"schedule": [[[0, 1], [1, 0]]]}, cfg.scenario)


class TestPlanJson:
    def test_enforced_round_trip_exact(self):
        cfg = load_scenario(six_agent())
        sc = cfg.scenario
        plan = enforced_attack(assemble_stacked(sc.model, sc.sampling, sc.topology_set[0][0]))
        back = plan_from_json(json.loads(json.dumps(plan_to_json(plan))))
        assert np.array_equal(back.a_seq, plan.a_seq) and np.array_equal(back.x_a0, plan.x_a0)
        assert np.array_equal(back.certificate["vector"], plan.certificate["vector"])

    def test_intrinsic_complex_certificate(self):
        m = build_cartpole()
        plan = intrinsic_attack(invariant_zeros(*m.matrices()), SamplingConfig("0.1", "0.1", "1"))
        back = plan_from_json(json.loads(json.dumps(plan_to_json(plan))))
        assert back.certificate["z"] == plan.certificate["z"]
        assert np.array_equal(back.certificate["u_a0"], plan.certificate["u_a0"])
        assert np.array_equal(back.signal(0.37), plan.signal(0.37))


class TestMetricsCommand:
    def test_fixture_finite(self, tmp_path):
        code, out = invoke(tmp_path, "metrics", six_agent())
        assert code == EXIT_OK
        doc = json.loads((out / "metrics.json").read_text())
        vals = [doc["horizon"][k] for k in ("j_con", "j_obs", "j_rob", "j_sen")]
        assert all(np.isfinite(vals))

    def test_matches_library(self, tmp_path):
        code, out = invoke(tmp_path, "metrics", six_agent(controller={"kind": "zero"}))
        doc = json.loads((out / "metrics.json").read_text())
        sc = load_scenario(six_agent()).scenario
        ref = exact_metrics(sc.model, sc.sampling, [sc.topology_set[0][0]] * 4)
        assert doc["horizon"]["j_rob"] == pytest.approx(ref.j_rob, rel=1e-12)

    def test_empty_topology_unobservable(self, tmp_path):
        doc = six_agent(topologies={"candidates": [{"edges": []}]})
        code, out = invoke(tmp_path, "metrics", doc)
        assert code == EXIT_OK
        rows = list(csv.DictReader((out / "metrics.csv").open()))
        assert float(rows[0]["j_obs"]) == 0.0

    def test_window_rows_and_stacked_dump(self, tmp_path):
        code, out = invoke(tmp_path, "metrics", six_agent(metrics={"window": 2}), "--dump-stacked")
        rows = list(csv.DictReader((out / "metrics.csv").open()))
        assert [r["label"] for r in rows] == ["horizon", "window_0", "window_1", "average"]
        A = np.loadtxt(out / "stacked" / "A_stack.csv", delimiter=",")
        assert A.shape == (36 * 4, 36)

    def test_malformed_config_exit(self, tmp_path, capsys):
        doc = six_agent()
        doc["sampling"]["t_F"] = -3
        code, out = invoke(tmp_path, "metrics", doc)
        assert code == EXIT_CONFIG
        assert "sampling.t_F" in capsys.readouterr().err

    def test_unparseable_file_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        code = main(["metrics", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG and "malformed JSON" in capsys.readouterr().err


class TestAttackCommand:
    def test_enforced_plan_with_certificate(self, tmp_path):
        code, out = invoke(tmp_path, "attack", six_agent(), "--kind", "enforced")
        assert code == EXIT_OK
        doc = json.loads((out / "plan.json").read_text())
        assert doc["kind"] == "enforced" and doc["certificate"]["nullity"] >= 1
        assert doc["check"]["stealthy"] and doc["check"]["max_deviation"] <= 1e-8

    def test_intrinsic_full_output_has_no_zeros(self, tmp_path, capsys):
        doc = {
            "model": {"kind": "matrices", "A": [[0, 1], [-1, -0.5]], "B": [[0], [1]], "C": [[1, 0], [0, 1]]},
            "sampling": {"dt_u": 0.1, "dt_y": 0.1, "t_F": 1},
        }
        code, _ = invoke(tmp_path, "attack", doc, "--kind", "intrinsic")
        assert code == EXIT_INFEASIBLE
        assert "no invariant zeros" in capsys.readouterr().err

    def test_no_stealthy_direction(self, tmp_path):
        doc = six_agent(topologies={"candidates": [{"edges": COMPLETE}]})
        code, _ = invoke(tmp_path, "attack", doc, "--kind", "enforced")
        assert code == EXIT_INFEASIBLE

    def test_replay_matches_synthesis(self, tmp_path):
        code, out = invoke(tmp_path, "attack", six_agent(), out="atk")
        plan_doc = json.loads((out / "plan.json").read_text())
        code, sim = invoke(tmp_path, "simulate", six_agent(), "--plan", str(out / "plan.json"), out="sim")
        assert code == EXIT_OK
        summary = json.loads((sim / "summary.json").read_text())
        assert abs(summary["plan_deviation"] - plan_doc["check"]["max_deviation"]) <= 1e-12


class TestOptimizeCommand:
    def test_brute_matches_enumeration(self, tmp_path):
        code, out = invoke(tmp_path, "optimize", three_topology(), "--method", "brute")
        assert code == EXIT_OK
        doc = json.loads((out / "result.json").read_text())
        cfg = load_scenario(three_topology())
        inst = SwitchingInstance.from_topologies(
            cfg.scenario.model, cfg.scenario.sampling, cfg.scenario.topology_set, gain_policy="consensus"
        )
        import itertools

        best = min(
            (inst.evaluate(c).j_rob for c in itertools.product(range(3), repeat=3)
             if inst.thresholds.admits(inst.evaluate(c))),
        )
        assert doc["metrics"]["j_rob"] == pytest.approx(best, rel=1e-9)

    def test_shor_below_brute(self, tmp_path):
        _, b = invoke(tmp_path, "optimize", three_topology(), "--method", "brute", out="b")
        _, s = invoke(tmp_path, "optimize", three_topology(), "--method", "shor", out="s")
        brute = json.loads((b / "result.json").read_text())
        shor = json.loads((s / "result.json").read_text())
        assert shor["gamma_relax"] <= brute["metrics"]["j_rob"] + 1e-7

    def test_infeasible_thresholds(self, tmp_path):
        doc = three_topology()
        doc["thresholds"] = {"c_o": 1e6}
        for method in ("brute", "shor"):
            code, _ = invoke(tmp_path, "optimize", doc, "--method", method, out=method)
            assert code == EXIT_INFEASIBLE

    def test_receding_windows(self, tmp_path):
        doc = three_topology()
        doc["sampling"]["t_F"] = 4
        doc["optimize"]["window"] = 2
        code, out = invoke(tmp_path, "optimize", doc, "--jobs", "2")
        assert code == EXIT_OK
        res = json.loads((out / "result.json").read_text())
        assert len(res["windows"]) == 3 and len(res["schedule"]) == 5

    def test_schedule_feeds_simulate(self, tmp_path):
        _, out = invoke(tmp_path, "optimize", three_topology(), out="opt")
        code, sim = invoke(tmp_path, "simulate", three_topology(), "--schedule", str(out / "result.json"),
                           out="sim")
        assert code == EXIT_OK
        res = json.loads((out / "result.json").read_text())
        summary = json.loads((sim / "summary.json").read_text())
        edges = [sorted(map(tuple, s)) for s in summary["schedule"]]
        expect = [sorted((i, j) for i in range(4) for j in range(i + 1, 4) if a[i][j]) for a in res["schedule"]]
        assert edges == expect


class TestSimulateCommand:
    def test_stealthy_without_switch(self, tmp_path):
        doc = six_agent(topologies={"candidates": [{"edges": RING}]})
        _, atk = invoke(tmp_path, "attack", doc, out="atk")
        code, sim = invoke(tmp_path, "simulate", doc, "--plan", str(atk / "plan.json"), out="sim")
        summary = json.loads((sim / "summary.json").read_text())
        assert code == EXIT_OK and summary["first_alarm"] is None and summary["max_residual"] <= 1e-8

    def test_reveal_after_switch(self, tmp_path):
        _, atk = invoke(tmp_path, "attack", six_agent(), out="atk")
        sched = {"schedule": [{"edges": RING}, {"edges": RING}, {"edges": COMPLETE}, {"edges": COMPLETE}]}
        sched_path = write(tmp_path, "sched.json", sched)
        code, sim = invoke(tmp_path, "simulate", six_agent(), "--plan", str(atk / "plan.json"),
                           "--schedule", sched_path, out="sim")
        summary = json.loads((sim / "summary.json").read_text())
        assert code == EXIT_OK and summary["first_alarm"] is not None and 2 <= summary["first_alarm"] <= 4

    def test_clean_run(self, tmp_path):
        doc = six_agent(controller={"kind": "lqr"}, initial_state=list(np.linspace(-1, 1, 36)))
        doc["sampling"]["t_F"] = "30"
        doc["topologies"] = {"candidates": [{"edges": RING}]}
        code, sim = invoke(tmp_path, "simulate", doc)
        summary = json.loads((sim / "summary.json").read_text())
        assert code == EXIT_OK and summary["final_tracking_error"] < 1e-6 and summary["alarms"] == 0

    def test_deterministic_outputs(self, tmp_path):
        doc = six_agent(noise={"process_std": 1e-4, "sensor_std": 5e-3}, seed=3)
        _, a = invoke(tmp_path, "simulate", doc, out="a")
        _, b = invoke(tmp_path, "simulate", doc, out="b")
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
        _, c = invoke(tmp_path, "simulate", doc, "--seed", "4", out="c")
        assert (a / "trace.csv").read_bytes() != (c / "trace.csv").read_bytes()

    def test_plan_shape_mismatch(self, tmp_path):
        _, atk = invoke(tmp_path, "attack", six_agent(), out="atk")
        doc = six_agent()
        doc["sampling"]["t_F"] = "4"
        code, _ = invoke(tmp_path, "simulate", doc, "--plan", str(atk / "plan.json"), out="sim")
        assert code == EXIT_CONFIG


class TestArtifacts:
    def test_one_manifest_per_directory(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ZDAGUARD_LOG", "DEBUG")
        _, out = invoke(tmp_path, "metrics", six_agent(seed=5))
        _, out = invoke(tmp_path, "simulate", six_agent(seed=5))
        manifests = list(out.glob("**/manifest*.json"))
        assert len(manifests) == 1
        man = json.loads(manifests[0].read_text())
        for key in ("command", "config", "seed", "version", "out", "wall_clock_s"):
            assert key in man
        assert man["command"] == "simulate" and man["seed"] == 5 and man["version"].startswith("v")

    def test_metrics_header_golden(self, tmp_path):
        _, out = invoke(tmp_path, "metrics", six_agent())
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == (GOLDEN / "metrics_header.csv").read_text().strip()

    def test_trace_header_golden(self, tmp_path):
        doc = {"model": {"kind": "cartpole"}, "sampling": {"dt_u": 0.1, "dt_y": 0.1, "t_F": 0.5}}
        _, out = invoke(tmp_path, "simulate", doc)
        header = (out / "trace.csv").read_text().splitlines()[0]
        assert header == (GOLDEN / "trace_header_p4.csv").read_text().strip()
        assert header.split(",") == trace_columns(4)
