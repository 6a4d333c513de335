"""Stealthy enforced attack on a six-agent ring, revealed by switching to a complete graph."""

import numpy as np

from zdaguard.discretize import assemble_stacked
from zdaguard.model import SamplingConfig, Scenario, Topology, TopologySet, build_double_integrator_network
from zdaguard.sim import run
from zdaguard.zda import enforced_attack

ring = Topology.from_edges(6, [(i, i + 1) for i in range(5)])
complete = Topology.from_edges(6, [(i, j) for i in range(6) for j in range(i + 1, 6)])
model = build_double_integrator_network(6, 3)
sampling = SamplingConfig("0.5", "1", "6")
steps = TopologySet(tuple((ring, complete) for _ in range(sampling.n_sense + 1)))
scenario = Scenario(model, sampling, steps, process_std=0.0, sensor_std=0.0)
plan = enforced_attack(assemble_stacked(model, sampling, ring), free_initial=False)

for label, schedule in [("ring only", [ring] * 7), ("switch at step 3", [ring] * 3 + [complete] * 4)]:
    trace = run(scenario, schedule, "synchronize", plan)
    print(f"{label}: first alarm {trace.first_alarm}")
    for k in range(trace.K + 1):
        print(f"  step {k}  residual {trace.residual_norm[k]:.2e}  tracking error {trace.tracking_error[k]:.3e}")
print(f"threshold {trace.threshold:.1e}, attack energy {np.sum(plan.a_seq ** 2):.3f}")
