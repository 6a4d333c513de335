"""Zero dynamics attack analysis and topology switching for networked linear systems."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    SamplingConfig,
    Scenario,
    SystemModel,
    Target,
    Topology,
    TopologySet,
    build_cartpole,
    build_double_integrator_network,
    build_matrix_model,
)
from .discretize import StackedOperators, assemble_stacked  # noqa: E402
from .metrics import MetricReport, compute_metrics  # noqa: E402
from .feedback import CausalGainStack, assemble_gain, consensus_gain, memoryless_gains  # noqa: E402
from .zda import AttackPlan, enforced_attack, intrinsic_attack, invariant_zeros, sampling_attack  # noqa: E402
from .switching import (  # noqa: E402
    SwitchingInstance,
    SwitchResult,
    Thresholds,
    brute_force_select,
    build_lifted_problem,
    solve_rank_iteration,
    solve_shor,
)
from .sim import DetectorConfig, SimTrace, metrics_over_time, run, run_cartpole_demo  # noqa: E402

__all__ = [
    "SamplingConfig", "Scenario", "SystemModel", "Target", "Topology", "TopologySet",
    "build_cartpole", "build_double_integrator_network", "build_matrix_model",
    "StackedOperators", "assemble_stacked", "MetricReport", "compute_metrics",
    "CausalGainStack", "assemble_gain", "consensus_gain", "memoryless_gains",
    "AttackPlan", "enforced_attack", "intrinsic_attack", "invariant_zeros", "sampling_attack",
    "SwitchingInstance", "SwitchResult", "Thresholds", "brute_force_select",
    "build_lifted_problem", "solve_rank_iteration", "solve_shor",
    "DetectorConfig", "SimTrace", "metrics_over_time", "run", "run_cartpole_demo",
]
