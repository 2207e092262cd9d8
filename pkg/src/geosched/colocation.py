"""Co-location-aware execution rates.

A per-(node type, memory class) linear model predicts how long a task takes
on one core given what else runs on the same processor. Data-center capacity
ER[i, d] sums the predicted per-core rates over every core of every node.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import MalformedConfig, MissingCoeffs
from .model import CoeffEntry, ColocCoeffs, DataCenterSpec, NodeTypeSpec, Scenario, TaskType

FEATURES = ("n_coloc", "base_time", "freq_scale", "avg_mem", "target_mem")


@dataclass(frozen=True)
class CoreContext:
    node_type: NodeTypeSpec
    co_resident: tuple[TaskType, ...] = ()

    def __post_init__(self):
        if len(self.co_resident) > self.node_type.cores - 1:
            raise ValueError(
                f"{len(self.co_resident)} co-residents on a {self.node_type.cores}-core node"
            )


def lookup(coeffs: ColocCoeffs, node_type_id: int, mem_class: str) -> CoeffEntry:
    try:
        return coeffs[(node_type_id, mem_class)]
    except KeyError:
        raise MissingCoeffs(
            f"no co-location coefficients for node type {node_type_id}, class {mem_class!r}"
        ) from None


def features(task: TaskType, ctx: CoreContext) -> np.ndarray:
    node = ctx.node_type
    mems = [task.mem_intensity] + [t.mem_intensity for t in ctx.co_resident]
    return np.array(
        [
            len(ctx.co_resident),
            1.0 / task.base_rate(node),
            node.freq_scale,
            sum(mems) / len(mems),
            task.mem_intensity,
        ]
    )


def core_coer(task: TaskType, ctx: CoreContext, coeffs: ColocCoeffs) -> float:
    """Co-located execution rate of ``task`` on one core, in tasks/hour."""
    entry = lookup(coeffs, ctx.node_type.id, task.mem_class)
    exec_time = entry.predict(features(task, ctx))
    if not exec_time > 0:
        raise MalformedConfig(
            f"non-positive predicted execution time {exec_time!r} for task {task.id} "
            f"on node type {ctx.node_type.id}"
        )
    return 1.0 / exec_time


def saturated_context(task: TaskType, node: NodeTypeSpec) -> CoreContext:
    # every other core on the node runs the same task type
    return CoreContext(node, (task,) * (node.cores - 1))


def dc_execution_rate(
    task: TaskType,
    dc: DataCenterSpec,
    node_types: dict[int, NodeTypeSpec],
    coeffs: ColocCoeffs,
) -> float:
    total = 0.0
    for j, count in sorted(dc.node_counts.items()):
        node = node_types[j]
        rate = core_coer(task, saturated_context(task, node), coeffs)
        total += count * node.cores * rate
    return total


def execution_rate_matrix(scenario: Scenario) -> np.ndarray:
    nts = scenario.node_type_map
    return np.array(
        [
            [dc_execution_rate(t, dc, nts, scenario.coloc_coeffs) for dc in scenario.data_centers]
            for t in scenario.task_types
        ]
    )


def feature_domain(
    node: NodeTypeSpec, mem_class: str, tasks: tuple[TaskType, ...]
) -> dict[str, tuple[float, float]]:
    times = [1.0 / t.base_rate(node) for t in tasks if t.mem_class == mem_class]
    freqs = [f for f, _ in node.p_states]
    return {
        "n_coloc": (0.0, float(node.cores - 1)),
        "base_time": (min(times), max(times)),
        "freq_scale": (min(freqs), max(freqs)),
        "avg_mem": (0.0, 1.0),
        "target_mem": (0.0, 1.0),
    }


def check_positive_on_domain(scenario: Scenario) -> None:
    """Evaluate every coefficient entry at the 32 corners of its feature box."""
    used = {(j, t.mem_class) for dc in scenario.data_centers for j in dc.node_counts for t in scenario.task_types}
    for j, mem_class in sorted(used):
        entry = lookup(scenario.coloc_coeffs, j, mem_class)
        node = scenario.node_type_map[j]
        domain = entry.domain or feature_domain(node, mem_class, scenario.task_types)
        bounds = [domain[name] for name in FEATURES]
        for corner in itertools.product(*bounds):
            value = entry.predict(np.array(corner))
            if not value > 0:
                raise MalformedConfig(
                    f"coefficients for node type {j}, class {mem_class!r} predict "
                    f"non-positive execution time {value:.6g} at {dict(zip(FEATURES, corner))}"
                )


def mape(predicted, observed) -> float:
    """Mean absolute percentage error, in percent."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    return float(np.mean(np.abs(predicted - observed) / np.abs(observed)) * 100.0)
