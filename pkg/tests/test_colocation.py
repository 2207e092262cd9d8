import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geosched.colocation import (
    CoreContext,
    check_positive_on_domain,
    core_coer,
    dc_execution_rate,
    execution_rate_matrix,
    mape,
    saturated_context,
)
from geosched.errors import MalformedConfig, MissingCoeffs
from geosched.fixtures import NODE_TYPES, default_coeffs, default_tasks, simple_scenario
from geosched.model import CoeffEntry, DataCenterSpec, NodeTypeSpec, TaskType

NODE4 = NodeTypeSpec(1, "n", cores=4, p_idle_kw=0.1, p_peak_dyn_kw=0.2)
TASK = TaskType(1, "t", 1.0, "m", 0.5, {1: (10.0,)})
IDENTITY = {(1, "m"): CoeffEntry(0.0, (0.0, 1.0, 0.0, 0.0, 0.0))}


def _dc(counts):
    return DataCenterSpec(1, "dc", counts, 1, 100.0, 4.0, 1.1, 0.4, 1.0, 10.0, (0.1,) * 24, (0.0,) * 24)


def test_identity_coefficients_give_base_rate():
    ctx = saturated_context(TASK, NODE4)
    assert core_coer(TASK, ctx, IDENTITY) == pytest.approx(10.0, rel=1e-15)


def test_memory_only_penalty_with_zero_intensity():
    light = dataclasses.replace(TASK, mem_intensity=0.0)
    coeffs = {(1, "m"): CoeffEntry(0.0, (0.0, 1.0, 0.0, 0.3, 0.2))}
    ctx = CoreContext(NODE4, (light,) * 3)
    assert core_coer(light, ctx, coeffs) == pytest.approx(10.0, rel=1e-12)


def test_memory_heavy_neighbours_slow_down():
    tasks = default_tasks()
    coeffs = default_coeffs(tasks)
    node = NODE_TYPES[2]
    assert node.cores == 12
    target = max(tasks, key=lambda t: t.mem_intensity)
    alone = core_coer(target, CoreContext(node), coeffs)
    crowded = core_coer(target, CoreContext(node, (target,) * 11), coeffs)
    assert crowded < alone


def test_too_many_coresidents():
    with pytest.raises(ValueError):
        CoreContext(NODE4, (TASK,) * 4)


def test_missing_coeffs():
    with pytest.raises(MissingCoeffs):
        core_coer(TASK, CoreContext(NODE4), {})


def test_one_node_four_cores():
    assert dc_execution_rate(TASK, _dc({1: 1}), {1: NODE4}, IDENTITY) == pytest.approx(40.0)


@given(st.integers(1, 500))
def test_doubling_nodes_doubles_er(n):
    one = dc_execution_rate(TASK, _dc({1: n}), {1: NODE4}, IDENTITY)
    two = dc_execution_rate(TASK, _dc({1: 2 * n}), {1: NODE4}, IDENTITY)
    assert two == 2 * one


def _naive_er(scenario, i, d):
    # one predicted rate per core, summed node by node
    task = scenario.task_types[i]
    total = 0.0
    for j, count in scenario.data_centers[d].node_counts.items():
        node = scenario.node_type_map[j]
        entry = scenario.coloc_coeffs[(j, task.mem_class)]
        for _ in range(count):
            for _core in range(node.cores):
                x = [node.cores - 1, 1.0 / task.base_rate(node), node.freq_scale, task.mem_intensity, task.mem_intensity]
                total += 1.0 / (entry.intercept + sum(w * f for w, f in zip(entry.weights, x)))
    return total


def test_fixture_er_matches_naive_loop(four_dc):
    er = four_dc.execution_rates
    for i in (0, 4, 9):
        for d in range(4):
            assert er[i, d] == pytest.approx(_naive_er(four_dc, i, d), rel=1e-9)


def test_identity_er_closed_form():
    s = simple_scenario(3, 2, nodes=[5, 7, 11], cores=6, base_rate=[3.0, 8.0])
    expected = np.outer([3.0, 8.0], np.array([5, 7, 11]) * 6)
    assert np.allclose(execution_rate_matrix(s), expected, rtol=1e-14)


@settings(max_examples=30)
@given(st.integers(1, 50), st.integers(0, 50))
def test_er_monotone_in_node_count(n, extra):
    coeffs = default_coeffs(default_tasks())
    task = default_tasks()[3]
    nts = {nt.id: nt for nt in NODE_TYPES}
    a = dc_execution_rate(task, _dc({1: n, 3: n}), nts, coeffs)
    b = dc_execution_rate(task, _dc({1: n + extra, 3: n}), nts, coeffs)
    assert b >= a


def test_positive_on_domain_check_rejects_bad_coeffs():
    bad = {(1, "m"): CoeffEntry(-1.0, (0.0, 1.0, 0.0, 0.0, 0.0))}
    with pytest.raises(MalformedConfig):
        check_positive_on_domain(simple_scenario(1, 1, coeffs=bad))


def test_mape():
    assert mape([1.1, 0.9], [1.0, 1.0]) == pytest.approx(10.0)
