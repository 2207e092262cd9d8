"""Node, cooling and data-center power.

Two paths live here. The realized path (``dc_power``) engages nodes in
proportion to per-task occupancy and uses an affine idle+dynamic node model.
The estimate path (``dc_power_max`` / ``est_dc_power``) is the linear
surrogate the solvers optimize; it uses peak dynamic power only and the full
CRAC capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadUtil, CoolingCapacityExceeded, InfeasibleRate
from .model import DataCenterSpec, NodeTypeSpec, Scenario

UTIL_TOL = 1e-12


@dataclass(frozen=True)
class PowerBreakdown:
    it_kw: float
    cooling_kw: float
    gross_kw: float
    renewable_kw: float
    net_kw: float
    utilization: float

    @property
    def grid_kw(self) -> float:
        return max(self.net_kw, 0.0)


def node_power(node_type: NodeTypeSpec, util: float) -> float:
    if not -UTIL_TOL <= util <= 1 + UTIL_TOL:
        raise BadUtil(f"utilization {util!r} outside [0, 1]")
    util = min(max(util, 0.0), 1.0)
    return node_type.p_idle_kw + util * node_type.dyn_kw


def crac_power(dc: DataCenterSpec, it_kw: float) -> float:
    if it_kw < 0:
        raise ValueError("it_kw must be >= 0")
    needed = it_kw / dc.crac_cop
    capacity = dc.num_crac * dc.crac_max_kw
    if needed > capacity:
        raise CoolingCapacityExceeded(
            f"data center {dc.id}: {needed:.6g} kW of cooling needed, {capacity:.6g} kW installed"
        )
    return needed


def utilization(ar_d, er_d) -> float:
    """Node occupancy: sum over task types of AR/ER, capped at 1."""
    ar_d = np.asarray(ar_d, dtype=float)
    er_d = np.asarray(er_d, dtype=float)
    if np.any(ar_d < 0):
        raise InfeasibleRate("negative arrival rate")
    if np.any(ar_d > er_d):
        raise InfeasibleRate("arrival rate exceeds execution rate")
    return float(min(np.sum(ar_d / er_d), 1.0))


def dc_power(scenario: Scenario, d: int, ar_d, tau: int) -> PowerBreakdown:
    """Realized power of data center index ``d`` under load vector ``ar_d``."""
    dc = scenario.data_centers[d]
    u = utilization(ar_d, scenario.execution_rates[:, d])
    it = 0.0
    for j, count in sorted(dc.node_counts.items()):
        it += count * node_power(scenario.node_type_map[j], u)
    cooling = crac_power(dc, it)
    gross = (it + cooling) * dc.eff
    rp = dc.renewable_trace[scenario.hour(tau)]
    return PowerBreakdown(it, cooling, gross, rp, gross - rp, u)


def dc_power_max(scenario: Scenario, d: int, tau: int) -> float:
    return gross_power_max(scenario, d) - scenario.data_centers[d].renewable_trace[scenario.hour(tau)]


def gross_power_max(scenario: Scenario, d: int) -> float:
    """Maximum power before renewables are subtracted."""
    return float(scenario.gross_power_max[d])


def dp_max_vector(scenario: Scenario, tau: int) -> np.ndarray:
    return scenario.gross_power_max - scenario.renewable[:, scenario.hour(tau)]


def est_dc_power(scenario: Scenario, i: int, d: int, ar: float, tau: int) -> float:
    er = scenario.execution_rates[i, d]
    if ar < 0 or ar > er:
        raise InfeasibleRate(f"rate {ar!r} outside [0, ER={er!r}] for task index {i}, dc index {d}")
    return dc_power_max(scenario, d, tau) * ar / er


def realized_net_batch(scenario: Scenario, tau: int, ars: np.ndarray) -> np.ndarray:
    """Realized net power (..., |D|) for a stack of rate matrices (..., |I|, |D|).

    Same model as ``dc_power`` without per-call validation; used by training
    rollouts where thousands of profiles are evaluated.
    """
    u = np.minimum(np.sum(ars / scenario.execution_rates, axis=-2), 1.0)
    idle = np.array([sum(n * scenario.node_type_map[j].p_idle_kw for j, n in dc.node_counts.items())
                     for dc in scenario.data_centers])
    dyn = np.array([sum(n * scenario.node_type_map[j].dyn_kw for j, n in dc.node_counts.items())
                    for dc in scenario.data_centers])
    cop = np.array([dc.crac_cop for dc in scenario.data_centers])
    cap = np.array([dc.num_crac * dc.crac_max_kw for dc in scenario.data_centers])
    eff = np.array([dc.eff for dc in scenario.data_centers])
    it = idle + u * dyn
    cooling = it / cop
    if np.any(cooling > cap):
        d = int(np.nonzero(np.any(cooling > cap, axis=tuple(range(cooling.ndim - 1))))[0][0])
        raise CoolingCapacityExceeded(f"data center {scenario.data_centers[d].id}: cooling demand exceeds capacity")
    return (it + cooling) * eff - scenario.renewable[:, scenario.hour(tau)]
