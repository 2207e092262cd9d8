"""Immutable domain types describing a geo-distributed cloud."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class TaskType:
    id: int
    name: str
    size_gb: float
    mem_class: str
    mem_intensity: float
    # node-type id -> per-core tasks/hour, one entry per p-state
    base_exec_rate: Mapping[int, tuple[float, ...]]

    def base_rate(self, node_type: "NodeTypeSpec") -> float:
        return self.base_exec_rate[node_type.id][node_type.p_state]


@dataclass(frozen=True)
class NodeTypeSpec:
    id: int
    name: str
    cores: int
    p_idle_kw: float
    p_peak_dyn_kw: float
    # (frequency scale, dynamic power scale) per p-state, P0 first
    p_states: tuple[tuple[float, float], ...] = ((1.0, 1.0),)
    p_state: int = 0

    @property
    def freq_scale(self) -> float:
        return self.p_states[self.p_state][0]

    @property
    def dyn_kw(self) -> float:
        """Peak dynamic power at the selected p-state."""
        return self.p_peak_dyn_kw * self.p_states[self.p_state][1]


@dataclass(frozen=True)
class DataCenterSpec:
    id: int
    name: str
    node_counts: Mapping[int, int]
    num_crac: int
    crac_max_kw: float
    crac_cop: float
    eff: float
    carbon_factor: float
    net_meter: float
    peak_price: float
    elec_price_trace: tuple[float, ...]
    renewable_trace: tuple[float, ...]
    origin_share: float | None = None

    @property
    def total_nodes(self) -> int:
        return sum(self.node_counts.values())


@dataclass(frozen=True)
class CoeffEntry:
    """Linear execution-time model for one (node type, memory class).

    time = intercept + w . (n_coloc, base_time, freq_scale, avg_mem, target_mem)
    """

    intercept: float
    weights: tuple[float, float, float, float, float]
    domain: Mapping[str, tuple[float, float]] | None = None

    def predict(self, features) -> float:
        return self.intercept + float(np.dot(self.weights, features))


ColocCoeffs = Mapping[tuple[int, str], CoeffEntry]


@dataclass(frozen=True)
class ArrivalSpec:
    pattern: str
    base: tuple[float, ...]
    amplitude: float = 0.0
    phase_h: float = 0.0


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    node_types: tuple[NodeTypeSpec, ...]
    task_types: tuple[TaskType, ...]
    data_centers: tuple[DataCenterSpec, ...]
    coloc_coeffs: ColocCoeffs
    arrival_trace: np.ndarray  # (|I|, epochs_per_day) tasks/hour
    network_price: float = 0.0
    epoch_hours: float = 1.0
    epochs_per_day: int = 24
    month_days: int = 30
    prorate_peak: bool = False
    arrival_spec: ArrivalSpec | None = None
    extras: Mapping[str, object] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        from .scenario import scenario_to_dict

        return scenario_to_dict(self) == scenario_to_dict(other)

    __hash__ = None  # type: ignore[assignment]

    @property
    def n_tasks(self) -> int:
        return len(self.task_types)

    @property
    def n_dcs(self) -> int:
        return len(self.data_centers)

    @cached_property
    def node_type_map(self) -> dict[int, NodeTypeSpec]:
        return {nt.id: nt for nt in self.node_types}

    @cached_property
    def execution_rates(self) -> np.ndarray:
        """ER[i, d] in tasks/hour (epoch independent: fixed p-states)."""
        from .colocation import execution_rate_matrix

        er = execution_rate_matrix(self)
        er.setflags(write=False)
        return er

    @cached_property
    def carbon_factor(self) -> np.ndarray:
        return _frozen([dc.carbon_factor for dc in self.data_centers])

    @cached_property
    def elec_price(self) -> np.ndarray:
        return _frozen([dc.elec_price_trace for dc in self.data_centers])

    @cached_property
    def renewable(self) -> np.ndarray:
        return _frozen([dc.renewable_trace for dc in self.data_centers])

    @cached_property
    def net_meter(self) -> np.ndarray:
        return _frozen([dc.net_meter for dc in self.data_centers])

    @cached_property
    def peak_price(self) -> np.ndarray:
        return _frozen([dc.peak_price for dc in self.data_centers])

    @cached_property
    def task_size(self) -> np.ndarray:
        return _frozen([t.size_gb for t in self.task_types])

    @cached_property
    def total_nodes(self) -> np.ndarray:
        return _frozen([dc.total_nodes for dc in self.data_centers])

    @cached_property
    def origin_share(self) -> np.ndarray:
        shares = [dc.origin_share for dc in self.data_centers]
        if any(s is None for s in shares):
            return _frozen(np.full(self.n_dcs, 1.0 / self.n_dcs))
        return _frozen(shares)

    @cached_property
    def gross_power_max(self) -> np.ndarray:
        """Per-DC maximum power before renewables (full CRAC + peak dynamic)."""
        out = []
        for dc in self.data_centers:
            nodes = sum(n * self.node_type_map[j].dyn_kw for j, n in dc.node_counts.items())
            out.append((dc.num_crac * dc.crac_max_kw + nodes) * dc.eff)
        return _frozen(out)

    def hour(self, tau: int) -> int:
        return tau % self.epochs_per_day

    def car(self, tau: int) -> np.ndarray:
        return self.arrival_trace[:, self.hour(tau)]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_arrivals(self, trace: np.ndarray) -> "Scenario":
        trace = np.array(trace, dtype=float)
        trace.setflags(write=False)
        return self.replace(arrival_trace=trace)

    def with_renewable_scale(self, scale: float) -> "Scenario":
        dcs = tuple(
            dataclasses.replace(dc, renewable_trace=tuple(scale * r for r in dc.renewable_trace))
            for dc in self.data_centers
        )
        return self.replace(data_centers=dcs)


SUM_RTOL = 1e-9


@dataclass(frozen=True)
class Strategy:
    """One player's per-data-center arrival rates."""

    player: int  # task-type index (0-based)
    rates: np.ndarray


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """Arrival-rate matrix AR[i, d] for one epoch."""

    rates: np.ndarray
    tau: int = 0

    def strategy(self, i: int) -> Strategy:
        return Strategy(i, self.rates[i].copy())

    def with_strategy(self, s: Strategy) -> "StrategyProfile":
        rates = self.rates.copy()
        rates[s.player] = s.rates
        return StrategyProfile(rates, self.tau)

    @classmethod
    def from_strategies(cls, strategies, tau: int = 0) -> "StrategyProfile":
        ordered = sorted(strategies, key=lambda s: s.player)
        if [s.player for s in ordered] != list(range(len(ordered))):
            raise ValueError("strategies must cover every player exactly once")
        return cls(np.array([s.rates for s in ordered], dtype=float), tau)

    def violations(self, scenario: "Scenario") -> list[str]:
        """Human-readable list of violated rate constraints (empty if valid)."""
        ar = self.rates
        out = []
        if ar.shape != (scenario.n_tasks, scenario.n_dcs):
            return [f"profile shape {ar.shape} != ({scenario.n_tasks}, {scenario.n_dcs})"]
        if not np.all(np.isfinite(ar)):
            return ["non-finite rates"]
        car = scenario.car(self.tau)
        er = scenario.execution_rates
        for i in range(scenario.n_tasks):
            total = ar[i].sum()
            if abs(total - car[i]) > SUM_RTOL * car[i] + 1e-12:
                out.append(f"task {i + 1}: sum of rates {total!r} != CAR {car[i]!r}")
            for d in range(scenario.n_dcs):
                if ar[i, d] < 0:
                    out.append(f"task {i + 1}, dc {d + 1}: negative rate {ar[i, d]!r}")
                elif ar[i, d] > er[i, d]:
                    out.append(f"task {i + 1}, dc {d + 1}: rate {ar[i, d]!r} > ER {er[i, d]!r}")
        return out

    def check(self, scenario: "Scenario") -> None:
        problems = self.violations(scenario)
        if problems:
            from .errors import InfeasibleProfile

            raise InfeasibleProfile("; ".join(problems[:5]))


@dataclass(frozen=True)
class EpochState:
    """Billing state carried between epochs.

    ``prior_peak_kw`` is the billed (realized) monthly peak. Solvers plan with
    ``est_peak_kw``, the running peak of their own estimated grid draw, so the
    peak term they optimize is measured on the same scale as their draw.
    """

    tau: int
    prior_peak_kw: np.ndarray
    est_peak_kw: np.ndarray

    @classmethod
    def month_start(cls, n_dcs: int, tau: int = 0) -> "EpochState":
        return cls(tau=tau, prior_peak_kw=np.zeros(n_dcs), est_peak_kw=np.zeros(n_dcs))


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr
