"""Carbon and cost ledgers.

Realized accounting runs the physical power model for a chosen profile and
charges TOU energy, monthly peak-demand increases and network transfer.
Estimated accounting is the linear surrogate used by every solver: each task
type is charged DP_max * AR / ER of power at each data center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProfile, InfeasibleRate
from .model import DataCenterSpec, Scenario, StrategyProfile
from .power import dc_power, dp_max_vector

OBJECTIVES = ("carbon", "cost")


# -- realized path -----------------------------------------------------------


def dc_carbon(dc: DataCenterSpec, net_kw: float, epoch_hours: float = 1.0) -> float:
    """kg CO2 for one epoch; negative net power earns a credit."""
    return dc.carbon_factor * net_kw * epoch_hours


def peak_cost_delta(peak_price: float, pc_peak_kw: float, prior_peak_kw: float) -> tuple[float, float]:
    if pc_peak_kw >= prior_peak_kw:
        return peak_price * (pc_peak_kw - prior_peak_kw), pc_peak_kw
    return 0.0, prior_peak_kw


def network_cost(scenario: Scenario, migrated_counts) -> float:
    counts = np.asarray(migrated_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("migrated counts must be >= 0")
    return float(np.sum(scenario.network_price * scenario.task_size * counts))


def dc_cost(
    dc: DataCenterSpec,
    net_kw: float,
    elec_price: float,
    peak_delta: float,
    network_cost_usd: float,
    epoch_hours: float = 1.0,
) -> float:
    alpha = 1.0 if net_kw > 0 else dc.net_meter
    return elec_price * alpha * net_kw * epoch_hours + peak_delta + network_cost_usd


def migrated_slots(scenario: Scenario, ar: np.ndarray, tau: int) -> np.ndarray:
    """Node slots at each DC serving tasks that originated at another DC.

    Requests of task i arrive at DC o with share origin_share[o]; locally
    originated work is served locally first, the rest was migrated in.
    """
    car = scenario.car(tau)
    local = scenario.origin_share[None, :] * car[:, None]
    foreign = np.maximum(ar - local, 0.0)
    return scenario.total_nodes[None, :] * foreign / scenario.execution_rates


@dataclass(frozen=True, eq=False)
class EpochLedger:
    tau: int
    net_kw: np.ndarray
    carbon_kg: np.ndarray
    energy_cost_usd: np.ndarray
    peak_delta_usd: np.ndarray
    network_cost_usd: np.ndarray
    total_cost_usd: np.ndarray
    prior_peak_kw: np.ndarray  # running monthly peak after this epoch
    utilization: np.ndarray = field(default_factory=lambda: np.zeros(0))

    COLUMNS = (
        "net_kw",
        "carbon_kg",
        "energy_cost_usd",
        "peak_delta_usd",
        "network_cost_usd",
        "total_cost_usd",
    )

    @property
    def totals(self) -> dict[str, float]:
        return {c: float(np.sum(getattr(self, c))) for c in self.COLUMNS}

    @property
    def carbon(self) -> float:
        return float(np.sum(self.carbon_kg))

    @property
    def cost(self) -> float:
        return float(np.sum(self.total_cost_usd))

    def metric(self, objective: str) -> float:
        return self.carbon if objective == "carbon" else self.cost


def realized_ledger(
    scenario: Scenario, tau: int, ar: np.ndarray, prior_peak_kw: np.ndarray
) -> EpochLedger:
    ar = np.asarray(ar, dtype=float)
    h = scenario.epoch_hours
    hour = scenario.hour(tau)
    counts = migrated_slots(scenario, ar, tau)
    cols = {c: np.zeros(scenario.n_dcs) for c in EpochLedger.COLUMNS}
    new_peak = np.array(prior_peak_kw, dtype=float)
    util = np.zeros(scenario.n_dcs)
    for d, dc in enumerate(scenario.data_centers):
        pb = dc_power(scenario, d, ar[:, d], tau)
        delta, new_peak[d] = peak_cost_delta(dc.peak_price, max(prior_peak_kw[d], pb.grid_kw), prior_peak_kw[d])
        net_usd = network_cost(scenario, counts[:, d])
        alpha = 1.0 if pb.net_kw > 0 else dc.net_meter
        cols["net_kw"][d] = pb.net_kw
        cols["carbon_kg"][d] = dc_carbon(dc, pb.net_kw, h)
        cols["energy_cost_usd"][d] = dc.elec_price_trace[hour] * alpha * pb.net_kw * h
        cols["peak_delta_usd"][d] = delta
        cols["network_cost_usd"][d] = net_usd
        cols["total_cost_usd"][d] = dc_cost(dc, pb.net_kw, dc.elec_price_trace[hour], delta, net_usd, h)
        util[d] = pb.utilization
    return EpochLedger(tau=tau, prior_peak_kw=new_peak, utilization=util, **cols)


# -- estimate path -----------------------------------------------------------


class Estimator:
    """Per-epoch linear coefficients of the estimated objectives.

    All per-(i, d) quantities are rates-to-value multipliers, so for a rate
    matrix ``ar``: DP_est = k * ar, DE_est = carbon_coef * ar, and so on.
    """

    def __init__(self, scenario: Scenario, tau: int):
        self.scenario = scenario
        self.tau = tau
        s = scenario
        h = s.epoch_hours
        er = s.execution_rates
        self.er = er
        self.car = s.car(tau)
        self.dp_max = dp_max_vector(s, tau)
        self.k = self.dp_max[None, :] / er
        self.carbon_coef = s.carbon_factor[None, :] * self.k * h
        alpha = np.where(self.dp_max > 0, 1.0, s.net_meter)
        self.energy_coef = (s.elec_price[:, s.hour(tau)] * alpha)[None, :] * self.k * h
        self.nc_max = s.network_price * s.total_nodes[None, :] * s.task_size[:, None]
        self.net_coef = self.nc_max / er
        self.linear_cost_coef = self.energy_coef + self.net_coef
        self.draw_coef = np.maximum(self.k, 0.0)
        self.peak_price = s.peak_price
        self.prorate = s.prorate_peak

    # carbon ---------------------------------------------------------------

    def carbon_terms(self, i: int, ar_i) -> np.ndarray:
        return self.carbon_coef[i] * ar_i

    # cost -----------------------------------------------------------------

    def draw(self, ar: np.ndarray) -> np.ndarray:
        """Total estimated grid draw per DC, sum_i max(DP_est, 0); ar is (..., |I|, |D|)."""
        return np.sum(self.draw_coef * ar, axis=-2)

    def peak_delta(self, draw, prior_peak) -> np.ndarray:
        return self.peak_price * np.maximum(draw - prior_peak, 0.0)

    def cost_terms_matrix(self, ar: np.ndarray, prior_peak) -> np.ndarray:
        """DC_est[i, d] for the whole profile."""
        draw = self.draw(ar)
        delta = self.peak_delta(draw, prior_peak)
        peak = delta * _active(ar)[:, None]
        if self.prorate:
            own = self.draw_coef * ar
            share = np.divide(own, draw, out=np.zeros_like(own), where=draw > 0)
            peak = delta * share
        return self.linear_cost_coef * ar + peak

    def player_cost_terms(self, i: int, x, others_draw, prior_peak) -> np.ndarray:
        """DC_est[i, :] as a function of player i's rates ``x`` (any leading shape).

        Separable in d: entry d depends only on x[..., d].
        """
        x = np.asarray(x, dtype=float)
        own = self.draw_coef[i] * x
        draw = others_draw + own
        delta = self.peak_delta(draw, prior_peak)
        if self.prorate:
            delta = delta * np.divide(own, draw, out=np.zeros_like(own), where=draw > 0)
        else:
            delta = delta * _active(x)[..., None]
        return self.linear_cost_coef[i] * x + delta

    # shared ---------------------------------------------------------------

    def player_terms(self, objective: str, i: int, ar: np.ndarray, prior_peak) -> np.ndarray:
        if objective == "carbon":
            return self.carbon_terms(i, ar[i])
        others = self.draw(ar) - self.draw_coef[i] * ar[i]
        return self.player_cost_terms(i, ar[i], others, prior_peak)

    def player_rewards(self, objective: str, ar: np.ndarray, prior_peak) -> np.ndarray:
        if objective == "carbon":
            return np.sum(self.carbon_coef * ar, axis=1)
        return np.sum(self.cost_terms_matrix(ar, prior_peak), axis=1)

    def batch_player_rewards(self, objective: str, ars: np.ndarray, prior_peak) -> np.ndarray:
        """CET_i or CCT_i for a stack of profiles (..., |I|, |D|); prior_peak (..., |D|)."""
        if objective == "carbon":
            return np.sum(self.carbon_coef * ars, axis=-1)
        own = self.draw_coef * ars
        draw = np.sum(own, axis=-2)
        delta = self.peak_delta(draw, prior_peak)
        linear = np.sum(self.linear_cost_coef * ars, axis=-1)
        if self.prorate:
            share = np.divide(own, draw[..., None, :], out=np.zeros_like(own), where=draw[..., None, :] > 0)
            return linear + np.sum(delta[..., None, :] * share, axis=-1)
        return linear + np.sum(delta, axis=-1)[..., None] * _active(ars)

    def objective(self, objective: str, ar: np.ndarray, prior_peak) -> float:
        return float(np.sum(self.player_rewards(objective, ar, prior_peak)))


def _active(ar) -> np.ndarray:
    # a player with no load this epoch sits out of the game and pays no peak share
    return (np.sum(ar, axis=-1) > 0).astype(float)


def _check_player_rates(scenario: Scenario, i: int, ar_i) -> np.ndarray:
    ar_i = np.asarray(ar_i, dtype=float)
    er = scenario.execution_rates[i]
    if np.any(ar_i < 0) or np.any(ar_i > er):
        raise InfeasibleRate(f"task {i + 1}: rates must lie in [0, ER]")
    return ar_i


def estimate_carbon_player(i: int, scenario: Scenario, tau: int, ar_i) -> tuple[np.ndarray, float]:
    ar_i = _check_player_rates(scenario, i, ar_i)
    terms = Estimator(scenario, tau).carbon_terms(i, ar_i)
    return terms, float(np.sum(terms))


def estimate_cost_player(
    i: int,
    scenario: Scenario,
    tau: int,
    ar_i,
    profile_context: np.ndarray,
    prior_peak,
) -> tuple[np.ndarray, float]:
    """Player i's DC_est vector and CCT_i, other players taken from ``profile_context``."""
    ar_i = _check_player_rates(scenario, i, ar_i)
    ar = np.array(profile_context, dtype=float)
    ar[i] = ar_i
    est = Estimator(scenario, tau)
    terms = est.player_terms("cost", i, ar, np.asarray(prior_peak, dtype=float))
    return terms, float(np.sum(terms))


def cloud_objective(
    scenario: Scenario,
    tau: int,
    profile: StrategyProfile | np.ndarray,
    objective: str,
    prior_peak=None,
    check: bool = True,
) -> float:
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if not isinstance(profile, StrategyProfile):
        profile = StrategyProfile(np.asarray(profile, dtype=float), tau)
    if check:
        problems = profile.violations(scenario)
        if problems:
            raise InfeasibleProfile("; ".join(problems[:5]))
    pp = np.zeros(scenario.n_dcs) if prior_peak is None else np.asarray(prior_peak, dtype=float)
    return Estimator(scenario, tau).objective(objective, profile.rates, pp)
