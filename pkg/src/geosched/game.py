"""Non-cooperative workload game and the mathematical solvers.

Players are task types; a strategy is a split of the player's cloud arrival
rate across data centers. Solvers here: sequential best-reply (NASH),
Force-Directed (FD) and an exhaustive simplex-grid oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .accounting import OBJECTIVES, Estimator
from .errors import NoFeasibleStrategy, SolverBudgetExceeded, TooLarge
from .model import Scenario, Strategy, StrategyProfile


@dataclass(frozen=True)
class SolverSettings:
    """Tunable constants of the mathematical solvers, in one place."""

    eps_rel: float = 1e-3  # Nash stop: max L1 change per player < eps_rel * CAR_i
    eps_reward_rel: float = 1e-3  # equilibrium certificate tolerance
    max_rounds: int = 100
    ls_start_frac: float = 0.25  # local-search step schedule, fractions of CAR_i
    ls_end_frac: float = 1e-4
    ls_max_moves: int = 1000  # per step size
    fd_probe_frac: float = 0.01  # finite-difference step for forces
    fd_quantum_frac: float = 0.02  # load moved per FD iteration
    fd_iter_factor: int = 10  # FD cap = max(factor * |I| * |D|, |I| / fd_quantum_frac)
    tie_rtol: float = 1e-12


DEFAULT_SETTINGS = SolverSettings()


class Budget:
    """Counts objective evaluations; raises once the cap is passed."""

    def __init__(self, max_evals: int | None = None):
        self.max_evals = max_evals
        self.used = 0

    def spend(self, n: int = 1) -> None:
        self.used += n
        if self.max_evals is not None and self.used > self.max_evals:
            raise SolverBudgetExceeded(f"solver used more than {self.max_evals} objective evaluations")


@dataclass
class SolveResult:
    profile: StrategyProfile
    value: float
    converged: bool = True
    rounds: int = 0
    info: dict = field(default_factory=dict)


# -- feasibility -------------------------------------------------------------


def project_feasible(raw_fractions, player: int, scenario: Scenario, tau: int) -> Strategy:
    """Turn non-negative desired fractions into a strategy obeying both rate constraints.

    Overflow above a DC's execution rate is pushed onto the remaining DCs in
    proportion to their headroom.
    """
    raw = np.asarray(raw_fractions, dtype=float)
    if raw.shape != (scenario.n_dcs,) or np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("raw fractions must be |D| finite non-negative numbers")
    car = float(scenario.car(tau)[player])
    er = scenario.execution_rates[player]
    total = raw.sum()
    if total <= 0:
        if car == 0:
            return Strategy(player, np.zeros(scenario.n_dcs))
        raise ValueError("raw fractions need at least one positive entry")
    if car > er.sum() * (1 + 1e-12):
        raise NoFeasibleStrategy(f"task {player + 1}: CAR {car} exceeds total ER {er.sum()}")
    ar = project_batch(raw, car, er)
    return Strategy(player, ar)


def project_batch(raw, car, er) -> np.ndarray:
    """Vectorized projection: ``raw`` (..., |D|) fractions, ``car`` (...), ``er`` broadcastable to raw.

    Rows must have a positive fraction sum (or zero CAR) and CAR <= sum(ER);
    callers validate. Row-by-row identical to ``project_feasible``.
    """
    raw = np.asarray(raw, dtype=float)
    shape = raw.shape
    n_dcs = shape[-1]
    raw = raw.reshape(-1, n_dcs)
    car = np.broadcast_to(np.asarray(car, dtype=float), shape[:-1]).reshape(-1)
    er = np.broadcast_to(np.asarray(er, dtype=float), shape).reshape(-1, n_dcs)
    total = raw.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    ar = np.where((total > 0)[:, None], raw / safe[:, None] * car[:, None], 0.0)
    capped = np.zeros(ar.shape, dtype=bool)
    for _ in range(n_dcs):
        over = (ar > er) & ~capped
        if not over.any():
            break
        excess = np.where(over, ar - er, 0.0).sum(axis=1)
        ar = np.where(over, er, ar)
        capped |= over
        head = np.where(~capped, er - ar, 0.0)
        room = head.sum(axis=1)
        move = (excess > 0) & (room > 0)
        ar = np.where(move[:, None], ar + excess[:, None] * head / np.where(move, room, 1.0)[:, None], ar)
    ar = np.minimum(ar, er)
    # absorb floating-point drift in the largest-headroom (or largest) entry
    gap = car - ar.sum(axis=1)
    rows = np.nonzero(gap != 0)[0]
    if len(rows):
        g = gap[rows]
        cols = np.where(g > 0, np.argmax(er[rows] - ar[rows], axis=1), np.argmax(ar[rows], axis=1))
        ar[rows, cols] = np.minimum(np.maximum(ar[rows, cols] + g, 0.0), er[rows, cols])
    return ar.reshape(shape)


def _fix_sum(ar: np.ndarray, car: float, er: np.ndarray) -> np.ndarray:
    # absorb floating-point drift in the largest-headroom entry
    gap = car - ar.sum()
    if gap != 0:
        d = int(np.argmax(er - ar)) if gap > 0 else int(np.argmax(ar))
        ar[d] = min(max(ar[d] + gap, 0.0), er[d])
    return ar


def proportional_profile(scenario: Scenario, tau: int) -> StrategyProfile:
    er = scenario.execution_rates
    return StrategyProfile.from_strategies(
        [project_feasible(er[i], i, scenario, tau) for i in range(scenario.n_tasks)], tau
    )


# -- rewards and best replies ------------------------------------------------


def player_reward(
    player: int,
    profile: StrategyProfile,
    scenario: Scenario,
    tau: int,
    objective: str,
    prior_peak=None,
    est: Estimator | None = None,
) -> float:
    """CET_i (carbon) or CCT_i (cost) for ``player`` with the rest of ``profile`` fixed."""
    profile.check(scenario)
    est = est or Estimator(scenario, tau)
    pp = _pp(scenario, prior_peak)
    return float(np.sum(est.player_terms(objective, player, profile.rates, pp)))


def greedy_fill(coef, er, car: float, rtol: float = 1e-12) -> np.ndarray:
    """Minimize coef . x subject to sum x = car, 0 <= x <= er.

    Cheapest DCs are filled to capacity first; tied DCs share their group's
    allotment in proportion to execution rate.
    """
    coef = np.asarray(coef, dtype=float)
    er = np.asarray(er, dtype=float)
    x = np.zeros_like(er)
    remaining = car
    order = np.argsort(coef, kind="stable")
    k = 0
    while k < len(order) and remaining > 0:
        group = [order[k]]
        k += 1
        while k < len(order) and math.isclose(coef[order[k]], coef[group[0]], rel_tol=rtol, abs_tol=0.0):
            group.append(order[k])
            k += 1
        cap = er[group].sum()
        if cap <= remaining:
            x[group] = er[group]
            remaining -= cap
        else:
            x[group] = remaining * er[group] / cap
            remaining = 0.0
    return x


def best_reply(
    player: int,
    profile: StrategyProfile,
    scenario: Scenario,
    tau: int,
    objective: str,
    prior_peak=None,
    est: Estimator | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    budget: Budget | None = None,
) -> Strategy:
    est = est or Estimator(scenario, tau)
    pp = _pp(scenario, prior_peak)
    er = scenario.execution_rates[player]
    car = float(scenario.car(tau)[player])
    if objective == "carbon":
        x = greedy_fill(est.carbon_coef[player], er, car, settings.tie_rtol)
        if budget:
            budget.spend(1)
        return Strategy(player, _fix_sum(x, car, er))
    if objective != "cost":
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    x = greedy_fill(est.linear_cost_coef[player], er, car, settings.tie_rtol)
    x = _fix_sum(x, car, er)
    others = est.draw(profile.rates) - est.draw_coef[player] * profile.rates[player]
    x = _local_search(est, player, x, er, car, others, pp, settings, budget)
    return Strategy(player, x)


def _local_search(est, i, x, er, car, others, pp, settings, budget) -> np.ndarray:
    """Pairwise load transfers with a halving step, evaluated on the full reward."""
    if car <= 0 or len(x) < 2:
        return x
    n = len(x)
    off_diag = ~np.eye(n, dtype=bool)
    delta = car * settings.ls_start_frac
    while delta >= car * settings.ls_end_frac:
        for _ in range(settings.ls_max_moves):
            base = est.player_cost_terms(i, x, others, pp)
            tol = 1e-12 * (abs(base.sum()) + 1.0)
            # amount[s, t] moved from DC s to DC t
            amount = np.minimum(np.minimum(delta, x)[:, None], (er - x)[None, :])
            amount = np.where(off_diag, np.maximum(amount, 0.0), 0.0)
            # removed[s, t] = f_s(x_s - amount[s, t]); added[s, t] = f_t(x_t + amount[s, t])
            removed = est.player_cost_terms(i, (x[:, None] - amount).T, others, pp).T
            added = est.player_cost_terms(i, x[None, :] + amount, others, pp)
            change = (removed - base[:, None]) + (added - base[None, :])
            change = np.where(amount > 0, change, np.inf)
            if budget:
                budget.spend(1)
            s, t = np.unravel_index(np.argmin(change), change.shape)
            if not change[s, t] < -tol:
                break
            a = amount[s, t]
            x = x.copy()
            x[s] -= a
            x[t] = min(x[t] + a, er[t])
            x[s] = max(x[s], 0.0)
        delta /= 2
    return _fix_sum(x, car, er)


# -- NASH ----------------------------------------------------------------------


def nash_solve(
    scenario: Scenario,
    tau: int,
    objective: str,
    prior_peak=None,
    eps: float | None = None,
    max_rounds: int | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    budget: Budget | None = None,
    certify: bool = True,
) -> SolveResult:
    """Sequential best-reply dynamics in ascending player order.

    ``rounds`` is the number of sweeps that changed the profile; the final
    verifying sweep is not counted. ``info["max_gain"]`` is the largest reward
    improvement any single best reply still finds (the equilibrium certificate).
    """
    pp = _pp(scenario, prior_peak)
    est = Estimator(scenario, tau)
    eps_rel = settings.eps_rel if eps is None else eps
    max_rounds = settings.max_rounds if max_rounds is None else max_rounds
    car = scenario.car(tau)
    profile = proportional_profile(scenario, tau)
    converged = False
    rounds = 0
    for sweep in range(1, max_rounds + 1):
        change = np.zeros(scenario.n_tasks)
        for i in range(scenario.n_tasks):
            s = best_reply(i, profile, scenario, tau, objective, pp, est, settings, budget)
            change[i] = np.abs(s.rates - profile.rates[i]).sum()
            profile = profile.with_strategy(s)
        if np.all(change <= eps_rel * car):
            converged = True
            break
        rounds = sweep
    info = {"sweeps": sweep}
    if certify:
        info.update(equilibrium_gap(profile, scenario, tau, objective, pp, est, settings))
    return SolveResult(profile, est.objective(objective, profile.rates, pp), converged, rounds, info)


def equilibrium_gap(profile, scenario, tau, objective, prior_peak, est=None, settings=DEFAULT_SETTINGS) -> dict:
    est = est or Estimator(scenario, tau)
    pp = _pp(scenario, prior_peak)
    gains = []
    for i in range(scenario.n_tasks):
        now = float(np.sum(est.player_terms(objective, i, profile.rates, pp)))
        br = best_reply(i, profile, scenario, tau, objective, pp, est, settings)
        after = float(np.sum(est.player_terms(objective, i, profile.with_strategy(br).rates, pp)))
        gains.append((now - after, settings.eps_reward_rel * max(abs(now), 1e-12)))
    max_gain = max(g for g, _ in gains)
    return {
        "max_gain": max_gain,
        "is_equilibrium": all(g <= tol for g, tol in gains),
    }


# -- Force-Directed --------------------------------------------------------------


def force_directed(
    scenario: Scenario,
    tau: int,
    objective: str,
    prior_peak=None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    budget: Budget | None = None,
) -> SolveResult:
    """Greedy force-directed balancing of the global estimated objective.

    Forces are forward-difference derivatives of the cloud objective with
    respect to each AR[i, d]. Each iteration tries moves from high-force to
    low-force DCs in decreasing force gap and applies the first one that lowers
    the objective.
    """
    pp = _pp(scenario, prior_peak)
    est = Estimator(scenario, tau)
    n_i, n_d = scenario.n_tasks, scenario.n_dcs
    er = scenario.execution_rates
    car = scenario.car(tau)
    ar = proportional_profile(scenario, tau).rates.copy()
    value = est.objective(objective, ar, pp)
    probe = np.maximum(car * settings.fd_probe_frac, 1e-12)
    quantum = car * settings.fd_quantum_frac
    # enough iterations for every player to shift its whole load once
    cap = max(settings.fd_iter_factor * n_i * n_d, math.ceil(1.0 / settings.fd_quantum_frac) * n_i)
    eye = np.eye(n_i * n_d).reshape(n_i * n_d, n_i, n_d)
    iterations = 0
    stuck = False
    while iterations < cap and n_d > 1:
        iterations += 1
        probes = ar[None] + eye * probe[None, :, None]
        if budget:
            budget.spend(len(probes))
        forces = ((_batch_objective(est, objective, probes, pp) - value) / np.repeat(probe, n_d)).reshape(n_i, n_d)
        gap = forces[:, :, None] - forces[:, None, :]  # [i, src, dst]
        amount = np.minimum(np.minimum(quantum[:, None, None], ar[:, :, None]), (er - ar)[:, None, :])
        valid = (amount > 0) & ~np.eye(n_d, dtype=bool)[None]
        cand = np.argwhere(valid)
        if len(cand) == 0:
            break
        order = np.argsort(-gap[valid], kind="stable")
        cand = cand[order]
        trials = np.repeat(ar[None], len(cand), axis=0)
        idx = np.arange(len(cand))
        amt = amount[cand[:, 0], cand[:, 1], cand[:, 2]]
        trials[idx, cand[:, 0], cand[:, 1]] -= amt
        trials[idx, cand[:, 0], cand[:, 2]] += amt
        if budget:
            budget.spend(len(trials))
        vals = _batch_objective(est, objective, trials, pp)
        better = np.nonzero(vals < value - 1e-12 * (abs(value) + 1.0))[0]
        if len(better) == 0:
            stuck = True
            break
        k = better[0]
        i, s, t = cand[k]
        ar[i, s] -= amt[k]
        ar[i, t] = min(ar[i, t] + amt[k], er[i, t])
        ar[i, s] = max(ar[i, s], 0.0)
        value = est.objective(objective, ar, pp)
    for i in range(n_i):
        ar[i] = _fix_sum(ar[i], float(car[i]), er[i])
    profile = StrategyProfile(ar, tau)
    return SolveResult(
        profile,
        est.objective(objective, ar, pp),
        converged=stuck or n_d == 1,
        rounds=iterations,
        info={"iteration_cap": cap},
    )


def _batch_objective(est: Estimator, objective: str, ars: np.ndarray, pp) -> np.ndarray:
    return np.sum(est.batch_player_rewards(objective, ars, pp), axis=-1)


# -- exhaustive oracle -------------------------------------------------------------

MAX_ORACLE_PROFILES = 10_000_000


def simplex_grid(n_dcs: int, resolution: float) -> np.ndarray:
    """All fraction vectors with entries in multiples of ``resolution``."""
    steps = round(1.0 / resolution)
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise ValueError(f"1/resolution must be a positive integer, got {resolution}")
    rows = []
    for bars in itertools.combinations(range(steps + n_dcs - 1), n_dcs - 1):
        parts, prev = [], -1
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(steps + n_dcs - 2 - prev)
        rows.append(parts)
    return np.array(rows, dtype=float) / steps


def oracle_grid(
    scenario: Scenario,
    tau: int,
    objective: str,
    prior_peak=None,
    resolution: float = 0.05,
    chunk: int = 20000,
    budget: Budget | None = None,
) -> SolveResult:
    pp = _pp(scenario, prior_peak)
    grid = simplex_grid(scenario.n_dcs, resolution)
    total = len(grid) ** scenario.n_tasks
    if total > MAX_ORACLE_PROFILES:
        raise TooLarge(f"{total} profiles exceed the oracle limit of {MAX_ORACLE_PROFILES}")
    car = scenario.car(tau)
    options = []
    for i in range(scenario.n_tasks):
        if car[i] == 0:
            options.append(np.zeros((1, scenario.n_dcs)))
            continue
        strategies = {tuple(project_feasible(g, i, scenario, tau).rates) for g in grid}
        options.append(np.array(sorted(strategies)))
    est = Estimator(scenario, tau)
    best_val, best = math.inf, None
    sizes = [len(o) for o in options]
    n_total = math.prod(sizes)
    for start in range(0, n_total, chunk):
        flat = np.arange(start, min(start + chunk, n_total))
        idx = np.unravel_index(flat, sizes)
        ars = np.stack([options[i][idx[i]] for i in range(scenario.n_tasks)], axis=1)
        if budget:
            budget.spend(len(ars))
        vals = _batch_objective(est, objective, ars, pp)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best = float(vals[k]), ars[k].copy()
    profile = StrategyProfile(best, tau)
    return SolveResult(profile, best_val, info={"profiles": n_total, "resolution": resolution})


def _pp(scenario: Scenario, prior_peak) -> np.ndarray:
    if prior_peak is None:
        return np.zeros(scenario.n_dcs)
    return np.asarray(prior_peak, dtype=float)
