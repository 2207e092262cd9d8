"""Request handlers shared by the HTTP app and the in-process CLI client."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import errors
from ..accounting import cloud_objective, realized_ledger
from ..game import oracle_grid
from ..gtdrl import load_pool, save_pool, train
from ..harness import ExperimentConfig, make_solver, resolve_scenario, run_experiment, write_results
from ..model import Scenario
from ..scenario import scenario_from_dict
from .schemas import (
    AllocateRequest,
    AllocationResponse,
    ExperimentRequest,
    ExperimentResponse,
    LedgerOut,
    OracleRequest,
    ScenarioRef,
    ScenarioSummary,
    TrainRequest,
    TrainResponse,
    ValidateRequest,
)


def exit_code(exc: BaseException) -> int:
    """CLI exit status for an error: 2 for rejected input, 3 for solver failures."""
    if isinstance(exc, (errors.ValidationError, FileNotFoundError)):
        return 2
    return 3


def _scenario(req: ScenarioRef) -> Scenario:
    if req.scenario_doc is not None:
        return scenario_from_dict(req.scenario_doc)
    return resolve_scenario(req.scenario)


def _prior_peak(scenario: Scenario, values) -> np.ndarray:
    if values is None:
        return np.zeros(scenario.n_dcs)
    pp = np.asarray(values, dtype=float)
    if pp.shape != (scenario.n_dcs,) or np.any(pp < 0):
        raise errors.MalformedConfig(f"prior_peak_kw must list {scenario.n_dcs} non-negative numbers")
    return pp


def _check_tau(scenario: Scenario, tau: int) -> None:
    if not 0 <= tau < scenario.epochs_per_day:
        raise errors.MalformedConfig(f"tau must lie in [0, {scenario.epochs_per_day})")


def validate(req: ValidateRequest) -> ScenarioSummary:
    s = _scenario(req)
    util = (s.arrival_trace / s.execution_rates.sum(axis=1)[:, None]).sum(axis=0)
    return ScenarioSummary(
        name=s.name,
        n_tasks=s.n_tasks,
        n_dcs=s.n_dcs,
        total_nodes=[int(n) for n in s.total_nodes],
        peak_utilization=float(util.max()),
        gross_power_max_kw=[float(x) for x in s.gross_power_max],
    )


def _allocation(solver: str, s: Scenario, tau: int, objective: str, pp, profile, info) -> AllocationResponse:
    led = realized_ledger(s, tau, profile.rates, pp)
    return AllocationResponse(
        solver=solver,
        tau=tau,
        objective=objective,
        rates=profile.rates.tolist(),
        estimated_objective=cloud_objective(s, tau, profile, objective, pp),
        ledger=LedgerOut(
            net_kw=led.net_kw.tolist(),
            carbon_kg=led.carbon_kg.tolist(),
            energy_cost_usd=led.energy_cost_usd.tolist(),
            peak_delta_usd=led.peak_delta_usd.tolist(),
            network_cost_usd=led.network_cost_usd.tolist(),
            total_cost_usd=led.total_cost_usd.tolist(),
            prior_peak_kw=led.prior_peak_kw.tolist(),
        ),
        info=info,
    )


def oracle(req: OracleRequest) -> AllocationResponse:
    s = _scenario(req)
    _check_tau(s, req.tau)
    pp = _prior_peak(s, req.prior_peak_kw)
    res = oracle_grid(s, req.tau, req.objective, pp, req.resolution)
    return _allocation("oracle", s, req.tau, req.objective, pp, res.profile, res.info)


def allocate(req: AllocateRequest) -> AllocationResponse:
    s = _scenario(req)
    _check_tau(s, req.tau)
    pp = _prior_peak(s, req.prior_peak_kw)
    pool = None
    if req.solver in ("ppo", "gtdrl"):
        if not req.checkpoint:
            raise errors.MissingCheckpoint(f"solver {req.solver!r} needs a checkpoint directory")
        pool = load_pool(req.checkpoint)
    solver = make_solver(req.solver, req.objective, pool, oracle_resolution=req.resolution)
    profile = solver(s, req.tau, pp, 0)
    profile.check(s)
    return _allocation(req.solver, s, req.tau, req.objective, pp, profile, {})


def train_agents(req: TrainRequest) -> TrainResponse:
    from ..gtdrl import TrainConfig

    s = _scenario(req)
    tcfg = TrainConfig.from_dict({**req.train_config, "episodes": req.episodes})
    pool = train(s, req.objective, req.solver, tcfg, req.episodes, req.seed)
    save_pool(pool, req.out, s.name)
    return TrainResponse(
        out=str(Path(req.out)),
        kind=pool.kind,
        objective=pool.objective,
        episodes_trained=pool.episodes_trained,
        stopped=pool.stopped,
        action_dims=pool.action_dims,
        final_rewards=pool.curve[-1] if pool.curve else [],
    )


def experiment(req: ExperimentRequest) -> ExperimentResponse:
    config = ExperimentConfig.from_dict(req.config, req.base_dir)
    output = req.output or config.output
    result = run_experiment(config)
    files = [str(p) for p in write_results(result, output)] if output else []
    return ExperimentResponse(
        scenario=result.scenario_name,
        output=output,
        files=files,
        summary=result.summary(),
        reductions=result.reductions(),
        solver_info=result.solver_info,
    )
