"""Request and response models of the HTTP service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

Objective = Literal["carbon", "cost"]
SolverName = Literal["fd", "nash", "ppo", "gtdrl", "oracle"]


class ScenarioRef(BaseModel):
    """Either a path / bundled fixture name, or an inline scenario document."""

    model_config = ConfigDict(extra="forbid")

    scenario: Optional[str] = None
    scenario_doc: Optional[dict[str, Any]] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.scenario is None) == (self.scenario_doc is None):
            raise ValueError("give exactly one of 'scenario' or 'scenario_doc'")
        return self


class ValidateRequest(ScenarioRef):
    pass


class ScenarioSummary(BaseModel):
    name: str
    n_tasks: int
    n_dcs: int
    total_nodes: list[int]
    peak_utilization: float = Field(description="max over epochs of sum_i CAR_i / sum_d ER_i,d")
    gross_power_max_kw: list[float]


class OracleRequest(ScenarioRef):
    tau: int = Field(0, ge=0)
    objective: Objective = "carbon"
    resolution: float = Field(0.05, gt=0, le=1)
    prior_peak_kw: Optional[list[float]] = None


class AllocateRequest(ScenarioRef):
    tau: int = Field(0, ge=0)
    objective: Objective = "carbon"
    solver: SolverName = "nash"
    prior_peak_kw: Optional[list[float]] = None
    checkpoint: Optional[str] = Field(None, description="agent pool directory, needed for ppo/gtdrl")
    resolution: float = Field(0.05, gt=0, le=1)


class LedgerOut(BaseModel):
    net_kw: list[float]
    carbon_kg: list[float]
    energy_cost_usd: list[float]
    peak_delta_usd: list[float]
    network_cost_usd: list[float]
    total_cost_usd: list[float]
    prior_peak_kw: list[float]


class AllocationResponse(BaseModel):
    solver: str
    tau: int
    objective: Objective
    rates: list[list[float]]
    estimated_objective: float
    ledger: LedgerOut
    info: dict[str, Any] = Field(default_factory=dict)


class TrainRequest(ScenarioRef):
    objective: Objective = "carbon"
    solver: Literal["gtdrl", "ppo"] = "gtdrl"
    episodes: int = Field(2000, ge=0)
    seed: int = 0
    out: str
    train_config: dict[str, Any] = Field(default_factory=dict)


class TrainResponse(BaseModel):
    out: str
    kind: str
    objective: Objective
    episodes_trained: int
    stopped: str
    action_dims: list[int]
    final_rewards: list[float]


class ExperimentRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict[str, Any]
    base_dir: Optional[str] = Field(None, description="directory that relative paths in config refer to")
    output: Optional[str] = None


class ExperimentResponse(BaseModel):
    scenario: str
    output: Optional[str]
    files: list[str]
    summary: list[dict[str, Any]]
    reductions: list[dict[str, Any]]
    solver_info: dict[str, Any]


class ErrorResponse(BaseModel):
    error: str
    detail: str
    exit_code: int
