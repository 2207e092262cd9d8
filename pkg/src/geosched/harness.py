"""Epoch, day and experiment orchestration.

Every solver decides an epoch's profile from epoch-start information only;
the realized ledger then charges power, carbon and costs and advances the
monthly peak. Experiments repeat days over seeded arrival samples and
renewable-scale sweeps and write plot-ready CSVs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .accounting import OBJECTIVES, EpochLedger, Estimator, realized_ledger
from .errors import MalformedConfig, MissingCheckpoint
from .game import DEFAULT_SETTINGS, Budget, SolverSettings, force_directed, nash_solve, oracle_grid
from .gtdrl import AgentPool, TrainConfig, allocate, load_pool, save_pool, train
from .model import EpochState, Scenario, StrategyProfile
from .scenario import bundled, generate_arrivals, load_scenario, sample_arrivals, check_feasible

SOLVERS = ("fd", "nash", "ppo", "gtdrl", "oracle")
DRL_SOLVERS = ("ppo", "gtdrl")
# objective evaluations one mathematical solver may spend on a single epoch
DEFAULT_EPOCH_BUDGET = 10_000_000

EPOCH_COLUMNS = (
    "solver",
    "run",
    "day",
    "epoch",
    "dc_id",
    "net_kw",
    "carbon_kg",
    "energy_cost_usd",
    "peak_delta_usd",
    "network_cost_usd",
    "total_cost_usd",
    "renewable_scale",
)
METRICS = ("carbon_kg", "energy_cost_usd", "peak_delta_usd", "network_cost_usd", "total_cost_usd")

Solver = Callable[[Scenario, int, np.ndarray, int], StrategyProfile]


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible child seed: splitmix64 over seed XOR each key."""
    out = splitmix64(seed & 0xFFFFFFFFFFFFFFFF)
    for k in keys:
        out = splitmix64(out ^ (k & 0xFFFFFFFFFFFFFFFF))
    return out


def make_solver(
    name: str,
    objective: str,
    pool: AgentPool | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    epoch_budget: int | None = DEFAULT_EPOCH_BUDGET,
    oracle_resolution: float = 0.05,
) -> Solver:
    """Uniform (scenario, tau, prior_peak, seed) -> profile callable for a named solver."""
    if name not in SOLVERS:
        raise ValueError(f"unknown solver {name!r}; choose from {SOLVERS}")
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")

    def budget():
        return Budget(epoch_budget) if epoch_budget else None

    if name == "nash":
        return lambda s, tau, pp, seed: nash_solve(s, tau, objective, pp, settings=settings, budget=budget(), certify=False).profile
    if name == "fd":
        return lambda s, tau, pp, seed: force_directed(s, tau, objective, pp, settings, budget()).profile
    if name == "oracle":
        return lambda s, tau, pp, seed: oracle_grid(s, tau, objective, pp, oracle_resolution, budget=budget()).profile
    if pool is None:
        raise MissingCheckpoint(f"solver {name!r} needs a trained agent pool")
    if pool.kind != name or pool.objective != objective:
        raise MissingCheckpoint(f"checkpoint is a {pool.kind}/{pool.objective} pool, need {name}/{objective}")
    return lambda s, tau, pp, seed: allocate(pool, s, tau, pp, "deterministic", seed)


@dataclass(frozen=True)
class EpochOutcome:
    profile: StrategyProfile
    ledger: EpochLedger
    state: EpochState
    estimated: float


def run_epoch(scenario: Scenario, tau: int, solver: Solver, state: EpochState, objective: str, seed: int = 0) -> EpochOutcome:
    """Decide, then account for, one epoch. ``tau`` is the hour of the day."""
    plan_peak = np.asarray(state.est_peak_kw, dtype=float)
    profile = solver(scenario, tau, plan_peak.copy(), seed)
    profile = StrategyProfile(profile.rates, tau)
    profile.check(scenario)
    est = Estimator(scenario, tau)
    estimated = est.objective(objective, profile.rates, plan_peak)
    ledger = realized_ledger(scenario, tau, profile.rates, np.asarray(state.prior_peak_kw, dtype=float))
    next_state = EpochState(state.tau + 1, ledger.prior_peak_kw, np.maximum(plan_peak, est.draw(profile.rates)))
    return EpochOutcome(profile, ledger, next_state, estimated)


def run_day(
    scenario: Scenario,
    solver: Solver,
    objective: str,
    seed: int = 0,
    day_index: int = 0,
    state: EpochState | None = None,
) -> tuple[list[EpochOutcome], EpochState]:
    """Chain the day's epochs. Day 0 of each billing month starts from a zero peak."""
    if state is None or day_index % scenario.month_days == 0:
        state = EpochState.month_start(scenario.n_dcs, tau=0)
    out = []
    for tau in range(scenario.epochs_per_day):
        o = run_epoch(scenario, tau, solver, state, objective, derive_seed(seed, day_index, tau))
        out.append(o)
        state = o.state
    return out, state


# -- experiments ---------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    solvers: tuple[str, ...] = ("fd", "nash", "gtdrl")
    objective: str = "carbon"
    pattern: str = "sinusoidal"
    runs: int = 5
    seed: int = 0
    days: int = 1
    renewable_scale: tuple[float, ...] = (1.0,)
    sd_frac: float = 0.2
    output: str | None = None
    checkpoints: dict[str, str] = field(default_factory=dict)
    train: bool = True  # train DRL solvers whose checkpoint is missing
    train_config: dict = field(default_factory=dict)
    epoch_budget: int | None = DEFAULT_EPOCH_BUDGET
    oracle_resolution: float = 0.05

    def __post_init__(self):
        if self.runs < 1 or self.days < 1:
            raise MalformedConfig("runs and days must be >= 1")
        if not self.solvers:
            raise MalformedConfig("solver list is empty")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise MalformedConfig(f"unknown solvers {bad}; choose from {SOLVERS}")
        if len(set(self.solvers)) != len(self.solvers):
            raise MalformedConfig("solver list has duplicates")
        if self.objective not in OBJECTIVES:
            raise MalformedConfig(f"objective must be one of {OBJECTIVES}")
        if self.pattern not in ("sinusoidal", "flat"):
            raise MalformedConfig("pattern must be 'sinusoidal' or 'flat'")
        if not self.renewable_scale or any(r < 0 for r in self.renewable_scale):
            raise MalformedConfig("renewable_scale must list non-negative multipliers")
        if self.sd_frac < 0:
            raise MalformedConfig("sd_frac must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise MalformedConfig("experiment config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise MalformedConfig(f"unknown experiment config keys {sorted(unknown)}")
        if "scenario" not in doc:
            raise MalformedConfig("experiment config needs 'scenario'")
        doc = dict(doc)
        base = Path(base_dir) if base_dir is not None else None
        if base is not None:
            doc["scenario"] = _resolve(doc["scenario"], base)
            if doc.get("output"):
                doc["output"] = str(base / doc["output"])
            doc["checkpoints"] = {k: str(base / v) for k, v in doc.get("checkpoints", {}).items()}
        for key in ("solvers", "renewable_scale"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise MalformedConfig(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedConfig(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["solvers"] = list(self.solvers)
        doc["renewable_scale"] = list(self.renewable_scale)
        return doc


def _resolve(name: str, base: Path) -> str:
    p = base / name
    if p.exists():
        return str(p)
    return name


def resolve_scenario(name: str) -> Scenario:
    """A scenario path, or the name of a bundled fixture such as ``four_dc``."""
    p = Path(name)
    if p.exists():
        return load_scenario(p)
    try:
        return load_scenario(bundled(name))
    except FileNotFoundError:
        raise MalformedConfig(f"scenario {name!r} is neither a file nor a bundled fixture") from None


def apply_pattern(scenario: Scenario, pattern: str) -> Scenario:
    spec = scenario.arrival_spec
    if spec is None:
        if pattern != "sinusoidal":
            raise MalformedConfig("scenario gives a raw arrival trace; only its own pattern can be used")
        return scenario
    if spec.pattern == pattern:
        return scenario
    amplitude = spec.amplitude if pattern == "sinusoidal" else 0.0
    trace = generate_arrivals(pattern, spec.base, amplitude, spec.phase_h, scenario.epochs_per_day)
    out = scenario.with_arrivals(trace)
    check_feasible(out)
    return out


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    scenario_name: str
    n_dcs: int
    n_tasks: int
    epoch_rows: list[tuple] = field(default_factory=list)  # EPOCH_COLUMNS
    estimated: list[tuple] = field(default_factory=list)  # (solver, scale, run, day, epoch, value)
    solver_info: dict = field(default_factory=dict)

    def daily_totals(self) -> dict[tuple[str, float], np.ndarray]:
        """(solver, scale) -> array (n_days_total, len(METRICS)) of daily cloud totals."""
        return daily_totals(self.epoch_rows)

    def summary(self) -> list[dict]:
        return summarize(self.epoch_rows, self.config.solvers, self.config.renewable_scale)

    def reductions(self) -> list[dict]:
        return reduction_table(self.summary(), self.config.solvers, self.config.objective)


def daily_totals(rows) -> dict[tuple[str, float], np.ndarray]:
    acc: dict[tuple, dict[tuple, np.ndarray]] = {}
    idx = [EPOCH_COLUMNS.index(m) for m in METRICS]
    for row in rows:
        key = (row[0], float(row[11]))
        day = (int(row[1]), int(row[2]))
        acc.setdefault(key, {}).setdefault(day, np.zeros(len(METRICS)))
        acc[key][day] += [float(row[k]) for k in idx]
    return {k: np.array([v[d] for d in sorted(v)]) for k, v in acc.items()}


def summarize(rows, solvers, scales) -> list[dict]:
    totals = daily_totals(rows)
    out = []
    for scale in scales:
        for solver in solvers:
            arr = totals.get((solver, float(scale)))
            if arr is None:
                continue
            n = len(arr)
            rec = {"solver": solver, "renewable_scale": float(scale), "days": n}
            for k, m in enumerate(METRICS):
                rec[f"daily_{m}_mean"] = float(arr[:, k].mean())
                rec[f"daily_{m}_se"] = float(arr[:, k].std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            out.append(rec)
    return out


def reduction_table(summary: list[dict], solvers, objective: str) -> list[dict]:
    """% reduction of the row solver's mean daily objective relative to each column solver."""
    metric = "daily_carbon_kg_mean" if objective == "carbon" else "daily_total_cost_usd_mean"
    by_key = {(r["solver"], r["renewable_scale"]): r[metric] for r in summary}
    scales = sorted({r["renewable_scale"] for r in summary})
    out = []
    for scale in scales:
        for a in solvers:
            if (a, scale) not in by_key:
                continue
            rec = {"renewable_scale": scale, "solver": a}
            for b in solvers:
                if (b, scale) not in by_key:
                    continue
                vb = by_key[(b, scale)]
                rec[b] = 0.0 if a == b else (100.0 * (vb - by_key[(a, scale)]) / abs(vb) if vb != 0 else 0.0)
            out.append(rec)
    return out


def prepare_pools(config: ExperimentConfig, scenario: Scenario) -> dict[str, AgentPool]:
    pools = {}
    for k, name in enumerate(config.solvers):
        if name not in DRL_SOLVERS:
            continue
        ckpt = config.checkpoints.get(name)
        if ckpt and (Path(ckpt) / "manifest.json").exists():
            pools[name] = load_pool(ckpt)
            continue
        if not config.train:
            raise MissingCheckpoint(f"no checkpoint for solver {name!r}" + (f" at {ckpt}" if ckpt else ""))
        tcfg = TrainConfig.from_dict(config.train_config) if config.train_config else TrainConfig()
        pool = train(scenario, config.objective, name, tcfg, seed=derive_seed(config.seed, 0xD31, k) % 2**32)
        if ckpt:
            save_pool(pool, ckpt, scenario.name)
        pools[name] = pool
    return pools


def run_experiment(config: ExperimentConfig, pools: dict[str, AgentPool] | None = None) -> ExperimentResult:
    base = apply_pattern(resolve_scenario(config.scenario), config.pattern)
    pools = dict(pools or {})
    missing = [s for s in config.solvers if s in DRL_SOLVERS and s not in pools]
    if missing:
        pools.update(prepare_pools(ExperimentConfig(**{**config.__dict__, "solvers": tuple(missing)}), base))
    solvers = {
        name: make_solver(name, config.objective, pools.get(name), epoch_budget=config.epoch_budget,
                          oracle_resolution=config.oracle_resolution)
        for name in config.solvers
    }
    result = ExperimentResult(config, base.name, base.n_dcs, base.n_tasks)
    for name, pool in pools.items():
        if name in config.solvers:
            result.solver_info[name] = {"episodes_trained": pool.episodes_trained, "stopped": pool.stopped}
    for scale in config.renewable_scale:
        for run in range(config.runs):
            run_seed = derive_seed(config.seed, run)
            # every solver sees the same sampled days within a run
            days = []
            for day in range(config.days):
                trace = sample_arrivals(base.arrival_trace, config.sd_frac, derive_seed(run_seed, day) % 2**63, base)
                days.append(base.with_arrivals(trace).with_renewable_scale(scale))
            for s_idx, name in enumerate(config.solvers):
                state = None
                for day, scenario in enumerate(days):
                    outcomes, state = run_day(scenario, solvers[name], config.objective,
                                              derive_seed(run_seed, 0x50, s_idx), day, state)
                    for tau, o in enumerate(outcomes):
                        led = o.ledger
                        for d, dc in enumerate(scenario.data_centers):
                            result.epoch_rows.append((
                                name, run, day, tau, dc.id,
                                float(led.net_kw[d]), float(led.carbon_kg[d]), float(led.energy_cost_usd[d]),
                                float(led.peak_delta_usd[d]), float(led.network_cost_usd[d]),
                                float(led.total_cost_usd[d]), float(scale),
                            ))
                        result.estimated.append((name, float(scale), run, day, tau, o.estimated))
    return result


# -- output ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_results(result: ExperimentResult, directory: str | Path) -> list[Path]:
    out = Path(directory)
    (out / "plotdata").mkdir(parents=True, exist_ok=True)
    solvers = list(result.config.solvers)
    summary = result.summary()
    reductions = result.reductions()
    written = []

    p = out / "epochs.csv"
    _write_csv(p, EPOCH_COLUMNS, result.epoch_rows)
    written.append(p)

    sum_cols = ["solver", "renewable_scale", "days"] + [f"daily_{m}_{s}" for m in METRICS for s in ("mean", "se")]
    p = out / "summary.csv"
    _write_csv(p, sum_cols, [[r[c] for c in sum_cols] for r in summary])
    written.append(p)

    red_cols = ["renewable_scale", "solver"] + solvers
    p = out / "reductions.csv"
    _write_csv(p, red_cols, [[r.get(c, "") for c in red_cols] for r in reductions])
    written.append(p)

    written += _write_plotdata(result, out / "plotdata", summary)

    doc = {
        "config": result.config.to_dict(),
        "scenario": result.scenario_name,
        "n_dcs": result.n_dcs,
        "n_tasks": result.n_tasks,
        "solver_info": result.solver_info,
        "summary": summary,
        "reductions": reductions,
        "epochs": [dict(zip(EPOCH_COLUMNS, r)) for r in result.epoch_rows],
        "estimated_objective": [
            dict(zip(("solver", "renewable_scale", "run", "day", "epoch", "value"), r)) for r in result.estimated
        ],
    }
    p = out / "result.json"
    p.write_text(json.dumps(doc, indent=1) + "\n")
    written.append(p)
    return written


def _write_plotdata(result: ExperimentResult, out: Path, summary: list[dict]) -> list[Path]:
    objective = result.config.objective
    metric = "carbon_kg" if objective == "carbon" else "total_cost_usd"
    m_idx = EPOCH_COLUMNS.index(metric)
    written = []

    # hourly cloud totals averaged over runs and days (daily curves)
    acc: dict[tuple, list[float]] = {}
    for row in result.epoch_rows:
        key = (row[0], float(row[11]), int(row[3]))
        acc.setdefault(key, {})
        acc[key].setdefault((row[1], row[2]), 0.0)
        acc[key][(row[1], row[2])] += float(row[m_idx])
    curve = [(k[0], k[1], k[2], float(np.mean(list(v.values())))) for k, v in sorted(acc.items(), key=lambda kv: (result.config.solvers.index(kv[0][0]), kv[0][1], kv[0][2]))]
    peak = max((abs(c[3]) for c in curve), default=0.0) or 1.0
    p = out / "daily_curve.csv"
    _write_csv(p, ("solver", "renewable_scale", "epoch", f"mean_{metric}", "normalized"), [(*c, c[3] / peak) for c in curve])
    written.append(p)

    key = f"daily_{metric}_mean"
    top = max((abs(r[key]) for r in summary), default=0.0) or 1.0
    rows = [(r["solver"], r["renewable_scale"], r[key], r[f"daily_{metric}_se"], r[key] / top) for r in summary]
    p = out / "renewable_sweep.csv"
    _write_csv(p, ("solver", "renewable_scale", f"daily_{metric}_mean", f"daily_{metric}_se", "normalized"), rows)
    written.append(p)

    rows = [(result.scenario_name, result.n_dcs, r["solver"], r["renewable_scale"], r[key], r[f"daily_{metric}_se"], r[key] / top) for r in summary]
    p = out / "scalability.csv"
    _write_csv(p, ("scenario", "n_dcs", "solver", "renewable_scale", f"daily_{metric}_mean", f"daily_{metric}_se", "normalized"), rows)
    written.append(p)
    return written


def read_epochs_csv(path: str | Path) -> list[tuple]:
    """Parse an epochs.csv back into rows (for re-aggregation)."""
    rows = []
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != EPOCH_COLUMNS:
            raise MalformedConfig(f"{path}: unexpected header {header}")
        for rec in r:
            rows.append((rec[0], int(rec[1]), int(rec[2]), int(rec[3]), int(rec[4]), *map(float, rec[5:])))
    return rows
