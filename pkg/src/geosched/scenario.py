"""Scenario files: JSON document plus optional per-DC hourly trace CSVs.

See ``docs/scenario_schema.md`` for the field reference.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .colocation import FEATURES, check_positive_on_domain
from .errors import BadAmplitude, InfeasibleScenario, MalformedConfig, MissingTrace
from .model import (
    ArrivalSpec,
    CoeffEntry,
    DataCenterSpec,
    NodeTypeSpec,
    Scenario,
    TaskType,
)

SCHEMA_VERSION = 1
DATA_DIR = Path(__file__).parent / "data"

# relative slack on the under-subscription check
FEASIBILITY_RTOL = 1e-12


def bundled(name: str) -> Path:
    """Path of a fixture shipped with the package, e.g. ``bundled("four_dc")``."""
    path = DATA_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise MalformedConfig(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(doc, base_dir=path.parent)


def scenario_from_dict(doc: dict[str, Any], base_dir: str | Path | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise MalformedConfig("scenario document must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise MalformedConfig(f"unsupported schema_version {version!r}")
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    epochs = _int(doc.get("epochs_per_day", 24), "epochs_per_day")
    if epochs != 24:
        raise MalformedConfig("only hourly epochs (24 per day) are supported")

    node_types = tuple(_node_type(x) for x in _list(doc, "node_types"))
    task_types = tuple(_task_type(x) for x in _list(doc, "task_types"))
    dcs = tuple(_data_center(x, epochs, base_dir) for x in _list(doc, "data_centers"))
    coeffs = {}
    for raw in _list(doc, "coloc_coeffs"):
        key, entry = _coeff(raw)
        if key in coeffs:
            raise MalformedConfig(f"duplicate coloc_coeffs entry {key}")
        coeffs[key] = entry

    arrivals = doc.get("arrivals")
    if not isinstance(arrivals, dict):
        raise MalformedConfig("missing 'arrivals' object")
    spec = None
    if "trace" in arrivals:
        trace = np.array(arrivals["trace"], dtype=float)
    else:
        spec = ArrivalSpec(
            pattern=str(arrivals.get("pattern", "flat")),
            base=tuple(float(b) for b in _req(arrivals, "base")),
            amplitude=float(arrivals.get("amplitude", 0.0)),
            phase_h=float(arrivals.get("phase_h", 0.0)),
        )
        trace = generate_arrivals(spec.pattern, spec.base, spec.amplitude, spec.phase_h, epochs)
    trace.setflags(write=False)

    scenario = Scenario(
        name=str(doc.get("name", "scenario")),
        node_types=node_types,
        task_types=task_types,
        data_centers=dcs,
        coloc_coeffs=coeffs,
        arrival_trace=trace,
        network_price=_num(doc.get("network_price_usd_per_gb", 0.0), "network_price_usd_per_gb"),
        epoch_hours=_num(doc.get("epoch_hours", 1.0), "epoch_hours"),
        epochs_per_day=epochs,
        month_days=_int(doc.get("month_days", 30), "month_days"),
        prorate_peak=bool(doc.get("prorate_peak", False)),
        arrival_spec=spec,
    )
    validate(scenario)
    return scenario


def validate(scenario: Scenario) -> None:
    """Check every invariant; raise MalformedConfig or InfeasibleScenario."""
    s = scenario
    if not s.task_types:
        raise MalformedConfig("at least one task type is required")
    if not s.data_centers:
        raise MalformedConfig("at least one data center is required")
    _check_ids("node type", [nt.id for nt in s.node_types], contiguous=False)
    _check_ids("task type", [t.id for t in s.task_types], contiguous=True)
    _check_ids("data center", [dc.id for dc in s.data_centers], contiguous=True)
    if s.network_price < 0:
        raise MalformedConfig("network_price_usd_per_gb must be >= 0")
    if not s.epoch_hours > 0:
        raise MalformedConfig("epoch_hours must be > 0")
    if s.month_days < 1:
        raise MalformedConfig("month_days must be >= 1")

    for nt in s.node_types:
        if nt.cores < 1:
            raise MalformedConfig(f"node type {nt.id}: cores must be >= 1")
        if not (0 <= nt.p_idle_kw and nt.p_peak_dyn_kw > 0):
            raise MalformedConfig(f"node type {nt.id}: need p_idle_kw >= 0 and p_peak_dyn_kw > 0")
        if not nt.p_states:
            raise MalformedConfig(f"node type {nt.id}: p_states must be non-empty")
        if not 0 <= nt.p_state < len(nt.p_states):
            raise MalformedConfig(f"node type {nt.id}: p_state index out of range")
        for f, p in nt.p_states:
            if not (f > 0 and p > 0):
                raise MalformedConfig(f"node type {nt.id}: p-state scales must be > 0")

    for t in s.task_types:
        if not t.size_gb > 0:
            raise MalformedConfig(f"task {t.id}: size_gb must be > 0")
        if not 0 <= t.mem_intensity <= 1:
            raise MalformedConfig(f"task {t.id}: mem_intensity must lie in [0, 1]")
        for j, rates in t.base_exec_rate.items():
            if j not in s.node_type_map:
                raise MalformedConfig(f"task {t.id}: unknown node type {j}")
            if len(rates) != len(s.node_type_map[j].p_states):
                raise MalformedConfig(f"task {t.id}: need one base rate per p-state of node type {j}")
            if any(not r > 0 for r in rates):
                raise MalformedConfig(f"task {t.id}: base_exec_rate values must be > 0")

    shares = [dc.origin_share for dc in s.data_centers]
    for dc in s.data_centers:
        where = f"data center {dc.id}"
        if not dc.node_counts or dc.total_nodes <= 0:
            raise MalformedConfig(f"{where}: needs at least one node")
        for j, n in dc.node_counts.items():
            if j not in s.node_type_map:
                raise MalformedConfig(f"{where}: unknown node type {j}")
            if n < 0:
                raise MalformedConfig(f"{where}: negative node count")
            for t in s.task_types:
                if j not in t.base_exec_rate:
                    raise MalformedConfig(f"task {t.id} has no base rate for node type {j}")
        if dc.num_crac < 0 or dc.crac_max_kw < 0:
            raise MalformedConfig(f"{where}: CRAC count and capacity must be >= 0")
        if not dc.crac_cop > 0:
            raise MalformedConfig(f"{where}: crac_cop must be > 0")
        if not dc.eff >= 1:
            raise MalformedConfig(f"{where}: eff must be >= 1 (got {dc.eff})")
        if not dc.carbon_factor >= 0:
            raise MalformedConfig(f"{where}: carbon_factor must be >= 0")
        if not 0 <= dc.net_meter <= 1:
            raise MalformedConfig(f"{where}: net_meter must lie in [0, 1]")
        if not dc.peak_price >= 0:
            raise MalformedConfig(f"{where}: peak_price must be >= 0")
        for name, tr in (("electricity price", dc.elec_price_trace), ("renewable", dc.renewable_trace)):
            if len(tr) != s.epochs_per_day:
                raise MalformedConfig(f"{where}: {name} trace needs {s.epochs_per_day} entries")
            if any(not math.isfinite(v) or v < 0 for v in tr):
                raise MalformedConfig(f"{where}: {name} trace values must be finite and >= 0")
        if dc.origin_share is not None and dc.origin_share < 0:
            raise MalformedConfig(f"{where}: origin_share must be >= 0")
    if any(x is not None for x in shares):
        if any(x is None for x in shares) or abs(sum(shares) - 1.0) > 1e-9:
            raise MalformedConfig("origin_share must be given for every data center and sum to 1")

    trace = s.arrival_trace
    if trace.shape != (s.n_tasks, s.epochs_per_day):
        raise MalformedConfig(
            f"arrival trace shape {trace.shape}, expected ({s.n_tasks}, {s.epochs_per_day})"
        )
    if not np.all(np.isfinite(trace)) or np.any(trace < 0):
        raise MalformedConfig("arrival rates must be finite and >= 0")

    check_positive_on_domain(s)
    check_feasible(s)


def check_feasible(scenario: Scenario, trace: np.ndarray | None = None) -> None:
    trace = scenario.arrival_trace if trace is None else trace
    capacity = scenario.execution_rates.sum(axis=1)
    for i, t in enumerate(scenario.task_types):
        for tau in range(trace.shape[1]):
            if trace[i, tau] > capacity[i] * (1 + FEASIBILITY_RTOL):
                raise InfeasibleScenario(t.id, tau, float(trace[i, tau]), float(capacity[i]))


def generate_arrivals(
    pattern: str,
    base,
    amplitude: float = 0.0,
    phase_h: float = 0.0,
    epochs: int = 24,
) -> np.ndarray:
    """Per-task hourly arrival rates, shape (|I|, epochs)."""
    base = np.atleast_1d(np.asarray(base, dtype=float))
    if np.any(base <= 0):
        raise BadAmplitude("base arrival rates must be > 0")
    if not 0 <= amplitude < 1:
        raise BadAmplitude(f"amplitude must lie in [0, 1), got {amplitude}")
    tau = np.arange(epochs)
    if pattern == "flat":
        shape = np.ones(epochs)
    elif pattern == "sinusoidal":
        shape = 1.0 + amplitude * np.sin(2 * np.pi * (tau - phase_h) / 24.0)
    else:
        raise MalformedConfig(f"unknown arrival pattern {pattern!r}")
    return base[:, None] * shape[None, :]


def sample_arrivals(
    trace,
    sd_frac: float,
    seed: int,
    scenario: Scenario | None = None,
    max_tries: int = 100,
) -> np.ndarray:
    """Independent normal draws around ``trace`` with sd = sd_frac * mean.

    Draws below zero, or above the scenario's total execution rate, are
    redrawn up to ``max_tries`` times and then clamped.
    """
    if sd_frac < 0:
        raise ValueError("sd_frac must be >= 0")
    mean = np.asarray(trace, dtype=float)
    if sd_frac == 0:
        return mean.copy()
    hi = np.full_like(mean, np.inf)
    if scenario is not None:
        hi = np.broadcast_to(scenario.execution_rates.sum(axis=1)[:, None], mean.shape)
    rng = np.random.default_rng(seed)
    sd = sd_frac * mean
    out = rng.normal(mean, sd)
    for idx in zip(*np.nonzero((out < 0) | (out > hi))):
        for _ in range(max_tries):
            out[idx] = rng.normal(mean[idx], sd[idx])
            if 0 <= out[idx] <= hi[idx]:
                break
        out[idx] = min(max(out[idx], 0.0), hi[idx])
    return out


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    s = scenario
    doc: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "epoch_hours": s.epoch_hours,
        "epochs_per_day": s.epochs_per_day,
        "month_days": s.month_days,
        "network_price_usd_per_gb": s.network_price,
        "prorate_peak": s.prorate_peak,
        "node_types": [
            {
                "id": nt.id,
                "name": nt.name,
                "cores": nt.cores,
                "p_idle_kw": nt.p_idle_kw,
                "p_peak_dyn_kw": nt.p_peak_dyn_kw,
                "p_states": [list(p) for p in nt.p_states],
                "p_state": nt.p_state,
            }
            for nt in s.node_types
        ],
        "task_types": [
            {
                "id": t.id,
                "name": t.name,
                "size_gb": t.size_gb,
                "mem_class": t.mem_class,
                "mem_intensity": t.mem_intensity,
                "base_exec_rate": {str(j): list(r) for j, r in sorted(t.base_exec_rate.items())},
            }
            for t in s.task_types
        ],
        "data_centers": [],
        "coloc_coeffs": [],
    }
    for dc in s.data_centers:
        row = {
            "id": dc.id,
            "name": dc.name,
            "node_counts": {str(j): n for j, n in sorted(dc.node_counts.items())},
            "num_crac": dc.num_crac,
            "crac_max_kw": dc.crac_max_kw,
            "crac_cop": dc.crac_cop,
            "eff": dc.eff,
            "carbon_factor": dc.carbon_factor,
            "net_meter": dc.net_meter,
            "peak_price_usd_per_kw": dc.peak_price,
            "elec_price_usd_per_kwh": list(dc.elec_price_trace),
            "renewable_kw": list(dc.renewable_trace),
        }
        if dc.origin_share is not None:
            row["origin_share"] = dc.origin_share
        doc["data_centers"].append(row)
    for (j, mem_class), entry in sorted(s.coloc_coeffs.items()):
        row = {
            "node_type": j,
            "mem_class": mem_class,
            "intercept": entry.intercept,
            "weights": list(entry.weights),
        }
        if entry.domain is not None:
            row["domain"] = {k: list(v) for k, v in entry.domain.items()}
        doc["coloc_coeffs"].append(row)
    arrivals: dict[str, Any] = {}
    if s.arrival_spec is not None:
        a = s.arrival_spec
        expected = generate_arrivals(a.pattern, a.base, a.amplitude, a.phase_h, s.epochs_per_day)
        if np.array_equal(expected, s.arrival_trace):
            arrivals = {"pattern": a.pattern, "base": list(a.base), "amplitude": a.amplitude, "phase_h": a.phase_h}
    if not arrivals:
        arrivals = {"trace": s.arrival_trace.tolist()}
    doc["arrivals"] = arrivals
    return doc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=1) + "\n")


def read_trace_csv(path: Path, epochs: int) -> dict[str, list[float]]:
    if not path.exists():
        raise MissingTrace(f"trace file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    needed = {"epoch", "elec_price_usd_per_kwh", "renewable_kw"}
    if not rows or not needed <= set(rows[0]):
        raise MalformedConfig(f"{path}: needs columns {sorted(needed)}")
    rows.sort(key=lambda r: int(r["epoch"]))
    if [int(r["epoch"]) for r in rows] != list(range(epochs)):
        raise MalformedConfig(f"{path}: epochs must be exactly 0..{epochs - 1}")
    out = {
        "elec_price_usd_per_kwh": [float(r["elec_price_usd_per_kwh"]) for r in rows],
        "renewable_kw": [float(r["renewable_kw"]) for r in rows],
    }
    if "carbon_factor" in rows[0] and rows[0]["carbon_factor"] not in ("", None):
        values = {float(r["carbon_factor"]) for r in rows}
        if len(values) != 1:
            raise MalformedConfig(f"{path}: carbon_factor override must be constant over the day")
        out["carbon_factor"] = values.pop()
    return out


def write_trace_csv(dc: DataCenterSpec, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "elec_price_usd_per_kwh", "renewable_kw"])
        for tau, (p, r) in enumerate(zip(dc.elec_price_trace, dc.renewable_trace)):
            w.writerow([tau, p, r])


# -- parsing helpers ---------------------------------------------------------


def _req(obj: dict, key: str):
    if key not in obj:
        raise MalformedConfig(f"missing field {key!r}")
    return obj[key]


def _list(obj: dict, key: str) -> list:
    value = _req(obj, key)
    if not isinstance(value, list):
        raise MalformedConfig(f"{key!r} must be a list")
    return value


def _num(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise MalformedConfig(f"{what}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise MalformedConfig(f"{what}: must be finite")
    return out


def _int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise MalformedConfig(f"{what}: expected an integer, got {value!r}")
    return int(value)


def _check_ids(what: str, ids: list[int], contiguous: bool) -> None:
    if len(set(ids)) != len(ids):
        raise MalformedConfig(f"duplicate {what} ids")
    if contiguous and sorted(ids) != list(range(1, len(ids) + 1)):
        raise MalformedConfig(f"{what} ids must be 1..{len(ids)} in order")
    if contiguous and ids != sorted(ids):
        raise MalformedConfig(f"{what} ids must be listed in ascending order")


def _node_type(raw: dict) -> NodeTypeSpec:
    try:
        p_states = tuple((float(f), float(p)) for f, p in raw.get("p_states", [[1.0, 1.0]]))
        return NodeTypeSpec(
            id=_int(_req(raw, "id"), "node type id"),
            name=str(raw.get("name", "")),
            cores=_int(_req(raw, "cores"), "cores"),
            p_idle_kw=_num(_req(raw, "p_idle_kw"), "p_idle_kw"),
            p_peak_dyn_kw=_num(_req(raw, "p_peak_dyn_kw"), "p_peak_dyn_kw"),
            p_states=p_states,
            p_state=_int(raw.get("p_state", 0), "p_state"),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedConfig(f"bad node type entry: {exc}") from exc


def _task_type(raw: dict) -> TaskType:
    rates = _req(raw, "base_exec_rate")
    if not isinstance(rates, dict):
        raise MalformedConfig("base_exec_rate must map node-type id to a list of rates")
    parsed = {}
    for j, r in rates.items():
        r = [r] if isinstance(r, (int, float)) else r
        parsed[_int(int(j), "node type id")] = tuple(_num(x, "base_exec_rate") for x in r)
    return TaskType(
        id=_int(_req(raw, "id"), "task id"),
        name=str(raw.get("name", "")),
        size_gb=_num(_req(raw, "size_gb"), "size_gb"),
        mem_class=str(_req(raw, "mem_class")),
        mem_intensity=_num(_req(raw, "mem_intensity"), "mem_intensity"),
        base_exec_rate=parsed,
    )


def _data_center(raw: dict, epochs: int, base_dir: Path) -> DataCenterSpec:
    carbon = raw.get("carbon_factor")
    if "trace_csv" in raw:
        tr = read_trace_csv(base_dir / raw["trace_csv"], epochs)
        prices, renew = tr["elec_price_usd_per_kwh"], tr["renewable_kw"]
        carbon = tr.get("carbon_factor", carbon)
    else:
        prices = _req(raw, "elec_price_usd_per_kwh")
        renew = _req(raw, "renewable_kw")
        if isinstance(prices, (int, float)):
            prices = [prices] * epochs
        if isinstance(renew, (int, float)):
            renew = [renew] * epochs
    if carbon is None:
        raise MalformedConfig(f"data center {raw.get('id')}: missing carbon_factor")
    counts = raw.get("node_counts")
    if not isinstance(counts, dict):
        raise MalformedConfig(f"data center {raw.get('id')}: node_counts must be an object")
    share = raw.get("origin_share")
    return DataCenterSpec(
        id=_int(_req(raw, "id"), "data center id"),
        name=str(raw.get("name", "")),
        node_counts={_int(int(j), "node type id"): _int(n, "node count") for j, n in counts.items()},
        num_crac=_int(_req(raw, "num_crac"), "num_crac"),
        crac_max_kw=_num(_req(raw, "crac_max_kw"), "crac_max_kw"),
        crac_cop=_num(_req(raw, "crac_cop"), "crac_cop"),
        eff=_num(_req(raw, "eff"), "eff"),
        carbon_factor=_num(carbon, "carbon_factor"),
        net_meter=_num(_req(raw, "net_meter"), "net_meter"),
        peak_price=_num(_req(raw, "peak_price_usd_per_kw"), "peak_price_usd_per_kw"),
        elec_price_trace=tuple(_num(p, "elec_price") for p in prices),
        renewable_trace=tuple(_num(r, "renewable_kw") for r in renew),
        origin_share=None if share is None else _num(share, "origin_share"),
    )


def _coeff(raw: dict) -> tuple[tuple[int, str], CoeffEntry]:
    weights = _req(raw, "weights")
    if not isinstance(weights, list) or len(weights) != 5:
        raise MalformedConfig("coloc_coeffs weights must list 5 numbers")
    domain = raw.get("domain")
    if domain is not None:
        if not isinstance(domain, dict) or set(domain) != set(FEATURES):
            raise MalformedConfig(f"coloc_coeffs domain must give [lo, hi] for each of {FEATURES}")
        try:
            domain = {k: (float(v[0]), float(v[1])) for k, v in domain.items()}
        except (TypeError, ValueError, IndexError) as exc:
            raise MalformedConfig(f"coloc_coeffs domain: {exc}") from exc
        if any(lo > hi for lo, hi in domain.values()):
            raise MalformedConfig("coloc_coeffs domain has lo > hi")
    entry = CoeffEntry(
        intercept=_num(raw.get("intercept", 0.0), "intercept"),
        weights=tuple(_num(w, "weight") for w in weights),
        domain=domain,
    )
    return (_int(_req(raw, "node_type"), "node_type"), str(_req(raw, "mem_class"))), entry
