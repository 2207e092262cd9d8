"""Synthetic scenario builders.

The shipped ``four_dc`` / ``eight_dc`` / ``sixteen_dc`` files are produced by
``build_cloud`` (run ``python -m geosched.fixtures`` to regenerate them). The
location table is plausible but synthetic: carbon factors follow published
state averages in magnitude, tariffs and renewable capacities are invented.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

from .model import ArrivalSpec, CoeffEntry, DataCenterSpec, NodeTypeSpec, Scenario, TaskType
from .scenario import DATA_DIR, generate_arrivals, save_scenario, validate, write_trace_csv

NODE_TYPES = (
    NodeTypeSpec(1, "Xeon E3-1225v3", 4, 0.025, 0.055, ((1.0, 1.0), (0.85, 0.7), (0.7, 0.5))),
    NodeTypeSpec(2, "Xeon E5649", 6, 0.070, 0.100, ((1.0, 1.0), (0.85, 0.7), (0.7, 0.5))),
    NodeTypeSpec(3, "Xeon E5-2697v2", 12, 0.090, 0.170, ((1.0, 1.0), (0.85, 0.7), (0.7, 0.5))),
)

# name, size GB, memory class, memory intensity, P0 rate/core on node types 1..3
TASKS = (
    ("Image Classification / ResNet50 / ImageNet", 0.15, "medium", 0.45, (240.0, 180.0, 260.0)),
    ("Image Generation / WassersteinGAN / LSUN", 0.40, "high", 0.75, (90.0, 70.0, 95.0)),
    ("Image-to-Text / Neural Image Caption / COCO", 0.25, "medium", 0.50, (150.0, 110.0, 170.0)),
    ("Image-to-Image / CycleGAN / Cityscapes", 0.60, "high", 0.85, (60.0, 48.0, 62.0)),
    ("Speech Recognition / DeepSpeech2 / Librispeech", 0.50, "low", 0.20, (120.0, 85.0, 150.0)),
    ("Face Embedding / Facenet / VGGFace2", 0.10, "low", 0.15, (300.0, 210.0, 380.0)),
    ("3D Face Recognition / 3D Face Model / Intellifusion", 0.80, "high", 0.70, (45.0, 36.0, 50.0)),
    ("Video Prediction / Motion-Focused Model / Robot Pushing", 1.00, "medium", 0.55, (40.0, 30.0, 46.0)),
    ("Image Compression / RNN / ImageNet", 0.20, "low", 0.25, (200.0, 140.0, 240.0)),
    ("3D Object Reconstruction / Conv Encoder-Decoder / ShapeNetCore", 0.70, "high", 0.80, (55.0, 44.0, 58.0)),
)

# slowdown per co-located task and per unit of average memory intensity, as
# fractions of the class mean base time
CLASS_INTERFERENCE = {"low": (0.010, 0.10), "medium": (0.020, 0.20), "high": (0.035, 0.35)}

# name, UTC offset, kg CO2/kWh, off-peak / on-peak $/kWh, peak $/kW, net meter,
# solar kW, wind kW, node-type mix
LOCATIONS = (
    ("Seattle WA", -7, 0.09, 0.060, 0.095, 9.0, 1.0, 120.0, 180.0, (0.3, 0.3, 0.4)),
    ("Boston MA", -4, 0.37, 0.120, 0.210, 15.0, 1.0, 140.0, 160.0, (0.5, 0.2, 0.3)),
    ("Phoenix AZ", -7, 0.37, 0.070, 0.160, 12.0, 0.5, 420.0, 40.0, (0.0, 0.5, 0.5)),
    ("Chicago IL", -5, 0.27, 0.065, 0.120, 11.0, 1.0, 160.0, 240.0, (0.2, 0.5, 0.3)),
    ("San Jose CA", -7, 0.21, 0.140, 0.290, 18.0, 1.0, 380.0, 60.0, (0.3, 0.1, 0.6)),
    ("Atlanta GA", -4, 0.38, 0.060, 0.130, 10.0, 0.0, 260.0, 30.0, (0.4, 0.0, 0.6)),
    ("Denver CO", -6, 0.58, 0.075, 0.140, 13.0, 1.0, 300.0, 220.0, (0.6, 0.3, 0.1)),
    ("New York NY", -4, 0.21, 0.150, 0.260, 20.0, 1.0, 110.0, 120.0, (0.1, 0.4, 0.5)),
    ("Portland OR", -7, 0.15, 0.065, 0.100, 8.0, 1.0, 150.0, 200.0, (0.5, 0.0, 0.5)),
    ("Dallas TX", -5, 0.39, 0.055, 0.110, 9.0, 0.5, 320.0, 300.0, (0.3, 0.4, 0.3)),
    ("Salt Lake City UT", -6, 0.69, 0.070, 0.120, 11.0, 1.0, 280.0, 90.0, (0.2, 0.2, 0.6)),
    ("Charlotte NC", -4, 0.33, 0.060, 0.125, 10.0, 0.0, 240.0, 40.0, (0.4, 0.4, 0.2)),
    ("Las Vegas NV", -7, 0.33, 0.080, 0.170, 14.0, 0.5, 440.0, 50.0, (0.0, 0.5, 0.5)),
    ("Minneapolis MN", -5, 0.39, 0.065, 0.115, 10.0, 1.0, 130.0, 280.0, (0.1, 0.6, 0.3)),
    ("Ashburn VA", -4, 0.30, 0.070, 0.135, 12.0, 1.0, 180.0, 70.0, (0.35, 0.35, 0.3)),
    ("Miami FL", -4, 0.39, 0.075, 0.150, 12.0, 0.5, 330.0, 30.0, (0.25, 0.25, 0.5)),
)

# coast-to-coast picks for each configuration size
CONFIG_SITES = {
    4: (0, 3, 6, 1),
    8: (0, 4, 2, 6, 3, 5, 7, 1),
    16: tuple(range(16)),
}

NODES_PER_DC = 4320
PEAK_UTILIZATION = 0.8


def solar_kw(capacity: float, utc_offset: int, tau: int) -> float:
    local = (tau + utc_offset) % 24
    return capacity * max(0.0, math.sin(math.pi * (local - 6) / 12.0))


def wind_kw(capacity: float, site: int, tau: int) -> float:
    return capacity * (0.45 + 0.25 * math.sin(2 * math.pi * (tau + 3 * site) / 24.0))


def tou_price(off: float, on: float, utc_offset: int, tau: int) -> float:
    local = (tau + utc_offset) % 24
    return on if 12 <= local < 20 else off


def default_tasks() -> tuple[TaskType, ...]:
    out = []
    for k, (name, size, cls, mem, rates) in enumerate(TASKS, start=1):
        per_node = {
            nt.id: tuple(round(r * f, 6) for f, _ in nt.p_states) for nt, r in zip(NODE_TYPES, rates)
        }
        out.append(TaskType(k, name, size, cls, mem, per_node))
    return tuple(out)


def default_coeffs(tasks, node_types=NODE_TYPES) -> dict:
    coeffs = {}
    for nt in node_types:
        for cls, (per_task, per_mem) in CLASS_INTERFERENCE.items():
            times = [1.0 / t.base_rate(nt) for t in tasks if t.mem_class == cls]
            if not times:
                continue
            tbar = float(np.mean(times))
            coeffs[(nt.id, cls)] = CoeffEntry(
                intercept=0.0,
                weights=(
                    round(per_task * tbar, 9),
                    1.0,
                    0.0,
                    round(per_mem * tbar, 9),
                    round(0.05 * tbar, 9),
                ),
            )
    return coeffs


def identity_coeffs(node_types, classes) -> dict:
    return {(nt.id, c): CoeffEntry(0.0, (0.0, 1.0, 0.0, 0.0, 0.0)) for nt in node_types for c in classes}


def _datacenter(d: int, site: int, nodes: int = NODES_PER_DC) -> DataCenterSpec:
    name, utc, cf, off, on, peak, alpha, solar, wind, mix = LOCATIONS[site]
    counts = {}
    for nt, share in zip(NODE_TYPES, mix):
        if share > 0:
            counts[nt.id] = int(round(nodes * share))
    # keep the exact total
    last = max(counts)
    counts[last] += nodes - sum(counts.values())
    return DataCenterSpec(
        id=d,
        name=name,
        node_counts=counts,
        num_crac=4,
        crac_max_kw=70.0,
        crac_cop=4.0,
        eff=1.1,
        carbon_factor=cf,
        net_meter=alpha,
        peak_price=peak,
        elec_price_trace=tuple(tou_price(off, on, utc, t) for t in range(24)),
        renewable_trace=tuple(round(solar_kw(solar, utc, t) + wind_kw(wind, site, t), 6) for t in range(24)),
    )


def build_cloud(
    n_dcs: int,
    pattern: str = "sinusoidal",
    amplitude: float = 0.5,
    phase_h: float = 12.0,
    network_price: float = 0.02,
) -> Scenario:
    sites = CONFIG_SITES[n_dcs]
    dcs = tuple(_datacenter(d, site) for d, site in enumerate(sites, start=1))
    tasks = default_tasks()
    draft = Scenario(
        name=f"{n_dcs}dc",
        node_types=NODE_TYPES,
        task_types=tasks,
        data_centers=dcs,
        coloc_coeffs=default_coeffs(tasks),
        arrival_trace=np.ones((len(tasks), 24)),
        network_price=network_price,
    )
    # demand weights vary per task; bases put peak cloud utilization at 80%
    weights = np.array([1.4, 0.7, 1.1, 0.6, 1.0, 1.5, 0.5, 0.6, 1.3, 0.9])
    weights = weights / weights.sum()
    peak = 1.0 + (amplitude if pattern == "sinusoidal" else 0.0)
    base = PEAK_UTILIZATION / peak * weights * draft.execution_rates.sum(axis=1)
    base = tuple(round(float(b), 6) for b in base)
    spec = ArrivalSpec(pattern, base, amplitude if pattern == "sinusoidal" else 0.0, phase_h)
    scenario = draft.replace(
        arrival_trace=generate_arrivals(spec.pattern, spec.base, spec.amplitude, spec.phase_h),
        arrival_spec=spec,
    )
    validate(scenario)
    return scenario


def simple_scenario(
    n_dcs: int = 2,
    n_tasks: int = 2,
    *,
    nodes: int | list[int] = 10,
    cores: int = 4,
    base_rate: float | list[float] = 10.0,
    p_idle_kw: float = 0.1,
    p_peak_dyn_kw: float = 0.2,
    carbon_factor: float | list[float] = 0.4,
    elec_price: float | list[float] = 0.1,
    renewable_kw: float | list[float] = 0.0,
    peak_price: float | list[float] = 10.0,
    net_meter: float | list[float] = 1.0,
    eff: float | list[float] = 1.1,
    num_crac: int = 2,
    crac_max_kw: float = 50.0,
    crac_cop: float = 4.0,
    size_gb: float | list[float] = 1.0,
    network_price: float = 0.05,
    car: float | list[float] | np.ndarray = 1.0,
    coeffs: dict | None = None,
    prorate_peak: bool = False,
) -> Scenario:
    """Small homogeneous scenario for tests: one node type, identity co-location model.

    Scalar arguments apply to every DC / task; lists give per-entity values.
    ``car`` may be a scalar, one value per task, or an (|I|, 24) trace.
    """

    def per(x, n):
        return list(x) if isinstance(x, (list, tuple, np.ndarray)) else [x] * n

    nt = NodeTypeSpec(1, "node", cores, p_idle_kw, p_peak_dyn_kw)
    rates = per(base_rate, n_tasks)
    tasks = tuple(
        TaskType(i + 1, f"task{i + 1}", per(size_gb, n_tasks)[i], "m", 0.5, {1: (rates[i],)})
        for i in range(n_tasks)
    )
    dcs = tuple(
        DataCenterSpec(
            id=d + 1,
            name=f"dc{d + 1}",
            node_counts={1: per(nodes, n_dcs)[d]},
            num_crac=num_crac,
            crac_max_kw=crac_max_kw,
            crac_cop=crac_cop,
            eff=per(eff, n_dcs)[d],
            carbon_factor=per(carbon_factor, n_dcs)[d],
            net_meter=per(net_meter, n_dcs)[d],
            peak_price=per(peak_price, n_dcs)[d],
            elec_price_trace=_trace(per(elec_price, n_dcs)[d]),
            renewable_trace=_trace(per(renewable_kw, n_dcs)[d]),
        )
        for d in range(n_dcs)
    )
    car = np.asarray(car, dtype=float)
    if car.ndim == 0:
        trace = np.full((n_tasks, 24), float(car))
    elif car.ndim == 1:
        trace = np.repeat(car[:, None], 24, axis=1)
    else:
        trace = car.copy()
    trace.setflags(write=False)
    scenario = Scenario(
        name="simple",
        node_types=(nt,),
        task_types=tasks,
        data_centers=dcs,
        coloc_coeffs=coeffs if coeffs is not None else identity_coeffs((nt,), ("m",)),
        arrival_trace=trace,
        network_price=network_price,
        prorate_peak=prorate_peak,
    )
    validate(scenario)
    return scenario


def _trace(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(float(v) for v in value)
    return (float(value),) * 24


def random_small(seed: int, n_dcs: int = 2, n_tasks: int = 2) -> Scenario:
    """Randomized small fixture for oracle comparisons.

    Arrival rates sit between 30% and 90% of each task's total execution rate,
    so per-DC capacity limits often bind.
    """
    rng = np.random.default_rng(seed)
    nodes = [int(n) for n in rng.integers(40, 120, size=n_dcs)]
    rates = [float(r) for r in rng.uniform(5.0, 20.0, size=n_tasks)]
    gross = [(2 * 50.0 + n * 0.2) * 1.1 for n in nodes]
    draft = simple_scenario(
        n_dcs,
        n_tasks,
        nodes=nodes,
        base_rate=rates,
        carbon_factor=[float(x) for x in rng.uniform(0.1, 0.8, n_dcs)],
        elec_price=[float(x) for x in rng.uniform(0.05, 0.25, n_dcs)],
        renewable_kw=[float(g * x) for g, x in zip(gross, rng.uniform(0.0, 0.4, n_dcs))],
        peak_price=[float(x) for x in rng.uniform(5.0, 20.0, n_dcs)],
        net_meter=[float(x) for x in rng.choice([0.0, 0.5, 1.0], n_dcs)],
        size_gb=[float(x) for x in rng.uniform(0.1, 1.0, n_tasks)],
        network_price=0.02,
    )
    frac = rng.uniform(0.3, 0.9, size=n_tasks)
    car = frac * draft.execution_rates.sum(axis=1)
    out = draft.with_arrivals(np.repeat(car[:, None], 24, axis=1))
    validate(out)
    return out.replace(name=f"random_small_{seed}")


def steady(scenario: Scenario) -> Scenario:
    """Same cloud with time-invariant prices and renewables, each held at its daily mean."""
    dcs = tuple(
        dataclasses.replace(
            dc,
            elec_price_trace=(float(np.mean(dc.elec_price_trace)),) * scenario.epochs_per_day,
            renewable_trace=(float(np.mean(dc.renewable_trace)),) * scenario.epochs_per_day,
        )
        for dc in scenario.data_centers
    )
    return scenario.replace(data_centers=dcs, name=f"{scenario.name}_steady")


def write_bundled(directory: Path = DATA_DIR) -> list[Path]:
    """Regenerate the shipped fixture files."""
    written = []
    names = {4: "four_dc", 8: "eight_dc", 16: "sixteen_dc"}
    for n, name in names.items():
        scenario = build_cloud(n).replace(name=name)
        path = directory / f"{name}.json"
        if n == 4:
            # the 4-DC fixture keeps its hourly traces in CSV files
            import json

            from .scenario import scenario_to_dict

            doc = scenario_to_dict(scenario)
            trace_dir = directory / "traces" / name
            trace_dir.mkdir(parents=True, exist_ok=True)
            for dc, row in zip(scenario.data_centers, doc["data_centers"]):
                rel = f"traces/{name}/dc{dc.id}.csv"
                write_trace_csv(dc, directory / rel)
                del row["elec_price_usd_per_kwh"], row["renewable_kw"]
                row["trace_csv"] = rel
                written.append(directory / rel)
            path.write_text(json.dumps(doc, indent=1) + "\n")
        else:
            save_scenario(scenario, path)
        written.append(path)
    return written


if __name__ == "__main__":
    for p in write_bundled():
        print(p)
