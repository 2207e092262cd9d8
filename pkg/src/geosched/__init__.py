"""Geo-distributed workload allocation: accounting models, game solvers and PPO agents."""

import os as _os

# GEOSCHED_THREADS caps the BLAS/OpenMP pools; it must be applied before numpy loads
_threads = _os.environ.get("GEOSCHED_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import GeoschedError  # noqa: E402
from .model import EpochState, Scenario, Strategy, StrategyProfile  # noqa: E402
from .scenario import bundled, load_scenario  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "EpochState",
    "GeoschedError",
    "Scenario",
    "Strategy",
    "StrategyProfile",
    "bundled",
    "load_scenario",
]
