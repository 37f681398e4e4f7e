"""Co-simulation harness: scenario runs, metrics, Pareto sweeps, the set-point link and the CLI."""

from .metrics import MetricsReport, cv_rmse, mae, metrics, nmbe
from .runner import DistrictController, RunConfig, RunError, RunResult, prepare, read_trace, run_scenario

__all__ = ["MetricsReport", "cv_rmse", "mae", "metrics", "nmbe", "DistrictController", "RunConfig", "RunError",
           "RunResult", "prepare", "read_trace", "run_scenario"]
