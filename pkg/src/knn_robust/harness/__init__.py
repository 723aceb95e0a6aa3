from .data import inject_poison, load_csv, write_csv
from .runner import ExperimentConfig, RunReport, run_experiment, strip_timing, verify_report

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "inject_poison",
    "load_csv",
    "run_experiment",
    "strip_timing",
    "verify_report",
    "write_csv",
]
