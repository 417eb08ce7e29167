"""Experiment harness: configuration, resumable pipeline, metrics and exports."""

from .config import BenchConfig, DemoConfig, EvalConfig, ExperimentConfig, ScheduleConfig
from .metrics import (
    RunMetrics,
    RunSummary,
    episodes_to_first_success,
    final_success_rate,
    smoothed_success,
    success_auc,
)
from .pipeline import STAGES, Pipeline, load_benchmark, run_benchmark, run_pipeline, run_single, write_benchmark

__all__ = [
    "STAGES", "BenchConfig", "DemoConfig", "EvalConfig", "ExperimentConfig", "Pipeline", "RunMetrics",
    "RunSummary", "ScheduleConfig", "episodes_to_first_success", "final_success_rate", "load_benchmark",
    "run_benchmark", "run_pipeline", "run_single", "smoothed_success", "success_auc", "write_benchmark",
]
