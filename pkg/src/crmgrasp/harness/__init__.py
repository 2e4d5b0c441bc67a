"""Experiment configuration, training and evaluation runs, reports and the CLI."""

from .config import ExperimentConfig, HarnessSection, config_from_dict, load_config
from .runner import (
    CURVE_HEADER, EVAL_HEADER, EvalReport, RunSummary, emit_report, episodes_to, evaluate_policies, ordering_stats,
    plot_curves, run_eval, run_train, train_one,
)
from .suites import cylinder_lift_task, desk_suite, scripted_close

__all__ = [
    "CURVE_HEADER", "EVAL_HEADER", "EvalReport", "ExperimentConfig", "HarnessSection", "RunSummary",
    "config_from_dict", "cylinder_lift_task", "desk_suite", "emit_report", "episodes_to", "evaluate_policies",
    "load_config", "ordering_stats", "plot_curves", "run_eval", "run_train", "scripted_close", "train_one",
]
