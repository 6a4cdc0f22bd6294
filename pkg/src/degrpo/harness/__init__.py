"""Synthetic data, staged pretraining, the comparison loop and its outputs."""

from .config import EncoderConfig, RunConfig, TrainingConfig
from .data import SyntheticDataset, SyntheticDatasetSpec, generate_dataset, read_dataset, write_dataset
from .stages import RegressionTask, Stage, StageSchedule, apply_stage, default_stages, make_regression_task, pretrain
from .training import (
    METRICS_HEADER,
    PLOT_HEADER,
    IterationLog,
    RunReport,
    emit_plot_data,
    read_plot_data,
    run_training,
    write_metrics,
    write_outputs,
)

__all__ = [
    "EncoderConfig", "IterationLog", "METRICS_HEADER", "PLOT_HEADER", "RegressionTask", "RunConfig",
    "RunReport", "Stage", "StageSchedule", "SyntheticDataset", "SyntheticDatasetSpec", "TrainingConfig",
    "apply_stage", "default_stages", "emit_plot_data", "generate_dataset", "make_regression_task",
    "pretrain", "read_dataset", "read_plot_data", "run_training", "write_dataset", "write_metrics",
    "write_outputs",
]
