"""Synthetic RGB-D sequences, dataset formats and trajectory metrics."""

from .formats import (
    Dataset,
    FrameData,
    Observation,
    Trajectory,
    load_dataset,
    read_depth,
    read_tum,
    save_dataset,
    write_depth,
    write_tum,
)
from .metrics import evaluate_final_drift, evaluate_rpe
from .simulator import SceneSpec, SensorSpec, TrajectorySpec, generate_dataset

__all__ = [
    "Dataset", "FrameData", "Observation", "Trajectory", "load_dataset", "read_depth",
    "read_tum", "save_dataset", "write_depth", "write_tum", "evaluate_final_drift",
    "evaluate_rpe", "SceneSpec", "SensorSpec", "TrajectorySpec", "generate_dataset",
]
