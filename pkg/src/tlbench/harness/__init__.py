"""Experiment grid runner: composes data, augmentation, training plans,
precision simulation, metrics and timing into the full evaluation matrix."""

from .config import ExperimentConfig
from .grid import RunDescriptor, expand_grid, run_cell

__all__ = ["ExperimentConfig", "RunDescriptor", "expand_grid", "run_cell"]
