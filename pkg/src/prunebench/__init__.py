"""Desk-scale structured filter pruning benchmark.

Modules: ``nn_core`` (numpy training engine), ``zoo`` (model graphs),
``flops`` (MAC accounting), ``pruner`` (L1 filter pruning), ``planner``
(LR schedules, budgets, setup classification), ``metrics``, ``runner`` and
``cli``.
"""
from .graph import GraphError, LayerSpec, ModelGraph
from .manifest import ExperimentManifest
from .planner import LRSchedule, classify_setup, synthesize_cosine_schedule, synthesize_step_schedule

__all__ = ["GraphError", "LayerSpec", "ModelGraph", "ExperimentManifest", "LRSchedule",
           "classify_setup", "synthesize_cosine_schedule", "synthesize_step_schedule"]
__version__ = "0.1.0"
