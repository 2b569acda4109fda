"""Trainability accuracy and across-seed statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .planner import LRSchedule


@dataclass(frozen=True)
class AccuracyCurve:
    accuracies: tuple          # top-1 test accuracy (%) after each epoch
    schedule: LRSchedule

    def __post_init__(self):
        acc = tuple(float(a) for a in self.accuracies)
        object.__setattr__(self, "accuracies", acc)
        if any(not 0 <= a <= 100 for a in acc):
            raise ValueError("accuracies must lie in [0, 100]")
        if len(acc) != self.schedule.total_epochs:
            raise ValueError(f"curve has {len(acc)} epochs, schedule has {self.schedule.total_epochs}")


def trainability_accuracy(curve: AccuracyCurve) -> float:
    """Mean accuracy over the epochs of the first LR stage."""
    n = curve.schedule.first_stage_length
    if n == 0 or not curve.accuracies:
        raise ValueError("trainability needs a non-empty first LR stage")
    return math.fsum(curve.accuracies[:n]) / n


@dataclass(frozen=True)
class Summary:
    n: int
    final_mean: float
    final_std: float
    t_mean: float
    t_std: float

    @staticmethod
    def fmt(mean, std, n):
        tag = " (n=1, no spread)" if n == 1 else f" (n={n})"
        return f"{mean:.2f}±{std:.2f}{tag}"

    @property
    def final(self) -> str:
        return self.fmt(self.final_mean, self.final_std, self.n)

    @property
    def trainability(self) -> str:
        return self.fmt(self.t_mean, self.t_std, self.n)


def mean_std(values: Sequence[float]):
    """Sample mean and sample (n-1) standard deviation; std is 0 for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    mean = math.fsum(v) / v.size
    if v.size == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2) / (v.size - 1))


def aggregate(runs) -> Summary:
    """Mean ± sample std of final accuracy and trainability over seeds of one manifest."""
    if not runs:
        raise ValueError("aggregate needs at least one run")
    hashes = {r.manifest_hash for r in runs}
    if len(hashes) > 1:
        raise ValueError(f"runs come from {len(hashes)} different manifests")
    fm, fs = mean_std([r.final_acc for r in runs])
    tm, ts = mean_std([r.trainability for r in runs])
    return Summary(len(runs), fm, fs, tm, ts)
