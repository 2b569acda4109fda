"""Learning-rate schedule synthesis, budget arithmetic and comparison-setup classification.

Step schedules decay by a factor of 10 per stage. Each non-final stage gets
half of the epochs still unassigned (rounded up, capped at ``stage_cap``) and
the final stage takes whatever is left, e.g. 90 epochs from 1e-1 to 1e-5
gives ``0:1e-1,30:1e-2,60:1e-3,75:1e-4,83:1e-5``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Tuple

STEP = "step"
COSINE = "cosine"

SPEEDUP_RTOL = 0.02
MACS_RTOL = 0.02


def _decimal(x) -> Decimal:
    return Decimal(repr(float(x))).normalize()


def format_lr(lr: float) -> str:
    """Shortest mantissa/exponent form: 0.1 -> '1e-1', 0.05 -> '5e-2', 0.25 -> '2.5e-1'."""
    d = _decimal(lr)
    if d <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    exp = d.adjusted()
    mant = d.scaleb(-exp).normalize()
    return f"{mant}e{exp}"


def _decades(init_lr: float, final_lr: float) -> int:
    ratio = _decimal(init_lr) / _decimal(final_lr)
    n = ratio.adjusted()
    if ratio != Decimal(10) ** n or n < 0:
        raise ValueError(f"init_lr/final_lr must be a power of 10 >= 1, got {init_lr}/{final_lr}")
    return n


@dataclass(frozen=True)
class LRSchedule:
    """Per-epoch learning rates.

    ``stages`` holds ``(start_epoch, lr)`` pairs. Cosine schedules carry a
    single stage with the initial LR and anneal towards ``final_lr`` over
    ``horizon`` epochs (the schedule length unless it is a truncated prefix).
    """
    kind: str
    stages: Tuple[Tuple[int, float], ...]
    total_epochs: int
    final_lr: float
    horizon: Optional[int] = None   # cosine annealing length when it differs from total_epochs

    def __post_init__(self):
        if self.kind not in (STEP, COSINE):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be non-negative")
        starts = [s for s, _ in self.stages]
        if self.stages and (starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:]))):
            raise ValueError(f"stage starts must increase strictly from 0, got {starts}")
        if self.total_epochs and starts and starts[-1] >= self.total_epochs:
            raise ValueError("last stage starts at or after total_epochs")
        if self.kind == COSINE and len(self.stages) != 1:
            raise ValueError("a cosine schedule has exactly one stage")

    @property
    def init_lr(self) -> float:
        return self.stages[0][1]

    def lr_at(self, epoch: int) -> float:
        if not 0 <= epoch < self.total_epochs:
            raise IndexError(f"epoch {epoch} outside schedule of {self.total_epochs} epochs")
        if self.kind == COSINE:
            lo, hi = self.final_lr, self.init_lr
            t = self.horizon or self.total_epochs
            return lo + 0.5 * (hi - lo) * (1 + math.cos(math.pi * epoch / t))
        lr = self.stages[0][1]
        for start, value in self.stages:
            if start > epoch:
                break
            lr = value
        return lr

    def lrs(self):
        return [self.lr_at(e) for e in range(self.total_epochs)]

    @property
    def stage_lengths(self) -> Tuple[int, ...]:
        if self.kind == COSINE:
            return (self.total_epochs,)
        starts = [s for s, _ in self.stages] + [self.total_epochs]
        return tuple(b - a for a, b in zip(starts, starts[1:]))

    @property
    def first_stage_length(self) -> int:
        """N of the trainability metric.

        For cosine, the number of leading epochs whose LR is still >= init_lr/10.
        """
        if not self.stages:
            return 0
        if self.kind == STEP:
            return self.stage_lengths[0]
        cut = self.init_lr / 10
        for e in range(self.total_epochs):
            if self.lr_at(e) < cut:
                return e
        return self.total_epochs

    def to_string(self) -> str:
        if self.kind == COSINE:
            out = f"cosine:{format_lr(self.init_lr)}>{format_lr(self.final_lr)}@{self.total_epochs}"
            if self.horizon and self.horizon != self.total_epochs:
                out += f"/{self.horizon}"
            return out
        return ",".join(f"{s}:{format_lr(lr)}" for s, lr in self.stages)

    def __str__(self):
        return self.to_string()

    @classmethod
    def parse(cls, text: str, total_epochs: Optional[int] = None,
              final_lr: Optional[float] = None) -> "LRSchedule":
        """Inverse of ``to_string``. Step strings need ``total_epochs``."""
        text = text.strip()
        if text.startswith("cosine:"):
            body, _, total = text[len("cosine:"):].partition("@")
            hi, _, lo = body.partition(">")
            total, _, horizon = total.partition("/")
            return cls(COSINE, ((0, float(hi)),), int(total), float(lo),
                       int(horizon) if horizon else None)
        if total_epochs is None:
            raise ValueError("a step schedule string needs total_epochs")
        stages = []
        for item in text.split(","):
            start, _, lr = item.partition(":")
            stages.append((int(start), float(lr)))
        return cls(STEP, tuple(stages), total_epochs,
                   final_lr if final_lr is not None else stages[-1][1])

    def prefix(self, epochs: int) -> Optional["LRSchedule"]:
        """The first ``epochs`` epochs of this schedule (None for 0)."""
        if not 0 <= epochs <= self.total_epochs:
            raise ValueError(f"prefix of {epochs} epochs from a {self.total_epochs}-epoch schedule")
        if epochs == 0:
            return None
        if self.kind == COSINE:
            return LRSchedule(COSINE, self.stages, epochs, self.final_lr,
                              self.horizon or self.total_epochs)
        stages = tuple((s, lr) for s, lr in self.stages if s < epochs)
        return LRSchedule(STEP, stages, epochs, stages[-1][1])

    def extend_first_stage(self, extra: int) -> "LRSchedule":
        """Insert ``extra`` epochs at the first-stage LR and shift later stages."""
        if self.kind != STEP:
            raise ValueError("only step schedules can be extended")
        if extra < 0:
            raise ValueError("extra epochs must be non-negative")
        stages = ((0, self.stages[0][1]),) + tuple((s + extra, lr) for s, lr in self.stages[1:])
        return LRSchedule(STEP, stages, self.total_epochs + extra, self.final_lr)


def allocate_stages(total_epochs: int, n_stages: int, stage_cap: int = 30):
    """Stage lengths: half of the remaining epochs (ceil, capped) per non-final stage."""
    if n_stages < 1:
        raise ValueError("need at least one stage")
    if total_epochs < n_stages:
        raise ValueError(f"{total_epochs} epochs cannot give each of {n_stages} stages one epoch")
    lengths = []
    remaining = total_epochs
    for i in range(n_stages - 1):
        later = n_stages - 1 - i
        n = min(stage_cap, -(-remaining // 2), remaining - later)
        lengths.append(n)
        remaining -= n
    lengths.append(remaining)
    return lengths


def synthesize_step_schedule(total_epochs: int, init_lr: float, final_lr: float,
                             stage_cap: int = 30) -> LRSchedule:
    n = _decades(init_lr, final_lr) + 1
    lengths = allocate_stages(total_epochs, n, stage_cap)
    d = _decimal(init_lr)
    exp = d.adjusted()
    mant = d.scaleb(-exp).normalize()
    stages, start = [], 0
    for i, length in enumerate(lengths):
        stages.append((start, float(f"{mant}e{exp - i}")))
        start += length
    return LRSchedule(STEP, tuple(stages), total_epochs, stages[-1][1])


def synthesize_cosine_schedule(total_epochs: int, init_lr: float, min_lr: float) -> LRSchedule:
    if not init_lr > min_lr > 0:
        raise ValueError(f"need init_lr > min_lr > 0, got {init_lr}, {min_lr}")
    if total_epochs < 1:
        raise ValueError("total_epochs must be positive")
    return LRSchedule(COSINE, ((0, float(init_lr)),), total_epochs, float(min_lr))


@lru_cache(maxsize=1024)
def synthesize(kind: str, total_epochs: int, init_lr: float, final_lr: float,
               stage_cap: int = 30) -> LRSchedule:
    if kind == STEP:
        return synthesize_step_schedule(total_epochs, init_lr, final_lr, stage_cap)
    if kind == COSINE:
        return synthesize_cosine_schedule(total_epochs, init_lr, final_lr)
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    pretrain: Optional[LRSchedule]   # None when pruning at epoch 0
    prune_epoch: int
    finetune: LRSchedule

    @property
    def total_epochs(self) -> int:
        return self.prune_epoch + self.finetune.total_epochs

    def label(self) -> str:
        return f"P{self.prune_epoch}F{self.finetune.total_epochs}"


def plan_pxfy(scratch: LRSchedule, prune_epoch: int, finetune_epochs: int,
              finetune_init_lr: float, kind: str = STEP, final_lr: Optional[float] = None,
              stage_cap: int = 30) -> ExperimentPlan:
    """Pretrain ``p`` epochs on the scratch schedule's prefix, prune, finetune ``f`` epochs.

    The finetune schedule ends at the scratch schedule's final LR unless
    ``final_lr`` overrides it.
    """
    if not 0 <= prune_epoch <= scratch.total_epochs:
        raise ValueError(f"prune epoch {prune_epoch} outside the {scratch.total_epochs}-epoch "
                         "scratch schedule")
    if finetune_epochs < 1:
        raise ValueError("finetune epochs must be >= 1")
    end_lr = scratch.final_lr if final_lr is None else final_lr
    ft = synthesize(kind, finetune_epochs, finetune_init_lr, end_lr, stage_cap)
    return ExperimentPlan(scratch.prefix(prune_epoch), prune_epoch, ft)


# ------------------------------------------------------------------ budgets

@dataclass(frozen=True)
class BudgetSpec:
    K1: int         # pretraining epochs
    K2: int         # finetuning epochs
    F1: float       # dense MACs
    F2: float       # pruned MACs

    def __post_init__(self):
        if self.K1 < 0 or self.K2 < 0:
            raise ValueError("epoch counts must be non-negative")
        if not (self.F1 > 0 and self.F2 > 0):
            raise ValueError("MAC totals must be positive")

    @property
    def k(self) -> float:
        return self.F1 / self.F2


def scratch_b_epochs(b: BudgetSpec) -> int:
    """Epochs for a pruned-architecture scratch run with the same MAC budget: round(K1*k + K2)."""
    exact = Fraction(b.K1) * Fraction(b.F1) / Fraction(b.F2) + b.K2
    return math.floor(exact + Fraction(1, 2))


def squeeze_prune_epoch(p: int, k: float) -> int:
    """Pruning epoch scaled down by the speedup, round-half-up, at least 1."""
    if k < 1:
        raise ValueError(f"speedup must be >= 1, got {k}")
    return max(1, math.floor(Fraction(p) / Fraction(k) + Fraction(1, 2)))


# ------------------------------------------------------- setup classification

class SetupLevel(enum.IntEnum):
    S1 = 1      # same dataset, network, speedup
    S2 = 2      # + same base model
    S3_1 = 3    # + same finetune epochs
    S3_2 = 4    # + same finetune LR schedule
    S4_1 = 5    # + same pruning epochs
    S4_2 = 6    # + same pruning LR schedule

    def __str__(self):
        return self.name.replace("_", ".")


@dataclass(frozen=True)
class SetupResult:
    level: Optional[SetupLevel]
    sx_a: bool
    sx_b: bool
    reason: str = ""

    def __str__(self):
        out = "incomparable" if self.level is None else str(self.level)
        if self.sx_a:
            out += " [SX-A]"
        if self.sx_b:
            out += " [SX-B]"
        return out


def _close(a, b, rtol):
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def level_conditions(a, b):
    """Ordered (level, holds) pairs; each condition only adds to the previous one."""
    from .manifest import describe_budget  # local import: manifest depends on this module
    da, db = describe_budget(a), describe_budget(b)
    return [
        (SetupLevel.S1, a.dataset == b.dataset and a.model == b.model
         and _close(da.speedup, db.speedup, SPEEDUP_RTOL)),
        (SetupLevel.S2, da.base_id is not None and da.base_id == db.base_id),
        (SetupLevel.S3_1, da.finetune_epochs == db.finetune_epochs),
        (SetupLevel.S3_2, da.finetune_schedule == db.finetune_schedule),
        (SetupLevel.S4_1, da.prune_epochs == db.prune_epochs),
        (SetupLevel.S4_2, da.prune_schedule == db.prune_schedule),
    ]


def classify_setup(a, b) -> SetupResult:
    """Strictest setup two manifests jointly satisfy, plus the SX-A / SX-B flags."""
    from .manifest import describe_budget
    if a.dataset != b.dataset:
        return SetupResult(None, False, False, "different datasets")
    da, db = describe_budget(a), describe_budget(b)
    sx_a = da.total_epochs == db.total_epochs
    sx_b = _close(da.total_macs, db.total_macs, MACS_RTOL)
    level, reason = None, ""
    for lvl, ok in level_conditions(a, b):
        if not ok:
            reason = f"fails {lvl}"
            break
        level = lvl
    return SetupResult(level, sx_a, sx_b, reason)


@lru_cache(maxsize=256)
def speedup_for(model: str, ratio: float, vector: Optional[Tuple[float, ...]],
                input_size: Optional[int] = None, num_classes: Optional[int] = None):
    """(dense MACs, pruned MACs) per sample for a zoo model under a prune config."""
    from . import flops, pruner, zoo
    g = zoo.build(model, num_classes=num_classes, input_size=input_size, seed=None)
    cfg = pruner.PruneConfig(ratio=ratio, stage_ratios=vector)
    small = pruner.prune_architecture(g, pruner.plan(g, cfg))
    return flops.count(g).total, flops.count(small).total
