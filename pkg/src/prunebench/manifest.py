"""Experiment manifests: a flat set of dotted keys stored as JSON.

The manifest hash is the sha256 of the canonical JSON (sorted keys, no
whitespace, defaults filled in), so two files that differ only in layout or
in omitted defaults hash the same.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Optional, Tuple

from . import data
from .planner import LRSchedule, plan_pxfy, speedup_for, synthesize

SCRATCH = "scratch"
PRUNE_FINETUNE = "prune-finetune"

# dotted key -> attribute name
_KEYS = {
    "dataset": "dataset",
    "model": "model",
    "pipeline": "pipeline",
    "seeds": "seeds",
    "scratch.kind": "scratch_kind",
    "scratch.epochs": "scratch_epochs",
    "scratch.init_lr": "scratch_init_lr",
    "scratch.final_lr": "scratch_final_lr",
    "prune.ratio": "prune_ratio",
    "prune.vector": "prune_vector",
    "prune.criterion": "prune_criterion",
    "prune.epoch": "prune_epoch",
    "prune.epochs": "prune_epochs",
    "prune.lr_schedule": "prune_lr_schedule",
    "ft.kind": "ft_kind",
    "ft.init_lr": "ft_init_lr",
    "ft.epochs": "ft_epochs",
    "ft.final_lr": "ft_final_lr",
    "base.hash": "base_hash",
    "base.seed": "base_seed",
    "train.batch_size": "batch_size",
    "train.momentum": "momentum",
    "train.weight_decay": "weight_decay",
    "train.augment": "augment",
    "train.crop_pad": "crop_pad",
    "schedule.stage_cap": "stage_cap",
}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentManifest:
    dataset: str
    model: str
    pipeline: str = PRUNE_FINETUNE
    seeds: Tuple[int, ...] = (0,)
    scratch_kind: str = "step"
    scratch_epochs: int = 90
    scratch_init_lr: float = 0.1
    scratch_final_lr: float = 1e-5
    prune_ratio: float = 0.0
    prune_vector: Optional[Tuple[float, ...]] = None
    prune_criterion: str = "l1"
    prune_epoch: int = 90          # p of P{p}F{f}; pretrain length
    prune_epochs: int = 0          # training inside the pruning phase (one-shot L1: none)
    prune_lr_schedule: str = ""
    ft_kind: str = "step"
    ft_init_lr: float = 0.01
    ft_epochs: int = 90
    ft_final_lr: Optional[float] = None   # None: the scratch schedule's final LR
    base_hash: str = ""            # reuse a stored base checkpoint with this content hash
    base_seed: Optional[int] = None       # pretrain seed shared by all runs (None: per-run seed)
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    augment: bool = True
    crop_pad: int = 4
    stage_cap: int = 30

    def __post_init__(self):
        if self.pipeline not in (SCRATCH, PRUNE_FINETUNE):
            raise ManifestError(f"pipeline must be {SCRATCH!r} or {PRUNE_FINETUNE!r}")
        if not self.seeds:
            raise ManifestError("at least one seed is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.prune_vector is not None:
            object.__setattr__(self, "prune_vector", tuple(float(r) for r in self.prune_vector))
        if self.pipeline == PRUNE_FINETUNE and not 0 <= self.prune_epoch <= self.scratch_epochs:
            raise ManifestError(f"prune.epoch {self.prune_epoch} outside the "
                                f"{self.scratch_epochs}-epoch scratch schedule")
        if self.prune_epochs < 0:
            raise ManifestError("prune.epochs must be non-negative")

    # -------------------------------------------------------------- io
    def to_dict(self):
        out = {}
        for key, attr in _KEYS.items():
            v = getattr(self, attr)
            out[key] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d) -> "ExperimentManifest":
        unknown = set(d) - set(_KEYS)
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        for key in ("dataset", "model"):
            if key not in d:
                raise ManifestError(f"manifest is missing {key!r}")
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, value in d.items():
            attr = _KEYS[key]
            if value is not None and kinds[attr] in ("int", "float", "bool"):
                value = {"int": int, "float": float, "bool": bool}[kinds[attr]](value)
            kw[attr] = value
        return cls(**kw)

    def canonical(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    def dump(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}: {e}") from None
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentManifest":
        d = self.to_dict()
        for k, v in changes.items():
            d[k if k in _KEYS else next(dk for dk, a in _KEYS.items() if a == k)] = v
        return ExperimentManifest.from_dict(d)

    # ------------------------------------------------------- derived
    @property
    def scratch_schedule(self) -> LRSchedule:
        return synthesize(self.scratch_kind, self.scratch_epochs, self.scratch_init_lr,
                          self.scratch_final_lr, self.stage_cap)

    def plan(self):
        if self.pipeline != PRUNE_FINETUNE:
            raise ManifestError("only prune-finetune manifests have a P/F plan")
        return plan_pxfy(self.scratch_schedule, self.prune_epoch, self.ft_epochs, self.ft_init_lr,
                         self.ft_kind, self.ft_final_lr, self.stage_cap)

    @property
    def data_facts(self):
        return data.describe(self.dataset)

    def macs(self) -> Tuple[int, int]:
        """(dense, pruned) MACs per sample at the dataset's image size."""
        facts = self.data_facts
        return speedup_for(self.model, self.prune_ratio, self.prune_vector, facts["size"],
                           facts["classes"])

    def base_identity(self, seed: Optional[int] = None) -> Optional[str]:
        """Who the pretrained model is: an explicit checkpoint hash, or a digest of its recipe."""
        if self.pipeline != PRUNE_FINETUNE:
            return None
        if self.base_hash:
            return self.base_hash
        prefix = self.scratch_schedule.prefix(self.prune_epoch)
        recipe = dict(dataset=self.dataset, model=self.model,
                      schedule=None if prefix is None else prefix.to_string(),
                      epochs=self.prune_epoch,   # step strings do not carry their length
                      train=[self.batch_size, self.momentum, self.weight_decay, self.augment,
                             self.crop_pad],
                      seed=self.base_seed if self.base_seed is not None
                      else (list(self.seeds) if seed is None else seed))
        return hashlib.sha256(json.dumps(recipe, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class BudgetView:
    """What the setup classifier compares."""
    speedup: float
    dense_macs: int
    pruned_macs: int
    base_id: Optional[str]
    finetune_epochs: Optional[int]
    finetune_schedule: Optional[str]
    prune_epochs: Optional[int]
    prune_schedule: Optional[str]
    total_epochs: int
    total_macs: int


@lru_cache(maxsize=1024)
def describe_budget(m: ExperimentManifest) -> BudgetView:
    dense, pruned = m.macs()
    n_train = m.data_facts["train"]
    if m.pipeline == SCRATCH:
        return BudgetView(dense / pruned, dense, pruned, None, None, None, None, None,
                          m.scratch_epochs, m.scratch_epochs * pruned * n_train)
    plan = m.plan()
    total = m.prune_epoch + m.prune_epochs + m.ft_epochs
    macs = ((m.prune_epoch + m.prune_epochs) * dense + m.ft_epochs * pruned) * n_train
    return BudgetView(dense / pruned, dense, pruned, m.base_identity(), m.ft_epochs,
                      plan.finetune.to_string(), m.prune_epochs, m.prune_lr_schedule,
                      total, macs)
