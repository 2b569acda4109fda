"""Desk-scale learning-rate studies on a 10-class synthetic task.

ResNet14 on 8x8 synthetic images, pretrained once (shared base model across
seeds), pruned in one shot by L1 norm, then finetuned with different
recipes. Sizes are chosen so the whole study runs in minutes on one core.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

from . import runner
from .manifest import ExperimentManifest
from .metrics import mean_std

DESK_DATASET = "synthetic:classes=10,train=2048,test=1000,size=8,noise=1.5,distract=0.8,seed=0"


def desk_manifest(**changes) -> ExperimentManifest:
    base = ExperimentManifest(
        dataset=DESK_DATASET, model="resnet14", seeds=(0, 1, 2),
        scratch_epochs=30, scratch_init_lr=0.1, scratch_final_lr=1e-4,
        prune_epoch=30, prune_ratio=0.9, ft_epochs=20, ft_init_lr=0.1,
        base_seed=0, crop_pad=1)
    return base.replace(**changes) if changes else base


@dataclass
class Arm:
    label: str
    records: List[runner.RunRecord]

    @property
    def final(self):
        return mean_std([r.final_acc for r in self.records])

    @property
    def trainability(self):
        return mean_std([r.trainability for r in self.records])

    def line(self) -> str:
        (fm, fs), (tm, ts) = self.final, self.trainability
        return f"{self.label:<28} final {fm:6.2f}±{fs:.2f}  T {tm:6.2f}±{ts:.2f}  (n={len(self.records)})"


def run_arm(label, m: ExperimentManifest, workdir=None) -> Arm:
    return Arm(label, [runner.run(m, s, workdir) for s in m.seeds])


def lr_effect(large_lr=0.1, small_lr=1e-3, extra=60, ratio=0.9, seeds: Sequence[int] = (0, 1, 2),
              workdir=None) -> Dict[str, Arm]:
    """Large vs small initial finetune LR at equal epochs, plus the small-LR run extended."""
    big = run_arm(f"LR {large_lr:g}", desk_manifest(prune_ratio=ratio, ft_init_lr=large_lr,
                                                    seeds=tuple(seeds)), workdir)
    small = run_arm(f"LR {small_lr:g}", desk_manifest(prune_ratio=ratio, ft_init_lr=small_lr,
                                                      seeds=tuple(seeds)), workdir)
    ext = Arm(f"LR {small_lr:g} (+{extra} epochs)",
              [runner.extend_finetune(r, extra) for r in small.records])
    return {"large": big, "small": small, "extended": ext}


def cosine_effect(large_lr=1e-2, small_lr=1e-3, min_lr=1e-4, ratio=0.7,
                  seeds: Sequence[int] = (0, 1, 2), workdir=None) -> Dict[str, Arm]:
    """Cosine finetuning from two initial LRs annealed to the same minimum LR."""
    arms = {}
    for key, lr in (("large", large_lr), ("small", small_lr)):
        m = desk_manifest(prune_ratio=ratio, ft_kind="cosine", ft_init_lr=lr, ft_final_lr=min_lr,
                          seeds=tuple(seeds))
        arms[key] = run_arm(f"cosine LR {lr:g}", m, workdir)
    return arms
