"""Pipelines: scratch training, pretrain -> prune -> finetune, first-stage
extension, and cross-validation of two pruning methods with two finetune recipes.

Randomness is keyed by ``(seed, phase, epoch)`` so any epoch's shuffle and
augmentation can be regenerated on its own, which is what makes resuming an
extended run line up with the original one.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import checkpoint, nn_core, pruner, zoo
from .data import Dataset, augment, load_dataset
from .manifest import PRUNE_FINETUNE, SCRATCH, ExperimentManifest, ManifestError
from .metrics import AccuracyCurve, mean_std, trainability_accuracy
from .planner import STEP, LRSchedule

log = logging.getLogger(__name__)

PHASE_CODES = {"pretrain": 1, "finetune": 2, "scratch": 3}
RESULT_COLUMNS = ["manifest_hash", "seed", "epoch", "phase", "lr", "test_acc",
                  "final_acc", "T", "total_epochs", "total_MACs"]
EVAL_BATCH = 500


class RunnerError(RuntimeError):
    pass


@dataclass
class RunRecord:
    manifest: ExperimentManifest
    seed: int
    curves: Dict[str, AccuracyCurve]
    final_acc: float
    trainability: Optional[float]
    total_epochs: int
    total_macs: int
    wall_time: float = 0.0
    base_hash: Optional[str] = None
    keep: Optional[dict] = None
    base_acc: Optional[float] = None
    pre_finetune_acc: Optional[float] = None
    extra_epochs: int = 0
    resume_state: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)

    @property
    def manifest_hash(self) -> str:
        return self.manifest.hash

    @property
    def main_phase(self) -> str:
        return "scratch" if self.manifest.pipeline == SCRATCH else "finetune"

    def rows(self) -> List[dict]:
        """Results-file rows: one per epoch of every phase, then a summary row."""
        out = []
        tag = f"+{self.extra_epochs}" if self.extra_epochs else ""
        for phase, curve in self.curves.items():
            label = phase + tag if phase == self.main_phase else phase
            for e, acc in enumerate(curve.accuracies):
                out.append(dict(manifest_hash=self.manifest_hash, seed=self.seed, epoch=e,
                                phase=label, lr=repr(curve.schedule.lr_at(e)),
                                test_acc=f"{acc:.4f}"))
        out.append(dict(manifest_hash=self.manifest_hash, seed=self.seed, phase="summary" + tag,
                        final_acc=f"{self.final_acc:.4f}",
                        T="" if self.trainability is None else f"{self.trainability:.4f}",
                        total_epochs=self.total_epochs, total_MACs=self.total_macs))
        return out


# ------------------------------------------------------------------ training

@lru_cache(maxsize=4)
def dataset_for(spec: str) -> Dataset:
    return load_dataset(spec)


def evaluate(model, x, y) -> float:
    correct = 0
    for i in range(0, len(y), EVAL_BATCH):
        logits = nn_core.forward(model, x[i:i + EVAL_BATCH], train=False)
        correct += int((logits.argmax(axis=1) == y[i:i + EVAL_BATCH]).sum())
    return 100.0 * correct / len(y)


def train_epochs(model, ds: Dataset, schedule: LRSchedule, opt: nn_core.OptimizerState,
                 m: ExperimentManifest, seed: int, phase: str, start: int = 0,
                 stop: Optional[int] = None) -> List[float]:
    """Run epochs ``start..stop-1`` of ``schedule``; returns the test accuracy after each."""
    stop = schedule.total_epochs if stop is None else stop
    n = len(ds.train_y)
    accs = []
    for e in range(start, stop):
        opt.learning_rate = schedule.lr_at(e)
        rng = np.random.default_rng([seed, PHASE_CODES[phase], e])
        order = rng.permutation(n)
        x, y = ds.train_x[order], ds.train_y[order]
        if m.augment:
            x = augment(x, rng, pad=m.crop_pad)
        for b, i in enumerate(range(0, n, m.batch_size)):
            yb = y[i:i + m.batch_size]
            if len(yb) < 2:   # batch statistics need two samples
                continue
            _, grads = nn_core.backward(model, x[i:i + m.batch_size], yb, batch_index=b)
            nn_core.sgd_step(model.params, grads, opt)
        accs.append(evaluate(model, ds.test_x, ds.test_y))
        log.info("%s epoch %d lr %.3g acc %.2f", phase, e, opt.learning_rate, accs[-1])
    return accs


def _optimizer(m: ExperimentManifest, lr: float) -> nn_core.OptimizerState:
    return nn_core.OptimizerState(lr, m.momentum, m.weight_decay)


def _arch(m: ExperimentManifest, ds: Dataset, seed=None):
    return zoo.build(m.model, num_classes=ds.num_classes, input_size=ds.image_shape[1], seed=seed)


# ---------------------------------------------------------------- base models

_BASES: Dict[str, tuple] = {}   # identity -> (state, pretrain accuracies, content hash)


def _base_paths(workdir, name):
    d = os.path.join(workdir, "base")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"{name}.ckpt"), os.path.join(d, f"{name}.json")


def _load_base_by_hash(workdir, content_hash):
    if workdir is None:
        raise RunnerError("base.hash given but no work directory to load it from")
    ckpt, meta = _base_paths(workdir, content_hash)
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"base checkpoint not found: {ckpt}")
    state = checkpoint.load(ckpt, expect_hash=content_hash)
    accs = []
    if os.path.exists(meta):
        with open(meta) as f:
            accs = json.load(f).get("pretrain_acc", [])
    return state, accs


def pretrained_base(m: ExperimentManifest, seed: int, ds: Dataset, workdir=None):
    """Base model at the pruning epoch, trained once per recipe and cached.

    Returns (model, pretrain accuracies, content hash).
    """
    if m.base_hash:
        state, accs = _load_base_by_hash(workdir, m.base_hash)
        model = _arch(m, ds)
        model.load_state(state)
        return model, accs, m.base_hash
    identity = m.base_identity(seed)
    if identity in _BASES:
        state, accs, h = _BASES[identity]
    else:
        index = None if workdir is None else _base_paths(workdir, "index")[1]
        known = {}
        if index and os.path.exists(index):
            with open(index) as f:
                known = json.load(f)
        if identity in known:
            h = known[identity]
            state, accs = _load_base_by_hash(workdir, h)
        else:
            bseed = m.base_seed if m.base_seed is not None else seed
            model = _arch(m, ds, seed=bseed)
            prefix = m.scratch_schedule.prefix(m.prune_epoch)
            accs = []
            if prefix is not None:
                opt = _optimizer(m, prefix.init_lr)
                accs = train_epochs(model, ds, prefix, opt, m, bseed, "pretrain")
            state = {k: v.copy() for k, v in model.state().items()}
            h = checkpoint.content_hash(state)
            if workdir is not None:
                ckpt, meta = _base_paths(workdir, h)
                checkpoint.save(ckpt, state)
                with open(meta, "w") as f:
                    json.dump({"identity": identity, "pretrain_acc": accs}, f)
                known[identity] = h
                with open(index, "w") as f:
                    json.dump(known, f, indent=1, sort_keys=True)
        _BASES[identity] = (state, accs, h)
    model = _arch(m, ds)
    model.load_state(state)
    return model, list(accs), h


# ------------------------------------------------------------------ pipelines

def run_scratch(m: ExperimentManifest, seed: int) -> RunRecord:
    """Train the (possibly pruned-shape) architecture from a fresh init."""
    if m.pipeline != SCRATCH:
        raise ManifestError(f"run_scratch needs a scratch manifest, got {m.pipeline!r}")
    t0 = time.perf_counter()
    ds = dataset_for(m.dataset)
    shape = _arch(m, ds)
    keep = pruner.plan(shape, pruner.PruneConfig(m.prune_ratio, m.prune_vector, seed=seed))
    model = pruner.prune_architecture(shape, keep)
    nn_core.init_params(model, seed)
    dense, pruned = m.macs()
    n_train = len(ds.train_y)
    if m.scratch_epochs == 0:
        sched = LRSchedule(STEP, (), 0, m.scratch_final_lr)
        acc = evaluate(model, ds.test_x, ds.test_y)
        return RunRecord(m, seed, {"scratch": AccuracyCurve((), sched)}, acc, None, 0, 0,
                         time.perf_counter() - t0)
    sched = m.scratch_schedule
    accs = train_epochs(model, ds, sched, _optimizer(m, sched.init_lr), m, seed, "scratch")
    curve = AccuracyCurve(accs, sched)
    return RunRecord(m, seed, {"scratch": curve}, accs[-1], trainability_accuracy(curve),
                     sched.total_epochs, sched.total_epochs * pruned * n_train,
                     time.perf_counter() - t0)


def run_prune_finetune(m: ExperimentManifest, seed: int, workdir=None) -> RunRecord:
    if m.pipeline != PRUNE_FINETUNE:
        raise ManifestError(f"run_prune_finetune needs a prune-finetune manifest, got {m.pipeline!r}")
    if m.prune_epochs or m.prune_lr_schedule:
        raise ManifestError("the runner prunes in one shot; prune.epochs must be 0")
    t0 = time.perf_counter()
    ds = dataset_for(m.dataset)
    plan = m.plan()
    base, pre_accs, base_hash = pretrained_base(m, seed, ds, workdir)
    base_acc = evaluate(base, ds.test_x, ds.test_y)
    cfg = pruner.PruneConfig(m.prune_ratio, m.prune_vector, m.prune_criterion, seed=seed)
    keep = pruner.plan(base, cfg)
    model = pruner.rebuild_small_dense(base, keep)
    pre_ft = evaluate(model, ds.test_x, ds.test_y)

    sched = plan.finetune
    opt = _optimizer(m, sched.init_lr)   # fresh momentum after pruning
    n1 = sched.first_stage_length
    accs = train_epochs(model, ds, sched, opt, m, seed, "finetune", 0, n1)
    resume = _snapshot(model, opt) if sched.kind == STEP else None
    accs += train_epochs(model, ds, sched, opt, m, seed, "finetune", n1)

    curves = {}
    if plan.pretrain is not None and len(pre_accs) == plan.pretrain.total_epochs:
        curves["pretrain"] = AccuracyCurve(pre_accs, plan.pretrain)
    curves["finetune"] = ft = AccuracyCurve(accs, sched)
    dense, pruned = m.macs()
    n_train = len(ds.train_y)
    return RunRecord(m, seed, curves, accs[-1], trainability_accuracy(ft),
                     m.prune_epoch + sched.total_epochs,
                     (m.prune_epoch * dense + sched.total_epochs * pruned) * n_train,
                     time.perf_counter() - t0, base_hash, keep.to_dict(), base_acc, pre_ft,
                     resume_state=resume)


def run(m: ExperimentManifest, seed: int, workdir=None) -> RunRecord:
    if m.pipeline == SCRATCH:
        return run_scratch(m, seed)
    return run_prune_finetune(m, seed, workdir)


def _snapshot(model, opt):
    state = {k: v.copy() for k, v in model.state().items()}
    state.update({f"velocity/{k}": v.copy() for k, v in opt.velocity.items()})
    return state


def extend_finetune(record: RunRecord, extra: int) -> RunRecord:
    """Re-run finetuning with ``extra`` more epochs at the first-stage LR.

    Training resumes from the state saved at the end of the original first
    stage (weights, BN statistics and momentum), so the first stage's curve is
    shared with the source record.
    """
    if extra < 0:
        raise ValueError("extra epochs must be non-negative")
    if extra == 0:
        return record
    m = record.manifest
    ft = record.curves.get("finetune")
    if ft is None or ft.schedule.kind != STEP:
        raise RunnerError("only step-schedule finetune runs can be extended")
    if record.resume_state is None:
        raise RunnerError("record has no first-stage resume state")
    t0 = time.perf_counter()
    ds = dataset_for(m.dataset)
    model = pruner.prune_architecture(_arch(m, ds), pruner.KeepPlan.from_dict(record.keep))
    state = record.resume_state
    model.load_state({k: v for k, v in state.items() if not k.startswith("velocity/")})
    opt = _optimizer(m, ft.schedule.init_lr)
    opt.velocity = {k[len("velocity/"):]: v.copy() for k, v in state.items()
                    if k.startswith("velocity/")}
    sched = ft.schedule.extend_first_stage(extra)
    n1 = ft.schedule.first_stage_length
    accs = list(ft.accuracies[:n1]) + train_epochs(model, ds, sched, opt, m, record.seed,
                                                   "finetune", n1)
    curves = dict(record.curves)
    curves["finetune"] = new = AccuracyCurve(accs, sched)
    _, pruned = m.macs()
    return replace(record, curves=curves, final_acc=accs[-1],
                   trainability=trainability_accuracy(new),
                   total_epochs=record.total_epochs + extra,
                   total_macs=record.total_macs + extra * pruned * len(ds.train_y),
                   wall_time=time.perf_counter() - t0, extra_epochs=record.extra_epochs + extra)


# ---------------------------------------------------------- cross-validation

@dataclass(frozen=True)
class Verdict:
    kind: str                 # "winner", "synergy" or "tie"
    favored: Optional[str]    # "A", "B" or None
    means: Dict[str, float]   # "A+FT_A" etc. -> mean final accuracy

    def __str__(self):
        if self.kind == "winner":
            return f"consistent winner {self.favored}"
        if self.kind == "tie":
            return "tie within noise"
        best = max(self.means, key=self.means.get)
        return f"synergy: {best} performs best, so {self.favored} weighs more"


FT_KEYS = ("ft.kind", "ft.init_lr", "ft.epochs", "ft.final_lr")


def swap_finetune(a: ExperimentManifest, b: ExperimentManifest) -> ExperimentManifest:
    """``a``'s pruning with ``b``'s finetune recipe."""
    d = a.to_dict()
    src = b.to_dict()
    d.update({k: src[k] for k in FT_KEYS})
    return ExperimentManifest.from_dict(d)


def decide(means: Dict[str, float], tie_tol: float = 0.0) -> Verdict:
    """Verdict from the four combination means (keys "A+FT_A", "B+FT_A", "A+FT_B", "B+FT_B")."""
    under_a = means["A+FT_A"] - means["B+FT_A"]
    under_b = means["A+FT_B"] - means["B+FT_B"]
    if abs(under_a) <= tie_tol and abs(under_b) <= tie_tol:
        return Verdict("tie", None, dict(means))
    if under_a > tie_tol and under_b > tie_tol:
        return Verdict("winner", "A", dict(means))
    if under_a < -tie_tol and under_b < -tie_tol:
        return Verdict("winner", "B", dict(means))
    best = max(means, key=means.get)
    return Verdict("synergy", best[0], dict(means))


def cross_validate(a: ExperimentManifest, b: ExperimentManifest,
                   evaluate_fn: Optional[Callable[[ExperimentManifest], Sequence[float]]] = None,
                   tie_tol: float = 0.0, workdir=None):
    """Run A+FT_A, B+FT_B, A+FT_B, B+FT_A over the seeds and decide.

    ``evaluate_fn`` maps a manifest to its per-seed final accuracies; the
    default trains every combination. Returns (verdict, records).
    """
    if not a.seeds or not b.seeds:
        raise ValueError("cross-validation needs at least one seed")
    combos = {"A+FT_A": a, "B+FT_B": b, "A+FT_B": swap_finetune(a, b), "B+FT_A": swap_finetune(b, a)}
    records = {}
    if evaluate_fn is None:
        def evaluate_fn(m):
            recs = [run(m, s, workdir) for s in m.seeds]
            records[m.hash] = recs
            return [r.final_acc for r in recs]
    means = {k: mean_std(evaluate_fn(m))[0] for k, m in combos.items()}
    return decide(means, tie_tol), records


# ------------------------------------------------------------------- results

def format_rows(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, RESULT_COLUMNS, lineterminator="\n")
    for r in rows:
        w.writerow({k: r.get(k, "") for k in RESULT_COLUMNS})
    return buf.getvalue()


def append_results(path, records: Sequence[RunRecord]) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        if new:
            f.write(",".join(RESULT_COLUMNS) + "\n")
        for r in records:
            f.write(format_rows(r.rows()))


def read_results(path) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------- record storage

def _record_paths(workdir, manifest_hash, seed):
    d = os.path.join(workdir, "runs")
    os.makedirs(d, exist_ok=True)
    stem = os.path.join(d, f"{manifest_hash[:16]}-s{seed}")
    return stem + ".json", stem + ".ckpt"


def save_record(record: RunRecord, workdir) -> str:
    """Persist a record (and its resume state, if any) so ``extend`` can pick it up later."""
    meta, ckpt = _record_paths(workdir, record.manifest_hash, record.seed)
    d = dict(manifest=record.manifest.to_dict(), seed=record.seed,
             curves={p: dict(acc=list(c.accuracies), schedule=c.schedule.to_string(),
                             epochs=c.schedule.total_epochs, final_lr=c.schedule.final_lr)
                     for p, c in record.curves.items()},
             final_acc=record.final_acc, trainability=record.trainability,
             total_epochs=record.total_epochs, total_macs=record.total_macs,
             wall_time=record.wall_time, base_hash=record.base_hash, keep=record.keep,
             base_acc=record.base_acc, pre_finetune_acc=record.pre_finetune_acc,
             extra_epochs=record.extra_epochs)
    if record.resume_state is not None:
        d["resume_hash"] = checkpoint.save(ckpt, record.resume_state)
    with open(meta, "w") as f:
        json.dump(d, f, indent=1)
    return meta


def load_record(m: ExperimentManifest, seed: int, workdir) -> RunRecord:
    meta, ckpt = _record_paths(workdir, m.hash, seed)
    if not os.path.exists(meta):
        raise FileNotFoundError(f"no stored run for this manifest and seed {seed}: {meta}")
    with open(meta) as f:
        d = json.load(f)
    curves = {p: AccuracyCurve(c["acc"], LRSchedule.parse(c["schedule"], c["epochs"], c["final_lr"]))
              for p, c in d["curves"].items()}
    resume = checkpoint.load(ckpt, d["resume_hash"]) if "resume_hash" in d else None
    return RunRecord(ExperimentManifest.from_dict(d["manifest"]), d["seed"], curves, d["final_acc"],
                     d["trainability"], d["total_epochs"], d["total_macs"], d["wall_time"],
                     d["base_hash"], d["keep"], d["base_acc"], d["pre_finetune_acc"],
                     d["extra_epochs"], resume)
