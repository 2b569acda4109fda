"""``prunebench`` command line.

Exit codes: 0 success, 1 error raised by the library, 2 bad usage.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from collections import defaultdict

from . import checkpoint, flops, planner, pruner, runner, zoo
from .manifest import ExperimentManifest
from .metrics import Summary, mean_std


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def cmd_zoo(args):
    print(f"{'name':<20} {'input':>11} {'params':>12} {'MACs':>15}")
    for e in zoo.ZOO.values():
        size = f"3x{e.input_size}x{e.input_size}"
        print(f"{e.name:<20} {size:>11} {e.expected_params:>12,d} {e.expected_macs:>15,d}")


def cmd_flops(args):
    g = zoo.build(args.model, input_size=args.input_size, seed=None)
    cfg = pruner.PruneConfig(ratio=args.ratio, stage_ratios=args.prune_vector)
    small = pruner.prune_architecture(g, pruner.plan(g, cfg))
    dense = flops.count(g, convention=args.convention)
    pruned = flops.count(small, convention=args.convention)
    if args.rows:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["layer", "dense_" + args.convention, "pruned_" + args.convention,
                    "dense_params", "pruned_params"])
        for (name, m1, p1), (_, m2, p2) in zip(dense.rows(), pruned.rows()):
            w.writerow([name, m1, m2, p1, p2])
        return
    print(pruned.table() if (args.ratio or args.prune_vector) else dense.table())
    print(f"dense {args.convention}: {dense.total:,d}  pruned: {pruned.total:,d}  "
          f"params {dense.total_params:,d} -> {pruned.total_params:,d}")
    print(f"speedup {flops.speedup(dense, pruned):.3f}x")


def cmd_plan(args):
    if args.manifest:
        p = ExperimentManifest.load(args.manifest).plan()
        print(p.label())
        print("pretrain:", "none" if p.pretrain is None else p.pretrain)
        print("finetune:", p.finetune)
        return
    if args.squeeze is not None:
        print(planner.squeeze_prune_epoch(args.squeeze, args.speedup))
        return
    if args.scratch_b:
        k1, k2 = args.scratch_b
        print(planner.scratch_b_epochs(planner.BudgetSpec(k1, k2, args.speedup, 1.0)))
        return
    if args.epochs is None or args.init_lr is None or args.final_lr is None:
        raise SystemExit("plan: give --epochs/--init-lr/--final-lr, --manifest, --squeeze or --scratch-b")
    s = planner.synthesize(args.kind, args.epochs, args.init_lr, args.final_lr, args.stage_cap)
    print(s)
    if args.kind == planner.COSINE:
        print(f"first stage (lr >= init/10): {s.first_stage_length} epochs")


def cmd_classify(args):
    a = ExperimentManifest.load(args.a)
    b = ExperimentManifest.load(args.b)
    print(planner.classify_setup(a, b))


def _seeds(m, args):
    return [args.seed] if args.seed is not None else list(m.seeds)


def cmd_pretrain(args):
    m = ExperimentManifest.load(args.manifest)
    ds = runner.dataset_for(m.dataset)
    for s in _seeds(m, args):
        _, accs, h = runner.pretrained_base(m, s, ds, args.workdir)
        last = f"{accs[-1]:.2f}" if accs else "n/a"
        print(f"seed {s}: base {h} (final pretrain acc {last})")


def cmd_prune(args):
    m = ExperimentManifest.load(args.manifest)
    ds = runner.dataset_for(m.dataset)
    out = os.path.join(args.workdir, "pruned")
    os.makedirs(out, exist_ok=True)
    for s in _seeds(m, args):
        base, _, h = runner.pretrained_base(m, s, ds, args.workdir)
        cfg = pruner.PruneConfig(m.prune_ratio, m.prune_vector, m.prune_criterion, seed=s)
        keep = pruner.plan(base, cfg)
        small = pruner.rebuild_small_dense(base, keep)
        k = flops.speedup(flops.count(base), flops.count(small))
        path = os.path.join(out, f"{m.hash[:16]}-s{s}.ckpt")
        ch = checkpoint.save(path, small.state())
        acc = runner.evaluate(small, ds.test_x, ds.test_y)
        print(f"seed {s}: base {h[:12]} -> {path} ({ch[:12]}), speedup {k:.3f}x, "
              f"acc before finetuning {acc:.2f}")


def _run_and_store(args, pipeline_ok):
    m = ExperimentManifest.load(args.manifest)
    if m.pipeline not in pipeline_ok:
        raise ValueError(f"manifest pipeline is {m.pipeline!r}; this command runs {pipeline_ok[0]!r}")
    records = []
    for s in _seeds(m, args):
        r = runner.run(m, s, args.workdir)
        runner.save_record(r, args.workdir)
        records.append(r)
        t = "n/a" if r.trainability is None else f"{r.trainability:.2f}"
        print(f"seed {s}: final {r.final_acc:.2f}  T {t}  epochs {r.total_epochs}  "
              f"MACs {r.total_macs:,d}")
    if args.results:
        runner.append_results(args.results, records)


def cmd_finetune(args):
    _run_and_store(args, ("prune-finetune",))


def cmd_scratch(args):
    _run_and_store(args, ("scratch",))


def cmd_extend(args):
    m = ExperimentManifest.load(args.manifest)
    records = []
    for s in _seeds(m, args):
        r = runner.extend_finetune(runner.load_record(m, s, args.workdir), args.extra)
        records.append(r)
        print(f"seed {s}: +{args.extra} epochs -> final {r.final_acc:.2f}  T {r.trainability:.2f}")
    if args.results:
        runner.append_results(args.results, records)


def cmd_xval(args):
    a = ExperimentManifest.load(args.a)
    b = ExperimentManifest.load(args.b)
    verdict, records = runner.cross_validate(a, b, tie_tol=args.tie_tol, workdir=args.workdir)
    for name, mean in verdict.means.items():
        print(f"{name:<8} {mean:.2f}")
    print(verdict)
    if args.results:
        runner.append_results(args.results, [r for rs in records.values() for r in rs])


def cmd_report(args):
    rows = runner.read_results(args.results)
    groups = defaultdict(list)
    for r in rows:
        if r["phase"].startswith("summary"):
            groups[(r["manifest_hash"], r["phase"])].append(r)
    print(f"{'manifest':<12} {'run':<12} {'n':>2} {'final acc (mean±std)':>22} "
          f"{'T (mean±std)':>16} {'epochs':>7} {'MACs':>18}")
    for (h, phase), rs in groups.items():
        fm, fs = mean_std([float(r["final_acc"]) for r in rs])
        ts = [float(r["T"]) for r in rs if r["T"]]
        t = "n/a" if not ts else "{:.2f}±{:.2f}".format(*mean_std(ts))
        print(f"{h[:12]:<12} {phase:<12} {len(rs):>2} {Summary.fmt(fm, fs, len(rs)):>22} "
              f"{t:>16} {rs[0]['total_epochs']:>7} {int(rs[0]['total_MACs']):>18,d}")
    print("std is the sample (n-1) standard deviation over seeds")
    if args.curves:
        _write_curves(rows, args.curves)


def _write_curves(rows, path):
    """Mean test accuracy per (manifest, phase, epoch) with an LR-decay marker column."""
    acc = defaultdict(list)
    lrs = {}
    for r in rows:
        if r["phase"].startswith("summary"):
            continue
        key = (r["manifest_hash"], r["phase"], int(r["epoch"]))
        acc[key].append(float(r["test_acc"]))
        lrs[key] = r["lr"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["manifest_hash", "phase", "epoch", "lr", "lr_decay", "mean_acc", "n"])
        for key in sorted(acc):
            h, phase, e = key
            prev = lrs.get((h, phase, e - 1))
            decay = int(prev is not None and float(lrs[key]) < float(prev))
            w.writerow([h, phase, e, lrs[key], decay, f"{mean_std(acc[key])[0]:.4f}", len(acc[key])])


def build_parser():
    p = argparse.ArgumentParser(prog="prunebench", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("zoo", help="list zoo models with parameter and MAC counts")
    s.add_argument("action", nargs="?", default="list", choices=["list"])
    s.set_defaults(func=cmd_zoo)

    s = sub.add_parser("flops", help="MAC/param accounting and speedup of a pruned graph")
    s.add_argument("--model", required=True)
    s.add_argument("--ratio", type=float, default=0.0, help="uniform pruning ratio")
    s.add_argument("--prune-vector", type=_floats, default=None,
                   help="per-stage ratios, e.g. 0,0.6,0.6,0.6,0.21,0")
    s.add_argument("--input-size", type=int, default=None)
    s.add_argument("--convention", choices=list(flops.CONVENTIONS), default="MAC")
    s.add_argument("--rows", action="store_true", help="machine-readable per-layer CSV")
    s.set_defaults(func=cmd_flops)

    s = sub.add_parser("plan", help="synthesize LR schedules and budget arithmetic")
    s.add_argument("--epochs", type=int)
    s.add_argument("--init-lr", type=float)
    s.add_argument("--final-lr", type=float, help="final LR (step) or minimum LR (cosine)")
    s.add_argument("--kind", choices=[planner.STEP, planner.COSINE], default=planner.STEP)
    s.add_argument("--stage-cap", type=int, default=30)
    s.add_argument("--manifest", help="print the P/F plan of a manifest")
    s.add_argument("--squeeze", type=int, metavar="P", help="pruning epoch to squeeze by --speedup")
    s.add_argument("--scratch-b", type=int, nargs=2, metavar=("K1", "K2"),
                   help="scratch epochs matching K1 pretrain + K2 finetune epochs at --speedup")
    s.add_argument("--speedup", type=float, default=1.0)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("classify", help="strictest comparison setup two manifests satisfy")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_classify)

    for name, func, text in [("pretrain", cmd_pretrain, "train or load the cached base model"),
                             ("prune", cmd_prune, "prune the base model and store the small-dense checkpoint"),
                             ("finetune", cmd_finetune, "full pretrain -> prune -> finetune run"),
                             ("scratch", cmd_scratch, "train a (pruned-shape) model from scratch"),
                             ("extend", cmd_extend, "extend a stored run's first finetune LR stage")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("manifest")
        s.add_argument("--workdir", default="prunebench-work")
        s.add_argument("--seed", type=int, default=None, help="run one seed instead of all")
        if name in ("finetune", "scratch", "extend"):
            s.add_argument("--results", help="results CSV to append to")
        if name == "extend":
            s.add_argument("--extra", type=int, required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("xval", help="cross-validate two pruning methods with two finetune recipes")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--workdir", default="prunebench-work")
    s.add_argument("--results")
    s.add_argument("--tie-tol", type=float, default=0.0)
    s.set_defaults(func=cmd_xval)

    s = sub.add_parser("report", help="mean±std tables from a results CSV")
    s.add_argument("results")
    s.add_argument("--curves", help="write per-epoch mean curves (CSV) here")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except SystemExit as e:
        if isinstance(e.code, str):
            parser.print_usage(sys.stderr)
            print(e.code, file=sys.stderr)
            return 2
        raise
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        print(f"prunebench: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
