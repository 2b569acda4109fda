"""Desk-scale learning-rate study: ResNet14, 10-class synthetic 8x8 data, 3 seeds.

Pruned in one shot at ratio 0.9 after 30 pretraining epochs, then finetuned
for 20 epochs from initial LR 1e-1 or 1e-3; the small-LR runs are then
extended by 60 epochs in their first LR stage. A second part compares cosine
finetuning from 1e-2 and 1e-3 at ratio 0.7. Takes about 13 minutes on one core.

    python demos/lr_study.py [--workdir runs/] [--results results.csv]
"""
import argparse
import time

from prunebench import runner, studies

ap = argparse.ArgumentParser()
ap.add_argument("--workdir", default=None)
ap.add_argument("--results", default=None)
args = ap.parse_args()

t0 = time.time()
arms = studies.lr_effect(workdir=args.workdir)
for arm in arms.values():
    print(arm.line())
gap = arms["large"].final[0] - arms["small"].final[0]
closed = arms["extended"].final[0] - arms["small"].final[0]
print(f"gap {gap:.2f} points, extension closes {closed:.2f} ({closed / gap:.0%})")

cos = studies.cosine_effect(workdir=args.workdir)
for arm in cos.values():
    print(arm.line())
print(f"{time.time() - t0:.0f}s")

if args.results:
    recs = [r for group in (arms, cos) for arm in group.values() for r in arm.records]
    runner.append_results(args.results, recs)
