"""Walk down the comparison-setup ladder by loosening one control at a time.

    python demos/setup_ladder.py
"""
from prunebench.manifest import ExperimentManifest
from prunebench.planner import classify_setup

a = ExperimentManifest(dataset="synthetic:classes=10,train=512,test=128,size=8",
                       model="resnet20", scratch_epochs=120, prune_epoch=30, prune_ratio=0.5,
                       ft_epochs=90, ft_init_lr=0.1, base_seed=0)

steps = [("same manifest", {}),
         ("pruning-phase LR schedule", dict(prune_lr_schedule="0:1e-2")),
         ("pruning-phase epochs", dict(prune_epochs=5)),
         ("finetune LR 1e-2", dict(ft_init_lr=0.01)),
         ("finetune 60 epochs", dict(ft_epochs=60)),
         ("another base model", dict(base_seed=1)),
         ("ratio 0.9", dict(prune_ratio=0.9))]

b = a
for label, change in steps:
    b = b.replace(**change) if change else b
    print(f"{'+ ' + label:<30} {classify_setup(a, b)}")

# scratch training of the pruned shape for the same 120 epochs
print(f"{'scratch, 120 epochs':<30} {classify_setup(a, a.replace(pipeline='scratch'))}")
