"""Static accounting for the zoo: dense sizes and uniform-ratio speedups.

    python demos/flops_tables.py
"""
from prunebench import flops, pruner, zoo


def pruned(g, ratio=0.0, vector=None):
    cfg = pruner.PruneConfig(ratio=ratio, stage_ratios=vector)
    return flops.count(pruner.prune_architecture(g, pruner.plan(g, cfg)))


for name, classes in (("resnet56", 10), ("vgg19", 100)):
    r = flops.count(zoo.build(name, num_classes=classes, seed=None), convention="2xMAC")
    print(f"{name:<10} params {r.total_params / 1e6:6.3f}M  2xMAC {r.total / 1e9:.3f}G")

# ResNet34 at 224px, uniform ratio on the first conv of every basic block
g = zoo.build("resnet34-imagenet", seed=None)
dense = flops.count(g)
print(f"\nresnet34 dense {dense.total / 1e9:.3f}G MACs")
print(f"{'ratio':>6} {'GMACs':>7} {'speedup':>8}")
for ratio in (0.1, 0.3, 0.5, 0.7, 0.9, 0.95):
    p = pruned(g, ratio)
    print(f"{ratio:>6} {p.total / 1e9:7.3f} {flops.speedup(dense, p):7.2f}x")

# ResNet50 stage vectors: [stem, stage1..4, classifier]
g = zoo.build("resnet50-imagenet", seed=None)
dense = flops.count(g)
print(f"\nresnet50 dense {dense.total / 1e9:.3f}G MACs")
for vec in ((0, .6, .6, .6, .21, 0), (0, .74, .74, .6, .21, 0)):
    print(f"  {list(vec)} -> {flops.speedup(dense, pruned(g, vector=vec)):.3f}x")
