#!/usr/bin/env python3
"""Long-tailed class distributions: the subsampling rule, exactly.

Subsampling a balanced dataset into a geometric class profile keeps
round(N * mu^c) samples of class c, with mu chosen so the last class is
smaller than the first by exactly the requested imbalance factor. Shows
the realized counts across factors, then trains both variants on one
imbalanced split for a neutral side-by-side readout.
"""

import numpy as np

from exitweave.backbone import BackboneConfig, forward_all
from exitweave.datahub import gen_synthetic_gaussians, longtail_subsample
from exitweave.numkit import RngStream
from exitweave.trainer import TrainConfig, run_training
from exitweave.wpn import WpnConfig

root = RngStream(88)
classes = 6
balanced = gen_synthetic_gaussians(classes, 10, 200, 1.6, root.child("train"))
val = gen_synthetic_gaussians(classes, 10, 50, 1.6, root.child("val"), split="val")
test = gen_synthetic_gaussians(classes, 10, 80, 1.6, root.child("test"), split="test")

print(f"balanced source: {classes} classes x 200 samples")
print(f"{'factor':>7}  {'class counts':<34} {'max/min':>8}")
for factor in (5.0, 20.0, 50.0, 100.0):
    sub = longtail_subsample(balanced, factor, root.child(f"tail-{factor:g}"))
    counts = np.bincount(sub.labels, minlength=classes)
    ratio = counts.max() / counts.min()
    print(f"{factor:7g}  {str(counts.tolist()):<34} {ratio:8.2f}")
print("each class keeps a constant fraction of the previous one; the")
print("realized ratio deviates from the factor only by rounding the")
print("smallest class. The subsample is deterministic per stream and")
print("preserves the original sample order.")

factor = 20.0
tail = longtail_subsample(balanced, factor, root.child("tail"))
backbone_cfg = BackboneConfig(10, (12, 10), classes)
wpn_cfg = WpnConfig(2, hidden_width=32, hidden_depth=1, delta=0.8)

print(f"\ntraining on the {len(tail)}-sample imbalanced split (factor {factor:g}),")
print("testing on a balanced split; accuracy at the final exit:")
for variant in ("baseline", "learned"):
    cfg = TrainConfig(epochs=60, batch_size=40, alpha=0.1, variant=variant,
                      seed=1, q=0.75, interval=1)
    state, _ = run_training(cfg, backbone_cfg, wpn_cfg, tail, val)
    outs = forward_all(state.backbone, test.features, test.labels)
    final = outs.predictions[:, -1]
    per_class = [float((final[test.labels == c] == c).mean()) for c in range(classes)]
    overall = float((final == test.labels).mean())
    print(f"  {variant:9s}: overall {overall:.3f}  per class {np.round(per_class, 2)}")
print("\nat this miniature scale the two variants land close together; the")
print("imbalance robustness reported for the weighted objective emerges at")
print("much larger data and model sizes than a demo script can run.")
