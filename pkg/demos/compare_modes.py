"""Supervised vs unnormalized vs normalized training on the part/whole task.

Run: python demos/compare_modes.py [n_seeds]   (about 10 s per seed)
"""
import sys

import numpy as np

from diffreason.synth import SynthConfig, default_kb, generate
from diffreason.train import TrainConfig, evaluate, train

MODES = {
    "supervised": dict(mode="supervised"),
    "unnormalized": dict(mode="unnormalized", dr_weight=0.03),
    "normalized": dict(mode="normalized", mu=0.25, dr_weight=0.3),
}

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
kb = default_kb()
acc = {m: [] for m in MODES}
for seed in range(n_seeds):
    ds = generate(SynthConfig(seed=seed), kb)
    row = []
    for mode, kw in MODES.items():
        res = train(ds, kb, TrainConfig(seed=seed, iterations=300, **kw), diagnose=False)
        acc[mode].append(evaluate(res.params, ds.test)["type_accuracy"])
        row.append(f"{mode} {acc[mode][-1]:.3f}")
    print(f"seed {seed}: " + ", ".join(row), flush=True)

print("\nmean type accuracy")
for mode, vals in acc.items():
    print(f"  {mode:13s} {np.mean(vals):.4f}")
