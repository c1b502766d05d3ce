"""Modus tollens dominates when one whole class is rare.

Trains the unnormalized objective on a task where chairs are about 110 times
rarer than every other class and prints the diagnostics at each logged step.

Run: python demos/imbalance_diagnostics.py   (about 10 s)
"""
from diffreason.diagnostics import format_records
from diffreason.fol import parse_kb
from diffreason.synth import SynthConfig, generate, part_whole_kb_text
from diffreason.train import TrainConfig, train

rare = 0.00091
prior = (rare,) + ((1 - rare) / 10,) * 10
kb = parse_kb(part_whole_kb_text(structural=False))
ds = generate(SynthConfig(seed=0, type_prior=prior, n_labeled_scenes=20), kb)
res = train(ds, kb, TrainConfig(mode="unnormalized", iterations=300, log_every=50,
                                dr_weight=0.03, batch_size_unlabeled=512, seed=0))
print(format_records(res.metrics))
for m in res.metrics:
    print(f"iteration {m.iteration:4d}: avg_d_mt / avg_d_mp = {m.avg_d_mt / m.avg_d_mp:6.1f}")
