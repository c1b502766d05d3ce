"""Chair rule on a two-object scene: degrees, loss and MP/MT weights.

Run: python demos/chair_example.py
"""
import numpy as np

from diffreason.fol import parse_kb
from diffreason.grounding import GroundAtom, Scene
from diffreason.model import DegreeTable
from diffreason.prl import evaluate, forall_loss, mp_mt_weights

KB = """
pred chair/1 @types; pred cushion/1 @types; pred armRest/1 @types; pred partOf/2;
forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)
"""

a, b = 0, 1
unary = {"chair": (0.9, 0.4), "cushion": (0.05, 0.5), "armRest": (0.05, 0.1)}
part_of = {(a, a): 0.001, (b, b): 0.001, (a, b): 0.01, (b, a): 0.95}

table = {GroundAtom(p, (o,)): v for p, vals in unary.items() for o, v in enumerate(vals)}
table.update({GroundAtom("partOf", k): v for k, v in part_of.items()})
source = DegreeTable(table)

kb = parse_kb(KB)
rule = kb.formulas[0]
scene = Scene("demo", np.zeros((2, 1)))

print("binding        degree    d_mp      d_mt")
for x in (a, b):
    for y in (a, b):
        binding = {"x": x, "y": y}
        w = mp_mt_weights(rule, binding, scene, source)
        print(f"x={'ab'[x]}, y={'ab'[y]}    {float(evaluate(rule, binding, scene, source)):.5f}   "
              f"{w.d_mp:.5f}   {w.d_mt:.5f}")

loss = forall_loss(rule, [scene], source)
print(f"\nforall loss {loss:.5f}, degree of the quantified rule exp(-loss) = {np.exp(-loss):.5f}")
print("x=a, y=b is the interesting binding: b looks like a part of a,\n"
      "so the rule pushes either chair(a) down (MT) or the part labels up (MP).")
