"""When is the product-logic degree the exact probability of a knowledge base?

Run: python demos/oracle_check.py
"""
import numpy as np

from diffreason.fol import parse_kb
from diffreason.grounding import GroundAtom, Scene
from diffreason.model import DegreeTable
from diffreason.oracle import check_prl_exactness, random_disjoint_instance

scene = Scene("one", np.zeros((1, 1)))
p = DegreeTable({GroundAtom("P", (0,)): 0.7, GroundAtom("Q", (0,)): 0.5})

for text in ("pred P/1; pred Q/1; forall x: P(x) & Q(x)",
             "pred P/1; forall x: P(x) & P(x)",
             "pred P/1; pred Q/1; forall x: P(x) -> Q(x)",
             "pred P/1; forall x: P(x) | ~P(x)"):
    rep = check_prl_exactness(parse_kb(text), scene, p)
    print(f"{text.split(';')[-1].strip():28s} exact {rep.exact:.4f}  prl {rep.prl:.4f}  "
          f"disjoint atoms: {rep.assumptions_hold}")

rng = np.random.default_rng(0)
worst = max(check_prl_exactness(*random_disjoint_instance(rng)).abs_diff for _ in range(200))
print(f"\n200 random instances with disjoint atoms: worst |exact - prl| = {worst:.2e}")
