"""Generator residual of the saddle profile and energy ratio over a wide eps range.

Shows where the residual starts to decay for each built-in landscape.

    python3 scripts/residual_scan.py --potential double_well
"""
import argparse

import numpy as np

from metastab import asymptotics as asy
from metastab import landscape as lsc
from metastab import potential as pot
from metastab.errors import ModelAssumptionError


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--potential", default="double_well")
    ap.add_argument("--eps", default="0.1,0.05,0.02,0.01,0.005,0.002,0.001")
    a = ap.parse_args()
    lg = lsc.analyze(pot.builtin_spec(a.potential))
    q = np.zeros(lg.K)
    q[-1] = 1.0
    print(f"max admissible eps (disjoint boxes): {asy.max_admissible_epsilon(lg):.4g}")
    print(f"{'eps':>8} {'residual':>10} {'energy ratio':>13}")
    for eps in (float(e) for e in a.eps.split(",")):
        sc = asy.EpsilonScale.for_landscape(lg, eps)
        Z = asy.partition_function(lg.spec, eps, "quadrature", lg)
        res = max(asy.generator_residual(lg.spec, asy.saddle_box(k.saddle, k.v1, sc), sc, Z)
                  for k in lg.links)
        try:
            ratio = asy.dirichlet_energy(asy.build_test_function(q, lg, sc), Z).ratio
        except ModelAssumptionError:
            ratio = float("nan")
        print(f"{eps:8.4g} {res:10.4g} {ratio:13.6g}")


if __name__ == "__main__":
    main()
