"""Trace-process pilot on the 2D triple well: holding times against the chain y.

    python3 scripts/pilot_triple_well_2d.py --eps 0.1 --runs 4 --horizon 80
"""
import argparse
import time

import numpy as np

from metastab import landscape as lsc
from metastab import potential as pot
from metastab import simulate as sim
from metastab import verify as ver
from metastab.chains import beta_matrix, build_chain_x, build_chain_y


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--runs", type=int, default=4)
    ap.add_argument("--horizon", type=float, default=80.0)
    ap.add_argument("--seed", type=int, default=20261016)
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    lg = lsc.analyze(pot.builtin_spec("triple_well_2d"))
    cy = build_chain_y(lg, beta_matrix(build_chain_x(lg), lg.s_star))
    t0 = time.time()
    logs = sim.batch(sim.SimConfig(lg.spec, a.eps, start=1), lg, a.horizon, a.runs, a.seed,
                     a.threads)
    rep = ver.verify(logs, cy)
    emp = rep.empirical
    print(f"{emp.n_jumps} jumps in {time.time() - t0:.0f} s, "
          f"Delta fraction {np.mean(emp.delta_fractions):.3f}")
    for c in rep.criteria:
        print(c.line())


if __name__ == "__main__":
    main()
