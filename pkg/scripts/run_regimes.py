"""Checkpoint times and H^-1 decay of the pinch mixer in the three regimes.

Uses exact checkpoint patterns only, so it runs in seconds:

    python scripts/run_regimes.py --grid 1024 --nmax 6
"""
import argparse
import math

from tmix.mixers import build_pinch_mixer, nominal_pattern
from tmix.norms import hm1
from tmix.selfsimilar import make_schedule
from tmix.torus import TorusGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=1024)
    ap.add_argument("--nmax", type=int, default=6)
    args = ap.parse_args()

    grid = TorusGrid(args.grid)
    pinch = build_pinch_mixer(1e-3, grid)
    h = [hm1(nominal_pattern(pinch, n, grid)) for n in range(args.nmax + 1)]
    for s in (0.5, 1.0, 2.0):
        sch = make_schedule(s, 2.0, pinch.lam, pinch, M=h[0])
        t_inf = "inf" if math.isinf(sch.T_inf) else f"{sch.T_inf:.6g}"
        print(f"s = {s:g}: {sch.regime}, tau = {sch.tau:.6g}, T_inf = {t_inf}")
        for n, v in enumerate(h):
            print(f"  n = {n:2d}  T_n = {sch.T(n):12.6g}  hm1 = {v:.6e}")


if __name__ == "__main__":
    main()
