"""Truncated-box eigenvalues of the flat example against the beta-preimage plus orthant prediction."""

import argparse

import numpy as np

from hicontrast.corrector import compute_ahom
from hicontrast.examples import build_flat_example
from hicontrast.fibers import box_spectrum, orthant_spectrum
from hicontrast.spectral import BetaFunction, box_limit_spectrum


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--periods", type=int, nargs="+", default=[4, 8])
    ap.add_argument("--orthant-periods", type=int, default=32)
    ap.add_argument("--window", type=float, default=5.0)
    ap.add_argument("--show", type=int, default=8)
    args = ap.parse_args()

    cfg = build_flat_example(n=args.n)
    g, c, s = cfg.geometry, cfg.coeff, cfg.kernel
    hom, _ = compute_ahom(g, c, s)
    beta = BetaFunction(cfg.soft_operator(), g.cell_volume)
    orth = [orthant_spectrum(g, c, s, side, args.orthant_periods, 0.0) for side in ("left", "right")]
    pred = box_limit_spectrum(beta, hom.A, [1.0], orth, args.window)
    for N in args.periods:
        ev = box_spectrum(g, c, s, N)[: args.show]
        print(f"N = {N}")
        for k, (v, d) in enumerate(zip(ev, pred.distance(ev))):
            print(f"  {k:3d} {v:12.6f}  distance to prediction {d:.2e}")


if __name__ == "__main__":
    main()
