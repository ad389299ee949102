"""Tabulate beta for the flat example and list its poles, roots and the set {beta >= 0}."""

import argparse

import numpy as np

from hicontrast.examples import build_flat_example
from hicontrast.spectral import BetaFunction, nonnegative_set, tabulate_beta


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--window", type=float, default=2.0)
    ap.add_argument("--points", type=int, default=41)
    args = ap.parse_args()

    cfg = build_flat_example(n=args.n)
    beta = BetaFunction(cfg.soft_operator(), cfg.geometry.cell_volume)
    table = tabulate_beta(beta, np.linspace(0.0, args.window, args.points))
    print(f"{'lambda':>10} {'beta':>14} {'condition':>12}")
    for lam, val, near, cond in table.rows():
        print(f"{lam:10.4f} {val:14.6g} {cond:12.3g}{'  (pole)' if near else ''}")
    print("poles:", np.round(table.poles, 6).tolist())
    print("roots:", [round(r, 6) for r in table.roots])
    print("beta >= 0 on", nonnegative_set(beta, args.window).intervals)


if __name__ == "__main__":
    main()
