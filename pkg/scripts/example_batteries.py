"""Run the verification batteries of the three soft-spectrum examples and print each check."""

import argparse
import json

from hicontrast.examples import verify_flat, verify_infinite, verify_twosided


def show(rep):
    print(f"== {rep['example']}: {'passed' if rep['passed'] else 'FAILED'}")
    for name, chk in rep["checks"].items():
        value = json.dumps(chk["value"]) if not isinstance(chk["value"], float) else f"{chk['value']:.6g}"
        if len(value) > 70:
            value = value[:67] + "..."
        print(f"  {'ok ' if chk['pass'] else 'BAD'} {name:34s} {value}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ns", type=int, nargs="+", default=[256, 512, 1024])
    args = ap.parse_args()
    show(verify_flat(ns=tuple(args.ns)))
    show(verify_infinite(ns=tuple(args.ns)))
    show(verify_twosided(n=max(args.ns)))


if __name__ == "__main__":
    main()
