"""Command-line front end.

Every command reads a problem configuration (a JSON file or a preset name),
writes a JSON report and, where tabular data exists, a CSV file into the
output directory. Exit codes: 0 success, 2 configuration error, 3 numerical
contract violation, 4 unsupported case.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble_soft_periodic
from .config import PRESETS, ProblemConfig, resolve
from .corrector import compute_ahom
from .errors import ConfigError, HicontrastError, NumericalError, UnsupportedError
from .examples import VERIFIERS, flat_inequalities
from .extension import (MaskedFunction, extension_check, mean_inequalities_check, mollify_decompose,
                        path_energy_check, support_contained)
from .fibers import (box_spectrum, convergence_study, fit_slope, full_theta_sweep, gap_scan,
                     limit_sets, orthant_spectrum, soft_theta_sweep)
from .geometry import verify_connectivity
from .kernel import validate_kernel
from .parallel import worker_count
from .spectral import (BetaFunction, SpectralSet, box_limit_spectrum, default_discrete_tol,
                       discrete_spectrum, essential_range, nonnegative_set, tabulate_beta)

log = logging.getLogger("hicontrast")

COMMANDS = ("validate", "ahom", "spectrum-soft", "beta", "limit-set", "box-spectrum", "sweep",
            "resolvent-rates", "example", "extension-check", "mollify-check", "study")


# ---------------------------------------------------------------- emission


def clean(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dump_json(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def csv_text(header: list[str], rows, comment: str) -> str:
    buf = io.StringIO()
    buf.write(comment + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Emitter:
    """Writes artifacts for one command; everything carries the resolved config."""

    def __init__(self, cfg: ProblemConfig, command: str, out_dir: Path):
        self.cfg = cfg
        self.command = command
        self.dir = out_dir
        self.written: list[str] = []
        self.formats = set(cfg.output.get("formats", ["json", "csv"]))

    def _write(self, name: str, text: str):
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            path = self.dir / name
            path.write_text(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {self.dir / name}: {exc}") from exc
        self.written.append(str(path))

    def json(self, result: dict, name: str | None = None):
        if "json" not in self.formats:
            return
        doc = {"command": self.command, "version": __version__, "config_hash": self.cfg.digest,
               "config": self.cfg.resolved, "result": result}
        self._write(name or f"{self.command}.json", dump_json(doc))

    def csv(self, header: list[str], rows, name: str | None = None):
        if "csv" not in self.formats:
            return
        self._write(name or f"{self.command}.csv", csv_text(header, rows, self.cfg.header()))


# ---------------------------------------------------------------- commands


def _workers(cfg: ProblemConfig) -> int:
    return worker_count(cfg.numerics.get("workers"))


def _window(cfg: ProblemConfig) -> float:
    return float(cfg.numerics["Lambda"])


def _eps_list(cfg: ProblemConfig, args) -> list[float]:
    if getattr(args, "eps", None):
        return [float(e) for e in args.eps]
    return [float(e) for e in cfg.numerics["eps"]]


def cmd_validate(cfg: ProblemConfig, args, em: Emitter) -> dict:
    kern = validate_kernel(cfg.kernel)
    conn = verify_connectivity(cfg.geometry, cfg.kernel)
    g = cfg.geometry
    coeff = cfg.coeff
    checks = {
        "kernel": kern.to_dict(),
        "connectivity": conn.to_dict(),
        "geometry": {"d": g.d, "n": g.n, "soft_volume": g.soft_volume,
                     "soft_cells": int(g.soft_flat.sum()), "stiff_cells": int((~g.soft_flat).sum())},
        "coefficients": {"alpha": list(coeff.alpha),
                         "lambda0_symmetric": bool(np.array_equal(coeff.lambda0, coeff.lambda0.T)),
                         "p_symmetric": bool(np.array_equal(coeff.p, coeff.p.T))},
    }
    if cfg.example is not None and cfg.example.name == "flat":
        d = cfg.example.derived
        ineq = flat_inequalities(cfg.example.params["gamma"], cfg.example.params["delta"],
                                 d["w0"], float(d["b"][0]))
        checks["construction_inequalities"] = ineq
    result = {"checks": checks,
              "all_passed": bool(kern.passed and conn.satisfied)}
    em.json(result)
    return result


def cmd_ahom(cfg: ProblemConfig, args, em: Emitter) -> dict:
    hom, chi = compute_ahom(cfg.geometry, cfg.coeff, cfg.kernel, cfg.numerics["J"])
    result = {"A_hom": hom.to_dict(), "corrector": chi.to_dict()}
    em.json(result)
    return result


def cmd_spectrum_soft(cfg: ProblemConfig, args, em: Emitter) -> dict:
    g = cfg.geometry
    op = assemble_soft_periodic(g, cfg.coeff, cfg.kernel, cfg.numerics["J"])
    ev = op.eigvalsh()
    ess = essential_range(op.diagonal, g, op.cells)
    tol = cfg.numerics["discrete_tol"] or default_discrete_tol(g.n)
    disc = discrete_spectrum(ev, ess, tol)
    sweep = soft_theta_sweep(g, cfg.coeff, cfg.kernel, cfg.numerics["n_theta"],
                             cfg.numerics["J"], _workers(cfg))
    em.csv(["index", "eigenvalue"], enumerate(ev))
    result = {"essential_range": ess.to_dict(), "discrete": disc.to_dict(), "discrete_tol": tol,
              "periodic_spectrum": SpectralSet.from_values(ev, sweep.merge_tol).to_dict(),
              "wholespace_spectrum": sweep.union.to_dict(), "sweep_merge_tol": sweep.merge_tol,
              "min_eigenvalue": float(ev[0]), "max_eigenvalue": float(ev[-1])}
    em.json(result)
    return result


def _beta(cfg: ProblemConfig) -> BetaFunction:
    op = assemble_soft_periodic(cfg.geometry, cfg.coeff, cfg.kernel, cfg.numerics["J"])
    return BetaFunction(op, cfg.geometry.cell_volume)


def cmd_beta(cfg: ProblemConfig, args, em: Emitter) -> dict:
    beta = _beta(cfg)
    Lam = _window(cfg)
    grid = np.linspace(0.0, Lam, int(cfg.numerics["beta_points"]))
    table = tabulate_beta(beta, grid, _workers(cfg))
    em.csv(["lambda", "beta", "is_near_pole", "condition"], table.rows())
    result = {"poles": table.poles.tolist(), "roots": table.roots,
              "nonnegative_set": nonnegative_set(beta, Lam).to_dict(),
              "soft_volume": beta.soft_volume, "derivative_at_zero": beta.derivative(0.0)}
    em.json(result)
    return result


def cmd_limit_set(cfg: ProblemConfig, args, em: Emitter) -> dict:
    Lam = _window(cfg)
    G, two_scale, sweep = limit_sets(cfg.geometry, cfg.coeff, cfg.kernel, cfg.numerics["n_theta"],
                                     Lam, cfg.numerics["J"], _workers(cfg))
    result = {"Lambda": Lam, "limit_set": G.to_dict(), "two_scale_set": two_scale.to_dict(),
              "soft_wholespace": sweep.union.to_dict()}
    em.json(result)
    return result


def cmd_box_spectrum(cfg: ProblemConfig, args, em: Emitter) -> dict:
    g = cfg.geometry
    if g.d != 1:
        raise UnsupportedError("box spectra are implemented for d = 1")
    num = cfg.numerics
    Lam = _window(cfg)
    hom, _ = compute_ahom(g, cfg.coeff, cfg.kernel, num["J"])
    beta = _beta(cfg)
    R = int(num["orthant_periods"])
    orth = [orthant_spectrum(g, cfg.coeff, cfg.kernel, s, R, 0.0, num["J"]) for s in ("left", "right")]
    length = int(num["box_length"])
    pred = box_limit_spectrum(beta, hom.A, [float(length)], orth, Lam, num["pole_resolution"])
    N = int(num["box_periods"])
    ev = box_spectrum(g, cfg.coeff, cfg.kernel, N, length, num["J"])
    ev = ev[ev <= Lam]
    dist = pred.distance(ev) if ev.size else np.zeros(0)
    em.csv(["index", "eigenvalue", "distance_to_prediction"], zip(range(ev.size), ev, dist))
    result = {"A_hom": hom.A.tolist(), "box_periods": N, "box_length": length,
              "orthant_periods": R, "prediction": pred.to_dict(),
              "orthants": [o.to_dict() for o in orth],
              "lowest": ev[:5].tolist(), "lowest_distance": dist[:5].tolist()}
    em.json(result)
    return result


def cmd_sweep(cfg: ProblemConfig, args, em: Emitter) -> dict:
    num = cfg.numerics
    rows, out = [], []
    for eps in _eps_list(cfg, args):
        sw = full_theta_sweep(cfg.geometry, cfg.coeff, cfg.kernel, eps, num["n_theta"], _window(cfg),
                              num["J"], _workers(cfg))
        rows.extend([eps, *r] for r in sw.rows())
        out.append({"eps": eps, **sw.to_dict()})
    d = cfg.geometry.d
    theta_cols = ["theta"] if d == 1 else [f"theta_{i + 1}" for i in range(d)]
    em.csv(["eps", *theta_cols, "band", "eigenvalue"], rows)
    result = {"sweeps": out}
    em.json(result)
    return result


def cmd_resolvent_rates(cfg: ProblemConfig, args, em: Emitter) -> dict:
    num = cfg.numerics
    hom, _ = compute_ahom(cfg.geometry, cfg.coeff, cfg.kernel, num["J"])
    eps_list = _eps_list(cfg, args)
    scans = [gap_scan(cfg.geometry, cfg.coeff, cfg.kernel, e, hom.A, num["n_theta_gap"], num["J"],
                      _workers(cfg)) for e in eps_list]
    rows = [[s.eps, *map(float, th), float(gp)] for s in scans for th, gp in zip(s.thetas, s.gaps)]
    d = cfg.geometry.d
    theta_cols = ["theta"] if d == 1 else [f"theta_{i + 1}" for i in range(d)]
    em.csv(["eps", *theta_cols, "gap"], rows)
    worst = [s.worst for s in scans]
    theta1 = float(num["theta1"])
    far = [float(s.beyond(theta1).max()) if s.beyond(theta1).size else None for s in scans]
    const = far[0] / eps_list[0] ** 2 if far and far[0] is not None else None
    result = {"eps": eps_list, "worst_gap": worst,
              "slope": fit_slope(eps_list, worst) if len(eps_list) > 1 else None,
              "theta1": theta1, "far_gap": far, "far_constant": const,
              "far_gap_over_eps2": [f / e**2 if f is not None else None for f, e in zip(far, eps_list)],
              "far_bound_holds": (all(f <= const * e**2 * (1 + 1e-9) for f, e in zip(far, eps_list))
                                  if const is not None else None)}
    em.json(result)
    return result


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def cmd_example(cfg: ProblemConfig, args, em: Emitter) -> dict:
    ex = cfg.example
    if ex is None:
        raise ConfigError("the example command needs an example preset")
    result = {"example": ex.to_dict()}
    if args.verify:
        p = dict(ex.params)
        workers = _workers(cfg)
        if ex.name == "flat":
            rep = VERIFIERS["flat"](p["gamma"], p["delta"], workers=workers)
        elif ex.name == "infinite":
            rep = VERIFIERS["infinite"](p["delta"], p["s"], workers=workers)
        else:
            reg = p["reg"] if p["reg"] > 0 else 1e-3
            rep = VERIFIERS["twosided"](p["delta"], p["kappa"], ex.geometry.n, reg)
        result["verification"] = rep
    else:
        op = ex.soft_operator()
        ev = op.eigvalsh()
        result["soft_spectrum"] = {"min": float(ev[0]), "max": float(ev[-1]), "size": int(ev.size)}
    em.json(result)
    return result


def cmd_extension_check(cfg: ProblemConfig, args, em: Emitter) -> dict:
    num = cfg.numerics
    g = cfg.geometry
    rng = np.random.default_rng(int(num["seed"]))
    trials = int(num["trials"])
    stiff = ~g.soft_mask
    periods = 4
    mask = np.tile(stiff, (periods,) * g.d)
    spacing = 1.0 / g.n
    worst_l2, worst_mean, c1 = 0.0, 0.0, None
    for _ in range(trials):
        u = MaskedFunction(rng.normal(size=mask.shape), mask, spacing, g.n)
        _, rep = extension_check(u)
        c1 = rep.c1
        worst_l2 = max(worst_l2, rep.l2_extended / (rep.c1 * rep.l2_masked))
        A = rng.random(mask.size) < rng.uniform(0.05, 0.9)
        B = rng.random(mask.size) < rng.uniform(0.05, 0.9)
        A[rng.integers(mask.size)] = True
        B[rng.integers(mask.size)] = True
        mrep = mean_inequalities_check(rng.normal(size=mask.size), A, B, spacing**g.d)
        worst_mean = max(worst_mean, mrep.point_lhs / mrep.point_rhs if mrep.point_rhs > 0 else 0.0,
                         mrep.mean_lhs / mrep.mean_rhs if mrep.mean_rhs > 0 else 0.0)
    coord = MaskedFunction(np.where(mask, _coordinate(mask.shape, spacing), 0.0), mask, spacing, g.n)
    _, ramp = extension_check(coord, outer_radius=cfg.kernel.r_a, inner_radius=cfg.kernel.r_a)
    path = path_energy_check(g, cfg.kernel, lambda x: x[:, 0], float(num["m_box"]), check=False)
    result = {"trials": trials, "c1": c1, "worst_l2_ratio": worst_l2, "worst_mean_ratio": worst_mean,
              "ramp": ramp.to_dict(), "path_energy": path.to_dict()}
    em.json(result)
    if not path.holds:
        raise NumericalError(f"path energy ratio {path.ratio} exceeds {path.c_r}")
    return result


def _coordinate(shape, spacing):
    return ((np.arange(shape[0]) + 0.5) * spacing).reshape((-1,) + (1,) * (len(shape) - 1)) \
        * np.ones(shape)


def cmd_mollify_check(cfg: ProblemConfig, args, em: Emitter) -> dict:
    g = cfg.geometry
    if g.d != 1:
        raise UnsupportedError("the mollifier decomposition is implemented for d = 1")
    rows = []
    for eps in _eps_list(cfg, args):
        periods = round(1 / eps)
        x = (np.arange(periods * g.n) + 0.5) / (periods * g.n)
        smooth = mollify_decompose(np.sin(2 * np.pi * x), eps, g, cfg.kernel, cfg.coeff)
        bump = np.where(np.abs(x - 0.5) < 0.1, np.cos(np.pi * (x - 0.5) / 0.2) ** 2, 0.0)
        local = mollify_decompose(bump, eps, g, cfg.kernel, cfg.coeff)
        rows.append({"eps": eps, "constant": smooth.constant, "norms": smooth.norms,
                     "energy": smooth.energy, "residual": smooth.residual,
                     "u_minus_smooth_over_eps": smooth.norms["u_minus_smooth_l2"] / eps,
                     "support_contained": support_contained(local)})
    consts = [r["constant"] for r in rows]
    em.csv(["eps", "constant", "smooth_h1", "corrector_l2", "soft_l2", "u_minus_smooth_over_eps"],
           [[r["eps"], r["constant"], r["norms"]["smooth_h1"], r["norms"]["corrector_l2"],
             r["norms"]["soft_l2"], r["u_minus_smooth_over_eps"]] for r in rows])
    result = {"rows": rows, "max_constant": max(consts),
              "support_contained": all(r["support_contained"] for r in rows)}
    em.json(result)
    return result


def cmd_study(cfg: ProblemConfig, args, em: Emitter) -> dict:
    num = cfg.numerics
    eps_list = _eps_list(cfg, args)
    hom, _ = compute_ahom(cfg.geometry, cfg.coeff, cfg.kernel, num["J"])
    rep = convergence_study(cfg.geometry, cfg.coeff, cfg.kernel, eps_list, _window(cfg), hom.A,
                            num["n_theta"], num["n_theta_gap"], float(num["theta1"]),
                            gaps=not args.no_gaps, J=num["J"], workers=_workers(cfg))
    em.csv(["eps", "hausdorff", "worst_gap"],
           [[r.eps, r.hausdorff, r.worst_gap] for r in rep.rows])
    result = rep.to_dict()
    em.json(result)
    return result


HANDLERS = {
    "validate": cmd_validate, "ahom": cmd_ahom, "spectrum-soft": cmd_spectrum_soft,
    "beta": cmd_beta, "limit-set": cmd_limit_set, "box-spectrum": cmd_box_spectrum,
    "sweep": cmd_sweep, "resolvent-rates": cmd_resolvent_rates, "example": cmd_example,
    "extension-check": cmd_extension_check, "mollify-check": cmd_mollify_check, "study": cmd_study,
}


# ---------------------------------------------------------------- entry point


def _apply_overrides(raw: dict, items) -> dict:
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value")
        key, value = item.split("=", 1)
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return raw


def _raw_config(args) -> tuple[dict, Path | None]:
    if args.command == "example":
        raw = {"preset": args.name}
        params = _parse_params(args.param)
        if params:
            raw["params"] = params
        return raw, None
    src = args.config
    if src in PRESETS:
        return {"preset": src}, None
    path = Path(src)
    try:
        return json.loads(path.read_text()), path.parent
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hicontrast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "example":
            p.add_argument("name", choices=["flat", "infinite", "twosided"])
            p.add_argument("--param", action="append", metavar="KEY=VALUE",
                           help="example parameter, e.g. gamma=0.1 or n=512")
            p.add_argument("--verify", action="store_true", help="run the verification battery")
        else:
            p.add_argument("config", help="JSON configuration file or preset name "
                                          f"({', '.join(sorted(PRESETS))})")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a configuration entry (value parsed as JSON)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--workers", type=int, help="parallelism degree")
        if name in ("sweep", "resolvent-rates", "mollify-check", "study"):
            p.add_argument("--eps", type=float, nargs="+", help="epsilon values")
        if name == "study":
            p.add_argument("--no-gaps", action="store_true", help="skip the resolvent gaps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out) if args.out else None
    try:
        raw, base = _raw_config(args)
        raw = _apply_overrides(raw, args.set)
        if args.command == "example" and "n" in raw.get("params", {}):
            raw.setdefault("numerics", {})["n"] = int(raw["params"].pop("n"))
        if args.workers is not None:
            raw.setdefault("numerics", {})["workers"] = args.workers
        cfg = resolve(raw, base)
        out_dir = out_dir or Path(cfg.output["dir"])
        em = Emitter(cfg, args.command, out_dir)
        HANDLERS[args.command](cfg, args, em)
    except HicontrastError as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc),
                "exit_code": exc.exit_code}
        if getattr(exc, "suggested_cutoff", None) is not None:
            diag["suggested_cutoff"] = exc.suggested_cutoff
        sys.stderr.write(dump_json(diag))
        if out_dir is not None:
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                (out_dir / f"{args.command}.error.json").write_text(dump_json(diag))
            except OSError:
                pass
        return exc.exit_code
    for path in em.written:
        print(path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
