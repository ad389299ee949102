"""The three worked soft-component examples: flat profile, infinite discrete spectrum, two-sided."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_soft_periodic
from .errors import ConfigError
from .geometry import CellGeometry, CoefficientField, build_geometry, cell_averages
from .kernel import KernelSpec, tent_kernel, validate_kernel, windowed_kernel
from .parallel import ordered_map
from .spectral import (SpectralSet, default_discrete_tol, discrete_spectrum, essential_range,
                       rayleigh_minmax, rayleigh_quotient)


@dataclass(eq=False)
class ExampleConfig:
    name: str
    geometry: CellGeometry
    kernel: KernelSpec
    coeff: CoefficientField
    params: dict
    derived: dict = field(default_factory=dict)
    essential: SpectralSet | None = None      # analytic essential range of the multiplier
    witnesses: dict = field(default_factory=dict)

    def soft_operator(self):
        return assemble_soft_periodic(self.geometry, self.coeff, self.kernel)

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.geometry.n, "params": self.params,
                "derived": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                            for k, v in self.derived.items()},
                "essential_range": self.essential.to_dict() if self.essential else None}


def _check(value, passed) -> dict:
    return {"value": value, "pass": bool(passed)}


# ---------------------------------------------------------------- flat profile


def flat_profile(gamma: float, delta: float, j_max: int = 200):
    """Even profile on (-1/2, 1/2): w(0) = delta, w(b_j) = 1/j + delta for j >= 2, affine in
    between, and w = w0 on [b_1, 1/2], so w is continuous with min delta and max w0.

    Returns (w callable, w0, breakpoints b_j).
    """
    if not 0 < gamma < 0.25 or not 0 < delta < 0.5:
        raise ConfigError("flat example needs 0 < gamma < 1/4 and 0 < delta < 1/2")
    b1 = gamma / (2 * (1 - gamma))
    j = np.arange(1, j_max + 1)
    b = b1 * gamma ** (j - 1.0)
    wj = 1.0 / j + delta
    # integral over (0, b_2) of the affine part; the tail below b_{j_max} is at most b_{j_max}
    rest = float(np.sum((b[1:-1] - b[2:]) * 0.5 * (wj[1:-1] + wj[2:]))) + b[-1] * delta
    # int_0^{1/2} w = 1/2 is linear in w0 (w0 enters on [b_2, b_1] and [b_1, 1/2])
    w0 = (0.5 - rest - 0.5 * (b[0] - b[1]) * wj[1]) / ((0.5 - b[0]) + 0.5 * (b[0] - b[1]))
    if not 1 < w0 < 1 + 2 * gamma:
        raise ConfigError(f"normalisation gives w0 = {w0}, outside (1, 1 + 2 gamma)")
    wj[0] = w0
    bb, ww = b[::-1], wj[::-1]

    def w(y):
        t = np.abs(np.asarray(y, dtype=float))
        inner = np.interp(t, np.concatenate([[0.0], bb]), np.concatenate([[delta], ww]))
        return np.where(t < b1, inner, w0)

    return w, w0, b


def flat_inequalities(gamma: float, delta: float, w0: float, b1: float) -> dict:
    """Sufficient smallness conditions of the construction (diagnostics only)."""
    half = 2 * (0.25 - b1)                     # soft part of the flat interval, both sides
    j = np.arange(1, 400)
    tail = float(np.sum(gamma**j * ((j + 1) * (1 / j + delta)) ** 2))
    return {"flat_block_upper": _check(half * w0, half * w0 < 0.55),
            "flat_block_lower": _check(half * (w0 - delta), half * (w0 - delta) > 0.45),
            "series_bound": _check(tail, tail < 0.1)}


def build_flat_example(gamma: float = 1 / 8, delta: float = 0.05, n: int = 256) -> ExampleConfig:
    """Tent kernel; soft set (1/4, 3/4) with the profile dip at the cell centre; p = w w."""
    w, w0, b = flat_profile(gamma, delta)
    geom = build_geometry(1, n, soft_intervals=[("1/4", "3/4")])
    shifted = lambda y: w(np.asarray(y) - 0.5)
    brk = [0.5 + s * x for x in b[b > 1.0 / (64 * n)] for s in (-1, 1)] + [0.5]
    wc = cell_averages(shifted, n, brk)
    coeff = CoefficientField.separable(geom, wc)
    integral = float(wc.mean())
    return ExampleConfig(
        "flat", geom, tent_kernel(), coeff, {"gamma": gamma, "delta": delta},
        {"w0": w0, "b": b[:12], "w_integral": integral, "w_cells": wc,
         "inequalities": flat_inequalities(gamma, delta, w0, b[0])},
        SpectralSet.interval(delta, w0, "essential range"))


# ---------------------------------------------------------------- infinite discrete spectrum


def infinite_blocks(n: int) -> list[np.ndarray]:
    """Cell index blocks J_j = (b_{j-1}, b_j) with b_j = (1/4) sum_{i<=j} 2^-i, resolvable ones
    first, then one block holding the remaining cells of (0, 1/4)."""
    if n % 8:
        raise ConfigError("infinite example needs n divisible by 8")
    quarter = n // 4
    blocks, start, j = [], 0, 1
    while True:
        length = n // 2 ** (j + 2)
        if length < 1 or start + length >= quarter:
            break
        blocks.append(np.arange(start, start + length))
        start += length
        j += 1
    blocks.append(np.arange(start, quarter))
    return blocks


def build_infinite_example(delta: float = 1 / 64, s: float = 2.0, n: int = 256) -> ExampleConfig:
    nu_exact = 11 / 12 - delta / 4 + s / 4
    if nu_exact <= 1:
        raise ConfigError(f"nu = {nu_exact} must exceed 1")
    geom = build_geometry(1, n, soft_intervals=[("0", "1/2")])
    h = geom.cell_volume
    blocks = infinite_blocks(n)
    lengths = np.array([blk.size * h for blk in blocks])
    v = 4 - 3 * delta - 4 * lengths
    if np.any(v <= 0):
        raise ConfigError("delta too large: some strip value v_j is not positive")
    q, half = n // 4, n // 2
    p = np.zeros((n, n))
    p[:half, half:] = delta
    p[half:, :half] = delta
    p[:q, :q] = delta
    for blk, vj in zip(blocks, v):
        p[np.ix_(blk, blk)] = 1 + delta
        p[np.ix_(blk, np.arange(q, half))] = vj
        p[np.ix_(np.arange(q, half), blk)] = vj
    p[q:half, q:half] = s
    lam = np.ones((n, n))
    coeff = CoefficientField(geom, lam, p)
    nu = float(np.sum(v * lengths) + s / 4 + delta / 2)
    return ExampleConfig(
        "infinite", geom, tent_kernel(), coeff, {"delta": delta, "s": s},
        {"nu": nu, "nu_limit": nu_exact, "block_lengths": lengths, "v": v,
         "n_blocks": len(blocks)},
        SpectralSet((), ((1.0, 1), (nu, 1)), "essential range"),
        {"blocks": blocks})


def block_form_deficit(cfg: ExampleConfig, alpha: np.ndarray) -> tuple[float, float, float]:
    """(||u||^2 - form[u], predicted deficit, ||u||^2) for u = sum alpha_j 1_{J_j}."""
    blocks = cfg.witnesses["blocks"]
    op = cfg.soft_operator()
    h = cfg.geometry.cell_volume
    u = np.zeros(op.dim)
    pos = {int(c): i for i, c in enumerate(op.cells)}
    for a, blk in zip(alpha, blocks):
        u[[pos[int(c)] for c in blk]] = a
    norm2 = h * float(u @ u)
    form = h * float(u @ op.matrix @ u)
    lengths = cfg.derived["block_lengths"]
    delta = cfg.params["delta"]
    pred = float(np.sum(alpha**2 * lengths**2) + delta * np.sum(alpha * lengths) ** 2)
    return norm2 - form, pred, norm2


# ---------------------------------------------------------------- two-sided


def build_twosided_example(delta: float = 1 / 16, kappa: float = 1 / 64, reg: float = 0.0,
                           n: int = 1024) -> ExampleConfig:
    if not 0 < kappa < 0.125:
        raise ConfigError("windows overlap: kappa must be below 1/8")
    if 0.125 - kappa / 4 <= delta:
        raise ConfigError("witness supports must lie inside the soft set")
    if not 0 < delta < 0.25:
        raise ConfigError("delta must lie in (0, 1/4)")
    geom = build_geometry(1, n, soft_intervals=[(delta, 1 - delta)])
    spec = windowed_kernel(kappa, reg)
    coeff = CoefficientField.separable(geom)
    y = geom.points()[:, 0]
    S = geom.soft_index
    z1 = np.where(geom.soft_flat, 1.0, 0.0)
    z1 /= math.sqrt(geom.cell_volume * z1.sum())
    z2 = np.where(np.abs(y - 0.125) < kappa / 4, 1.0, 0.0) - np.where(np.abs(y - 0.375) < kappa / 4, 1.0, 0.0)
    if not z2.any():
        raise ConfigError("grid too coarse to resolve the witness supports")
    z2 /= math.sqrt(geom.cell_volume * float(z2 @ z2))
    return ExampleConfig(
        "twosided", geom, spec, coeff, {"delta": delta, "kappa": kappa, "reg": reg},
        {"rayleigh_target_upper": 1 + 1 / 16},
        None, {"z1": z1[S], "z2": z2[S]})


# ---------------------------------------------------------------- batteries


def verify_flat(gamma=1 / 8, delta=0.05, ns=(256, 512, 1024), c_tol: float = 4.0, workers=None) -> dict:
    def one(n):
        cfg = build_flat_example(gamma, delta, n)
        op = cfg.soft_operator()
        ev = op.eigvalsh()
        tol = default_discrete_tol(n, c_tol)
        below = ev[ev < delta - tol]
        # m = w * integral(w); the integral is 1 up to quadrature error
        wc = cfg.derived["w_cells"]
        m_err = float(np.abs(op.diagonal - wc[op.cells] * wc.mean()).max())
        return {"n": n, "min_eigenvalue": float(ev[0]), "tol": tol, "below": below.tolist(),
                "multiplier_matches_w": m_err, "w_integral": cfg.derived["w_integral"]}

    rows = ordered_map(one, ns, workers)
    cfg = build_flat_example(gamma, delta, ns[0])
    w0 = cfg.derived["w0"]
    checks = {
        "w0_in_range": _check(w0, 1 < w0 < 1 + 2 * gamma),
        "normalisation": _check(max(abs(r["w_integral"] - 1) for r in rows),
                                all(abs(r["w_integral"] - 1) < 1e-10 for r in rows)),
        "multiplier_is_w": _check(max(r["multiplier_matches_w"] for r in rows),
                                  all(r["multiplier_matches_w"] < 1e-12 for r in rows)),
        "nothing_below_essential_range": _check([r["min_eigenvalue"] for r in rows],
                                                all(not r["below"] for r in rows)),
    }
    return {"example": "flat", "checks": checks, "rows": rows,
            "essential_range": cfg.essential.to_dict(),
            "construction_inequalities": cfg.derived["inequalities"],
            "passed": all(c["pass"] for c in checks.values())}


def verify_infinite(delta=1 / 64, s=2.0, ns=(256, 512, 1024), workers=None, n_below: int = 5) -> dict:
    def one(n):
        cfg = build_infinite_example(delta, s, n)
        op = cfg.soft_operator()
        ev = op.eigvalsh()
        ess = essential_range(op.diagonal, cfg.geometry, op.cells)
        tol = default_discrete_tol(n)
        disc = discrete_spectrum(ev, ess, tol)
        below = sorted(v for v, _ in disc.points if v < 1 - tol)
        return {"n": n, "below_one": below, "count": len(below), "essential": ess.to_dict(),
                "nu": cfg.derived["nu"]}

    rows = ordered_map(one, ns, workers)
    counts = [r["count"] for r in rows]
    last = rows[-1]["below_one"]
    ks = min(n_below, len(last))
    cfg = build_infinite_example(delta, s, ns[-1])
    mm = [rayleigh_minmax(cfg.soft_operator(), k) for k in range(1, ks + 1)]
    rng = np.random.default_rng(0)
    nb = cfg.derived["n_blocks"]
    deficits = [block_form_deficit(cfg, rng.normal(size=nb)) for _ in range(20)]
    checks = {
        "at_least_five_below_one": _check(counts[-1], counts[-1] >= n_below),
        "count_nondecreasing": _check(counts, all(a <= b for a, b in zip(counts, counts[1:]))),
        "increasing_toward_one": _check(last, all(a < b for a, b in zip(last, last[1:])) and
                                        all(v < 1 for v in last)),
        "minmax_strictly_increasing": _check(mm, all(a < b for a, b in zip(mm, mm[1:]))),
        "essential_points": _check([r["essential"] for r in rows],
                                   all(len(r["essential"]["points"]) == 2 and not r["essential"]["intervals"]
                                       for r in rows)),
        "block_deficit": _check(max(abs(d - p) for d, p, _ in deficits),
                                all(d > 0 and abs(d - p) <= 1e-10 * nrm for d, p, nrm in deficits)),
    }
    return {"example": "infinite", "checks": checks, "rows": rows,
            "passed": all(c["pass"] for c in checks.values())}


def verify_twosided(delta=1 / 16, kappa=1 / 64, n: int = 1024, reg: float = 1e-3) -> dict:
    plain = build_twosided_example(delta, kappa, 0.0, n)
    op = plain.soft_operator()
    r1 = rayleigh_quotient(op, plain.witnesses["z1"])
    r2 = rayleigh_quotient(op, plain.witnesses["z2"])
    ev = op.eigvalsh()
    m_dev = float(np.abs(op.diagonal - 1).max())
    plain_ok = validate_kernel(plain.kernel).passed
    regd = build_twosided_example(delta, kappa, reg, n)
    rop = regd.soft_operator()
    rev = rop.eigvalsh()
    ess = essential_range(rop.diagonal, regd.geometry, rop.cells)
    tol = default_discrete_tol(n)
    disc = discrete_spectrum(rev, ess, tol).values()
    e_lo = min([a for a, _ in ess.intervals] + [v for v, _ in ess.points])
    e_hi = max([b for _, b in ess.intervals] + [v for v, _ in ess.points])
    below, above = disc[disc < e_lo], disc[disc > e_hi]
    checks = {
        "multiplier_is_one": _check(m_dev, m_dev < 1e-10),
        "essential_is_point": _check(essential_range(op.diagonal, plain.geometry, op.cells).to_dict(),
                                     m_dev < 1e-10),
        "z1_below_one": _check(r1, r1 < 1),
        "z2_near_target": _check(r2, abs(r2 - (1 + 1 / 16)) <= 1e-2),
        "z2_above_one": _check(r2, r2 > 1),
        "max_eigenvalue_bound": _check(float(ev[-1]), ev[-1] >= 1 + 1 / 16 - 0.01),
        "unregularised_fails_ellipticity": _check(plain_ok, not plain_ok),
        "regularised_passes_ellipticity": _check(validate_kernel(regd.kernel).passed,
                                                 validate_kernel(regd.kernel).passed),
        "discrete_both_sides": _check({"below": below.tolist(), "above": above.tolist()},
                                      below.size > 0 and above.size > 0),
    }
    return {"example": "twosided", "checks": checks, "essential_regularised": ess.to_dict(),
            "passed": all(c["pass"] for c in checks.values())}


BUILDERS = {"flat": build_flat_example, "infinite": build_infinite_example,
            "twosided": build_twosided_example}
VERIFIERS = {"flat": verify_flat, "infinite": verify_infinite, "twosided": verify_twosided}
