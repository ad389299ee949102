"""Quasimomentum sweeps, resolvent comparisons and epsilon-convergence studies."""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .assembly import (HermitianOperator, Region, SubspaceBasis, assemble_fiber,
                       assemble_homogenized_fiber, assemble_soft_fiber, assemble_truncated)
from .errors import ConfigError, HicontrastError
from .geometry import CellGeometry, CoefficientField
from .kernel import KernelSpec
from .parallel import ordered_map
from .spectral import (BetaFunction, SpectralSet, hausdorff_distance, limit_spectrum_wholespace)

log = logging.getLogger(__name__)


def theta_grid(n_theta: int, d: int) -> np.ndarray:
    """Uniform grid on [-pi, pi]^d with an odd count per axis (contains theta = 0)."""
    if n_theta < 3 or n_theta % 2 == 0:
        raise ConfigError("n_theta must be odd and at least 3")
    axis = np.linspace(-math.pi, math.pi, n_theta)
    axis[n_theta // 2] = 0.0
    return np.array(list(itertools.product(axis, repeat=d)))


@dataclass
class SweepResult:
    thetas: np.ndarray
    eigenvalues: list                      # per-theta sorted eigenvalues (None on failure)
    union: SpectralSet
    timings: list
    failures: list = field(default_factory=list)
    merge_tol: float = 0.0

    def slice(self, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        k = int(np.argmin(np.abs(self.thetas - th).sum(axis=1)))
        return self.eigenvalues[k]

    def rows(self):
        for th, ev in zip(self.thetas, self.eigenvalues):
            if ev is None:
                continue
            for k, v in enumerate(ev):
                yield [*map(float, th), k, float(v)]

    def to_dict(self) -> dict:
        return {"n_fibers": len(self.thetas), "union": self.union.to_dict(),
                "merge_tol": self.merge_tol, "failures": self.failures}


def _edge_slop(bands: np.ndarray, shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Per-band sampling slop at the band minimum and maximum.

    At the sample where a band attains its extremum a parabola through the two
    neighbours along each axis estimates how far the true extremum can lie
    beyond the sampled one. The theta axes are periodic (-pi and pi coincide).
    """
    n_fib, dim = bands.shape
    grid = bands.reshape(shape + (dim,))
    d = len(shape)
    lo_slop, hi_slop = np.zeros(dim), np.zeros(dim)

    def neighbour(pos, ax, step):
        m = shape[ax]
        i = pos[ax] + step
        if m > 2:
            if i < 0:
                i = m - 2
            elif i >= m:
                i = 1
        nb = list(pos)
        nb[ax] = i
        return tuple(nb) if 0 <= i < m else None

    for which, out in ((np.argmin, lo_slop), (np.argmax, hi_slop)):
        idx = which(bands, axis=0)
        for k in range(dim):
            pos = np.unravel_index(idx[k], shape)
            f0 = float(grid[pos + (k,)])
            worst = 0.0
            for ax in range(d):
                left, right = neighbour(pos, ax, -1), neighbour(pos, ax, 1)
                if left is None or right is None:
                    continue
                fm, fp = float(grid[left + (k,)]), float(grid[right + (k,)])
                curv = fm - 2 * f0 + fp
                if curv != 0.0:
                    worst = max(worst, (fp - fm) ** 2 / (8 * abs(curv)))
            out[k] = worst
    return lo_slop, hi_slop


def band_union(thetas: np.ndarray, eigenvalues: list, window: tuple[float, float] | None = None,
               tag: str = "") -> tuple[SpectralSet, float]:
    """Union of band ranges [min over theta, max over theta] of each sorted band.

    Two band ranges are merged when the gap between them is within the sampling
    slop of the two facing band edges. Returns the set and the largest slop used.
    """
    good = [ev for ev in eigenvalues if ev is not None]
    if not good:
        return SpectralSet(tag=tag), 0.0
    dim = min(len(ev) for ev in good)
    bands = np.array([ev[:dim] for ev in good])            # (n_fibers, dim)
    scale = max(1.0, float(np.abs(bands).max()))
    flat_tol = 1e-10 * scale
    d = thetas.shape[1]
    if len(good) == len(thetas):
        n_axis = round(len(thetas) ** (1.0 / d))
        lo_slop, hi_slop = _edge_slop(bands, (n_axis,) * d)
    else:
        lo_slop, hi_slop = _edge_slop(bands, (len(good),))
    lo, hi = bands.min(axis=0), bands.max(axis=0)
    comps = []
    for k in range(dim):
        if window is not None and (hi[k] < window[0] or lo[k] > window[1]):
            continue
        comps.append([lo[k], hi[k], lo_slop[k], hi_slop[k]])
    comps.sort()
    merged: list[list[float]] = []
    used = 0.0
    for a, b, sa, sb in comps:
        if merged and a - merged[-1][1] <= merged[-1][3] + sa:
            if a > merged[-1][1]:
                used = max(used, a - merged[-1][1])
            if b >= merged[-1][1]:
                merged[-1][1], merged[-1][3] = b, sb
        else:
            merged.append([a, b, sa, sb])
    ivs = tuple((a, b) for a, b, _, _ in merged if b - a > flat_tol)
    pts = tuple((0.5 * (a + b), 1) for a, b, _, _ in merged if b - a <= flat_tol)
    out = SpectralSet(ivs, pts, tag)
    if window is not None:
        out = out.truncate(*window)
    return out, used


def _sweep(build: Callable[[np.ndarray], HermitianOperator], thetas: np.ndarray, window,
           workers, tag) -> SweepResult:
    def one(th):
        t0 = time.perf_counter()
        try:
            ev = build(th).eigvalsh()
        except HicontrastError as exc:
            return None, time.perf_counter() - t0, str(exc)
        return ev, time.perf_counter() - t0, None

    out = ordered_map(one, thetas, workers)
    eigs = [o[0] for o in out]
    failures = [{"theta": th.tolist(), "error": o[2]} for th, o in zip(thetas, out) if o[2]]
    union, tol = band_union(thetas, eigs, window, tag)
    if window is not None:
        # rounding can push a zero eigenvalue of a nonnegative operator just below 0
        slack = [0.0 if ev is None else 1e-10 * max(1.0, float(np.abs(ev).max())) for ev in eigs]
        eigs = [None if ev is None else ev[(ev >= window[0] - sl) & (ev <= window[1])]
                for ev, sl in zip(eigs, slack)]
    return SweepResult(thetas, eigs, union, [o[1] for o in out], failures, tol)


def soft_theta_sweep(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec, n_theta: int,
                     J=None, workers=None) -> SweepResult:
    thetas = theta_grid(n_theta, geom.d)
    return _sweep(lambda th: assemble_soft_fiber(geom, coeff, spec, th, J), thetas, None, workers,
                  "soft sweep union")


def full_theta_sweep(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec, eps: float,
                     n_theta: int, Lam: float, J=None, workers=None) -> SweepResult:
    if not Lam > 0:
        raise ConfigError("window bound must be positive")
    thetas = theta_grid(n_theta, geom.d)
    return _sweep(lambda th: assemble_fiber(geom, coeff, spec, eps, th, J), thetas, (0.0, Lam),
                  workers, f"fiber sweep union (eps={eps})")


# ---------------------------------------------------------------- resolvents


def homogenized_resolvent(geom: CellGeometry, hom: HermitianOperator) -> np.ndarray:
    """(A_h + 1)^{-1} composed with the projection onto constants + soft, on full-grid values."""
    basis = SubspaceBasis.constants_plus_soft(geom)
    h = geom.cell_volume
    coef = linalg.solve(hom.form + hom.gram, h * basis.phi.T.astype(hom.form.dtype), assume_a="her")
    return basis.phi @ coef


def resolvent_gap(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec, eps: float, theta,
                  Ahom, J=None) -> float:
    """Spectral norm of (A_eps^theta + 1)^{-1} - (A_eps^{h,theta} + 1)^{-1} P."""
    full = assemble_fiber(geom, coeff, spec, eps, theta, J)
    hom = assemble_homogenized_fiber(geom, coeff, spec, eps, theta, Ahom, J)
    eye = np.eye(full.dim)
    R_eps = linalg.solve(full.matrix + eye, eye, assume_a="her")
    R_hom = homogenized_resolvent(geom, hom)
    return float(linalg.svdvals(R_eps - R_hom)[0])


def fit_slope(eps: Sequence[float], values: Sequence[float]) -> float | None:
    """Least-squares slope of log(values) against log(eps)."""
    eps, values = np.asarray(eps, float), np.asarray(values, float)
    ok = (values > 0) & np.isfinite(values)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(eps[ok]), np.log(values[ok]), 1)[0])


@dataclass
class GapScan:
    eps: float
    thetas: np.ndarray
    gaps: np.ndarray

    @property
    def worst(self) -> float:
        return float(self.gaps.max())

    def beyond(self, theta1: float) -> np.ndarray:
        return self.gaps[np.linalg.norm(self.thetas, axis=1) > theta1]


def gap_scan(geom, coeff, spec, eps, Ahom, n_theta=17, J=None, workers=None) -> GapScan:
    thetas = theta_grid(n_theta, geom.d)
    gaps = ordered_map(lambda th: resolvent_gap(geom, coeff, spec, eps, th, Ahom, J), thetas, workers)
    return GapScan(eps, thetas, np.array(gaps))


# ---------------------------------------------------------------- convergence study


@dataclass
class StudyRow:
    eps: float
    hausdorff: float | None
    worst_gap: float | None
    seconds: float
    error: str | None = None


@dataclass
class StudyReport:
    rows: list
    Lam: float
    hausdorff_slope: float | None
    gap_slope: float | None
    limit_set: SpectralSet
    two_scale_set: SpectralSet
    far_theta_constant: float | None = None
    far_theta_ok: bool | None = None

    def to_dict(self) -> dict:
        # wall times are left out so that reruns serialize identically
        return {"Lambda": self.Lam,
                "rows": [{"eps": r.eps, "hausdorff": r.hausdorff, "worst_gap": r.worst_gap,
                          "error": r.error} for r in self.rows],
                "hausdorff_slope": self.hausdorff_slope, "gap_slope": self.gap_slope,
                "far_theta_constant": self.far_theta_constant, "far_theta_ok": self.far_theta_ok,
                "limit_set": self.limit_set.to_dict(), "two_scale_set": self.two_scale_set.to_dict()}


def limit_sets(geom, coeff, spec, n_theta: int, Lam: float, J=None, workers=None):
    """(G, two-scale set, soft sweep) for the configuration on [0, Lam]."""
    from .assembly import assemble_soft_periodic
    soft_op = assemble_soft_periodic(geom, coeff, spec, J)
    beta = BetaFunction(soft_op, geom.cell_volume)
    sweep = soft_theta_sweep(geom, coeff, spec, n_theta, J, workers)
    periodic = SpectralSet.from_values(soft_op.eigvalsh(), merge_tol=sweep.merge_tol)
    G, two_scale = limit_spectrum_wholespace(beta, sweep.union, periodic, Lam)
    return G, two_scale, sweep


def convergence_study(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                      eps_list: Sequence[float], Lam: float, Ahom, n_theta: int = 33,
                      n_theta_gap: int = 17, theta1: float = math.pi / 2, gaps: bool = True,
                      J=None, workers=None) -> StudyReport:
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("epsilon list must be strictly decreasing")
    G, two_scale, _ = limit_sets(geom, coeff, spec, n_theta, Lam, J, workers)
    rows, scans = [], []
    for eps in eps_list:
        t0 = time.perf_counter()
        try:
            sweep = full_theta_sweep(geom, coeff, spec, eps, n_theta, Lam, J, workers)
            dh = hausdorff_distance(sweep.union, G, Lam)
            scan = gap_scan(geom, coeff, spec, eps, Ahom, n_theta_gap, J, workers) if gaps else None
            scans.append(scan)
            rows.append(StudyRow(eps, dh, scan.worst if scan else None, time.perf_counter() - t0))
        except HicontrastError as exc:
            log.warning("eps = %s failed: %s", eps, exc)
            rows.append(StudyRow(eps, None, None, time.perf_counter() - t0, str(exc)))
    ok = [r for r in rows if r.error is None]
    h_slope = fit_slope([r.eps for r in ok], [r.hausdorff for r in ok]) if len(ok) > 1 else None
    g_slope = (fit_slope([r.eps for r in ok], [r.worst_gap for r in ok])
               if gaps and len(ok) > 1 else None)
    const, far_ok = None, None
    scans = [s for s in scans if s is not None]
    if scans and scans[0].beyond(theta1).size:
        const = float(scans[0].beyond(theta1).max() / scans[0].eps**2)
        far_ok = all(float(s.beyond(theta1).max()) <= const * s.eps**2 * (1 + 1e-9) for s in scans)
    return StudyReport(rows, Lam, h_slope, g_slope, G, two_scale, const, far_ok)


# ---------------------------------------------------------------- truncated domains


def far_end_filter(op: HermitianOperator, n: int, far_periods: int = 2, far_fraction: float = 0.5,
                   far_side: str = "right") -> np.ndarray:
    """Eigenvalues of a half-line window, dropping modes localised at the artificial far end."""
    w, V = op.eigh()
    cells = op.cells
    lo, hi = cells.min(), cells.max()
    if far_side == "right":
        far = cells >= hi + 1 - far_periods * n
    else:
        far = cells < lo + far_periods * n
    mass = (np.abs(V[far, :]) ** 2).sum(axis=0)
    return w[mass < far_fraction]


def orthant_spectrum(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec, side: str,
                     R: int, merge_tol: float, J=None) -> SpectralSet:
    """Spectrum of the soft operator on a half-line window of R periods attached to a box vertex."""
    op = assemble_truncated(geom, coeff, spec, Region.orthant(side, R), J=J)
    far_side = "right" if side == "left" else "left"
    ev = far_end_filter(op, geom.n, far_side=far_side)
    return SpectralSet.from_values(ev, merge_tol=merge_tol, tag=f"orthant {side}")


def box_spectrum(geom, coeff, spec, N: int, length: int = 1, J=None) -> np.ndarray:
    return assemble_truncated(geom, coeff, spec, Region.box(N, length), J=J).eigvalsh()
