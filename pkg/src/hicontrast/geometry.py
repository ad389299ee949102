"""Periodicity cell on a midpoint grid, stiff/soft masks, coefficient fields, connectivity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.sparse import coo_matrix, csgraph
from scipy.spatial import cKDTree

from .errors import ConfigError, NumericalError
from .kernel import KernelSpec


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(v).limit_denominator(10**9)


@dataclass(frozen=True, eq=False)
class CellGeometry:
    d: int
    n: int
    soft_mask: np.ndarray  # shape (n,)*d, bool

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError("only d = 1 or 2 is supported")
        if self.n < 2:
            raise ConfigError("resolution n must be at least 2")
        mask = np.asarray(self.soft_mask, dtype=bool)
        if mask.shape != (self.n,) * self.d:
            raise ConfigError(f"mask shape {mask.shape} does not match n = {self.n}, d = {self.d}")
        if not mask.any():
            raise ConfigError("soft set is empty on this grid")
        if mask.all():
            raise ConfigError("stiff set is empty on this grid")
        mask.setflags(write=False)
        object.__setattr__(self, "soft_mask", mask)

    @property
    def stiff_mask(self) -> np.ndarray:
        return ~self.soft_mask

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return float(self.n) ** (-self.d)

    @property
    def soft_flat(self) -> np.ndarray:
        return self.soft_mask.reshape(-1)

    @property
    def soft_index(self) -> np.ndarray:
        return np.flatnonzero(self.soft_flat)

    @property
    def stiff_index(self) -> np.ndarray:
        return np.flatnonzero(~self.soft_flat)

    @property
    def soft_volume(self) -> float:
        return int(self.soft_mask.sum()) / self.size

    @property
    def soft_volume_exact(self) -> Fraction:
        return Fraction(int(self.soft_mask.sum()), self.size)

    def multi_index(self) -> np.ndarray:
        """Integer grid coordinates, shape (N, d), in row-major (flat) order."""
        axes = np.meshgrid(*[np.arange(self.n)] * self.d, indexing="ij")
        return np.stack([a.reshape(-1) for a in axes], axis=-1)

    def points(self) -> np.ndarray:
        return (self.multi_index() + 0.5) / self.n

    def difference_index(self) -> tuple:
        """Index tuple into a (n,)*d difference-grid array giving entry [i, j] at (j - i) mod n."""
        idx = self.multi_index()
        diff = (idx[None, :, :] - idx[:, None, :]) % self.n
        return tuple(diff[..., c] for c in range(self.d))

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "soft_volume": self.soft_volume,
                "soft_cells": int(self.soft_mask.sum())}


def rasterize_intervals(n: int, intervals: Sequence[Sequence]) -> np.ndarray:
    """Cells whose midpoint (2i+1)/(2n) lies in one of the open intervals (exact arithmetic)."""
    mask = np.zeros(n, dtype=bool)
    for iv in intervals:
        lo, hi = _frac(iv[0]), _frac(iv[1])
        if not (0 <= lo < hi <= 1):
            raise ConfigError(f"interval ({lo}, {hi}) is not inside [0, 1]")
        for i in range(n):
            mid = Fraction(2 * i + 1, 2 * n)
            if lo < mid < hi:
                mask[i] = True
    return mask


def build_geometry(d: int, n: int, soft_intervals=None, soft_rectangles=None,
                   mask=None) -> CellGeometry:
    """Rasterize the soft set onto the n^d midpoint grid of [0,1)^d."""
    given = sum(x is not None for x in (soft_intervals, soft_rectangles, mask))
    if given != 1:
        raise ConfigError("give exactly one of soft_intervals, soft_rectangles, mask")
    if mask is not None:
        arr = np.asarray(mask, dtype=bool)
        if arr.ndim != d:
            raise ConfigError("mask dimension does not match d")
        return CellGeometry(d, arr.shape[0], arr)
    if d == 1:
        if soft_intervals is None:
            raise ConfigError("d = 1 geometry needs soft_intervals")
        return CellGeometry(1, n, rasterize_intervals(n, soft_intervals))
    if soft_rectangles is None:
        raise ConfigError("d = 2 geometry needs soft_rectangles or a mask")
    soft = np.zeros((n, n), dtype=bool)
    for rect in soft_rectangles:
        (x0, x1), (y0, y1) = rect
        mx = rasterize_intervals(n, [(x0, x1)])
        my = rasterize_intervals(n, [(y0, y1)])
        soft |= mx[:, None] & my[None, :]
    return CellGeometry(2, n, soft)


def load_mask(path: str | Path) -> np.ndarray:
    """Mask file: one row of 0/1 characters (optionally separated) per grid line."""
    try:
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read mask file {path}: {exc}") from exc
    rows = []
    for ln in lines:
        digits = [c for c in ln if c in "01"]
        if len(digits) != len(ln.replace(" ", "").replace(",", "")):
            raise ConfigError(f"mask file {path} has characters other than 0/1")
        rows.append([c == "1" for c in digits])
    arr = np.array(rows, dtype=bool)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"mask file {path} must be a square 0/1 array")
    return arr


def geometry_from_dict(data: dict, base_dir: Path | None = None) -> CellGeometry:
    try:
        d, n = int(data["d"]), int(data.get("n", 0))
    except KeyError as exc:
        raise ConfigError(f"geometry section is missing {exc}") from exc
    if "mask_file" in data:
        path = Path(data["mask_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return build_geometry(d, n, mask=load_mask(path))
    if "mask" in data:
        return build_geometry(d, n, mask=np.asarray(data["mask"], dtype=bool))
    if n < 2:
        raise ConfigError("geometry needs a resolution n >= 2")
    return build_geometry(d, n, soft_intervals=data.get("soft_intervals"),
                          soft_rectangles=data.get("soft_rectangles"))


# ---------------------------------------------------------------- coefficients


def cell_averages(f: Callable[[float], float], n: int, breakpoints: Sequence[float] = ()) -> np.ndarray:
    """n * integral of f over each cell [i/n, (i+1)/n), d = 1."""
    out = np.empty(n)
    for i in range(n):
        lo, hi = i / n, (i + 1) / n
        pts = [b for b in breakpoints if lo < b < hi] or None
        out[i] = n * integrate.quad(f, lo, hi, points=pts, limit=200)[0]
    return out


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Dense pair weights on the flat grid.

    lambda0 lives on stiff x stiff pairs, p on every pair not stiff x stiff.
    """

    geometry: CellGeometry
    lambda0: np.ndarray
    p: np.ndarray
    alpha: tuple[float, float] = field(default=(0.0, math.inf))
    # strict=False keeps lambda0 on pairs touching soft cells (degenerate test setups)
    strict: bool = True

    def __post_init__(self):
        N = self.geometry.size
        lam = np.asarray(self.lambda0, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if lam.shape != (N, N) or p.shape != (N, N):
            raise ConfigError("coefficient tables must be N x N with N = n^d")
        stiff = ~self.geometry.soft_flat
        both = stiff[:, None] & stiff[None, :]
        if self.strict:
            lam = np.where(both, lam, 0.0)
        p = np.where(both, 0.0, p)
        for name, arr in (("lambda0", lam), ("p", p)):
            if not np.allclose(arr, arr.T, rtol=0, atol=1e-14 * max(1.0, np.abs(arr).max())):
                raise ConfigError(f"{name} is not symmetric")
            if np.any(arr < 0):
                raise ConfigError(f"{name} has negative entries")
        a1, a2 = self.alpha
        vals = np.concatenate([lam[both], p[~both]]) if self.strict else lam[both]
        if vals.size and (vals.min() < a1 * (1 - 1e-12) or vals.max() > a2 * (1 + 1e-12)):
            raise ConfigError(f"coefficients leave the contrast bounds [{a1}, {a2}]")
        lam.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "lambda0", lam)
        object.__setattr__(self, "p", p)

    @classmethod
    def separable(cls, geom: CellGeometry, w=None, lambda0_scale: float = 1.0,
                  alpha: tuple[float, float] | None = None, strict: bool = True) -> "CoefficientField":
        """p = w(y) w(xi) off stiff x stiff, lambda0 = constant on stiff x stiff."""
        N = geom.size
        w = np.ones(N) if w is None else np.asarray(w, dtype=float).reshape(-1)
        if w.shape != (N,) or np.any(w <= 0):
            raise ConfigError("w must be a positive grid function")
        lam = np.full((N, N), float(lambda0_scale))
        p = np.outer(w, w)
        if alpha is None:
            alpha = (min(lambda0_scale, float(w.min() ** 2)), max(lambda0_scale, float(w.max() ** 2)))
        return cls(geom, lam, p, alpha, strict)

    @classmethod
    def from_pair_functions(cls, geom: CellGeometry, lambda0_fn: Callable, p_fn: Callable,
                            alpha: tuple[float, float] = (0.0, math.inf)) -> "CoefficientField":
        """Evaluate pair functions at cell midpoints (vectorized over (N, N, d) arrays)."""
        y = geom.points()
        Y, X = y[:, None, :], y[None, :, :]
        Y, X = np.broadcast_arrays(Y, X)
        return cls(geom, lambda0_fn(Y, X), p_fn(Y, X), alpha)

    @property
    def active_stiff(self) -> np.ndarray:
        """Cells carrying stiff coupling (the stiff cells unless strict=False widened it)."""
        return np.flatnonzero(self.lambda0.any(axis=1))

    def scaled(self, s: float) -> "CoefficientField":
        """Lambda0 multiplied by s, p unchanged."""
        a1, a2 = self.alpha
        return CoefficientField(self.geometry, s * self.lambda0, self.p,
                                (min(a1, s * a1), max(a2, s * a2)), self.strict)

    def fiber_weight(self, eps: float) -> np.ndarray:
        return self.lambda0 / eps**2 + self.p


# ---------------------------------------------------------------- connectivity


@dataclass
class ConnectivityReport:
    r0: float
    kappa0: float
    r1: float | None
    k: int | None
    Nbar: int | None
    r_a: float
    satisfied: bool
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _kappa0(geom: CellGeometry, r0: float, sub: int = 15) -> float:
    """min over sampled stiff points x of the stiff fraction of B_{r0}(x)."""
    n, d = geom.n, geom.d
    s = (np.arange(sub) + 0.5) / sub * 2 - 1
    if d == 1:
        offs = s[:, None] * r0
        anchors = np.linspace(0, 1, 5)[:, None] / n
    else:
        U, V = np.meshgrid(s, s, indexing="ij")
        inside = U**2 + V**2 <= 1
        offs = np.stack([U[inside], V[inside]], axis=-1) * r0
        a = np.linspace(0, 1, 5)
        anchors = np.stack(np.meshgrid(a, a, indexing="ij"), axis=-1).reshape(-1, 2) / n
    soft = geom.soft_mask
    stiff_cells = np.argwhere(~soft)
    worst = 1.0
    for corner in stiff_cells / n:
        for x in corner + anchors:
            cells = np.floor((x + offs) * n).astype(int) % n
            frac = float(np.mean(~soft[tuple(cells.T)]))
            worst = min(worst, frac)
    return worst


def _stiff_cloud(geom: CellGeometry, k: int):
    """Stiff midpoints in the cube of k periods around Y; also flags for the central copy."""
    base = geom.points()[~geom.soft_flat]
    half = (k - 1) // 2
    shifts = np.arange(-half, half + 1)
    if geom.d == 1:
        offs = shifts[:, None].astype(float)
    else:
        offs = np.stack(np.meshgrid(shifts, shifts, indexing="ij"), axis=-1).reshape(-1, 2).astype(float)
    pts = (base[None, :, :] + offs[:, None, :]).reshape(-1, geom.d)
    central = np.repeat(np.all(offs == 0, axis=1), base.shape[0])
    return pts, central


def _gap_graph(pts: np.ndarray, n: int, r1: float):
    """Cells joined when the gap between their closures is at most r1."""
    d = pts.shape[1]
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r1 + math.sqrt(d) / n + 1e-12, output_type="ndarray")
    if pairs.size:
        steps = np.abs(pts[pairs[:, 0]] - pts[pairs[:, 1]]) * n
        gap = np.linalg.norm(np.maximum(np.rint(steps) - 1, 0), axis=1) / n
        pairs = pairs[gap <= r1 + 1e-12]
    m = pts.shape[0]
    ones = np.ones(len(pairs))
    graph = coo_matrix((ones, (pairs[:, 0], pairs[:, 1])), shape=(m, m)) if len(pairs) else \
        coo_matrix((m, m))
    return graph


def _path_stats(pts: np.ndarray, central: np.ndarray, n: int, r1: float):
    """(connected, max hops) for the central cells in the r1 gap graph."""
    graph = _gap_graph(pts, n, r1)
    comp = csgraph.connected_components(graph, directed=False)[1]
    cidx = np.flatnonzero(central)
    if np.unique(comp[cidx]).size != 1:
        return False, None
    hops = csgraph.shortest_path(graph.tocsr(), method="D", directed=False,
                                 unweighted=True, indices=cidx)
    return True, int(hops[:, cidx].max())


def _distance_ladder(geom: CellGeometry, k: int) -> np.ndarray:
    """Possible gap lengths between closed grid cells, from one cell width up."""
    if geom.d == 1:
        return np.arange(1, geom.n * k + 1) / geom.n
    a, b = np.meshgrid(np.arange(0, geom.n + 1), np.arange(0, geom.n + 1), indexing="ij")
    return np.unique(np.sqrt(a**2 + b**2)[(a + b) > 0]) / geom.n


def verify_connectivity(geom: CellGeometry, spec: KernelSpec, k_max: int = 8) -> ConnectivityReport:
    """Grid witness for the stiff connectivity condition: r_a >= 2 r0 + r1."""
    if spec.d != geom.d:
        raise ConfigError("kernel and geometry dimensions differ")
    r0 = math.sqrt(geom.d) / (2 * geom.n)
    kappa0 = _kappa0(geom, r0)
    best = None
    for k in range(1, k_max + 1, 2):
        pts, central = _stiff_cloud(geom, k)
        ladder = _distance_ladder(geom, k)
        # geometric escalation, then bisection on the ladder
        hi_i, step, lo_i = 0, 1, -1
        ok = _path_stats(pts, central, geom.n, ladder[0])
        while not ok[0]:
            lo_i = hi_i
            hi_i = min(hi_i + step, len(ladder) - 1)
            step *= 2
            ok = _path_stats(pts, central, geom.n, ladder[hi_i])
            if hi_i == len(ladder) - 1 and not ok[0]:
                break
        if not ok[0]:
            continue
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) // 2
            trial = _path_stats(pts, central, geom.n, ladder[mid])
            if trial[0]:
                hi_i, ok = mid, trial
            else:
                lo_i = mid
        r1 = float(ladder[hi_i])
        if best is None or r1 < best[0] - 1e-15:
            best = (r1, k, max(ok[1] - 1, 0))
        if hi_i == 0:
            break  # one cell width cannot be improved by a larger k
    if best is None:
        return ConnectivityReport(r0, kappa0, None, None, None, spec.r_a, False,
                                  f"stiff set not path-connected within k <= {k_max} periods")
    r1, k, nbar = best
    need = 2 * r0 + r1
    sat = spec.r_a >= need - 1e-12
    diag = "" if sat else f"r_a = {spec.r_a} < 2 r0 + r1 = {need}"
    return ConnectivityReport(r0, kappa0, r1, k, nbar, spec.r_a, bool(sat), diag)


def require_connected(geom: CellGeometry, spec: KernelSpec) -> ConnectivityReport:
    rep = verify_connectivity(geom, spec)
    if not rep.satisfied:
        raise NumericalError(f"connectivity condition fails: {rep.diagnostic}")
    return rep
