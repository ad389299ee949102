"""Spectral sets, the beta-function, limit sets, Hausdorff distances and quasimode bounds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.sparse import coo_matrix, csgraph

from .assembly import HermitianOperator
from .errors import ConfigError, NumericalError, PoleError, UnsupportedError
from .geometry import CellGeometry, CoefficientField
from .parallel import ordered_map

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- spectral sets


@dataclass(frozen=True)
class SpectralSet:
    """Finite union of closed intervals and isolated points (with multiplicities)."""

    intervals: tuple[tuple[float, float], ...] = ()
    points: tuple[tuple[float, int], ...] = ()
    tag: str = ""

    def __post_init__(self):
        ivs = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not b >= a:
                raise ConfigError(f"bad interval [{a}, {b}]")
        merged: list[list[float]] = []
        for a, b in ivs:
            # intervals touching up to rounding are one interval
            if merged and a <= merged[-1][1] + 1e-12 * max(1.0, abs(merged[-1][1])):
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        pts: dict[float, int] = {}
        for v, mult in self.points:
            v = float(v)
            if any(lo <= v <= hi for lo, hi in merged):
                continue
            pts[v] = pts.get(v, 0) + int(mult)
        object.__setattr__(self, "intervals", tuple((a, b) for a, b in merged))
        object.__setattr__(self, "points", tuple(sorted(pts.items())))

    # construction
    @classmethod
    def from_values(cls, values: Iterable[float], merge_tol: float = 0.0, tag: str = "") -> "SpectralSet":
        """Points from values; runs of values closer than merge_tol become intervals."""
        v = np.sort(np.asarray(list(values), dtype=float))
        if v.size == 0:
            return cls(tag=tag)
        intervals, points = [], []
        start = 0
        for i in range(1, v.size + 1):
            if i == v.size or v[i] - v[i - 1] > merge_tol:
                run = v[start:i]
                if run[-1] - run[0] > 0 and merge_tol > 0:
                    intervals.append((run[0], run[-1]))
                else:
                    uniq, counts = np.unique(run, return_counts=True)
                    points.extend(zip(uniq.tolist(), counts.tolist()))
                start = i
        return cls(tuple(intervals), tuple(points), tag)

    @classmethod
    def interval(cls, a: float, b: float, tag: str = "") -> "SpectralSet":
        return cls(((a, b),), (), tag)

    def union(self, other: "SpectralSet", tag: str | None = None) -> "SpectralSet":
        return SpectralSet(self.intervals + other.intervals, self.points + other.points,
                           self.tag if tag is None else tag)

    def truncate(self, lo: float, hi: float) -> "SpectralSet":
        ivs = tuple((max(a, lo), min(b, hi)) for a, b in self.intervals if b >= lo and a <= hi)
        pts = tuple((v, m) for v, m in self.points if lo <= v <= hi)
        return SpectralSet(ivs, pts, self.tag)

    # queries
    @property
    def empty(self) -> bool:
        return not self.intervals and not self.points

    def _anchors(self) -> np.ndarray:
        """Sorted component endpoints (as pairs) for distance evaluation."""
        comps = [(a, b) for a, b in self.intervals] + [(v, v) for v, _ in self.points]
        comps.sort()
        return np.array(comps, dtype=float).reshape(-1, 2)

    def distance(self, x) -> np.ndarray:
        comps = self._anchors()
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if comps.size == 0:
            return np.full(x.shape, math.inf)
        lo, hi = comps[:, 0][None, :], comps[:, 1][None, :]
        d = np.maximum(np.maximum(lo - x[:, None], x[:, None] - hi), 0.0)
        return d.min(axis=1)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return self.distance(x) <= tol

    def deviation_to(self, other: "SpectralSet") -> float:
        """sup over self of the distance to other (exact on the representation)."""
        if self.empty:
            return 0.0
        if other.empty:
            return math.inf
        cand = [v for v, _ in self.points]
        ocomps = other._anchors()
        for a, b in self.intervals:
            cand += [a, b]
            # distance to other is maximal at gap midpoints inside [a, b]
            for (l1, h1), (l2, h2) in zip(ocomps[:-1], ocomps[1:]):
                mid = 0.5 * (h1 + l2)
                if a < mid < b:
                    cand.append(mid)
            if ocomps[0, 0] > a:
                cand.append(a)
            if ocomps[-1, 1] < b:
                cand.append(b)
        return float(other.distance(np.array(cand)).max())

    def is_subset(self, other: "SpectralSet", tol: float = 0.0) -> bool:
        return self.deviation_to(other) <= tol

    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.points])

    def to_dict(self) -> dict:
        return {"intervals": [[a, b] for a, b in self.intervals],
                "points": [{"v": v, "mult": m} for v, m in self.points]}

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralSet":
        return cls(tuple(tuple(iv) for iv in data.get("intervals", [])),
                   tuple((p["v"], p.get("mult", 1)) for p in data.get("points", [])))


def hausdorff_distance(S1: SpectralSet, S2: SpectralSet, Lam: float) -> float:
    """max(dev(S1 on [0, Lam] -> S2), dev(S2 on [0, Lam] -> S1))."""
    if not Lam > 0:
        raise ConfigError("window bound must be positive")
    A, B = S1.truncate(0.0, Lam), S2.truncate(0.0, Lam)
    if A.empty or B.empty:
        log.info("empty truncated set in window [0, %s]; its deviation counts as 0", Lam)
    return max(A.deviation_to(S2) if not A.empty else 0.0,
               B.deviation_to(S1) if not B.empty else 0.0)


# ---------------------------------------------------------------- spectra of operators


def essential_range(m: np.ndarray, geom: CellGeometry | None = None, cells: np.ndarray | None = None,
                    jump_fraction: float = 0.5) -> SpectralSet:
    """Closed hull of the sampled multiplier, split at jumps between neighbouring cells.

    Neighbouring soft cells are joined unless their values differ by more than
    jump_fraction times the total spread of m; each joined run spans an
    interval, and runs closer than twice the largest joined step are merged.
    A continuous multiplier moves by O(1/n) per cell away from steep spots,
    so only genuine discontinuities survive refinement.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        raise ConfigError("essential range of an empty multiplier")
    if geom is None:
        pairs = np.stack([np.arange(m.size - 1), np.arange(1, m.size)], axis=1)
    else:
        cells = geom.soft_index if cells is None else cells
        pairs = _neighbour_pairs(geom, cells)
    diffs = np.abs(m[pairs[:, 0]] - m[pairs[:, 1]]) if len(pairs) else np.zeros(0)
    spread = float(m.max() - m.min())
    thresh = jump_fraction * spread + 1e-12 * max(1.0, float(np.abs(m).max()))
    keep = pairs[diffs <= thresh] if len(pairs) else pairs
    step = float(diffs[diffs <= thresh].max()) if np.any(diffs <= thresh) else 0.0
    g = coo_matrix((np.ones(len(keep)), (keep[:, 0], keep[:, 1])), shape=(m.size, m.size)) \
        if len(keep) else coo_matrix((m.size, m.size))
    _, label = csgraph.connected_components(g, directed=False)
    runs = [(float(m[label == c].min()), float(m[label == c].max())) for c in np.unique(label)]
    runs.sort()
    merged: list[list[float]] = []
    for a, b in runs:
        if merged and a - merged[-1][1] <= 2 * step:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    tol = 1e-12 * max(1.0, float(np.abs(m).max()))
    ivs = tuple((a, b) for a, b in merged if b - a > tol)
    pts = tuple((0.5 * (a + b), 1) for a, b in merged if b - a <= tol)
    return SpectralSet(ivs, pts, "essential range")


def _neighbour_pairs(geom: CellGeometry, cells: np.ndarray) -> np.ndarray:
    pos = {int(c): i for i, c in enumerate(cells)}
    idx = geom.multi_index()
    out = []
    for c in cells:
        for ax in range(geom.d):
            nb = idx[c].copy()
            nb[ax] = (nb[ax] + 1) % geom.n
            flat = int(np.ravel_multi_index(tuple(nb), (geom.n,) * geom.d))
            if flat in pos:
                out.append((pos[int(c)], pos[flat]))
    return np.array(out, dtype=int).reshape(-1, 2)


def spectrum(op: HermitianOperator, window: tuple[float, float] | None = None,
             with_essential: bool = True, geom: CellGeometry | None = None) -> SpectralSet:
    ev = op.eigvalsh()
    if window is not None:
        ev = ev[(ev >= window[0]) & (ev <= window[1])]
    uniq, counts = _cluster_multiplicities(ev)
    out = SpectralSet((), tuple(zip(uniq, counts)), f"spectrum ({op.basis})")
    if with_essential and op.diagonal is not None:
        ess = essential_range(op.diagonal, geom if op.basis == "soft" else None,
                              op.cells if op.basis == "soft" else None)
        out = out.union(SpectralSet(ess.intervals, (), ""), tag=out.tag)
    return out


def _cluster_multiplicities(ev: np.ndarray, rel: float = 1e-10):
    if ev.size == 0:
        return [], []
    scale = max(1.0, float(np.abs(ev).max()))
    vals, counts = [float(ev[0])], [1]
    for x in ev[1:]:
        if abs(x - vals[-1]) <= rel * scale:
            counts[-1] += 1
        else:
            vals.append(float(x))
            counts.append(1)
    return vals, counts


def default_discrete_tol(n: int, c: float = 1.0) -> float:
    return max(1e-6, c / n)


def discrete_spectrum(eigenvalues: np.ndarray, ess: SpectralSet, tol: float) -> SpectralSet:
    ev = np.sort(np.asarray(eigenvalues, dtype=float))
    far = ev[ess.distance(ev) > tol]
    vals, counts = _cluster_multiplicities(far)
    return SpectralSet((), tuple(zip(vals, counts)), "discrete")


def rayleigh_minmax(op: HermitianOperator | np.ndarray, k: int, side: str = "below") -> float:
    """k-th min-max value from below (or max-min from above), cross-checked on the spanning subspace."""
    M = op.matrix if isinstance(op, HermitianOperator) else np.asarray(op)
    dim = M.shape[0]
    if not 1 <= k <= dim:
        raise ConfigError(f"k = {k} outside 1..{dim}")
    w, V = linalg.eigh(M)
    if side == "below":
        Vk, value = V[:, :k], w[k - 1]
        check = linalg.eigvalsh(Vk.conj().T @ M @ Vk).max()
    elif side == "above":
        Vk, value = V[:, dim - k:], w[dim - k]
        check = linalg.eigvalsh(Vk.conj().T @ M @ Vk).min()
    else:
        raise ConfigError("side must be 'below' or 'above'")
    scale = max(1.0, float(np.abs(w).max()))
    if abs(check - value) > 1e-10 * scale:
        raise NumericalError("min-max value disagrees with the eigensolver")
    return float(value)


def rayleigh_quotient(op: HermitianOperator | np.ndarray, z: np.ndarray) -> float:
    M = op.matrix if isinstance(op, HermitianOperator) else np.asarray(op)
    z = np.asarray(z)
    return float(np.real(np.vdot(z, M @ z)) / np.real(np.vdot(z, z)))


# ---------------------------------------------------------------- beta function


class BetaFunction:
    """beta(lam) = lam + lam^2 <(A# - lam)^{-1} 1_soft> from the periodic soft operator."""

    def __init__(self, op: HermitianOperator, cell_volume: float, mass_tol: float = 1e-14,
                 pole_rel_tol: float = 1e-6):
        if op.basis != "soft":
            raise ConfigError("beta needs the periodic soft operator")
        self.op = op
        self.h = cell_volume
        self.matrix = np.asarray(op.matrix.real, dtype=float)
        w, V = linalg.eigh(self.matrix)
        self.eigenvalues = w
        ones = np.ones(w.size)
        self.mass = self.h * (V.T @ ones) ** 2
        # eigenvectors orthogonal to constants do not enter beta
        self.active = self.mass > mass_tol
        self.soft_volume = self.h * w.size
        self.radius = max(1.0, float(np.abs(w).max()))
        self.pole_tol = pole_rel_tol * self.radius
        self.poles = _cluster_poles(w[self.mass > mass_tol], self.mass[self.mass > mass_tol],
                                    self.pole_tol)
        self.pole_mass = self._pole_masses(mass_tol)

    def _pole_masses(self, mass_tol):
        out = []
        for p in self.poles:
            sel = (np.abs(self.eigenvalues - p) <= self.pole_tol) & (self.mass > mass_tol)
            out.append(float(self.mass[sel].sum()))
        return np.array(out)

    def near_pole(self, lam: float) -> bool:
        return bool(self.poles.size and np.min(np.abs(self.poles - lam)) <= self.pole_tol)

    def mean_resolvent(self, lam: float, route: str = "spectral") -> float:
        """<b_lam> with b_lam = (A# - lam)^{-1} 1_soft."""
        if lam == 0.0 and route == "spectral":
            a = self.active
            return float(np.sum(self.mass[a] / self.eigenvalues[a]))
        if self.near_pole(lam):
            raise PoleError(f"lambda = {lam} is at a pole of beta")
        if route == "spectral":
            a = self.active
            return float(np.sum(self.mass[a] / (self.eigenvalues[a] - lam)))
        if route == "solve":
            A = self.matrix - lam * np.eye(self.matrix.shape[0])
            try:
                b = linalg.solve(A, np.ones(A.shape[0]), assume_a="sym")
            except linalg.LinAlgError as exc:
                raise NumericalError(f"singular soft resolvent at {lam}") from exc
            return float(self.h * b.sum())
        raise ConfigError(f"unknown route {route!r}")

    def __call__(self, lam: float, route: str = "spectral") -> float:
        if lam == 0.0:
            return 0.0
        return lam + lam * lam * self.mean_resolvent(lam, route)

    def derivative(self, lam: float) -> float:
        s, m = self.eigenvalues[self.active], self.mass[self.active]
        return float(1.0 - m.sum() + np.sum(m * s**2 / (s - lam) ** 2))

    # monotone branches between consecutive poles
    def branches(self, lo: float = 0.0, hi: float = math.inf) -> list[tuple[float, float]]:
        edges = [-math.inf] + list(self.poles) + [math.inf]
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            a2, b2 = max(a, lo), min(b, hi)
            if a2 < b2:
                out.append((a2, b2))
        return out

    def solve(self, target: float, a: float, b: float) -> float | None:
        """The unique lam in the open branch (a, b) with beta(lam) = target, if any."""
        eta = max(4.0 * self.pole_tol, 1e-12)
        lo = a + eta if a in self.poles else a
        hi = b - eta if b in self.poles else b
        if math.isinf(lo):
            lo = -1.0
            while self(lo) > target:
                lo *= 2.0
        if math.isinf(hi):
            hi = max(1.0, abs(lo)) * 2.0
            while self(hi) < target:
                hi *= 2.0
                if hi > 1e15:
                    raise NumericalError("beta root bracket failed")
        flo, fhi = self(lo) - target, self(hi) - target
        if flo == 0.0:
            return lo
        if fhi == 0.0:
            return hi
        if flo * fhi > 0:
            return None
        return float(optimize.brentq(lambda x: self(x) - target, lo, hi, xtol=1e-14, rtol=1e-15))


def _cluster_poles(values: np.ndarray, masses: np.ndarray, tol: float) -> np.ndarray:
    if values.size == 0:
        return values
    out = [values[0]]
    for v in values[1:]:
        if v - out[-1] > tol:
            out.append(v)
    return np.array(out)


@dataclass
class BetaTable:
    lam: np.ndarray
    beta: np.ndarray
    mean_resolvent: np.ndarray
    near_pole: np.ndarray
    poles: np.ndarray
    roots: list[float]
    brackets: list[tuple[float, float]]
    # 2-norm condition number of A# - lam; massless eigenvalues count here even though beta
    # stays finite across them
    condition: np.ndarray | None = None

    def rows(self):
        cond = self.condition if self.condition is not None else np.full(self.lam.size, np.nan)
        for l, b, p, c in zip(self.lam, self.beta, self.near_pole, cond):
            yield float(l), float(b), bool(p), float(c)


def tabulate_beta(beta: BetaFunction, grid: Sequence[float], workers: int | None = None) -> BetaTable:
    grid = np.asarray(grid, dtype=float)

    def sample(lam):
        if beta.near_pole(lam):
            return math.nan, math.nan, True
        mr = beta.mean_resolvent(lam) if lam != 0 else beta.mean_resolvent(0.0)
        return beta(lam), mr, False

    out = ordered_map(sample, grid, workers)
    vals = np.array([o[0] for o in out])
    mres = np.array([o[1] for o in out])
    near = np.array([o[2] for o in out])
    dist = np.abs(beta.eigenvalues[None, :] - grid[:, None])
    with np.errstate(divide="ignore"):
        cond = dist.max(axis=1) / dist.min(axis=1)
    roots, brackets = [], []
    for a, b in beta.branches(lo=0.0):
        if a == 0.0:
            roots.append(0.0)
            brackets.append((0.0, 0.0))
            continue
        r = beta.solve(0.0, a, b)
        if r is None:
            raise NumericalError(f"unbracketed sign change of beta on ({a}, {b}); "
                                 "refine the pole resolution")
        roots.append(r)
        brackets.append((a, b))
    return BetaTable(grid, vals, mres, near, beta.poles.copy(), roots, brackets, cond)


def nonnegative_set(beta: BetaFunction, hi: float = math.inf) -> SpectralSet:
    """{lam >= 0 : beta(lam) >= 0} as closed intervals (closed at poles by convention)."""
    ivs = []
    for a, b in beta.branches(lo=0.0):
        r = 0.0 if a == 0.0 else beta.solve(0.0, a, b)
        if r is None:
            # no sign change: beta keeps one sign on the branch
            mid = a + 1.0 if math.isinf(b) else 0.5 * (a + b)
            if beta(mid) >= 0:
                r = a
            else:
                continue
        right = min(b, hi)
        if r <= right:
            ivs.append((r, right))
    return SpectralSet(tuple(ivs), (), "beta >= 0")


def limit_spectrum_wholespace(beta: BetaFunction, soft_union: SpectralSet, soft_periodic: SpectralSet,
                              Lam: float) -> tuple[SpectralSet, SpectralSet]:
    """(G, two-scale set) on [0, Lam]: {beta >= 0} united with Sp(A_soft) resp. Sp(A_soft#)."""
    nonneg = nonnegative_set(beta, Lam)
    G = nonneg.union(soft_union.truncate(0.0, Lam), tag="limit set G")
    two_scale = nonneg.union(soft_periodic.truncate(0.0, Lam), tag="two-scale spectrum")
    return G, two_scale


def dirichlet_values(Ahom: np.ndarray, lengths: Sequence[float], cap: float) -> np.ndarray:
    """Separable Dirichlet eigenvalues sum_i A_ii pi^2 k_i^2 / l_i^2 up to cap."""
    A = np.atleast_2d(np.asarray(Ahom, dtype=float))
    d = A.shape[0]
    if len(lengths) != d:
        raise ConfigError("box needs one side length per dimension")
    if d > 1 and np.abs(A - np.diag(np.diag(A))).max() > 1e-12 * np.abs(A).max():
        raise UnsupportedError("box spectrum needs a diagonal homogenised matrix in d > 1")
    per_axis = []
    for i in range(d):
        c = A[i, i] * math.pi**2 / lengths[i] ** 2
        kmax = int(math.sqrt(max(cap, 0.0) / c)) + 1
        per_axis.append(c * np.arange(1, kmax + 1) ** 2)
    vals = per_axis[0]
    for extra in per_axis[1:]:
        vals = (vals[:, None] + extra[None, :]).reshape(-1)
    vals = np.sort(vals)
    return vals[vals <= cap]


def box_limit_spectrum(beta: BetaFunction, Ahom: np.ndarray, lengths: Sequence[float],
                       orthant_spectra: Sequence[SpectralSet], Lam: float,
                       pole_resolution: float = 1e-4) -> SpectralSet:
    """Preimages under beta of the Dirichlet values, united with orthant spectra, on [0, Lam].

    Preimages accumulate below every pole; those closer to a pole than
    pole_resolution are not resolved (the pole itself is reported instead).
    """
    pts = []
    for a, b in beta.branches(lo=0.0, hi=Lam):
        right_pole = b in beta.poles
        b_eff = b - max(pole_resolution, 4 * beta.pole_tol) if right_pole else b
        if b_eff <= a:
            continue
        lo_val = -math.inf if a in beta.poles else beta(a)
        cap = beta(b_eff)
        if cap <= 0:
            continue
        for mu in dirichlet_values(Ahom, lengths, cap):
            if mu < lo_val:
                continue
            r = beta.solve(mu, a, b_eff)
            if r is not None and r <= Lam:
                pts.append((r, 1))
        if right_pole and b <= Lam:
            pts.append((b, 1))
    out = SpectralSet((), tuple(pts), "box limit spectrum")
    for s in orthant_spectra:
        out = out.union(s.truncate(0.0, Lam), tag=out.tag)
    return out


# ---------------------------------------------------------------- quasimodes


@dataclass
class QuasimodeReport:
    epsilon: float
    bound: float
    distance: float | None
    holds: bool | None


def quasimode_distance(op: HermitianOperator | np.ndarray, u: np.ndarray, lam: float,
                       check: bool = True) -> QuasimodeReport:
    """Residual eps = ||(A + 1)^{-1/2} (A - lam) u|| and bound |lam + 1| eps / (1 - eps)."""
    M = op.matrix if isinstance(op, HermitianOperator) else np.asarray(op)
    u = np.asarray(u)
    nrm = np.linalg.norm(u)
    if abs(nrm - 1.0) > 1e-10:
        raise ConfigError("quasimode must be normalised")
    w, V = linalg.eigh(M)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise ConfigError("quasimode bound needs a non-negative operator")
    r = M @ u - lam * u
    coef = V.conj().T @ r
    eps = float(np.sqrt(np.sum(np.abs(coef) ** 2 / (w + 1.0))))
    if eps >= 1.0:
        raise NumericalError(f"residual {eps:.3g} >= 1: bound unavailable")
    bound = abs(lam + 1.0) * eps / (1.0 - eps)
    dist = float(np.min(np.abs(w - lam)))
    holds = dist <= bound + 1e-12 * max(1.0, abs(lam))
    if check and not holds:
        raise NumericalError(f"quasimode bound violated: {dist} > {bound}")
    return QuasimodeReport(eps, bound, dist, holds)


# ---------------------------------------------------------------- limit resolvent


@dataclass
class LimitResolvent:
    x: np.ndarray
    u: np.ndarray
    z: np.ndarray
    residual: float


def _dirichlet_laplacian(nx: int, length: float) -> tuple[np.ndarray, np.ndarray]:
    dx = length / (nx + 1)
    x = dx * np.arange(1, nx + 1)
    D = (2 * np.eye(nx) - np.eye(nx, k=1) - np.eye(nx, k=-1)) / dx**2
    return x, D


def _coupled_residual(A: float, D, soft_op, h, lam, f, u, z) -> float:
    mean_f = h * f.sum(axis=1)
    S = soft_op.cells
    r1 = A * D @ u - lam * (u + h * z.sum(axis=1)) - mean_f
    r2 = z @ soft_op.matrix.T - lam * (u[:, None] + z) - f[:, S]
    scale = max(np.linalg.norm(mean_f), np.linalg.norm(f[:, S]), 1e-300)
    return float(max(np.linalg.norm(r1), np.linalg.norm(r2)) / scale)


def solve_limit_resolvent(geom: CellGeometry, soft_op: HermitianOperator, Ahom, lam: float,
                          f: np.ndarray, length: float = 1.0, route: str = "reduced") -> LimitResolvent:
    """Coupled macro/micro resolvent problem on (0, length) x Y, Dirichlet in x.

    f has shape (nx, n): one cell grid function per interior node.
    """
    if geom.d != 1:
        raise UnsupportedError("limit resolvent is implemented for d = 1")
    if not lam < 0:
        raise ConfigError("limit resolvent needs lambda < 0")
    f = np.asarray(f, dtype=float)
    nx = f.shape[0]
    if f.shape != (nx, geom.n):
        raise ConfigError("f must have shape (nx, n)")
    A = float(np.atleast_2d(Ahom)[0, 0])
    h = geom.cell_volume
    S = soft_op.cells
    ns = S.size
    x, D = _dirichlet_laplacian(nx, length)
    As = soft_op.matrix.real
    shifted = As - lam * np.eye(ns)
    if route == "reduced":
        beta = BetaFunction(soft_op, h)
        b_mean = beta.mean_resolvent(lam, route="solve")
        beta_val = lam + lam * lam * b_mean
        fsoft = f[:, S]
        sol = linalg.solve(shifted, fsoft.T, assume_a="sym").T      # (A# - lam)^{-1} f 1_soft
        rhs = h * f.sum(axis=1) + lam * h * sol.sum(axis=1)
        Mred = A * D - beta_val * np.eye(nx)
        ev = linalg.eigvalsh(A * D)
        if np.min(np.abs(ev - beta_val)) < 1e-8 * max(1.0, abs(beta_val)):
            log.warning("beta(lambda) is within tolerance of a Dirichlet eigenvalue")
        u = linalg.solve(Mred, rhs)
        z = linalg.solve(shifted, (lam * u[:, None] + fsoft).T, assume_a="sym").T
    elif route == "direct":
        dim = nx * (1 + ns)
        B = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        B[:nx, :nx] = A * D - lam * np.eye(nx)
        for k in range(nx):
            cols = nx + k * ns + np.arange(ns)
            B[k, cols] = -lam * h
            B[np.ix_(cols, cols)] = shifted
            B[cols, k] = -lam
            rhs[cols] = f[k, S]
        rhs[:nx] = h * f.sum(axis=1)
        sol = linalg.solve(B, rhs)
        u = sol[:nx]
        z = sol[nx:].reshape(nx, ns)
    else:
        raise ConfigError(f"unknown route {route!r}")
    res = _coupled_residual(A, D, soft_op, h, lam, f, u, z) if np.any(f) else 0.0
    if res > 1e-6:
        raise NumericalError(f"coupled-system residual {res:.3e} exceeds 1e-6")
    return LimitResolvent(x, u, z, res)


def project_stiff_mean(geom: CellGeometry, f: np.ndarray) -> np.ndarray:
    """Two-scale projection: stiff values replaced by their stiff-cell mean, soft values kept."""
    f = np.array(f, dtype=float, copy=True)
    stiff = ~geom.soft_flat
    f[..., stiff] = f[..., stiff].mean(axis=-1, keepdims=True)
    return f
