"""Discrete extension from a perforated set, path energy bounds and the mollifier decomposition."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConfigError, NumericalError, UnsupportedError
from .geometry import CellGeometry, CoefficientField, ConnectivityReport, verify_connectivity
from .kernel import KernelSpec


# ---------------------------------------------------------------- mean inequalities


@dataclass
class MeanInequalityReport:
    point_lhs: float        # integral over B of |u_A - u|^2
    point_rhs: float        # |A|^-1 double integral over A x B
    mean_lhs: float         # |u_A - u_B|^2
    mean_rhs: float         # (|A||B|)^-1 double integral over A x B
    holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mean_inequalities_check(u: np.ndarray, A: np.ndarray, B: np.ndarray, cell_volume: float,
                            check: bool = True) -> MeanInequalityReport:
    """Both mean-value inequalities for p = 2 on grid sets A, B (boolean masks)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    A = np.asarray(A, dtype=bool).reshape(-1)
    B = np.asarray(B, dtype=bool).reshape(-1)
    if not A.any() or not B.any():
        raise ConfigError("both sets need positive measure")
    h = cell_volume
    uA, uB = u[A], u[B]
    size_a, size_b = h * uA.size, h * uB.size
    mean_a, mean_b = uA.mean(), uB.mean()
    # sum_{x in A, y in B} (u_x - u_y)^2 without forming the pair table
    double = h * h * (uB.size * np.sum(uA**2) + uA.size * np.sum(uB**2) - 2 * uA.sum() * uB.sum())
    double = max(double, 0.0)
    point_lhs = h * float(np.sum((mean_a - uB) ** 2))
    point_rhs = double / size_a
    mean_lhs = float((mean_a - mean_b) ** 2)
    mean_rhs = double / (size_a * size_b)
    slack = 1e-12 * max(1.0, point_rhs, mean_rhs)
    holds = point_lhs <= point_rhs + slack and mean_lhs <= mean_rhs + slack
    if check and not holds:
        raise NumericalError("mean-value inequality violated")
    return MeanInequalityReport(point_lhs, point_rhs, mean_lhs, mean_rhs, bool(holds))


# ---------------------------------------------------------------- extension


@dataclass(frozen=True, eq=False)
class MaskedFunction:
    """Grid values on a box of shape (n_1, ..., n_d), zero off the mask M.

    cube_cells is the side of the partition cubes in cells.
    """

    values: np.ndarray
    mask: np.ndarray
    spacing: float
    cube_cells: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if vals.shape != mask.shape:
            raise ConfigError("values and mask shapes differ")
        if any(s % self.cube_cells for s in vals.shape):
            raise ConfigError("grid size must be a multiple of the cube side")
        object.__setattr__(self, "values", np.where(mask, vals, 0.0))
        object.__setattr__(self, "mask", mask)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d

    def cubes(self):
        """Index slices of the partition cubes."""
        per_axis = [range(0, s, self.cube_cells) for s in self.values.shape]
        for corner in itertools.product(*per_axis):
            yield tuple(slice(c, c + self.cube_cells) for c in corner)

    def with_values(self, values) -> "MaskedFunction":
        return MaskedFunction(values, self.mask, self.spacing, self.cube_cells)


@dataclass
class ExtensionReport:
    c1: float
    l2_extended: float
    l2_masked: float
    holds: bool
    energy_ratio: float | None = None
    energy_radius: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def extension_constant(u: MaskedFunction) -> float:
    """c1 = 1 + max over partition cubes of |cube minus M| / |cube intersect M|."""
    worst = 0.0
    for sl in u.cubes():
        inside = int(u.mask[sl].sum())
        if inside == 0:
            raise ConfigError("a partition cube misses the set M")
        worst = max(worst, (u.mask[sl].size - inside) / inside)
    return 1.0 + worst


def extend(u: MaskedFunction) -> np.ndarray:
    """Identity on M, the mean over M of the cube on the rest of each partition cube."""
    out = np.array(u.values, copy=True)
    for sl in u.cubes():
        m = u.mask[sl]
        if not m.any():
            raise ConfigError("a partition cube misses the set M")
        block = out[sl]
        block[~m] = u.values[sl][m].mean()
        out[sl] = block
    return out


def pair_energy(points: np.ndarray, values: np.ndarray, radius: float, cell_volume: float,
                keep: np.ndarray | None = None, periods: np.ndarray | None = None) -> float:
    """sum over ordered pairs with |x - y| < radius of (u_x - u_y)^2, times cell_volume^2."""
    if keep is not None:
        points, values = points[keep], values[keep]
    if len(points) < 2:
        return 0.0
    box = None if periods is None else periods
    tree = cKDTree(points, boxsize=box)
    pairs = tree.query_pairs(radius * (1 - 1e-12), output_type="ndarray")
    if pairs.size == 0:
        return 0.0
    diff = values[pairs[:, 0]] - values[pairs[:, 1]]
    return 2.0 * cell_volume**2 * float(np.sum(diff**2))


def _grid_points(shape, spacing) -> np.ndarray:
    axes = [(np.arange(s) + 0.5) * spacing for s in shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))


def extension_check(u: MaskedFunction, outer_radius: float | None = None,
                    inner_radius: float | None = None, check: bool = True) -> tuple[np.ndarray, ExtensionReport]:
    """Extend and verify the L2 bound with the exact c1; optionally report the energy ratio.

    The energy ratio compares the extended energy over pairs closer than
    outer_radius with the energy of u over M-pairs closer than inner_radius.
    """
    ext = extend(u)
    c1 = extension_constant(u)
    h = u.cell_volume
    lhs = h * float(np.sum(ext**2))
    rhs = h * float(np.sum(u.values[u.mask] ** 2))
    holds = lhs <= c1 * rhs * (1 + 1e-12) + 1e-300
    if check and not holds:
        raise NumericalError(f"extension L2 bound violated: {lhs} > {c1} * {rhs}")
    rep = ExtensionReport(c1, lhs, rhs, bool(holds))
    if outer_radius is not None:
        pts = _grid_points(u.values.shape, u.spacing)
        top = pair_energy(pts, ext.reshape(-1), outer_radius, h)
        bottom = pair_energy(pts, u.values.reshape(-1), inner_radius or outer_radius, h,
                             keep=u.mask.reshape(-1))
        rep.energy_ratio = top / bottom if bottom > 0 else (0.0 if top == 0 else math.inf)
        rep.energy_radius = inner_radius or outer_radius
    return ext, rep


# ---------------------------------------------------------------- path energy


@dataclass
class PathEnergyReport:
    lhs: float
    rhs: float
    ratio: float
    c_r: float | None
    radius: float
    k: int
    holds: bool
    connectivity: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _periodic_stiff_cells(geom: CellGeometry, lo: np.ndarray, periods: int):
    """Midpoints and values index of stiff cells of the periodic set in [lo, lo + periods)^d."""
    n, d = geom.n, geom.d
    count = periods * n
    axes = [lo[i] + (np.arange(count) + 0.5) / n for i in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    cell = np.floor(np.mod(pts, 1.0) * n).astype(int)
    stiff = ~geom.soft_mask[tuple(cell.T)]
    return pts[stiff]


def path_energy_check(geom: CellGeometry, spec: KernelSpec, u_fn, m_box: float = 1.0,
                      center=None, report: ConnectivityReport | None = None,
                      check: bool = True) -> PathEnergyReport:
    """Energy of u over M-pairs in the cube of side m against nearby M-pairs in the cube of side 2k.

    Nearby means closer than r = 2 r0 + r1 from the connectivity witness. The
    reported constant is K^2 (Nbar + 1)^2 / kappa0^2 with K the number of
    r0-balls needed to cover the small cube.
    """
    rep = report or verify_connectivity(geom, spec)
    d = geom.d
    x = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if rep.r1 is None:
        r = 2 * rep.r0 + 1.0 / geom.n
        k = max(1, math.ceil(rep.r0 + m_box))
        c_r = None
    else:
        r = 2 * rep.r0 + rep.r1
        k = max(rep.k, math.ceil(rep.r0 + m_box))
        side = 2 * rep.r0 / math.sqrt(d)
        balls = math.ceil(m_box / side) ** d
        c_r = balls**2 * (rep.Nbar + 1) ** 2 / rep.kappa0**2
    periods = 2 * k
    lo = np.floor(x - k).astype(float)
    pts = _periodic_stiff_cells(geom, lo, periods + 1)
    vals = np.asarray(u_fn(pts), dtype=float).reshape(-1)
    h = geom.cell_volume
    small = np.all(np.abs(pts - x) < m_box / 2, axis=1)
    big = np.all(np.abs(pts - x) < k, axis=1)
    ps, vs = pts[small], vals[small]
    diff = vs[:, None] - vs[None, :]
    lhs = h * h * float(np.sum(diff**2))
    rhs = pair_energy(pts, vals, r, h, keep=big)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    holds = c_r is not None and ratio <= c_r * (1 + 1e-12) if lhs > 0 else True
    if check and not holds:
        raise NumericalError(f"path energy ratio {ratio} exceeds the constant {c_r}")
    return PathEnergyReport(lhs, rhs, ratio, c_r, r, k, bool(holds), rep.to_dict())


# ---------------------------------------------------------------- mollifier decomposition


@dataclass
class Decomposition:
    smooth: np.ndarray           # ubar
    corrector: np.ndarray        # uhat
    soft: np.ndarray             # z
    extended: np.ndarray         # u tilde
    eps: float
    energy: float                # a_eps(u, u) + ||u||^2
    norms: dict
    constant: float              # max of the three normalised bounds
    residual: float              # max |u - ubar - eps uhat - z|
    reach: int = 0               # mollifier radius in grid cells

    def to_dict(self) -> dict:
        return {"eps": self.eps, "energy": self.energy, "norms": self.norms,
                "constant": self.constant, "residual": self.residual}


def polynomial_bump(radius: float, d: int):
    """(1 - |x|^2 / radius^2)^2 on the ball and its exact gradient."""
    def value(x):
        s = np.sum(x**2, axis=-1) / radius**2
        return np.where(s < 1, (1 - s) ** 2, 0.0)

    def grad(x):
        s = np.sum(x**2, axis=-1) / radius**2
        g = -4.0 * (1 - s)[..., None] * x / radius**2
        return np.where((s < 1)[..., None], g, 0.0)

    return value, grad


def scaled_energy(u: np.ndarray, geom: CellGeometry, spec: KernelSpec, coeff: CoefficientField,
                  eps: float) -> float:
    """a_eps(u, u): eps^-d a((x - y)/eps) (eps^-2 lambda0 + p) (u_x - u_y)^2 on the eps-periodic torus (d = 1)."""
    if geom.d != 1:
        raise UnsupportedError("scaled energy is implemented for d = 1")
    N = u.size
    n = geom.n
    dx = 1.0 / N
    x = (np.arange(N) + 0.5) * dx
    diff = x[None, :] - x[:, None]
    diff = diff - np.round(diff)           # unit torus
    cell = np.arange(N) % n
    C = coeff.lambda0[np.ix_(cell, cell)] / eps**2 + coeff.p[np.ix_(cell, cell)]
    K = spec(diff / eps) / eps
    jump = u[None, :] - u[:, None]
    return float(dx * dx * np.sum(K * C * jump**2))


def mollify_decompose(u: np.ndarray, eps: float, geom: CellGeometry, spec: KernelSpec,
                      coeff: CoefficientField, radius: float | None = None) -> Decomposition:
    """u = ubar + eps uhat + z on the unit torus tiled by 1/eps copies of the cell (d = 1).

    The stiff part is extended period by period; ubar mollifies the extension
    with a polynomial bump of radius radius * eps.
    """
    if geom.d != 1:
        raise UnsupportedError("mollifier decomposition is implemented for d = 1")
    periods = round(1.0 / eps)
    if abs(periods * eps - 1.0) > 1e-12:
        raise ConfigError("1/eps must be an integer")
    radius = spec.r_a if radius is None else radius
    if radius > spec.r_a + 1e-12:
        raise ConfigError("mollifier radius exceeds the ellipticity radius")
    n = geom.n
    u = np.asarray(u, dtype=float).reshape(-1)
    N = periods * n
    if u.size != N:
        raise ConfigError(f"u must have {N} values")
    dx = 1.0 / N
    stiff = np.tile(~geom.soft_flat, periods)
    ext = extend(MaskedFunction(np.where(stiff, u, 0.0), stiff, dx, n))
    value, grad = polynomial_bump(radius * eps, 1)
    reach = int(math.ceil(radius * eps / dx))
    offs = np.arange(-reach, reach + 1) * dx
    weights = value(offs[:, None])
    mass = weights.sum()
    if mass <= 0:
        raise ConfigError("mollifier radius below grid resolution")
    weights = weights / mass
    dweights = grad(offs[:, None])[:, 0] / mass
    smooth = ndimage.correlate1d(ext, weights, mode="wrap")
    # d/dx sum_j ext(x + s_j) phi(s_j) = -sum_j ext(x + s_j) phi'(s_j) (exact bump derivative)
    slope = -ndimage.correlate1d(ext, dweights, mode="wrap") * 1.0
    corrector = (ext - smooth) / eps
    soft = u - ext
    residual = float(np.abs(u - smooth - eps * corrector - soft).max())
    energy = scaled_energy(u, geom, spec, coeff, eps) + dx * float(u @ u)
    norms = {"smooth_h1": dx * float(smooth @ smooth + slope @ slope),
             "corrector_l2": dx * float(corrector @ corrector),
             "soft_l2": dx * float(soft @ soft),
             "u_minus_smooth_l2": math.sqrt(dx * float((u - smooth) @ (u - smooth)))}
    const = max(norms["smooth_h1"], norms["corrector_l2"], norms["soft_l2"]) / energy if energy > 0 else 0.0
    return Decomposition(smooth, corrector, soft, ext, eps, energy, norms, const, residual, reach)


def _dilate(mask: np.ndarray, reach: int) -> np.ndarray:
    idx = np.flatnonzero(mask)
    out = np.zeros_like(mask)
    if idx.size == 0:
        return out
    for k in range(-reach, reach + 1):
        out[(idx + k) % mask.size] = True
    return out


def support_contained(dec: Decomposition, tol: float = 0.0) -> bool:
    """ubar and uhat vanish farther than the mollifier radius from the support of the extension."""
    grown = _dilate(np.abs(dec.extended) > tol, dec.reach)
    return bool(np.all(dec.smooth[~grown] == 0.0) and np.all(dec.corrector[~grown] == 0.0))
