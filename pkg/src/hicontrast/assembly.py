"""Dense Nystrom assembly of the cell, fiber, homogenised-fiber, truncated and stiff operators.

Grid functions are piecewise constant on the n^d midpoint grid, so the L^2 inner
product is n^{-d} times the Euclidean one and matrix eigenvalues are operator
eigenvalues. Integrals over R^d are folded onto the cell with the lattice sums
of ``kernel.periodize`` / ``kernel.lattice_moments``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError
from .geometry import CellGeometry, CoefficientField
from .kernel import KernelSpec, LatticeMoments, default_cutoff, lattice_moments, lattice_offsets, periodize


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    matrix: np.ndarray
    basis: str                      # "full" | "soft" | "constants+soft" | "truncated"
    cells: np.ndarray               # grid (or region) cell indices of the basis functions
    meta: dict = field(default_factory=dict)
    diagonal: np.ndarray | None = None   # multiplication part m, when the operator has one
    form: np.ndarray | None = None       # form matrix for non-orthonormal bases
    gram: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def asymmetry(self) -> float:
        M = self.matrix
        scale = max(float(np.abs(M).max()), 1e-300)
        return float(np.abs(M - M.conj().T).max()) / scale

    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix) or not np.any(self.matrix.imag)

    def eigvalsh(self) -> np.ndarray:
        try:
            return linalg.eigvalsh(self.matrix)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc

    def eigh(self):
        try:
            return linalg.eigh(self.matrix)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc


# ---------------------------------------------------------------- folded kernels


def _cache(spec: KernelSpec) -> dict:
    return spec._moment_cache


def resolve_cutoff(spec: KernelSpec, J: int | None) -> int:
    return default_cutoff(spec) if J is None else int(J)


def folded(spec: KernelSpec, n: int, theta=0.0, J: int | None = None) -> np.ndarray:
    J = resolve_cutoff(spec, J)
    th = tuple(np.round(np.atleast_1d(np.asarray(theta, dtype=float)), 15))
    key = ("fold", n, J, th)
    store = _cache(spec)
    if key not in store:
        store[key] = periodize(spec, np.array(th), J, n)
    return store[key]


def folded_moments(spec: KernelSpec, n: int, J: int | None = None) -> LatticeMoments:
    J = resolve_cutoff(spec, J)
    key = ("moments", n, J)
    store = _cache(spec)
    if key not in store:
        store[key] = lattice_moments(spec, n, J)
    return store[key]


def pair_table(geom: CellGeometry, grid_values: np.ndarray) -> np.ndarray:
    """N x N table T[i, j] = values[(j - i) mod n] of a difference-grid array."""
    return grid_values[geom.difference_index()]


def kernel_table(geom: CellGeometry, spec: KernelSpec, theta=0.0, J: int | None = None) -> np.ndarray:
    _check_dims(geom, spec)
    return pair_table(geom, folded(spec, geom.n, theta, J))


def _check_dims(geom: CellGeometry, spec: KernelSpec):
    if geom.d != spec.d:
        raise ConfigError(f"geometry is {geom.d}-D but the kernel is {spec.d}-D")


def _check_theta(theta, d: int) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.shape != (d,):
        raise ConfigError(f"theta must have {d} components")
    if np.any(np.abs(th) > math.pi + 1e-12):
        raise ConfigError("theta must lie in [-pi, pi]^d")
    return th


# ---------------------------------------------------------------- soft operators


def soft_multiplier(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                    J: int | None = None) -> np.ndarray:
    """m(y_i) = 2 h sum_l a~(y_l - y_i) p(i, l) on all cells."""
    h = geom.cell_volume
    K0 = kernel_table(geom, spec, 0.0, J)
    return 2.0 * h * np.einsum("ij,ij->i", K0, coeff.p)


def assemble_soft_fiber(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                        theta=0.0, J: int | None = None) -> HermitianOperator:
    """Soft-cell operator with quasi-periodicity theta: m z - 2 h sum a~_theta p z."""
    th = _check_theta(theta, geom.d)
    S = geom.soft_index
    h = geom.cell_volume
    m = soft_multiplier(geom, coeff, spec, J)[S]
    Kt = kernel_table(geom, spec, th, J)[np.ix_(S, S)]
    M = np.diag(m).astype(Kt.dtype) - 2.0 * h * Kt * coeff.p[np.ix_(S, S)]
    if not np.any(th):
        M = M.real
    M = 0.5 * (M + M.conj().T)
    return HermitianOperator(M, "soft", S, {"theta": th.tolist()}, diagonal=m)


def assemble_soft_periodic(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                           J: int | None = None) -> HermitianOperator:
    return assemble_soft_fiber(geom, coeff, spec, np.zeros(geom.d), J)


# ---------------------------------------------------------------- full fibers


def fiber_matrix(geom: CellGeometry, weight: np.ndarray, spec: KernelSpec, theta,
                 J: int | None = None) -> np.ndarray:
    """2 [diag(h sum_l C_il a~_0) - h C_ij a~_theta] for a symmetric pair weight C."""
    h = geom.cell_volume
    K0 = kernel_table(geom, spec, 0.0, J)
    Kt = kernel_table(geom, spec, theta, J)
    diag = h * np.einsum("ij,ij->i", K0, weight)
    M = np.diag(diag).astype(Kt.dtype) - h * weight * Kt
    M = 2.0 * M
    return 0.5 * (M + M.conj().T)


def assemble_fiber(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec, eps: float,
                   theta=0.0, J: int | None = None) -> HermitianOperator:
    if not eps > 0:
        raise ConfigError("epsilon must be positive")
    th = _check_theta(theta, geom.d)
    M = fiber_matrix(geom, coeff.fiber_weight(eps), spec, th, J)
    if not np.any(th):
        M = M.real
    return HermitianOperator(M, "full", np.arange(geom.size), {"eps": eps, "theta": th.tolist()})


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Constants plus soft-cell indicators (columns of phi), and the zero-mean stiff space."""

    geometry: CellGeometry
    phi: np.ndarray
    soft_cells: np.ndarray

    @classmethod
    def constants_plus_soft(cls, geom: CellGeometry) -> "SubspaceBasis":
        S = geom.soft_index
        phi = np.zeros((geom.size, 1 + S.size))
        phi[:, 0] = 1.0
        phi[S, 1 + np.arange(S.size)] = 1.0
        return cls(geom, phi, S)

    @property
    def gram(self) -> np.ndarray:
        return self.geometry.cell_volume * self.phi.T @ self.phi

    def project(self, f: np.ndarray) -> np.ndarray:
        """L^2-orthogonal projection onto span(phi): constant stiff mean, soft values kept."""
        h = self.geometry.cell_volume
        coef = linalg.solve(self.gram, h * self.phi.T @ f, assume_a="pos")
        return self.phi @ coef

    @staticmethod
    def zero_mean(values: np.ndarray, axis: int = 0) -> np.ndarray:
        return values - values.mean(axis=axis, keepdims=True)


def assemble_homogenized_fiber(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                               eps: float, theta, Ahom: np.ndarray,
                               J: int | None = None) -> HermitianOperator:
    """Form eps^-2 A theta.theta |z|^2 + b_theta[z + v] on constants + soft cells."""
    if not eps > 0:
        raise ConfigError("epsilon must be positive")
    th = _check_theta(theta, geom.d)
    A = np.atleast_2d(np.asarray(Ahom, dtype=float))
    if A.shape != (geom.d, geom.d) or np.linalg.eigvalsh(0.5 * (A + A.T)).min() <= 0:
        raise ConfigError("Ahom must be a symmetric positive definite d x d matrix")
    basis = SubspaceBasis.constants_plus_soft(geom)
    h = geom.cell_volume
    Mp = fiber_matrix(geom, coeff.p, spec, th, J)
    form = h * (basis.phi.T @ Mp @ basis.phi)
    form[0, 0] += float(th @ A @ th) / eps**2
    form = 0.5 * (form + form.conj().T)
    gram = basis.gram
    g_inv_half = _inv_sqrt(gram)
    M = g_inv_half @ form @ g_inv_half
    M = 0.5 * (M + M.conj().T)
    if not np.any(th):
        M, form = M.real, form.real
    cells = np.concatenate([[-1], basis.soft_cells])
    return HermitianOperator(M, "constants+soft", cells, {"eps": eps, "theta": th.tolist()},
                             form=form, gram=gram)


def _inv_sqrt(G: np.ndarray) -> np.ndarray:
    w, V = linalg.eigh(G)
    return (V / np.sqrt(w)) @ V.T


# ---------------------------------------------------------------- truncated operators


@dataclass(frozen=True)
class Region:
    """Union of whole periods on the line: cells [start * n, stop * n)."""

    start: int
    stop: int
    kind: str = "box"

    @classmethod
    def box(cls, N: int, length: int = 1) -> "Region":
        if N < 1 or length < 1:
            raise ConfigError("box needs N >= 1 and integer side length >= 1")
        return cls(0, N * length, "box")

    @classmethod
    def orthant(cls, side: str, R: int) -> "Region":
        """Window of R periods of the half-line attached to a box vertex."""
        if R < 1:
            raise ConfigError("orthant window needs R >= 1 periods")
        if side == "left":
            return cls(0, R, "orthant-left")
        if side == "right":
            return cls(-R, 0, "orthant-right")
        raise ConfigError(f"unknown orthant side {side!r}")


def _truncated_fold(spec: KernelSpec, n: int, L: float, J: int) -> np.ndarray:
    pts = lattice_offsets(n, 1, J)[..., 0]
    vals = spec(pts) * (np.abs(pts) <= L + 1e-12)
    return vals.sum(axis=-1)


def assemble_truncated(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                       region: Region, L: float | None = None,
                       J: int | None = None) -> HermitianOperator:
    """Non-periodic Nystrom operator on the soft cells of a region of the line.

    The multiplier keeps the whole-line (optionally L-truncated) kernel; the
    integral term only sees soft cells inside the region.
    """
    if geom.d != 1:
        raise ConfigError("truncated operators are implemented for d = 1")
    n, h = geom.n, geom.cell_volume
    cells = np.arange(region.start * n, region.stop * n)
    local = cells % n
    soft = geom.soft_flat[local]
    cells, local = cells[soft], local[soft]
    if cells.size == 0:
        raise ConfigError("region contains no soft cell")
    J = resolve_cutoff(spec, J)
    if L is None:
        L = spec.support_radius if spec.compact else float(J)
        m = soft_multiplier(geom, coeff, spec, J)
    else:
        fold = _truncated_fold(spec, n, L, J)
        m = 2.0 * h * np.einsum("ij,ij->i", pair_table(geom, fold), coeff.p)
    m_full = soft_multiplier(geom, coeff, spec, J)
    x = (cells + 0.5) / n
    diff = x[None, :] - x[:, None]
    aL = spec(diff) * (np.abs(diff) <= L + 1e-12)
    M = np.diag(m[local]) - 2.0 * h * aL * coeff.p[np.ix_(local, local)]
    M = 0.5 * (M + M.T)
    deficit = float(np.max(m_full[local] - m[local]))
    return HermitianOperator(M, "truncated", cells,
                             {"region": [region.start, region.stop], "kind": region.kind,
                              "L": L, "multiplier_deficit": deficit},
                             diagonal=m[local])


# ---------------------------------------------------------------- stiff form


@dataclass(frozen=True, eq=False)
class StiffForm:
    """Galerkin matrix 2 h^2 (D - W) of the stiff form on the cells carrying lambda0."""

    matrix: np.ndarray
    laplacian: np.ndarray
    cells: np.ndarray
    second_eigenvalue: float

    @property
    def dim(self) -> int:
        return self.cells.size


def assemble_stiff_form(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec,
                        J: int | None = None, check: bool = True) -> StiffForm:
    cells = coeff.active_stiff
    if cells.size < 2:
        raise ConfigError("stiff coupling needs at least two cells")
    K0 = kernel_table(geom, spec, 0.0, J)[np.ix_(cells, cells)]
    W = coeff.lambda0[np.ix_(cells, cells)] * K0
    Lap = np.diag(W.sum(axis=1)) - W
    Lap = 0.5 * (Lap + Lap.T)
    h = geom.cell_volume
    G = 2.0 * h * h * Lap
    ev = linalg.eigvalsh(G)
    scale = max(float(np.abs(ev).max()), 1e-300)
    lam2 = float(ev[1])
    if check and lam2 <= 1e-10 * scale:
        raise NumericalError("stiff form is not coercive on zero-mean functions: "
                             "the stiff set is not connected through the kernel")
    return StiffForm(G, Lap, cells, lam2)
