"""Cell corrector on the stiff component and the homogenised matrix."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .assembly import StiffForm, assemble_stiff_form, folded_moments, pair_table
from .errors import NumericalError
from .geometry import CellGeometry, CoefficientField
from .kernel import KernelSpec
from .parallel import worker_count

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    chi: np.ndarray          # (d, n_cells), zero mean over the stiff cells
    cells: np.ndarray        # flat grid indices of the stiff cells
    residuals: np.ndarray    # relative Galerkin residual per direction
    forcing: np.ndarray      # (d, n_cells) right-hand sides

    def along(self, eta) -> np.ndarray:
        """chi^eta = chi . eta."""
        return np.tensordot(np.asarray(eta, dtype=float), self.chi, axes=1)

    def to_dict(self) -> dict:
        return {"residuals": self.residuals.tolist(),
                "chi_norm": float(np.sqrt(np.mean(self.chi**2))) if self.chi.size else 0.0}


@dataclass(frozen=True, eq=False)
class HomogenizedMatrix:
    A: np.ndarray
    coercivity_floor: float
    asymmetry: float

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "coercivity_floor": self.coercivity_floor,
                "asymmetry": self.asymmetry}


def _pair_moments(geom: CellGeometry, spec: KernelSpec, cells: np.ndarray, J=None):
    mom = folded_moments(spec, geom.n, J)
    sub = np.ix_(cells, cells)
    first = np.stack([pair_table(geom, mom.first[c])[sub] for c in range(geom.d)])
    second = np.stack([np.stack([pair_table(geom, mom.second[c, e])[sub] for e in range(geom.d)])
                       for c in range(geom.d)])
    zeroth = pair_table(geom, mom.zeroth)[sub]
    return zeroth, first, second


def solve_corrector(stiff: StiffForm, geom: CellGeometry, spec: KernelSpec,
                    coeff: CoefficientField, J=None) -> CorrectorSet:
    """Solve L chi^c = r^c, r^c_l = sum_j lambda0(l, j) F^c(l, j), chi zero mean."""
    cells = stiff.cells
    lam = coeff.lambda0[np.ix_(cells, cells)]
    _, first, _ = _pair_moments(geom, spec, cells, J)
    L = stiff.laplacian
    na = cells.size
    aug = L + np.ones((na, na)) / na
    try:
        factor = linalg.cho_factor(aug)
    except linalg.LinAlgError as exc:
        raise NumericalError("corrector system is singular beyond constants: "
                             "stiff connectivity is violated") from exc

    def one(c: int):
        r = np.einsum("lj,lj->l", lam, first[c])
        r -= r.mean()    # sums to zero up to rounding (antisymmetric first moments)
        chi = linalg.cho_solve(factor, r)
        chi -= chi.mean()
        # backward error: a forcing at rounding level must not inflate the residual
        scale = np.linalg.norm(L) * np.linalg.norm(chi) + np.linalg.norm(r)
        res = np.linalg.norm(L @ chi - r) / max(scale, 1e-300)
        return chi, r, res

    with ThreadPoolExecutor(max_workers=min(worker_count(), geom.d)) as pool:
        out = list(pool.map(one, range(geom.d)))
    chi = np.stack([o[0] for o in out])
    forcing = np.stack([o[1] for o in out])
    res = np.array([o[2] for o in out])
    if np.any(res > 1e-8):
        raise NumericalError(f"corrector residual too large: {res}")
    return CorrectorSet(chi, cells, res, forcing)


def homogenized_matrix(chi: CorrectorSet, geom: CellGeometry, spec: KernelSpec,
                       coeff: CoefficientField, J=None) -> HomogenizedMatrix:
    """A_cd = h^2 sum_ij lambda0 [S^cd + F^d (chi^c_j - chi^c_i)], then symmetrised."""
    cells = chi.cells
    h = geom.cell_volume
    lam = coeff.lambda0[np.ix_(cells, cells)]
    _, first, second = _pair_moments(geom, spec, cells, J)
    d = geom.d
    A = np.empty((d, d))
    for c in range(d):
        jump = chi.chi[c][None, :] - chi.chi[c][:, None]
        for e in range(d):
            A[c, e] = h * h * np.sum(lam * (second[c, e] + first[e] * jump))
    asym = float(np.abs(A - A.T).max() / max(np.abs(A).max(), 1e-300))
    if asym > 1e-12:
        log.info("homogenised matrix asymmetry %.3e before symmetrisation", asym)
    A = 0.5 * (A + A.T)
    floor = float(np.linalg.eigvalsh(A).min())
    if floor <= 0:
        raise NumericalError(f"homogenised matrix is not positive definite (min eig {floor})")
    return HomogenizedMatrix(A, floor, asym)


def energy(chi: CorrectorSet, geom: CellGeometry, spec: KernelSpec, coeff: CoefficientField,
           eta, J=None) -> float:
    """Stiff energy of eta.y + chi^eta: h^2 sum lambda0 sum_k a (eta.x + jump)^2."""
    cells = chi.cells
    h = geom.cell_volume
    eta = np.asarray(eta, dtype=float)
    lam = coeff.lambda0[np.ix_(cells, cells)]
    zeroth, first, second = _pair_moments(geom, spec, cells, J)
    ce = chi.along(eta)
    jump = ce[None, :] - ce[:, None]
    quad = np.einsum("c,e,ceij->ij", eta, eta, second)
    lin = np.einsum("c,cij->ij", eta, first)
    return float(h * h * np.sum(lam * (quad + 2.0 * lin * jump + zeroth * jump**2)))


def compute_ahom(geom: CellGeometry, coeff: CoefficientField, spec: KernelSpec, J=None):
    stiff = assemble_stiff_form(geom, coeff, spec, J)
    chi = solve_corrector(stiff, geom, spec, coeff, J)
    return homogenized_matrix(chi, geom, spec, coeff, J), chi
