import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from hicontrast.assembly import (SubspaceBasis, assemble_fiber, assemble_homogenized_fiber,
                                 assemble_soft_fiber)
from hicontrast.corrector import compute_ahom
from hicontrast.errors import ConfigError
from hicontrast.examples import build_flat_example
from hicontrast.fibers import (band_union, box_spectrum, convergence_study, fit_slope,
                               full_theta_sweep, gap_scan, homogenized_resolvent, limit_sets,
                               resolvent_gap, soft_theta_sweep, theta_grid)
from hicontrast.geometry import CoefficientField, build_geometry
from hicontrast.kernel import indicator_kernel, tent_kernel


@pytest.fixture(scope="module")
def flat():
    cfg = build_flat_example(n=128)
    A = compute_ahom(cfg.geometry, cfg.coeff, cfg.kernel)[0].A
    return cfg, A


@pytest.fixture(scope="module")
def study(flat):
    cfg, A = flat
    return convergence_study(cfg.geometry, cfg.coeff, cfg.kernel, [0.2, 0.1, 0.05], 5.0, A)


def test_theta_grid_contains_zero():
    for n in (3, 9, 33):
        grid = theta_grid(n, 1)
        assert 0.0 in grid[:, 0]
        assert grid[0, 0] == -math.pi and grid[-1, 0] == math.pi
    assert theta_grid(5, 2).shape == (25, 2)
    with pytest.raises(ConfigError):
        theta_grid(4, 1)


def test_rank_one_soft_sweep():
    g = build_geometry(1, 64, soft_intervals=[("1/4", "3/4")])
    c = CoefficientField.separable(g)
    sw = soft_theta_sweep(g, c, tent_kernel(), 17)
    assert sw.slice(0.0) == pytest.approx(np.r_[0.5, np.ones(31)], abs=1e-12)
    # off theta = 0 the fiber is a rank-two perturbation of the identity
    for ev in sw.eigenvalues:
        assert np.sum(np.abs(ev - 1.0) > 1e-10) <= 2
    assert len(sw.union.intervals) == 1
    lo, hi = sw.union.intervals[0]
    assert lo == pytest.approx(0.5, abs=1e-12) and hi > 1.0
    assert sw.union.contains(1.0)


def test_sweep_union_contains_every_fiber_point(flat):
    cfg, _ = flat
    sw = soft_theta_sweep(cfg.geometry, cfg.coeff, cfg.kernel, 17)
    for ev in sw.eigenvalues:
        assert np.all(sw.union.distance(ev) <= 1e-12)


def test_box_eigenvalues_inside_sweep_union(flat):
    cfg, _ = flat
    g, c, s = cfg.geometry, cfg.coeff, cfg.kernel
    sw = soft_theta_sweep(g, c, s, 33)
    ev = box_spectrum(g, c, s, 8)
    assert np.all(sw.union.distance(ev) <= 1e-2)


def test_full_stiff_fibers_leave_only_zero_in_window():
    n = 64
    mask = np.zeros(n, dtype=bool)
    mask[0] = True
    g = build_geometry(1, n, mask=mask)
    c = CoefficientField(g, np.ones((n, n)), np.zeros((n, n)), strict=False)
    spec = indicator_kernel(radius=1.0)
    sw = full_theta_sweep(g, c, spec, 0.01, 17, 5.0)
    for th, ev in zip(sw.thetas, sw.eigenvalues):
        if np.any(th):
            assert ev.size == 0
        else:
            assert ev == pytest.approx([0.0], abs=1e-9)


def test_full_sweep_close_to_limit_set(study):
    assert study.rows[1].eps == 0.1
    assert study.rows[1].hausdorff <= 0.1


def test_finer_theta_grid_only_adds_points(flat):
    cfg, _ = flat
    coarse = full_theta_sweep(cfg.geometry, cfg.coeff, cfg.kernel, 0.1, 9, 5.0)
    fine = full_theta_sweep(cfg.geometry, cfg.coeff, cfg.kernel, 0.1, 17, 5.0)
    assert coarse.union.is_subset(fine.union, fine.merge_tol + 1e-12)


def test_full_sweep_needs_positive_window(flat):
    cfg, _ = flat
    with pytest.raises(ConfigError):
        full_theta_sweep(cfg.geometry, cfg.coeff, cfg.kernel, 0.1, 9, 0.0)


def test_decoupled_soft_cell_resolvents_agree_on_constants_plus_soft():
    n = 32
    mask = np.zeros(n, dtype=bool)
    mask[5] = True
    g = build_geometry(1, n, mask=mask)
    c = CoefficientField(g, np.where(np.outer(~mask, ~mask), 1.0, 0.0), np.zeros((n, n)))
    spec = indicator_kernel(radius=1.0)
    A = compute_ahom(g, c, spec)[0].A
    full = assemble_fiber(g, c, spec, 0.1, np.zeros(1))
    hom = assemble_homogenized_fiber(g, c, spec, 0.1, np.zeros(1), A)
    R_eps = linalg.inv(full.matrix + np.eye(n))
    R_hom = homogenized_resolvent(g, hom)
    phi = SubspaceBasis.constants_plus_soft(g).phi
    assert np.abs((R_eps - R_hom) @ phi).max() <= 1e-10
    assert np.allclose(R_hom @ phi, phi, atol=1e-12)


def test_worst_gap_rate(study):
    assert study.gap_slope >= 0.8


def test_gap_scan_is_conjugation_symmetric(flat):
    cfg, A = flat
    scan = gap_scan(cfg.geometry, cfg.coeff, cfg.kernel, 0.1, A, 9)
    assert np.allclose(scan.gaps, scan.gaps[::-1], rtol=1e-8)


def test_hausdorff_decreases_with_eps(study):
    dh = [r.hausdorff for r in study.rows]
    assert all(b <= 1.1 * a for a, b in zip(dh, dh[1:]))
    assert study.hausdorff_slope >= 0.5


def test_study_limit_sets_match_standalone(flat, study):
    cfg, _ = flat
    G, two, _ = limit_sets(cfg.geometry, cfg.coeff, cfg.kernel, 33, 5.0)
    assert G.to_dict() == study.limit_set.to_dict()
    assert two.is_subset(G, 1e-10)


def test_single_eps_study_has_no_fit(flat):
    cfg, A = flat
    rep = convergence_study(cfg.geometry, cfg.coeff, cfg.kernel, [0.1], 5.0, A, n_theta=9,
                            n_theta_gap=5)
    assert rep.hausdorff_slope is None and rep.gap_slope is None
    assert len(rep.rows) == 1 and rep.rows[0].error is None


def test_increasing_eps_list_rejected(flat):
    cfg, A = flat
    with pytest.raises(ConfigError):
        convergence_study(cfg.geometry, cfg.coeff, cfg.kernel, [0.05, 0.1], 5.0, A)


def test_fit_slope_on_power_law():
    eps = [0.4, 0.2, 0.1]
    assert fit_slope(eps, [3 * e**1.5 for e in eps]) == pytest.approx(1.5)
    assert fit_slope([0.1], [1.0]) is None


def test_band_union_merges_touching_bands():
    thetas = theta_grid(5, 1)
    eigs = [np.array([0.1 * k, 1 + 0.1 * k]) for k in range(5)]
    union, _ = band_union(thetas, eigs)
    assert union.intervals == ((0.0, 0.4), (1.0, 1.4))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, math.pi), st.floats(0.05, 1.0))
def test_opposite_quasimomenta_share_spectrum(th, eps):
    cfg = build_flat_example(n=32)
    g, c, s = cfg.geometry, cfg.coeff, cfg.kernel
    a = assemble_fiber(g, c, s, eps, np.array([th])).eigvalsh()
    b = assemble_fiber(g, c, s, eps, np.array([-th])).eigvalsh()
    assert np.allclose(a, b, atol=1e-10 * max(1, abs(a).max()))


def _lipschitz_constant(n_theta):
    cfg = build_flat_example(n=32)
    g, c, s = cfg.geometry, cfg.coeff, cfg.kernel
    grid = theta_grid(n_theta, 1)
    ev = np.array([assemble_soft_fiber(g, c, s, th).eigvalsh() for th in grid])
    step = grid[1, 0] - grid[0, 0]
    return float(np.abs(np.diff(ev, axis=0)).max() / step)


def test_fiber_eigenvalues_lipschitz_in_quasimomentum():
    c1, c2 = _lipschitz_constant(17), _lipschitz_constant(33)
    assert c2 <= 1.2 * c1
    assert c2 >= 0.5 * c1


def test_limit_set_inside_smallest_eps_union(flat):
    cfg, _ = flat
    g, c, s = cfg.geometry, cfg.coeff, cfg.kernel
    G, _, _ = limit_sets(g, c, s, 33, 5.0)
    sw = full_theta_sweep(g, c, s, 0.05, 33, 5.0)
    assert G.is_subset(sw.union, 5e-2)


def test_resolvent_gap_positive_and_shrinking(flat):
    cfg, A = flat
    g1 = resolvent_gap(cfg.geometry, cfg.coeff, cfg.kernel, 0.2, np.array([1.0]), A)
    g2 = resolvent_gap(cfg.geometry, cfg.coeff, cfg.kernel, 0.05, np.array([1.0]), A)
    assert 0 < g2 < g1
