import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import linalg

from hicontrast.assembly import HermitianOperator, assemble_soft_periodic
from hicontrast.errors import ConfigError, NumericalError, PoleError
from hicontrast.examples import (build_flat_example, build_infinite_example,
                                 build_twosided_example, flat_profile)
from hicontrast.fibers import orthant_spectrum, soft_theta_sweep
from hicontrast.geometry import CoefficientField, build_geometry
from hicontrast.kernel import tent_kernel
from hicontrast.spectral import (BetaFunction, SpectralSet, box_limit_spectrum, default_discrete_tol,
                                 dirichlet_values, discrete_spectrum, essential_range,
                                 hausdorff_distance, limit_spectrum_wholespace, nonnegative_set,
                                 project_stiff_mean, quasimode_distance, rayleigh_minmax,
                                 solve_limit_resolvent, spectrum, tabulate_beta)


def _rank_one(n=64):
    """Unit weight on a soft set of length 1/2: A z = z - int z."""
    g = build_geometry(1, n, soft_intervals=[("1/4", "3/4")])
    return g, assemble_soft_periodic(g, CoefficientField.separable(g), tent_kernel())


def _beta_rank_one(lam):
    # one massive eigenvalue 1/2 with mass 1/2
    return lam + lam * lam * 0.5 / (0.5 - lam)


def _zero_soft(n=32, cells=None):
    mask = np.zeros(n, dtype=bool)
    mask[cells if cells is not None else [0]] = True
    g = build_geometry(1, n, mask=mask)
    S = g.soft_index
    op = HermitianOperator(np.zeros((S.size, S.size)), "soft", S)
    return g, op


@pytest.fixture(scope="module")
def flat():
    return build_flat_example(n=128)


# ---------------------------------------------------------------- spectral sets


def test_spectral_set_normalises_representation():
    s = SpectralSet(((2, 3), (0, 1), (0.5, 1.5)), ((0.7, 1), (5.0, 2), (5.0, 1)))
    assert s.intervals == ((0.0, 1.5), (2.0, 3.0))
    assert s.points == ((5.0, 3),)
    assert s.distance([1.75, 4.0, -1.0]).tolist() == [0.25, 1.0, 1.0]
    assert SpectralSet.from_dict(s.to_dict()).intervals == s.intervals


def test_from_values_merges_runs():
    s = SpectralSet.from_values([0.0, 0.1, 0.15, 1.0, 1.0], merge_tol=0.06)
    assert s.intervals == ((0.1, 0.15),)
    assert s.points == ((0.0, 1), (1.0, 2))


def test_hausdorff_identical_sets():
    s = SpectralSet(((0.2, 0.9),), ((1.5, 1),))
    assert hausdorff_distance(s, s, 3.0) == 0.0


def test_hausdorff_points():
    s1 = SpectralSet((), ((0.0, 1), (1.0, 1)))
    s2 = SpectralSet((), ((0.0, 1), (1.5, 1)))
    assert hausdorff_distance(s1, s2, 2.0) == pytest.approx(0.5)


def test_hausdorff_interval_to_point():
    assert hausdorff_distance(SpectralSet.interval(0, 1), SpectralSet((), ((0.5, 1),)), 1.0) == \
        pytest.approx(0.5)


def test_hausdorff_empty_truncation_counts_zero():
    s1 = SpectralSet((), ((5.0, 1),))
    s2 = SpectralSet((), ((0.5, 1),))
    # s1 has nothing in [0, 1]; only the deviation of s2 on [0, 1] counts
    assert hausdorff_distance(s1, s2, 1.0) == pytest.approx(4.5)
    with pytest.raises(ConfigError):
        hausdorff_distance(s1, s2, 0.0)


sets = st.builds(
    lambda ivs, pts: SpectralSet(tuple((a, a + w) for a, w in ivs), tuple((v, 1) for v in pts)),
    st.lists(st.tuples(st.floats(0, 5), st.floats(0, 1)), max_size=3),
    st.lists(st.floats(0, 6), max_size=4),
)


@settings(max_examples=80, deadline=None)
@given(sets, sets, sets, st.floats(0.5, 6))
def test_hausdorff_is_pseudometric_on_truncations(a, b, c, lam):
    assume(not a.truncate(0, lam).empty and not b.truncate(0, lam).empty
           and not c.truncate(0, lam).empty)
    # restricted to sets living inside the window the truncated distance is the usual one
    a, b, c = a.truncate(0, lam), b.truncate(0, lam), c.truncate(0, lam)
    dab = hausdorff_distance(a, b, lam)
    assert dab == pytest.approx(hausdorff_distance(b, a, lam))
    assert hausdorff_distance(a, a, lam) == 0.0
    assert hausdorff_distance(a, c, lam) <= dab + hausdorff_distance(b, c, lam) + 1e-12


@settings(max_examples=50, deadline=None)
@given(sets, sets)
def test_deviation_matches_dense_sampling(a, b):
    assume(not a.empty and not b.empty)
    xs = [v for v, _ in a.points]
    for lo, hi in a.intervals:
        xs.extend(np.linspace(lo, hi, 2001))
    sampled = float(b.distance(np.array(xs)).max())
    exact = a.deviation_to(b)
    assert sampled <= exact + 1e-12
    assert exact <= sampled + 1e-3


# ---------------------------------------------------------------- essential range, spectra


def test_flat_profile_essential_range():
    w, w0, b = flat_profile(1 / 8, 0.05)
    y = np.unique(np.concatenate([[0.0], b[:40], np.linspace(0, 0.5, 4001)]))
    ess = essential_range(w(y))
    assert ess.points == ()
    assert len(ess.intervals) == 1
    assert ess.intervals[0] == pytest.approx((0.05, w0), abs=1e-12)


def test_flat_grid_multiplier_inside_essential_range(flat):
    op = flat.soft_operator()
    ess = essential_range(op.diagonal, flat.geometry, op.cells)
    lo, hi = ess.intervals[0]
    assert hi == pytest.approx(flat.derived["w0"], rel=1e-9)
    assert 0.05 <= lo < hi


def test_infinite_example_essential_points():
    cfg = build_infinite_example(n=256)
    op = cfg.soft_operator()
    ess = essential_range(op.diagonal, cfg.geometry, op.cells)
    assert ess.intervals == ()
    vals = ess.values()
    assert vals == pytest.approx([1.0, cfg.derived["nu"]], abs=1e-12)


def test_twosided_essential_single_point():
    cfg = build_twosided_example(n=256)
    op = cfg.soft_operator()
    ess = essential_range(op.diagonal, cfg.geometry, op.cells)
    assert ess.intervals == () and ess.values() == pytest.approx([1.0])


def test_rank_one_spectrum():
    g, op = _rank_one()
    sp = spectrum(op, with_essential=False)
    assert [v for v, _ in sp.points] == pytest.approx([0.5, 1.0])
    assert [m for _, m in sp.points] == [1, op.dim - 1]


def test_zero_matrix_spectrum():
    op = HermitianOperator(np.zeros((7, 7)), "full", np.arange(7))
    assert spectrum(op).points == ((0.0, 7),)


def test_twosided_top_eigenvalue():
    op = build_twosided_example(n=1024).soft_operator()
    assert op.eigvalsh()[-1] >= 1 + 1 / 16 - 0.01


def test_rank_one_classification_at_default_tolerance():
    g, op = _rank_one()
    ev = op.eigvalsh()
    ess = SpectralSet((), ((1.0, 1),))
    disc = discrete_spectrum(ev, ess, default_discrete_tol(g.n))
    assert disc.values() == pytest.approx([0.5])


@pytest.mark.parametrize("n", [256, 512])
def test_flat_nothing_below_essential_range(n):
    cfg = build_flat_example(n=n)
    ev = cfg.soft_operator().eigvalsh()
    tol = max(1e-6, 4 / n)
    assert not np.any(ev < 0.05 - tol)


def test_infinite_discrete_eigenvalues_below_one():
    cfg = build_infinite_example(n=1024)
    op = cfg.soft_operator()
    ess = essential_range(op.diagonal, cfg.geometry, op.cells)
    disc = discrete_spectrum(op.eigvalsh(), ess, default_discrete_tol(1024)).values()
    below = disc[(disc > 0) & (disc < 1)]
    assert below.size >= 5
    assert np.all(np.diff(below) > 0)
    mm = [rayleigh_minmax(op, k) for k in range(1, 6)]
    assert all(a < b for a, b in zip(mm, mm[1:]))


def test_twosided_regularised_has_discrete_eigenvalues_on_both_sides():
    cfg = build_twosided_example(reg=1e-3, n=1024)
    op = cfg.soft_operator()
    ess = essential_range(op.diagonal, cfg.geometry, op.cells)
    disc = discrete_spectrum(op.eigvalsh(), ess, default_discrete_tol(1024)).values()
    lo = min([a for a, _ in ess.intervals] + list(ess.values()))
    hi = max([b for _, b in ess.intervals] + list(ess.values()))
    assert np.any(disc < lo) and np.any(disc > hi)


def test_minmax_rank_one_and_bounds():
    _, op = _rank_one()
    assert rayleigh_minmax(op, 1) == pytest.approx(0.5)
    assert rayleigh_minmax(op, 1, "above") == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        rayleigh_minmax(op, 0)
    with pytest.raises(ConfigError):
        rayleigh_minmax(op, op.dim + 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 30))
def test_minmax_matches_eigensolver(seed, dim):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(dim, dim))
    M = X + X.T
    ev = linalg.eigvalsh(M)
    k = int(rng.integers(1, dim + 1))
    assert rayleigh_minmax(M, k) == pytest.approx(ev[k - 1], abs=1e-10 * max(1, abs(ev).max()))
    assert rayleigh_minmax(M, k, "above") == pytest.approx(ev[dim - k], abs=1e-10 * max(1, abs(ev).max()))


# ---------------------------------------------------------------- beta


def test_beta_at_zero_and_rank_one_closed_form():
    g, op = _rank_one()
    beta = BetaFunction(op, g.cell_volume)
    assert beta(0.0) == 0.0
    assert beta.poles == pytest.approx([0.5])
    for lam in (-2.0, -0.3, 0.2, 0.45, 0.7, 3.0):
        assert beta(lam) == pytest.approx(_beta_rank_one(lam), rel=1e-12)
        assert beta(lam, route="solve") == pytest.approx(_beta_rank_one(lam), rel=1e-10)
    with pytest.raises(PoleError):
        beta(0.5)
    # eigenvalue 1 carries no mass and is not a pole
    assert beta(1.0) == pytest.approx(_beta_rank_one(1.0))


def test_beta_table_flags_conditioning_at_massless_eigenvalues():
    g, op = _rank_one()
    beta = BetaFunction(op, g.cell_volume)
    tab = tabulate_beta(beta, [0.25, 1.0 - 1e-9, 2.0])
    # beta is finite across the massless eigenvalue 1 while A# - lam is nearly singular
    assert np.all(np.isfinite(tab.beta))
    assert tab.condition[1] > 1e8
    assert tab.condition[0] == pytest.approx(0.75 / 0.25)
    assert tab.condition[2] == pytest.approx(1.5 / 1.0)


@pytest.mark.parametrize("n", [16, 64, 256])
def test_beta_tends_to_identity_as_soft_set_shrinks(n):
    g, op = _zero_soft(n)
    beta = BetaFunction(op, g.cell_volume)
    lam = np.linspace(-3, 3, 13)
    lam = lam[lam != 0]
    vals = np.array([beta(x) for x in lam])
    assert np.allclose(vals, lam * (1 - 1 / n), rtol=1e-12)


def test_beta_slope_on_flat_example(flat):
    op = flat.soft_operator()
    beta = BetaFunction(op, flat.geometry.cell_volume)
    grid = np.linspace(-1.0, 2.0, 3001)
    tab = tabulate_beta(beta, grid)
    floor = 1 - flat.geometry.soft_volume - 1e-3
    edges = np.searchsorted(grid, tab.poles)
    ok = ~tab.near_pole
    checked = 0
    for k in range(grid.size - 1):
        if ok[k] and ok[k + 1] and not np.any((tab.poles > grid[k]) & (tab.poles < grid[k + 1])):
            slope = (tab.beta[k + 1] - tab.beta[k]) / (grid[k + 1] - grid[k])
            assert slope >= floor
            checked += 1
    assert checked > 2000 and edges.size


def test_beta_derivative_bound(flat):
    beta = BetaFunction(flat.soft_operator(), flat.geometry.cell_volume)
    for lam in (-1.0, 0.1, 1.5, 3.0):
        if not beta.near_pole(lam):
            assert beta.derivative(lam) >= 1 - flat.geometry.soft_volume - 1e-12


def test_degenerate_beta_nonnegative_set_is_half_line():
    g, op = _zero_soft(32, list(range(8)))
    beta = BetaFunction(op, g.cell_volume)
    nn = nonnegative_set(beta, 10.0)
    assert nn.intervals == ((0.0, 10.0),)


def test_massive_pole_closes_an_interval():
    g, op = _rank_one()
    beta = BetaFunction(op, g.cell_volume)
    # beta -> +inf below the pole 1/2; beta = 0 again at lambda = 1
    assert beta(0.5 - 1e-5) > 1e3
    assert beta(0.5 - 1e-5) > 10 * beta(0.5 - 1e-4)
    nn = nonnegative_set(beta, 4.0)
    assert np.allclose(nn.intervals, [(0.0, 0.5), (1.0, 4.0)], atol=1e-12)


def test_periodic_spectrum_inside_soft_union(flat):
    sweep = soft_theta_sweep(flat.geometry, flat.coeff, flat.kernel, 17)
    per = flat.soft_operator().eigvalsh()
    assert np.all(sweep.union.distance(per) <= 1e-10)


def test_two_scale_set_inside_limit_set(flat):
    g, c, s = flat.geometry, flat.coeff, flat.kernel
    op = flat.soft_operator()
    beta = BetaFunction(op, g.cell_volume)
    union = soft_theta_sweep(g, c, s, 17).union
    periodic = SpectralSet.from_values(op.eigvalsh())
    G, two = limit_spectrum_wholespace(beta, union, periodic, 5.0)
    assert two.is_subset(G, 1e-10)


def test_degenerate_beta_limit_set_is_half_line():
    g, op = _zero_soft(32, list(range(8)))
    beta = BetaFunction(op, g.cell_volume)
    G, _ = limit_spectrum_wholespace(beta, SpectralSet((), ((0.0, 8),)),
                                     SpectralSet((), ((0.0, 8),)), 7.0)
    assert G.intervals == ((0.0, 7.0),)


# ---------------------------------------------------------------- box limit


def test_dirichlet_values_and_unsupported_case():
    vals = dirichlet_values(np.array([[1 / 3]]), [1.0], 100.0)
    k = np.arange(1, vals.size + 1)
    assert vals == pytest.approx(math.pi**2 * k**2 / 3)
    with pytest.raises(Exception) as err:
        dirichlet_values(np.array([[1.0, 0.2], [0.2, 1.0]]), [1.0, 1.0], 10.0)
    assert type(err.value).__name__ == "UnsupportedError"


def test_box_limit_rank_one_preimages():
    g, op = _rank_one()
    beta = BetaFunction(op, g.cell_volume)
    lam_hi = 40.0
    out = box_limit_spectrum(beta, np.array([[1 / 3]]), [1.0], [], lam_hi).values()
    mu = math.pi**2 * np.arange(1, 40) ** 2 / 3
    # beta(lam) = mu  <=>  lam^2 - (1 + 2 mu) lam + mu = 0
    disc = np.sqrt(1 + 4 * mu**2)
    low = ((1 + 2 * mu) - disc) / 2
    high = ((1 + 2 * mu) + disc) / 2
    expected = np.concatenate([low[low < 0.5 - 1e-4], high[high <= lam_hi]])
    found = out[np.abs(out - 0.5) > 1e-12]
    for e in expected:
        assert np.min(np.abs(found - e)) <= 1e-10
    assert np.min(np.abs(out - 0.5)) <= 1e-12


def test_box_limit_degenerate_beta_is_scaled_dirichlet_values():
    g, op = _zero_soft(32, list(range(8)))
    beta = BetaFunction(op, g.cell_volume)
    # beta = (3/4) lam, so preimages of A pi^2 k^2 are 4/3 of them
    orth = SpectralSet((), ((0.0, 1),))
    out = box_limit_spectrum(beta, np.array([[1.0]]), [1.0], [orth], 100.0)
    k = np.arange(1, 10)
    expected = 4 / 3 * math.pi**2 * k**2
    vals = out.values()
    assert 0.0 in vals
    for e in expected[expected <= 100]:
        assert np.min(np.abs(vals - e)) <= 1e-9


def test_orthant_spectra_contain_soft_union(flat):
    g, c, s = flat.geometry, flat.coeff, flat.kernel
    union = soft_theta_sweep(g, c, s, 33).union
    d16 = union.deviation_to(orthant_spectrum(g, c, s, "left", 16, 0.0))
    d32 = union.deviation_to(orthant_spectrum(g, c, s, "left", 32, 0.0))
    assert d32 <= 1e-2
    assert d32 <= 0.6 * d16


# ---------------------------------------------------------------- quasimodes


def test_exact_eigenpair_has_zero_bound():
    g, op = _rank_one()
    w, V = op.eigh()
    rep = quasimode_distance(op, V[:, 0], w[0])
    assert rep.epsilon <= 1e-12 and rep.bound <= 1e-12


def test_perturbed_eigenvector_bound():
    cfg = build_flat_example(n=64)
    op = cfg.soft_operator()
    w, V = op.eigh()
    rng = np.random.default_rng(1)
    v = rng.normal(size=op.dim)
    u = V[:, 3] + 0.01 * v / np.linalg.norm(v)
    u /= np.linalg.norm(u)
    lam = float(u @ op.matrix @ u)
    rep = quasimode_distance(op, u, lam)
    assert rep.distance == pytest.approx(np.min(np.abs(w - lam)))
    assert rep.distance <= rep.bound


def test_far_lambda_bound_still_holds():
    g, op = _rank_one()
    u = np.ones(op.dim) / math.sqrt(op.dim)
    rep = quasimode_distance(op, u, -0.2, check=False)
    assert rep.holds


def test_quasimode_bound_over_random_trials():
    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(100):
        dim = int(rng.integers(3, 25))
        X = rng.normal(size=(dim, dim))
        M = X @ X.T / dim
        w, V = linalg.eigh(M)
        u = V[:, int(rng.integers(dim))] + rng.uniform(0, 0.2) * rng.normal(size=dim)
        u /= np.linalg.norm(u)
        lam = float(u @ M @ u) + rng.normal(scale=0.05)
        try:
            rep = quasimode_distance(M, u, lam, check=False)
        except NumericalError:
            continue
        violations += not rep.holds
    assert violations == 0


def test_quasimode_requires_normalised_vector():
    _, op = _rank_one()
    with pytest.raises(ConfigError):
        quasimode_distance(op, np.ones(op.dim), 0.5)


# ---------------------------------------------------------------- limit resolvent


def test_limit_resolvent_zero_data():
    g, op = _rank_one(32)
    out = solve_limit_resolvent(g, op, np.array([[0.3]]), -1.0, np.zeros((15, g.n)))
    assert not np.any(out.u) and not np.any(out.z)


def test_limit_resolvent_routes_agree():
    g, op = _rank_one(32)
    x = (np.arange(1, 16) / 16)[:, None]
    f = np.sin(np.pi * x) * np.ones((1, g.n))
    a = solve_limit_resolvent(g, op, np.array([[0.3]]), -1.0, f, route="reduced")
    b = solve_limit_resolvent(g, op, np.array([[0.3]]), -1.0, f, route="direct")
    assert np.allclose(a.u, b.u, atol=1e-8 * np.abs(b.u).max())
    assert np.allclose(a.z, b.z, atol=1e-8 * np.abs(b.z).max())


def test_limit_resolvent_sees_stiff_data_only_through_its_mean():
    g, op = _rank_one(32)
    rng = np.random.default_rng(5)
    f = rng.normal(size=(15, g.n))
    a = solve_limit_resolvent(g, op, np.array([[0.3]]), -0.5, f)
    b = solve_limit_resolvent(g, op, np.array([[0.3]]), -0.5, project_stiff_mean(g, f))
    assert np.allclose(a.u, b.u, atol=1e-12) and np.allclose(a.z, b.z, atol=1e-12)


def test_limit_resolvent_needs_negative_lambda():
    g, op = _rank_one(32)
    with pytest.raises(ConfigError):
        solve_limit_resolvent(g, op, np.array([[0.3]]), 0.5, np.zeros((4, g.n)))
