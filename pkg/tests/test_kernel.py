import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from hicontrast.errors import ConfigError, TruncationError
from hicontrast.kernel import (ExponentialProfile, IndicatorProfile, KernelSpec, PowerTailProfile,
                               TableProfile, indicator_kernel, lattice_tail_estimate, periodize,
                               rate_function, tail_mass, tent_kernel, validate_kernel,
                               windowed_kernel)


def test_indicator_kernel_passes_validation():
    rep = validate_kernel(indicator_kernel())
    assert rep.passed, rep.checks


@pytest.mark.parametrize("c_a, r_a", [(0.25, 0.5), (0.125, 1.0)])
def test_tent_kernel_passes_validation(c_a, r_a):
    base = tent_kernel()
    spec = KernelSpec(1, base.profile, c_a=c_a, r_a=r_a)
    assert validate_kernel(spec).passed


def test_windowed_kernel_fails_ellipticity_without_regularisation():
    rep = validate_kernel(windowed_kernel(1 / 64, reg=0.0))
    assert not rep.checks["ellipticity"]
    assert rep.checks["nonnegative"] and rep.checks["even"]


def test_windowed_kernel_with_bump_is_elliptic():
    assert validate_kernel(windowed_kernel(1 / 64, reg=1e-3)).passed


def test_bad_ellipticity_constants_rejected():
    with pytest.raises(ConfigError):
        KernelSpec(1, IndicatorProfile(1.0), c_a=0.0, r_a=1.0)
    with pytest.raises(ConfigError):
        KernelSpec(1, IndicatorProfile(1.0), c_a=0.5, r_a=-1.0)


def test_non_evaluable_profile_is_a_config_error():
    class Broken(IndicatorProfile):
        def radial_value(self, r):
            raise ValueError("nope")

    with pytest.raises(ConfigError):
        validate_kernel(KernelSpec(1, Broken(1.0), c_a=0.5, r_a=1.0))


@pytest.mark.parametrize("n", [8, 64, 100])
def test_indicator_periodises_to_one(n):
    assert np.allclose(periodize(indicator_kernel(), 0.0, n=n), 1.0, atol=1e-14)


def test_tent_periodises_to_one_half():
    assert np.allclose(periodize(tent_kernel(), 0.0, n=128), 0.5, atol=1e-14)


def test_windowed_periodisation_is_eighth_over_kappa_on_windows():
    kappa, n = 1 / 64, 256
    vals = periodize(windowed_kernel(kappa), 0.0, n=n)
    y = np.arange(n) / n
    inside = (np.abs(y - 0.25) < kappa) | (np.abs(y - 0.75) < kappa)
    outside = (np.abs(y - 0.25) > kappa) & (np.abs(y - 0.75) > kappa)
    assert np.allclose(vals[inside], 1 / (8 * kappa))
    assert np.allclose(vals[outside], 0.0)


def test_tail_mass_vanishes_beyond_support():
    assert tail_mass(tent_kernel(), 2.0) == 0.0
    assert tail_mass(indicator_kernel(), 1.5) == 0.0


def test_tail_mass_at_zero_is_second_moment():
    spec = tent_kernel()
    # 2 * (int_0^1/2 x^2/4 + int_1/2^3/2 x^2 (3/2 - x)/4)
    second = 2 * (integrate.quad(lambda x: 0.25 * x * x, 0, 0.5)[0]
                  + integrate.quad(lambda x: 0.25 * (1.5 - x) * x * x, 0.5, 1.5)[0])
    assert tail_mass(spec, 0.0) == pytest.approx(second, rel=1e-12)
    assert tail_mass(spec, 0.0) == pytest.approx(spec.moment(2), rel=1e-12)


def test_exponential_tail_mass_matches_quadrature():
    spec = KernelSpec(1, ExponentialProfile(), c_a=math.exp(-1), r_a=1.0)
    oracle = 2 * integrate.quad(lambda x: math.exp(-x) * x * x, 2.0, np.inf, epsabs=1e-14)[0]
    assert tail_mass(spec, 2.0) == pytest.approx(oracle, abs=1e-8)
    assert oracle == pytest.approx(20 * math.exp(-2), rel=1e-10)


def test_compact_kernel_uses_linear_rate():
    r = rate_function(tent_kernel())
    assert r.third_moment_finite
    assert np.array_equal(r.h_bar, r.t)


def test_finite_third_moment_uses_linear_rate():
    spec = KernelSpec(1, PowerTailProfile(6.0), c_a=2.0**-6, r_a=1.0)
    r = rate_function(spec)
    assert r.third_moment_finite and np.array_equal(r.h_bar, r.t)


def _power_tail_g(r):
    # 2 int_r^inf x^2 (1 + x)^-3.5 dx in closed form
    u = 1.0 + r
    return 2 * (2 * u**-0.5 - 4 / 3 * u**-1.5 + 0.4 * u**-2.5)


def test_heavy_tail_rate_matches_direct_formula():
    spec = KernelSpec(1, PowerTailProfile(3.5), c_a=2.0**-3.5, r_a=1.0)
    t = np.geomspace(1e-3, 0.5, 9)
    r = rate_function(spec, t)
    assert not r.third_moment_finite
    for k, s in enumerate(t):
        radius = optimize.brentq(lambda x: _power_tail_g(x) ** 0.25 / x - s, 1e-6, 1e9, xtol=1e-12)
        assert r.r_of_t[k] == pytest.approx(radius, rel=1e-8)
        assert r.h[k] == pytest.approx(math.sqrt(_power_tail_g(radius)), rel=1e-7)
    # envelope identity: h_hat(t) = t sup_{s >= t} h(s)/s on the grid
    for k in range(t.size):
        assert r.h_hat[k] == pytest.approx(t[k] * np.max(r.h[k:] / t[k:]), rel=1e-12)
    ratio = r.h_bar / t
    assert np.all(np.diff(ratio) <= 1e-12)
    assert r.h_bar[0] < r.h_bar[-1]


def test_cutoff_too_small_raises_with_suggestion():
    spec = KernelSpec(1, PowerTailProfile(4.5), c_a=2.0**-4.5, r_a=1.0)
    with pytest.raises(TruncationError) as err:
        periodize(spec, 0.0, J=1, n=16)
    assert err.value.suggested_cutoff is None or err.value.suggested_cutoff > 1


profiles = st.one_of(
    st.builds(lambda r, h: KernelSpec(1, IndicatorProfile(r, h), c_a=h, r_a=r),
              st.floats(0.2, 2.5), st.floats(0.1, 2.0)),
    st.builds(lambda a, b: KernelSpec(1, TableProfile([0.0, a, a + b], [1.0, 1.0, 0.0]), c_a=1.0, r_a=a),
              st.floats(0.1, 1.0), st.floats(0.1, 1.5)),
    st.builds(lambda L: KernelSpec(1, ExponentialProfile(1.0, L), c_a=math.exp(-1), r_a=L),
              st.floats(0.3, 1.5)),
)


@settings(max_examples=30, deadline=None)
@given(profiles, st.integers(4, 48))
def test_periodisation_is_real_and_even(spec, n):
    vals = periodize(spec, 0.0, n=n)
    assert np.isrealobj(vals)
    mirrored = vals[(-np.arange(n)) % n]
    assert np.allclose(vals, mirrored, atol=1e-12 * max(1.0, np.abs(vals).max()))


@settings(max_examples=40, deadline=None)
@given(profiles, st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_tail_mass_nonincreasing(spec, r1, r2):
    lo, hi = sorted((r1, r2))
    assert tail_mass(spec, lo) >= tail_mass(spec, hi) - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 2.0), st.integers(2, 8), st.integers(8, 32))
def test_growing_lattice_box_changes_fold_within_tail_estimate(length, J, n):
    spec = KernelSpec(1, ExponentialProfile(1.0, length), c_a=math.exp(-1), r_a=length)
    a = periodize(spec, 0.0, J=J, n=n, tol=1e9)
    b = periodize(spec, 0.0, J=J + 1, n=n, tol=1e9)
    # the new shells sit at distance >= J - 1 + offset, inside the tail beyond J - 1
    assert np.max(np.abs(b - a)) <= lattice_tail_estimate(spec, J - 1) + 1e-15
