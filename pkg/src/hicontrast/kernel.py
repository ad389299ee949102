"""Convolution kernels: profiles, assumption checks, lattice folding, tails and rates."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigError, NumericalError, TruncationError


# ---------------------------------------------------------------- profiles


class Profile:
    """Base class. Radial profiles are functions of |x|; others are 1-D only."""

    radial = True
    support_radius = math.inf
    # power p such that a(x) ~ |x|^{-p} at infinity, if known
    tail_exponent: float | None = None

    def radial_value(self, r):
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        """Radii (or signed abscissae for 1-D profiles) where a is not smooth."""
        return []

    def __call__(self, x):
        return self.radial_value(np.abs(np.asarray(x, dtype=float)))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class IndicatorProfile(Profile):
    """height * 1_{|x| <= radius}; half height on the sphere |x| = radius."""

    radius: float
    height: float = 1.0

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ConfigError("indicator profile needs positive radius and height")
        self.support_radius = self.radius

    def radial_value(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r < self.radius, self.height, 0.0)
        return np.where(np.isclose(r, self.radius, rtol=0, atol=1e-13), 0.5 * self.height, out)

    def breakpoints(self):
        return [self.radius]

    def to_dict(self):
        return {"type": "indicator", "radius": self.radius, "height": self.height}


@dataclass
class TableProfile(Profile):
    """Piecewise-linear profile through (abscissae, values), zero outside.

    With radial=True the abscissae are radii starting at 0; otherwise they are
    signed 1-D points and the profile is used as given (evenness is checked,
    not imposed).
    """

    abscissae: Sequence[float]
    values: Sequence[float]
    radial: bool = True

    def __post_init__(self):
        xs = np.asarray(self.abscissae, dtype=float)
        vs = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.shape != vs.shape or xs.size < 2:
            raise ConfigError("table profile needs matching 1-D abscissae/values")
        if np.any(np.diff(xs) <= 0):
            raise ConfigError("table abscissae must be strictly increasing")
        if self.radial and xs[0] != 0.0:
            raise ConfigError("radial table must start at radius 0")
        self._x, self._v = xs, vs
        self.support_radius = float(np.max(np.abs(xs)))

    def radial_value(self, r):
        return np.interp(r, self._x, self._v, left=0.0, right=0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.radial:
            return self.radial_value(np.abs(x))
        return np.interp(x, self._x, self._v, left=0.0, right=0.0)

    def breakpoints(self):
        return [float(v) for v in self._x]

    def to_dict(self):
        return {"type": "table", "abscissae": list(map(float, self._x)),
                "values": list(map(float, self._v)), "radial": self.radial}


@dataclass
class WindowedProfile(Profile):
    """1-D sum of heights on open windows (lo, hi); half height at window ends."""

    windows: Sequence[tuple[float, float, float]]
    radial = False

    def __post_init__(self):
        for lo, hi, height in self.windows:
            if not hi > lo or height < 0:
                raise ConfigError(f"bad window ({lo}, {hi}, {height})")
        self.support_radius = max(max(abs(lo), abs(hi)) for lo, hi, _ in self.windows)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for lo, hi, height in self.windows:
            inside = (x > lo) & (x < hi)
            edge = np.isclose(x, lo, rtol=0, atol=1e-13) | np.isclose(x, hi, rtol=0, atol=1e-13)
            out = out + height * inside + 0.5 * height * edge
        return out

    def breakpoints(self):
        return sorted({float(v) for lo, hi, _ in self.windows for v in (lo, hi)})

    def to_dict(self):
        return {"type": "windowed", "windows": [list(map(float, w)) for w in self.windows]}


@dataclass
class ExponentialProfile(Profile):
    """scale * exp(-|x| / length)."""

    scale: float = 1.0
    length: float = 1.0

    def radial_value(self, r):
        return self.scale * np.exp(-np.asarray(r, dtype=float) / self.length)

    def to_dict(self):
        return {"type": "exponential", "scale": self.scale, "length": self.length}


@dataclass
class PowerTailProfile(Profile):
    """scale * (1 + |x|)^(-power)."""

    power: float
    scale: float = 1.0

    def __post_init__(self):
        self.tail_exponent = self.power

    def radial_value(self, r):
        return self.scale * (1.0 + np.asarray(r, dtype=float)) ** (-self.power)

    def to_dict(self):
        return {"type": "power_tail", "power": self.power, "scale": self.scale}


@dataclass
class BumpProfile(Profile):
    """Smooth compactly supported bump height * exp(1 - 1/(1 - (r/radius)^2))."""

    radius: float
    height: float = 1.0

    def __post_init__(self):
        self.support_radius = self.radius

    def radial_value(self, r):
        s = np.asarray(r, dtype=float) / self.radius
        out = np.zeros_like(s)
        inside = s < 1.0
        out[inside] = self.height * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def breakpoints(self):
        return [self.radius]

    def to_dict(self):
        return {"type": "bump", "radius": self.radius, "height": self.height}


@dataclass
class SumProfile(Profile):
    """Linear combination sum_i c_i * profile_i."""

    terms: Sequence[tuple[float, Profile]]

    def __post_init__(self):
        self.radial = all(p.radial for _, p in self.terms)
        self.support_radius = max(p.support_radius for _, p in self.terms)
        tails = [p.tail_exponent for _, p in self.terms if math.isinf(p.support_radius)]
        self.tail_exponent = min(tails) if tails and None not in tails else None

    def radial_value(self, r):
        return sum(c * p.radial_value(r) for c, p in self.terms)

    def __call__(self, x):
        return sum(c * p(x) for c, p in self.terms)

    def breakpoints(self):
        pts = set()
        for _, p in self.terms:
            pts.update(p.breakpoints())
        return sorted(pts)

    def to_dict(self):
        return {"type": "sum", "terms": [[c, p.to_dict()] for c, p in self.terms]}


def profile_from_dict(data: dict) -> Profile:
    kind = data.get("type")
    try:
        if kind == "indicator":
            return IndicatorProfile(data["radius"], data.get("height", 1.0))
        if kind in ("table", "tent"):
            return TableProfile(data["abscissae"], data["values"], data.get("radial", True))
        if kind == "windowed":
            return WindowedProfile([tuple(w) for w in data["windows"]])
        if kind == "exponential":
            return ExponentialProfile(data.get("scale", 1.0), data.get("length", 1.0))
        if kind == "power_tail":
            return PowerTailProfile(data["power"], data.get("scale", 1.0))
        if kind == "bump":
            return BumpProfile(data["radius"], data.get("height", 1.0))
        if kind == "sum":
            return SumProfile([(float(c), profile_from_dict(p)) for c, p in data["terms"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed kernel profile {data!r}: {exc}") from exc
    raise ConfigError(f"unknown kernel profile type {kind!r}")


# ---------------------------------------------------------------- kernel description


@dataclass
class KernelSpec:
    d: int
    profile: Profile
    c_a: float
    r_a: float
    L: float | None = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError("only d = 1 or 2 is supported")
        if not (self.c_a > 0 and self.r_a > 0):
            raise ConfigError("ellipticity constants c_a and r_a must be positive")
        if self.d == 2 and not self.profile.radial:
            raise ConfigError("non-radial profiles are only available in d = 1")
        self._moment_cache: dict = {}

    @property
    def support_radius(self) -> float:
        return self.profile.support_radius

    @property
    def compact(self) -> bool:
        return math.isfinite(self.profile.support_radius)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.d == 1:
            if x.ndim >= 1 and x.shape[-1] == 1:
                x = x[..., 0]
            return self.profile(x)
        return self.profile.radial_value(np.linalg.norm(x, axis=-1))

    def moment(self, k: float) -> float:
        """int a(x) |x|^k dx over R^d."""
        if k not in self._moment_cache:
            self._moment_cache[k] = _radial_integral(self, lambda r: r**k, 0.0)
        return self._moment_cache[k]

    def to_dict(self) -> dict:
        return {"d": self.d, "profile": self.profile.to_dict(), "c_a": self.c_a,
                "r_a": self.r_a, "L": self.L}


def kernel_from_dict(data: dict) -> KernelSpec:
    try:
        return KernelSpec(int(data["d"]), profile_from_dict(data["profile"]),
                          float(data["c_a"]), float(data["r_a"]), data.get("L"))
    except KeyError as exc:
        raise ConfigError(f"kernel section is missing {exc}") from exc


def _quad(f, a, b, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if math.isinf(b):
                val, err = integrate.quad(f, a, b, limit=400, epsabs=1e-14, epsrel=1e-12)
            else:
                pts = None
                if points:
                    pts = sorted(p for p in points if a < p < b) or None
                val, err = integrate.quad(f, a, b, points=pts, limit=400,
                                          epsabs=1e-14, epsrel=1e-12)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature did not converge on [{a}, {b}]: {exc}") from exc
    return val


def _radial_integral(spec: KernelSpec, weight: Callable, r_min: float) -> float:
    """int_{|x| > r_min} a(x) weight(|x|) dx by adaptive quadrature."""
    prof = spec.profile
    if spec.d == 1 and not prof.radial:
        pts = prof.breakpoints()
        R = prof.support_radius
        f = lambda x: float(prof(np.array(x))) * weight(abs(x))
        total = 0.0
        if r_min < R:
            total += _quad(f, r_min, R, pts) + _quad(f, -R, -r_min, pts)
        return total
    surface = 2.0 if spec.d == 1 else 2.0 * math.pi
    jac = (lambda r: 1.0) if spec.d == 1 else (lambda r: r)
    f = lambda r: float(prof.radial_value(np.array(r))) * weight(r) * jac(r)
    R = prof.support_radius
    pts = [p for p in prof.breakpoints() if p > r_min]
    if math.isfinite(R):
        if r_min >= R:
            return 0.0
        return surface * _quad(f, r_min, R, pts)
    # unbounded support: split at the largest breakpoint or a few units out
    split = max([r_min + 1.0] + pts)
    return surface * (_quad(f, r_min, split, pts) + _quad(f, split, math.inf))


# ---------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    details: dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": dict(self.checks), "details": dict(self.details)}


def _sample_points(spec: KernelSpec, R: float, m: int = 801):
    s = np.linspace(-R, R, m)
    if spec.d == 1:
        return s
    X, Y = np.meshgrid(s, s, indexing="ij")
    return np.stack([X, Y], axis=-1)


def validate_kernel(spec: KernelSpec, third_moment: bool = False) -> ValidationReport:
    R = spec.support_radius if spec.compact else 10.0
    R = max(R, spec.r_a) * 1.05
    x = _sample_points(spec, R)
    try:
        vals = np.asarray(spec(x), dtype=float)
        mirrored = np.asarray(spec(-x), dtype=float)
    except Exception as exc:  # noqa: BLE001 - any evaluation failure is a config problem
        raise ConfigError(f"kernel profile is not evaluable: {exc}") from exc
    checks, details = {}, {}
    checks["nonnegative"] = bool(np.all(vals >= 0))
    checks["even"] = bool(np.allclose(vals, mirrored, rtol=0, atol=1e-12 * max(1.0, vals.max())))
    norm = np.linalg.norm(x, axis=-1) if spec.d == 2 else np.abs(x)
    inner = vals[norm < spec.r_a]
    floor = float(inner.min()) if inner.size else 0.0
    details["ellipticity_floor"] = floor
    checks["ellipticity"] = bool(inner.size and floor >= spec.c_a * (1 - 1e-12))
    top = 3 if third_moment else 2
    for k in range(top + 1):
        ok, val = _moment_finite(spec, k)
        checks[f"moment_{k}_finite"] = ok
        details[f"moment_{k}"] = val
    return ValidationReport(checks, details)


def _moment_finite(spec: KernelSpec, k: int) -> tuple[bool, float]:
    if spec.compact:
        return True, spec.moment(k)
    p = spec.profile.tail_exponent
    if p is not None:
        ok = p > spec.d + k
        return ok, (spec.moment(k) if ok else math.inf)
    # unknown tail: truncated integrals must settle under refinement
    vals = [_truncated_moment(spec, k, 10.0**e) for e in range(2, 7)]
    ok = abs(vals[-1] - vals[-2]) <= 1e-6 * max(abs(vals[-1]), 1e-300)
    return ok, vals[-1] if ok else math.inf


def _truncated_moment(spec: KernelSpec, k: float, R: float) -> float:
    return _radial_between(spec, k, 0.0, R)


def _radial_between(spec: KernelSpec, k: float, r0: float, r1: float) -> float:
    surface = 2.0 if spec.d == 1 else 2.0 * math.pi
    jac = 0 if spec.d == 1 else 1
    f = lambda r: float(spec.profile.radial_value(np.array(r))) * r ** (k + jac)
    edges = np.unique(np.concatenate([[r0, r1], np.geomspace(max(r0, 1.0), r1, 12)]))
    edges = edges[(edges >= r0) & (edges <= r1)]
    return surface * sum(_quad(f, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))


def third_moment_finite(spec: KernelSpec) -> bool:
    return _moment_finite(spec, 3)[0]


# ---------------------------------------------------------------- tails


def tail_mass(spec: KernelSpec, r: float) -> float:
    """g(r) = int_{|x| > r} a(x) |x|^2 dx."""
    if r < 0:
        raise ConfigError("tail radius must be nonnegative")
    return _radial_integral(spec, lambda s: s * s, float(r))


def zeroth_tail(spec: KernelSpec, r: float) -> float:
    return _radial_integral(spec, lambda s: 1.0, float(r))


def lattice_tail_estimate(spec: KernelSpec, J: int) -> float:
    """Bound on the mass of a lying beyond the lattice box of half-side J, via g."""
    if spec.compact and J >= spec.support_radius + 1:
        return 0.0
    r = max(J, 1e-12)
    return tail_mass(spec, r) / r**2


def default_cutoff(spec: KernelSpec, tol: float = 1e-10, J_max: int = 256) -> int:
    if spec.compact:
        return int(math.ceil(spec.support_radius)) + 1
    total = spec.moment(0)
    for J in range(1, J_max + 1):
        if lattice_tail_estimate(spec, J) < tol * total:
            return J
    raise TruncationError(f"lattice tail above {tol} of the mass even at J = {J_max}",
                          suggested_cutoff=None)


# ---------------------------------------------------------------- folding


def lattice_offsets(n: int, d: int, J: int) -> np.ndarray:
    """All points delta/n + k, delta in [0, n)^d, |k|_inf <= J; shape (n,)*d + (K, d)."""
    base = np.arange(n) / n
    ks = np.arange(-J, J + 1, dtype=float)
    if d == 1:
        pts = base[:, None] + ks[None, :]
        return pts[..., None]
    kk = np.stack(np.meshgrid(ks, ks, indexing="ij"), axis=-1).reshape(-1, 2)
    b1, b2 = np.meshgrid(base, base, indexing="ij")
    grid = np.stack([b1, b2], axis=-1)
    return grid[:, :, None, :] + kk[None, None, :, :]


def _check_cutoff(spec: KernelSpec, J: int | None, tol: float) -> int:
    if J is None:
        return default_cutoff(spec, tol)
    est = lattice_tail_estimate(spec, J)
    if est > tol * spec.moment(0):
        try:
            suggestion = default_cutoff(spec, tol)
        except TruncationError:
            suggestion = None
        raise TruncationError(f"lattice tail {est:.3e} exceeds tolerance at J = {J}",
                              suggested_cutoff=suggestion)
    return J


def periodize(spec: KernelSpec, theta=0.0, J: int | None = None, n: int = 64,
              tol: float = 1e-10) -> np.ndarray:
    """Phase-folded periodisation sum_k a(y + k) e^{i theta.(y + k)} at y = delta/n.

    Returns an array of shape (n,)*d indexed by delta; real when theta = 0.
    """
    J = _check_cutoff(spec, J, tol)
    pts = lattice_offsets(n, spec.d, J)
    vals = spec(pts)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.all(th == 0):
        return vals.sum(axis=-1)
    phase = np.exp(1j * np.tensordot(pts, th, axes=([-1], [0])))
    return (vals * phase).sum(axis=-1)


@dataclass
class LatticeMoments:
    """Folded zeroth, first and second moments of a on the difference grid."""

    zeroth: np.ndarray          # (n,)*d
    first: np.ndarray           # (d,) + (n,)*d
    second: np.ndarray          # (d, d) + (n,)*d


def lattice_moments(spec: KernelSpec, n: int, J: int | None = None,
                    tol: float = 1e-10) -> LatticeMoments:
    J = _check_cutoff(spec, J, tol)
    pts = lattice_offsets(n, spec.d, J)
    vals = spec(pts)
    zeroth = vals.sum(axis=-1)
    first = np.stack([(vals * pts[..., c]).sum(axis=-1) for c in range(spec.d)])
    second = np.stack([np.stack([(vals * pts[..., c] * pts[..., e]).sum(axis=-1)
                                 for e in range(spec.d)]) for c in range(spec.d)])
    return LatticeMoments(zeroth, first, second)


# ---------------------------------------------------------------- rate functions


@dataclass
class RateFunctions:
    t: np.ndarray
    h: np.ndarray
    h_hat: np.ndarray
    h_bar: np.ndarray
    r_of_t: np.ndarray
    third_moment_finite: bool
    g: Callable[[float], float] | None = None

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "h": self.h.tolist(), "h_hat": self.h_hat.tolist(),
                "h_bar": self.h_bar.tolist(), "third_moment_finite": self.third_moment_finite}


def solve_radius(g: Callable[[float], float], t: float, rtol: float = 1e-10) -> float:
    """Solve g(r)^{1/4} / r = t by bisection; the left side decreases in r."""
    phi = lambda r: g(r) ** 0.25 / r
    lo, hi = 1e-6, 1.0
    while phi(hi) > t:
        hi *= 2.0
        if hi > 1e12:
            raise NumericalError("radius bracket failed: g decays too slowly")
    while phi(lo) < t:
        lo /= 2.0
        if lo < 1e-300:
            raise NumericalError("radius bracket failed near zero")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if phi(mid) > t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def envelope(t: np.ndarray, h: np.ndarray) -> np.ndarray:
    """t * sup_{s >= t} h(s)/s over the sampled grid (t increasing)."""
    ratio = h / t
    running = np.maximum.accumulate(ratio[::-1])[::-1]
    return t * running


def rate_function(spec: KernelSpec, t=None, force_tail: bool = False) -> RateFunctions:
    """Tail-driven rate functions h, h_hat and h_bar on a grid of t values.

    Kernels with finite third moment take h_bar(t) = t unless force_tail is set.
    """
    t = np.geomspace(1e-3, 1.0, 31) if t is None else np.asarray(t, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ConfigError("t grid must be increasing")
    finite3 = third_moment_finite(spec)
    if finite3 and not force_tail:
        return RateFunctions(t, t.copy(), t.copy(), t.copy(), np.full_like(t, np.nan), True)
    if spec.compact:
        raise ConfigError("tail rate requested for a compactly supported kernel: g vanishes")
    g = lambda r: tail_mass(spec, r)
    radii = np.array([solve_radius(g, float(s)) for s in t])
    h = np.sqrt([g(r) for r in radii])
    h_hat = envelope(t, h)
    return RateFunctions(t, h, h_hat, np.maximum(h, h_hat), radii, finite3, g)


# ---------------------------------------------------------------- presets


def indicator_kernel(d: int = 1, radius: float = 1.0, height: float = 0.5) -> KernelSpec:
    return KernelSpec(d, IndicatorProfile(radius, height), c_a=height, r_a=radius)


def tent_kernel() -> KernelSpec:
    """1/4 on [-1/2, 1/2], linear down to 0 at +-3/2; its periodisation is 1/2.

    The ellipticity pair (c_a, r_a) = (1/8, 1) is chosen so that stiff blocks
    half a period apart are still kernel-connected.
    """
    return KernelSpec(1, TableProfile([0.0, 0.5, 1.5], [0.25, 0.25, 0.0]), c_a=0.125, r_a=1.0)


def window_profile(kappa: float) -> WindowedProfile:
    height = 1.0 / (16.0 * kappa)
    return WindowedProfile([(c - kappa, c + kappa, height) for c in (-0.75, -0.25, 0.25, 0.75)])


def windowed_kernel(kappa: float = 1 / 64, reg: float = 0.0, bump_radius: float = 0.125) -> KernelSpec:
    """Four narrow windows at +-1/4, +-3/4, optionally plus reg * smooth bump at 0.

    Without the bump the kernel vanishes near the origin; the ellipticity
    constants then describe the bump part (and fail validation when reg = 0).
    """
    windows = window_profile(kappa)
    r_a = bump_radius / 2
    if reg > 0:
        bump = BumpProfile(bump_radius, 1.0)
        prof: Profile = SumProfile([(1.0, windows), (reg, bump)])
        c_a = reg * float(bump.radial_value(np.array(r_a)))
    else:
        prof = windows
        c_a = 1e-3
    return KernelSpec(1, prof, c_a=c_a, r_a=r_a)


PRESETS = {
    "indicator": indicator_kernel,
    "tent": tent_kernel,
    "windowed": windowed_kernel,
}
