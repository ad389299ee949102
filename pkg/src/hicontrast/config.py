"""Problem configuration: parsing, defaults, named presets and the content hash."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .examples import BUILDERS
from .geometry import CellGeometry, CoefficientField, build_geometry, geometry_from_dict
from .kernel import (KernelSpec, TableProfile, indicator_kernel, kernel_from_dict, tent_kernel,
                     windowed_kernel)

NUMERICS_DEFAULTS = {
    "n_theta": 33,
    "n_theta_gap": 17,
    "eps": [0.2, 0.1, 0.05],
    "Lambda": 5.0,
    "J": None,
    "workers": None,
    "orthant_periods": 32,
    "box_periods": 8,
    "box_length": 1,
    "theta1": math.pi / 2,
    "beta_points": 401,
    "discrete_tol": None,
    "pole_resolution": 1e-4,
    "trials": 100,
    "seed": 0,
    "m_box": 1.0,
}

OUTPUT_DEFAULTS = {"dir": "hicontrast-out", "formats": ["json", "csv"]}

COEFFICIENT_DEFAULTS = {"w": 1.0, "lambda0": 1.0, "alpha": None, "lambda0_everywhere": False}

# named problem presets; "example" presets defer to the example builders
PRESETS = {
    "flat": {"example": "flat", "params": {"gamma": 0.125, "delta": 0.05}, "n": 128},
    "infinite": {"example": "infinite", "params": {"delta": 1 / 64, "s": 2.0}, "n": 256},
    "twosided": {"example": "twosided", "params": {"delta": 1 / 16, "kappa": 1 / 64, "reg": 0.0},
                 "n": 1024},
    "full-stiff": {
        "kernel": {"preset": "indicator", "radius": 1.0, "height": 0.5},
        "geometry": {"d": 1, "n": 256, "soft_cells": [0]},
        "coefficients": {"w": 1.0, "lambda0": 1.0, "lambda0_everywhere": True},
    },
}


def kernel_from_config(data: dict, d: int = 1) -> KernelSpec:
    data = dict(data)
    name = data.pop("preset", None)
    if name is None:
        return kernel_from_dict(data)
    if name == "indicator":
        return indicator_kernel(int(data.get("d", d)), float(data.get("radius", 1.0)),
                                float(data.get("height", 0.5)))
    if name == "tent":
        return tent_kernel()
    if name == "windowed":
        return windowed_kernel(float(data.get("kappa", 1 / 64)), float(data.get("reg", 0.0)),
                               float(data.get("bump_radius", 0.125)))
    if name == "table":
        try:
            prof = TableProfile(list(map(float, data["x"])), list(map(float, data["y"])))
            return KernelSpec(1, prof, float(data["c_a"]), float(data["r_a"]))
        except KeyError as exc:
            raise ConfigError(f"table kernel needs {exc}") from exc
    raise ConfigError(f"unknown kernel preset {name!r}")


def _geometry(data: dict, base_dir: Path | None) -> CellGeometry:
    if "soft_cells" in data:
        d, n = int(data.get("d", 1)), int(data["n"])
        mask = np.zeros((n,) * d, dtype=bool)
        for c in data["soft_cells"]:
            mask[tuple(np.atleast_1d(c))] = True
        return build_geometry(d, n, mask=mask)
    return geometry_from_dict(data, base_dir)


def _coefficients(data: dict, geom: CellGeometry) -> CoefficientField:
    w = data.get("w", 1.0)
    if isinstance(w, (int, float)):
        w = np.full(geom.size, float(w))
    else:
        w = np.asarray(w, dtype=float).reshape(-1)
    alpha = data.get("alpha")
    return CoefficientField.separable(geom, w, float(data.get("lambda0", 1.0)),
                                      None if alpha is None else tuple(alpha),
                                      strict=not data.get("lambda0_everywhere", False))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


@dataclass(eq=False)
class ProblemConfig:
    """A resolved configuration and the objects it describes."""

    resolved: dict
    geometry: CellGeometry
    kernel: KernelSpec
    coeff: CoefficientField
    example: object = None          # ExampleConfig when built from an example preset

    @property
    def numerics(self) -> dict:
        return self.resolved["numerics"]

    @property
    def output(self) -> dict:
        return self.resolved["output"]

    @property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.resolved).encode()).hexdigest()[:16]

    def header(self) -> str:
        return f"# config-hash {self.digest} version {__version__}"


def resolve(raw: dict, base_dir: Path | None = None) -> ProblemConfig:
    """Apply presets and defaults; the returned resolved dict is echoed in every report."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    raw = copy.deepcopy(raw)
    name = raw.pop("preset", None)
    base: dict = {}
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        base = copy.deepcopy(PRESETS[name])
    numerics = {**NUMERICS_DEFAULTS, **raw.pop("numerics", {})}
    unknown = set(numerics) - set(NUMERICS_DEFAULTS) - {"n"}
    if unknown:
        raise ConfigError(f"unknown numerics keys {sorted(unknown)}")
    output = {**OUTPUT_DEFAULTS, **raw.pop("output", {})}
    if "example" in base or "example" in raw:
        ex = raw.pop("example", base.get("example"))
        params = {**base.get("params", {}), **raw.pop("params", {})}
        n = int(numerics.pop("n", None) or base.get("n", 256))
        if ex not in BUILDERS:
            raise ConfigError(f"unknown example {ex!r}")
        if raw:
            raise ConfigError(f"example presets take no sections {sorted(raw)}")
        try:
            cfg = BUILDERS[ex](n=n, **params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for example {ex!r}: {exc}") from exc
        resolved = {"preset": name, "example": ex, "params": cfg.params, "n": n,
                    "kernel_spec": cfg.kernel.to_dict(), "numerics": numerics, "output": output}
        return ProblemConfig(resolved, cfg.geometry, cfg.kernel, cfg.coeff, cfg)
    sections = {k: {**base.get(k, {}), **raw.pop(k, {})} for k in ("kernel", "geometry", "coefficients")}
    sections["coefficients"] = {**COEFFICIENT_DEFAULTS, **sections["coefficients"]}
    if raw:
        raise ConfigError(f"unknown configuration sections {sorted(raw)}")
    for k in ("kernel", "geometry"):
        if not sections[k]:
            raise ConfigError(f"missing {k} section")
    if "n" in numerics:
        sections["geometry"]["n"] = int(numerics.pop("n"))
    geom = _geometry(sections["geometry"], base_dir)
    spec = kernel_from_config(sections["kernel"], geom.d)
    coeff = _coefficients(sections["coefficients"], geom)
    resolved = {"preset": name, **sections, "kernel_spec": spec.to_dict(), "numerics": numerics,
                "output": output}
    return ProblemConfig(resolved, geom, spec, coeff)


def load_config(source) -> ProblemConfig:
    """From a preset name, a JSON file path or a dict."""
    if isinstance(source, dict):
        return resolve(source)
    if isinstance(source, str) and source in PRESETS:
        return resolve({"preset": source})
    path = Path(source)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
    return resolve(raw, path.parent)
