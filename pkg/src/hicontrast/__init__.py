"""Discretized high-contrast convolution operators: homogenisation, fibered and limit spectra."""

__version__ = "0.1.0"

from .errors import (ConfigError, HicontrastError, NumericalError, PoleError, TruncationError,
                     UnsupportedError)
from .kernel import KernelSpec, indicator_kernel, tent_kernel, validate_kernel, windowed_kernel
from .geometry import CellGeometry, CoefficientField, build_geometry, verify_connectivity
from .assembly import (HermitianOperator, assemble_fiber, assemble_homogenized_fiber,
                       assemble_soft_fiber, assemble_soft_periodic, assemble_truncated)
from .corrector import HomogenizedMatrix, compute_ahom
from .spectral import (BetaFunction, SpectralSet, box_limit_spectrum, hausdorff_distance,
                       limit_spectrum_wholespace, quasimode_distance, solve_limit_resolvent)
from .fibers import (convergence_study, full_theta_sweep, gap_scan, limit_sets, orthant_spectrum,
                     soft_theta_sweep)
from .examples import build_flat_example, build_infinite_example, build_twosided_example
from .extension import MaskedFunction, extend, mollify_decompose, path_energy_check
from .config import ProblemConfig, load_config

__all__ = [
    "__version__",
    "ConfigError", "HicontrastError", "NumericalError", "PoleError", "TruncationError",
    "UnsupportedError",
    "KernelSpec", "indicator_kernel", "tent_kernel", "validate_kernel", "windowed_kernel",
    "CellGeometry", "CoefficientField", "build_geometry", "verify_connectivity",
    "HermitianOperator", "assemble_fiber", "assemble_homogenized_fiber", "assemble_soft_fiber",
    "assemble_soft_periodic", "assemble_truncated",
    "HomogenizedMatrix", "compute_ahom",
    "BetaFunction", "SpectralSet", "box_limit_spectrum", "hausdorff_distance",
    "limit_spectrum_wholespace", "quasimode_distance", "solve_limit_resolvent",
    "convergence_study", "full_theta_sweep", "gap_scan", "limit_sets", "orthant_spectrum",
    "soft_theta_sweep",
    "build_flat_example", "build_infinite_example", "build_twosided_example",
    "MaskedFunction", "extend", "mollify_decompose", "path_energy_check",
    "ProblemConfig", "load_config",
]
