"""Numerical kernel backends.

The compiled extension (`qreset.kernels._core`, Cython) is preferred; a pure
NumPy implementation with identical semantics is the fallback.  Selection
happens once at import and can be forced with the environment variable
``QRESET_KERNEL`` set to ``compiled`` or ``pure``.
"""

import os

from . import pure
from .pure import (  # noqa: F401  (re-exported shared pieces)
    DEGENERACY_FLAG_TOL,
    PERTURBATION_GAP_TOL,
    STEP_BOUND,
    NearDegeneracyError,
    thermal_factor,
)

_choice = os.environ.get("QRESET_KERNEL", "auto")
if _choice not in ("auto", "compiled", "pure"):
    raise ImportError(f"QRESET_KERNEL must be auto|compiled|pure, got {_choice!r}")

_impl = None
if _choice in ("auto", "compiled"):
    try:
        from . import _core as _impl
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "QRESET_KERNEL=compiled but qreset.kernels._core is not built; "
                "run `pip install -e .` or `python setup.py build_ext --inplace`"
            ) from None
if _impl is None:
    _impl = pure

BACKEND = _impl.BACKEND

eigh3 = _impl.eigh3
decay_rates_from_eig = _impl.decay_rates_from_eig
rates_grid = _impl.rates_grid
eigen_control_derivatives = _impl.eigen_control_derivatives
rate_control_derivatives = _impl.rate_control_derivatives
liouvillian_apply = _impl.liouvillian_apply
update_integrand = _impl.update_integrand
propagate = _impl.propagate
krotov_sweep = _impl.krotov_sweep


def available_backends():
    """Names of the importable backends (for benchmarks and cross-checks)."""
    names = ["pure"]
    try:
        from . import _core  # noqa: F811
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return a backend module by name ('compiled' or 'pure')."""
    if name == "pure":
        return pure
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
