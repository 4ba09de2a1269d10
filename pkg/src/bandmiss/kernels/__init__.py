"""Backend dispatch for the hot numerical kernels.

Two interchangeable backends exist: ``"numba"`` (jitted loops, the default
when numba imports) and ``"numpy"`` (vectorized numpy/scipy fallbacks).
Selection order:

1. the ``BANDMISS_BACKEND`` environment variable, if set;
2. numba when importable, else numpy.

``use_backend`` rebinds the active backend at runtime, which is what the
benchmark command uses to compare the two on identical inputs.  All kernel
results agree across backends to floating point roundoff, but not bitwise;
reproducibility guarantees hold per backend.
"""

from __future__ import annotations

import importlib.util
import logging
import os
import pathlib
import sys
from types import SimpleNamespace

from . import _band_numpy
from . import _kf_impl as _kf_numpy

logger = logging.getLogger(__name__)

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

ENV_VAR = "BANDMISS_BACKEND"

_KERNEL_NAMES = (
    "band_chol",
    "band_fsolve",
    "band_bsolve",
    "band_fsolve_mat",
    "band_bsolve_mat",
    "band_symv",
    "sandwich_dense",
    "sandwich_diag",
    "kf_smooth",
    "kf_simulate",
)

_numpy_ns = SimpleNamespace(
    **{name: getattr(_band_numpy, name, None) or getattr(_kf_numpy, name) for name in _KERNEL_NAMES}
)

_numba_ns = None


def _build_numba_namespace():
    global _numba_ns
    if _numba_ns is not None:
        return _numba_ns
    from numba import njit

    from . import _band_numba

    # second, independent instance of the shared-source Kalman module so the
    # plain-python copy used by the numpy backend stays unjitted; it must be
    # registered in sys.modules or numba's disk cache records an unimportable
    # module name and poisons later processes
    path = pathlib.Path(__file__).with_name("_kf_impl.py")
    name = f"{__name__}._kf_impl_numba"
    spec = importlib.util.spec_from_file_location(name, path)
    kf = importlib.util.module_from_spec(spec)
    sys.modules[name] = kf
    spec.loader.exec_module(kf)
    for fname in ("_chol_lower", "_tri_solve_vec", "_tri_solve_mat", "kf_smooth", "kf_simulate"):
        setattr(kf, fname, njit(cache=True)(getattr(kf, fname)))

    _numba_ns = SimpleNamespace(
        **{name: getattr(_band_numba, name, None) or getattr(kf, name) for name in _KERNEL_NAMES}
    )
    return _numba_ns


def _default_backend() -> str:
    env = os.environ.get(ENV_VAR, "").strip().lower()
    if env:
        if env not in ("numba", "numpy"):
            raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {env!r}")
        if env == "numba" and not HAS_NUMBA:
            raise ImportError(f"{ENV_VAR}=numba requested but numba is not importable")
        return env
    return "numba" if HAS_NUMBA else "numpy"


_active_name = None
_active = None


def use_backend(name: str) -> None:
    """Select the kernel backend ('numba' or 'numpy') for this process."""
    global _active_name, _active
    if name == "numpy":
        _active = _numpy_ns
    elif name == "numba":
        if not HAS_NUMBA:
            raise ImportError("numba backend requested but numba is not importable")
        _active = _build_numba_namespace()
    else:
        raise ValueError(f"unknown backend {name!r}")
    _active_name = name
    logger.debug("kernel backend set to %s", name)


def current_backend() -> str:
    return _active_name


def available_backends():
    """Backends importable in this process; numpy is always present."""
    return ("numba", "numpy") if HAS_NUMBA else ("numpy",)


use_backend(_default_backend())


def band_chol(band, tol):
    return _active.band_chol(band, tol)


def band_fsolve(cband, rhs):
    return _active.band_fsolve(cband, rhs)


def band_bsolve(cband, rhs):
    return _active.band_bsolve(cband, rhs)


def band_fsolve_mat(cband, rhs):
    return _active.band_fsolve_mat(cband, rhs)


def band_bsolve_mat(cband, rhs):
    return _active.band_bsolve_mat(cband, rhs)


def band_symv(band, x):
    return _active.band_symv(band, x)


def sandwich_dense(rp, ci, vals, nblocks, m, sinv, ncols, bw):
    return _active.sandwich_dense(rp, ci, vals, nblocks, m, sinv, ncols, bw)


def sandwich_diag(rp, ci, vals, nblocks, m, sinv, ncols, bw):
    return _active.sandwich_diag(rp, ci, vals, nblocks, m, sinv, ncols, bw)


def kf_smooth(y, mc, Z, c1, F1, Om, s1, P1, jitter=1e-10):
    return _active.kf_smooth(y, mc, Z, c1, F1, Om, s1, P1, jitter)


def kf_simulate(c1, F1, Lt, s0, p0sd, xi0, xis, Z, mc):
    return _active.kf_simulate(c1, F1, Lt, s0, p0sd, xi0, xis, Z, mc)
