"""Kernel backend selection.

The hot loops in :mod:`vbspin.kernels` are compiled with numba when it is
importable. Set ``VBSPIN_BACKEND=numpy`` to force the pure-numpy path, e.g.
for debugging or on platforms without an LLVM toolchain.
"""

import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None
    HAS_NUMBA = False

_VALID = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get("VBSPIN_BACKEND", "").strip().lower()
    if requested and requested not in _VALID:
        raise ValueError(f"VBSPIN_BACKEND must be one of {_VALID}, got {requested!r}")
    if requested == "numpy" or not HAS_NUMBA:
        return "numpy"
    return "numba"


_active = _initial_backend()


def active_backend():
    return _active


def set_backend(name):
    """Switch the kernel backend at runtime; returns the previous one."""
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _active = _active, name
    return previous


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
