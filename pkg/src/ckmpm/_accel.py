"""Backend switch between the numba kernels and the pure-numpy fallback.

Set ``CKMPM_DISABLE_NUMBA=1`` before import to run everything through the
vectorized numpy path (and to execute the small scalar helpers as plain
Python).  ``set_backend`` flips the batch kernels at runtime when numba is
importable.
"""

import os

_DISABLED = os.environ.get("CKMPM_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by CKMPM_DISABLE_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

_backend = "numba" if HAS_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        if args and callable(args[0]):
            return numba.njit(**kwargs)(args[0])
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn


# numba only parallelizes loops over its own ``prange`` object, so alias it directly
prange = numba.prange if HAS_NUMBA else range


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    _backend = name


def set_threads(n):
    if HAS_NUMBA and n:
        numba.set_num_threads(int(n))


def get_threads():
    if HAS_NUMBA:
        return numba.get_num_threads()
    return 1
