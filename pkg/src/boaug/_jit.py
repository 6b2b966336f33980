"""Numba switch.

Set ``BOAUG_DISABLE_JIT=1`` to run every hot kernel through its pure-numpy
implementation instead of the compiled one.
"""
import os

JIT_ENABLED = os.environ.get("BOAUG_DISABLE_JIT", "0").strip().lower() not in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
    JIT_ENABLED = False


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    The compiled function is always produced when numba exists, independent
    of ``JIT_ENABLED``; the flag only chooses which implementation the public
    names in :mod:`boaug._kernels` are bound to.
    """
    kwargs.setdefault("cache", True)

    def wrap(fn):
        if numba is None:
            return fn
        return numba.njit(**kwargs)(fn)

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap
