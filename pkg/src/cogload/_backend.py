"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback. ``COGLOAD_BACKEND=python`` forces the fallback,
``COGLOAD_BACKEND=cython`` makes a missing extension an error.
"""

import contextlib
import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _kernels_c
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None

BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    BACKENDS["cython"] = _kernels_c


def _initial():
    forced = os.environ.get("COGLOAD_BACKEND", "").strip().lower()
    if forced == "python":
        return "python"
    if forced == "cython" and _kernels_c is None:
        raise ImportError("COGLOAD_BACKEND=cython but the extension is not built")
    if _kernels_c is None:
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return "python"
    return "cython"


_active = _initial()


def name():
    return _active


def kernels():
    return BACKENDS[_active]


def set_backend(backend):
    global _active
    if backend not in BACKENDS:
        raise ValueError(f"backend {backend!r} not available; have {sorted(BACKENDS)}")
    _active = backend


@contextlib.contextmanager
def use_backend(backend):
    previous = _active
    set_backend(backend)
    try:
        yield BACKENDS[backend]
    finally:
        set_backend(previous)
