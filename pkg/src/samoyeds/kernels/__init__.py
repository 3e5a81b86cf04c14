"""Hot loops, in a numba flavour and a pure-numpy flavour.

The active flavour is picked once at import from ``SAMOYEDS_BACKEND``; both
modules stay importable so benchmarks and tests can compare them directly.
"""

from contextlib import contextmanager

from .. import _backend
from . import _numpy

NONE, SILU, GELU, RELU = _numpy.NONE, _numpy.SILU, _numpy.GELU, _numpy.RELU
ACTIVATIONS = {"none": NONE, "silu": SILU, "gelu": GELU, "relu": RELU}

if _backend.USE_NUMBA:
    from . import _numba
else:  # pragma: no cover - exercised with SAMOYEDS_BACKEND=numpy
    _numba = None

BACKEND = _backend.NAME


def get(name=None):
    """Kernel module for ``name`` (``"numba"``/``"numpy"``), default the active one."""
    name = name or BACKEND
    if name == "numpy":
        return _numpy
    if name == "numba":
        if _numba is None:
            raise RuntimeError("numba backend unavailable (disabled or not installed)")
        return _numba
    raise ValueError(f"unknown backend {name!r}")


def available():
    return ["numba", "numpy"] if _numba is not None else ["numpy"]


@contextmanager
def numba_threads(threads):
    import numba

    limit = _backend.max_numba_threads()
    previous = numba.get_num_threads()
    numba.set_num_threads(max(1, min(threads, limit)))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


def spmm_sparse(*args, threads=1, backend=None):
    mod = get(backend)
    if mod is _numpy:
        return _numpy.spmm_sparse(*args, threads=threads)
    with numba_threads(threads):
        return mod.spmm_sparse(*args)


def spmm_dense(*args, threads=1, backend=None):
    mod = get(backend)
    if mod is _numpy:
        return _numpy.spmm_dense(*args, threads=threads)
    with numba_threads(threads):
        return mod.spmm_dense(*args)
