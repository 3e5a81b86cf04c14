"""Kernel backend selection.

``SAMOYEDS_BACKEND=numpy`` forces the vectorised numpy kernels; anything else
(default ``numba``) uses the ``@njit`` kernels when numba imports cleanly.
``SAMOYEDS_THREADS`` is the default worker count for the tiled engine.
"""

import os

# try OpenMP before TBB: an outdated TBB only costs a warning, but a noisy one
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency, but stay usable
    numba = None

REQUESTED = os.environ.get("SAMOYEDS_BACKEND", "numba").strip().lower()
USE_NUMBA = REQUESTED != "numpy" and numba is not None
NAME = "numba" if USE_NUMBA else "numpy"


def default_threads():
    raw = os.environ.get("SAMOYEDS_THREADS", "")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


def max_numba_threads():
    if numba is None:
        return 1
    return int(numba.config.NUMBA_NUM_THREADS)
