"""Backend selection for the hot kernels.

``SBPERFUSION_BACKEND=numpy`` forces the pure-numpy path; the default uses
numba when it imports cleanly.
"""

import os

BACKEND_ENV = "SBPERFUSION_BACKEND"
WORKERS_ENV = "SBPERFUSION_WORKERS"


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def requested_backend():
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {value!r}")
    if value == "numba" and not _numba_available():
        return "numpy"
    return value


def worker_count():
    try:
        n = int(os.environ.get(WORKERS_ENV, "1"))
    except ValueError:
        return 1
    return max(1, n)


BACKEND = requested_backend()
