"""3D Gaussian scenes carrying quantized language features."""

import os as _os

# a pool of at least 8 workers so thread-count determinism can be checked on
# small machines; the active count defaults to the logical core count below
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, _os.cpu_count() or 1)))

import numba as _numba  # noqa: E402

# the bundled TBB is too old for numba; OpenMP gives the same determinism
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

__version__ = "0.1.0"


def set_threads(n: int | None) -> int:
    """Set the numba worker count (clamped to the pool size); returns the value used.

    ``None`` selects the logical core count.
    """
    if n is None:
        n = _os.cpu_count() or 1
    if n < 1:
        raise ValueError("thread count must be >= 1")
    n = min(int(n), _numba.config.NUMBA_NUM_THREADS)
    _numba.set_num_threads(n)
    return n


set_threads(None)
