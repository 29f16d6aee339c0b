"""Thread-count plumbing for the numba kernels.

Kernels only ever parallelize over independent rows, so results do not
depend on the number of threads. numba fixes its pool ceiling at import
time; :func:`reserve_threads` must run before the first ``import numba``.
"""

from __future__ import annotations

import os
import sys


def reserve_threads(n: int | None) -> None:
    if "numba" in sys.modules:
        return
    # TBB in the base image is too old for numba; pick a layer that is always present.
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    if n is not None and n > (os.cpu_count() or 1):
        os.environ["NUMBA_NUM_THREADS"] = str(n)


def set_threads(n: int | None) -> int:
    """Use ``n`` threads (None: all available); returns the count actually used."""
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    wanted = limit if n is None else n
    if wanted < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    used = min(wanted, limit)
    numba.set_num_threads(used)
    return used


reserve_threads(None)
