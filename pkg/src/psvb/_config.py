"""Runtime knobs read from the environment.

``PSVB_KERNELS``
    ``numba`` (default when numba imports) or ``numpy``. Selects the
    implementation of the hot loops in :mod:`psvb._kernels`.
``PSVB_THREADS``
    Upper bound on worker threads used by the compiled kernels.
``PSVB_DIRECT_MAX``
    Largest ``taps * sites`` product for which :func:`psvb.multifilter.apply`
    uses direct summation instead of the FFT path.
"""

import os

DEFAULT_DIRECT_MAX = 1 << 16


def kernel_backend() -> str:
    choice = os.environ.get("PSVB_KERNELS", "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"PSVB_KERNELS must be 'numba' or 'numpy', got {choice!r}")
    return choice


def thread_cap() -> int | None:
    raw = os.environ.get("PSVB_THREADS")
    if raw is None or raw.strip() == "":
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("PSVB_THREADS must be a positive integer")
    return n


def direct_max() -> int:
    return int(os.environ.get("PSVB_DIRECT_MAX", DEFAULT_DIRECT_MAX))
