"""Closed-form policy improvement operators for offline RL."""

import os

# CFPI_THREADS caps BLAS worker threads; it must be set before numpy loads.
_threads = os.environ.get("CFPI_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
